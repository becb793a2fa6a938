"""Build script: compiles the optional Cython core for the barrier-solver
inner loop.  If Cython or a C compiler is unavailable the package installs
as pure Python and falls back to the numpy implementation at import time.
"""

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools.extension import Extension

    extensions = cythonize(
        [
            Extension(
                "nomacran._kernels._barrier_core",
                ["src/nomacran/_kernels/_barrier_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    print(f"nomacran: building without compiled core ({exc})")
    extensions = []

setup(ext_modules=extensions)
