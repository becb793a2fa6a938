"""Hot-path kernels for the barrier solver.

Selects the compiled Cython core when it was built, otherwise the numpy
fallback.  ``NOMACRAN_PURE_PYTHON=1`` forces the fallback (useful for
debugging and for the benchmark that compares both).
"""

import os

from . import fallback

if os.environ.get("NOMACRAN_PURE_PYTHON", "") == "1":
    impl = fallback
else:
    try:
        from . import _barrier_core as impl  # type: ignore[no-redef]
    except ImportError:
        impl = fallback

IMPL = impl.IMPL
eval_constraints = impl.eval_constraints
barrier_terms = impl.barrier_terms
phi_value = impl.phi_value
