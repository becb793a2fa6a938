"""Pure-numpy implementation of the barrier-solver inner-loop kernels.

A constraint family is packed as ``c_i(x) = lin[i]@x + const[i]
- sum_{l: rc[l]==i} w[l]*log(A[l]@x + b[l])`` with all ``w >= 0`` (so every
c_i is convex).  These routines are the per-Newton-step hot path; the Cython
module ``_barrier_core`` implements the same contract.
"""

import numpy as np

IMPL = "python"


def eval_constraints(A, b, w, rc, lin, const, x):
    """Constraint values, gradients and log arguments at x.

    Returns (tmin, c, G, t) where ``t = A@x + b`` are the log arguments,
    ``c`` the m constraint values and ``G`` their (m, n) gradients.
    When tmin <= 0 the point is outside the log domain and c/G hold only
    the affine parts; callers must check tmin first.
    """
    c = const + lin @ x
    G = lin.copy()
    t = A @ x + b
    tmin = float(t.min()) if t.size else np.inf
    if tmin <= 0.0:
        return tmin, c, G, t
    if t.size:
        np.subtract.at(c, rc, w * np.log(t))
        np.add.at(G, rc, -(w / t)[:, None] * A)
    return tmin, c, G, t


def barrier_terms(A, b, w, rc, lin, const, x):
    """Log-barrier value, gradient and Hessian of the packed constraints.

    phi = -sum log(-c_i); returns (ok, phi, grad, hess, c).  ok is False
    when x is outside the log domain or some c_i >= 0.
    """
    n = x.shape[0]
    tmin, c, G, t = eval_constraints(A, b, w, rc, lin, const, x)
    if tmin <= 0.0 or (c.size and c.max() >= 0.0):
        return False, np.inf, np.zeros(n), np.zeros((n, n)), c
    if c.size == 0:
        return True, 0.0, np.zeros(n), np.zeros((n, n)), c
    inv_neg_c = 1.0 / (-c)
    phi = float(np.log(inv_neg_c).sum())
    grad = G.T @ inv_neg_c
    hess = G.T @ (G * (inv_neg_c**2)[:, None])
    if t.size:
        scale = w * inv_neg_c[rc] / (t * t)
        hess += A.T @ (A * scale[:, None])
    return True, phi, grad, hess, c


def phi_value(A, b, w, rc, lin, const, x):
    """Barrier value only (line-search path); (ok, phi)."""
    tmin, c, _G, _t = eval_constraints(A, b, w, rc, lin, const, x)
    if tmin <= 0.0 or (c.size and c.max() >= 0.0):
        return False, np.inf
    if c.size == 0:
        return True, 0.0
    return True, float(-np.log(-c).sum())
