"""Self-contained optimization primitives.

- solve_lp: linear programs (scipy HiGHS backend) with certified
  infeasible/unbounded statuses.
- solve_convex: log-barrier interior-point method for smooth convex
  programs; constraints of the form ``affine - sum w*log(affine)`` are
  packed into arrays and evaluated by the compiled kernels, generic
  callback constraints take the slow path.
- DC machinery: tangent surrogates for rates written as a difference of
  concave log terms, giving global minorants (and, with the roles of the
  two logs swapped, majorants).
"""

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.linalg
from scipy.optimize import linprog

from . import _kernels

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# linear programming


@dataclass
class LpResult:
    status: str              # optimal | infeasible | unbounded | iteration-limit
    x: np.ndarray | None
    objective: float | None
    primal_residual: float = 0.0

    @property
    def ok(self):
        return self.status == "optimal"


def solve_lp(c, a_ineq=None, b_ineq=None, a_eq=None, b_eq=None, bounds=None,
             max_iter: int = 500) -> LpResult:
    """Minimize c@x subject to a_ineq@x <= b_ineq, a_eq@x == b_eq, bounds.

    bounds is a list of (lo, hi) pairs with None for unbounded; variables
    are unbounded by default.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    if bounds is None:
        bounds = [(None, None)] * n
    res = linprog(c, A_ub=a_ineq, b_ub=b_ineq, A_eq=a_eq, b_eq=b_eq,
                  bounds=bounds, method="highs",
                  options={"maxiter": max_iter, "presolve": True})
    status = {0: "optimal", 1: "iteration-limit", 2: "infeasible",
              3: "unbounded"}.get(res.status, "error")
    if status != "optimal":
        return LpResult(status=status, x=None, objective=None)
    x = np.asarray(res.x, dtype=float)
    resid = 0.0
    if a_ineq is not None:
        slack = np.asarray(a_ineq) @ x - np.asarray(b_ineq)
        if slack.size:
            resid = max(resid, float(slack.max()))
    if a_eq is not None:
        eq = np.asarray(a_eq) @ x - np.asarray(b_eq)
        if eq.size:
            resid = max(resid, float(np.abs(eq).max()))
    return LpResult(status="optimal", x=x, objective=float(c @ x),
                    primal_residual=resid)


# ---------------------------------------------------------------------------
# convex programs


@dataclass
class LogAffineConstraint:
    """Convex constraint  lin@x + const - sum_l w_l*log(a_l@x + b_l) <= 0.

    All weights must be non-negative.  Exposes value/grad/hess callables and
    is recognized by solve_convex for packed (compiled-kernel) evaluation.
    """

    lin: np.ndarray
    const: float
    log_a: np.ndarray = None
    log_b: np.ndarray = None
    log_w: np.ndarray = None

    def __post_init__(self):
        self.lin = np.asarray(self.lin, dtype=float)
        n = self.lin.shape[0]
        if self.log_a is None:
            self.log_a = np.zeros((0, n))
            self.log_b = np.zeros(0)
            self.log_w = np.zeros(0)
        self.log_a = np.asarray(self.log_a, dtype=float).reshape(-1, n)
        self.log_b = np.asarray(self.log_b, dtype=float).ravel()
        self.log_w = np.asarray(self.log_w, dtype=float).ravel()
        if (self.log_w < 0).any():
            raise ValueError("log weights must be non-negative for convexity")

    def __call__(self, x):
        val = float(self.lin @ x + self.const)
        if self.log_a.shape[0]:
            t = self.log_a @ x + self.log_b
            if t.min() <= 0:
                return np.inf
            val -= float(self.log_w @ np.log(t))
        return val

    def grad(self, x):
        g = self.lin.copy()
        if self.log_a.shape[0]:
            t = self.log_a @ x + self.log_b
            g -= (self.log_w / t) @ self.log_a
        return g

    def hess(self, x):
        n = self.lin.shape[0]
        h = np.zeros((n, n))
        if self.log_a.shape[0]:
            t = self.log_a @ x + self.log_b
            h += self.log_a.T @ (self.log_a * (self.log_w / t**2)[:, None])
        return h


@dataclass
class ConvexProgram:
    """Smooth convex minimization over box/linear/smooth-convex constraints."""

    n: int
    objective: callable
    gradient: callable
    hessian: callable = None          # None: finite differences of gradient
    constraints: list = field(default_factory=list)
    lb: np.ndarray = None
    ub: np.ndarray = None
    a_eq: np.ndarray = None
    b_eq: np.ndarray = None

    def __post_init__(self):
        self.lb = np.full(self.n, -np.inf) if self.lb is None else np.asarray(self.lb, float)
        self.ub = np.full(self.n, np.inf) if self.ub is None else np.asarray(self.ub, float)
        if (self.lb > self.ub).any():
            raise ValueError("box bounds must satisfy lb <= ub")


@dataclass
class ConvexResult:
    x: np.ndarray
    objective: float
    status: str              # optimal | max-iter | infeasible
    kkt_residual: float
    outer_iterations: int
    newton_iterations: int
    mu_final: float = np.inf  # barrier gap-per-constraint reached (warm restarts)

    @property
    def ok(self):
        return self.status == "optimal"


def _fd_hessian(gradient, x, h=1e-6):
    n = x.shape[0]
    H = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = h * max(1.0, abs(x[j]))
        H[:, j] = (gradient(x + e) - gradient(x - e)) / (2 * e[j])
    return 0.5 * (H + H.T)


def _pack_constraints(constraints, n):
    """Split into packed log-affine arrays and generic callback constraints."""
    packable = [c for c in constraints if isinstance(c, LogAffineConstraint)]
    generic = [c for c in constraints if not isinstance(c, LogAffineConstraint)]
    m = len(packable)
    lin = np.zeros((m, n))
    const = np.zeros(m)
    rows_a, rows_b, rows_w, rows_rc = [], [], [], []
    for i, con in enumerate(packable):
        lin[i] = con.lin
        const[i] = con.const
        if con.log_a.shape[0]:
            rows_a.append(con.log_a)
            rows_b.append(con.log_b)
            rows_w.append(con.log_w)
            rows_rc.append(np.full(con.log_a.shape[0], i, dtype=np.int64))
    A = np.vstack(rows_a) if rows_a else np.zeros((0, n))
    b = np.concatenate(rows_b) if rows_b else np.zeros(0)
    w = np.concatenate(rows_w) if rows_w else np.zeros(0)
    rc = np.concatenate(rows_rc) if rows_rc else np.zeros(0, dtype=np.int64)
    pack = (np.ascontiguousarray(A), np.ascontiguousarray(b),
            np.ascontiguousarray(w), np.ascontiguousarray(rc),
            np.ascontiguousarray(lin), np.ascontiguousarray(const))
    return pack, generic


def _generic_barrier(generic, x, need_hess):
    """phi/grad/hess contribution of callback constraints; ok=False at the boundary."""
    n = x.shape[0]
    phi, grad, hess = 0.0, np.zeros(n), np.zeros((n, n)) if need_hess else None
    values = []
    for con in generic:
        c = float(con(x))
        values.append(c)
        if not c < 0:
            return False, np.inf, grad, hess, values
        phi -= math.log(-c)
        g = np.asarray(con.grad(x), dtype=float)
        grad += g / (-c)
        if need_hess:
            hc = con.hess(x) if hasattr(con, "hess") and con.hess is not None \
                else _fd_hessian(con.grad, x)
            hess += np.outer(g, g) / c**2 + np.asarray(hc) / (-c)
    return True, phi, grad, hess, values


def _max_step(pack, generic, lb, ub, x, d):
    """Largest step keeping log domains and the box strictly feasible.

    Generic (callback) constraints are handled by rejection in the line
    search instead.
    """
    A = pack[0]
    smax = np.inf
    if A.shape[0]:
        t = A @ x + pack[1]
        td = A @ d
        neg = td < 0
        if neg.any():
            smax = min(smax, float((t[neg] / -td[neg]).min()))
    up = np.isfinite(ub) & (d > 0)
    if up.any():
        smax = min(smax, float(((ub[up] - x[up]) / d[up]).min()))
    down = np.isfinite(lb) & (d < 0)
    if down.any():
        smax = min(smax, float(((x[down] - lb[down]) / -d[down]).min()))
    return smax


def solve_convex(prog: ConvexProgram, x_init, tol: float = 1e-8,
                 max_outer: int = 200, max_newton: int = 50,
                 mu_init: float = None, _stop_early=None) -> ConvexResult:
    """Log-barrier interior-point minimization.

    The barrier parameter (duality-gap contribution per constraint) starts
    at the scale of the initial objective and shrinks by 10x per outer
    step until the estimated gap falls below ``tol`` relative to the
    current objective; warm restarts pass ``mu_init`` from a previous
    solve's ``mu_final``.  A phase-one program (minimize the worst
    constraint violation) runs automatically when x_init is not strictly
    feasible.
    """
    n = prog.n
    x = np.asarray(x_init, dtype=float).copy()
    lb, ub = prog.lb, prog.ub

    # nudge into the open box
    span = np.where(np.isfinite(ub) & np.isfinite(lb), ub - lb, 1.0)
    margin = 1e-9 * np.maximum(span, 1e-30)
    x = np.clip(x, np.where(np.isfinite(lb), lb + margin, -np.inf),
                np.where(np.isfinite(ub), ub - margin, np.inf))

    if prog.a_eq is not None and prog.a_eq.shape[0]:
        resid = prog.b_eq - prog.a_eq @ x
        if np.abs(resid).max() > 1e-12:
            x = x + np.linalg.lstsq(prog.a_eq, resid, rcond=None)[0]

    pack, generic = _pack_constraints(prog.constraints, n)
    m_total = pack[4].shape[0] + len(generic) + int(np.isfinite(lb).sum()) \
        + int(np.isfinite(ub).sum())

    # strict feasibility, else phase one
    ok_pack, _ = _kernels.phi_value(*pack, x)
    ok_gen = all(con(x) < 0 for con in generic)
    if not (ok_pack and ok_gen):
        feasible, x_best = _phase_one(prog, pack, generic, x, tol)
        if not feasible:
            return ConvexResult(x=x_best, objective=float(prog.objective(x_best)),
                                status="infeasible", kkt_residual=np.inf,
                                outer_iterations=0, newton_iterations=0)
        x = x_best

    f0 = float(prog.objective(x))
    fscale = max(abs(f0), 1e-12)
    t_bar = 1.0 if mu_init is None else max(fscale / max(mu_init, 1e-300), 1.0)
    newton_total = 0
    status = "max-iter"
    outer = 0

    for outer in range(1, max_outer + 1):
        for _ in range(max_newton):
            ok, phi_c, g_c, h_c, _ = _kernels.barrier_terms(*pack, x)
            if not ok:
                raise RuntimeError("barrier left the feasible region")
            okg, phi_g, g_g, h_g, _ = _generic_barrier(generic, x, True)
            if not okg:
                raise RuntimeError("barrier left the feasible region")
            grad = (t_bar / fscale) * np.asarray(prog.gradient(x), float) + g_c + g_g
            hess = h_c + (h_g if h_g is not None else 0.0)
            if prog.hessian is not None:
                hess = hess + (t_bar / fscale) * np.asarray(prog.hessian(x), float)
            else:
                hf = _fd_hessian(prog.gradient, x)
                if np.abs(hf).max() > 0:
                    hess = hess + (t_bar / fscale) * hf
            lo_gap = x - lb
            hi_gap = ub - x
            fin_lo, fin_hi = np.isfinite(lb), np.isfinite(ub)
            grad = grad - np.where(fin_lo, 1.0 / np.where(fin_lo, lo_gap, 1.0), 0.0) \
                + np.where(fin_hi, 1.0 / np.where(fin_hi, hi_gap, 1.0), 0.0)
            diag = np.where(fin_lo, 1.0 / np.where(fin_lo, lo_gap, 1.0) ** 2, 0.0) \
                + np.where(fin_hi, 1.0 / np.where(fin_hi, hi_gap, 1.0) ** 2, 0.0)
            hess = hess + np.diag(diag)

            d = _solve_newton(hess, grad, prog.a_eq)
            newton_total += 1
            decrement = float(-grad @ d)
            if decrement / 2.0 <= 1e-10:
                break
            smax = _max_step(pack, generic, lb, ub, x, d)
            step = min(1.0, 0.99 * smax)
            phi_now = _phi_total(prog, pack, generic, lb, ub, x, t_bar, fscale)
            accepted = False
            for _ls in range(60):
                x_try = x + step * d
                phi_try = _phi_total(prog, pack, generic, lb, ub, x_try, t_bar, fscale)
                if phi_try <= phi_now - 1e-4 * step * decrement:
                    x = x_try
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
        f_now = float(prog.objective(x))
        gap = m_total * fscale / t_bar
        if _stop_early is not None and _stop_early(x):
            status = "optimal"
            break
        if gap <= tol * max(abs(f_now), 1e-9 * fscale):
            status = "optimal"
            break
        t_bar *= 10.0

    kkt = _kkt_residual(prog, pack, generic, lb, ub, x, t_bar, fscale)
    return ConvexResult(x=x, objective=float(prog.objective(x)), status=status,
                        kkt_residual=kkt, outer_iterations=outer,
                        newton_iterations=newton_total, mu_final=fscale / t_bar)


def _phi_total(prog, pack, generic, lb, ub, x, t_bar, fscale):
    okc, phi_c = _kernels.phi_value(*pack, x)
    if not okc:
        return np.inf
    okg, phi_g, _, _, _ = _generic_barrier(generic, x, False)
    if not okg:
        return np.inf
    lo_gap, hi_gap = x - lb, ub - x
    if (lo_gap[np.isfinite(lb)] <= 0).any() or (hi_gap[np.isfinite(ub)] <= 0).any():
        return np.inf
    phi_box = -float(np.log(lo_gap[np.isfinite(lb)]).sum()) \
        - float(np.log(hi_gap[np.isfinite(ub)]).sum())
    return (t_bar / fscale) * float(prog.objective(x)) + phi_c + phi_g + phi_box


def _solve_newton(hess, grad, a_eq):
    n = grad.shape[0]
    ridge = 0.0
    base = max(np.trace(hess) / max(n, 1), 1e-30)
    for attempt in range(4):
        H = hess + ridge * np.eye(n) if ridge else hess
        try:
            if a_eq is not None and a_eq.shape[0]:
                p = a_eq.shape[0]
                kkt = np.block([[H, a_eq.T], [a_eq, np.zeros((p, p))]])
                rhs = np.concatenate([-grad, np.zeros(p)])
                sol = scipy.linalg.solve(kkt, rhs, assume_a="sym")
                return sol[:n]
            ch = scipy.linalg.cho_factor(H, check_finite=False)
            return scipy.linalg.cho_solve(ch, -grad, check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError):
            ridge = base * (1e-12 * 10.0 ** (2 * attempt))
    return np.linalg.lstsq(hess + ridge * np.eye(n), -grad, rcond=None)[0]


def _kkt_residual(prog, pack, generic, lb, ub, x, t_bar, fscale):
    """Stationarity residual with barrier multipliers, relative to ||grad f||."""
    mu = fscale / t_bar
    grad_f = np.asarray(prog.gradient(x), dtype=float)
    r = grad_f.copy()
    _, c, G, _ = _kernels.eval_constraints(*pack, x)
    if c.size:
        r += (mu / (-c)) @ G
    for con in generic:
        cv = float(con(x))
        r += mu / (-cv) * np.asarray(con.grad(x), float)
    fin_lo, fin_hi = np.isfinite(lb), np.isfinite(ub)
    r -= np.where(fin_lo, mu / np.where(fin_lo, x - lb, 1.0), 0.0)
    r += np.where(fin_hi, mu / np.where(fin_hi, ub - x, 1.0), 0.0)
    return float(np.abs(r).max() / max(1.0, np.abs(grad_f).max()))


def _phase_one(prog, pack, generic, x0, tol):
    """Minimize the worst violation; returns (strictly_feasible, best_point)."""
    n = prog.n
    A, b, w, rc, lin, const = pack
    tmin, c0, _, _ = _kernels.eval_constraints(*pack, x0)
    if tmin <= 0:
        raise ValueError("x_init lies outside the log domain; cannot start phase one")
    worst = float(c0.max()) if c0.size else -np.inf
    for con in generic:
        worst = max(worst, float(con(x0)))
    s0 = max(worst, 0.0) + 1.0

    lin_aug = np.hstack([lin, -np.ones((lin.shape[0], 1))])
    A_aug = np.hstack([A, np.zeros((A.shape[0], 1))])
    aug_constraints = [LogAffineConstraint(lin=lin_aug[i], const=const[i],
                                           log_a=A_aug[rc == i],
                                           log_b=b[rc == i], log_w=w[rc == i])
                       for i in range(lin.shape[0])]

    class _Shifted:
        def __init__(self, con):
            self.con = con

        def __call__(self, z):
            return self.con(z[:-1]) - z[-1]

        def grad(self, z):
            g = np.zeros(z.shape[0])
            g[:-1] = self.con.grad(z[:-1])
            g[-1] = -1.0
            return g

        def hess(self, z):
            h = np.zeros((z.shape[0], z.shape[0]))
            if hasattr(self.con, "hess") and self.con.hess is not None:
                h[:-1, :-1] = self.con.hess(z[:-1])
            else:
                h[:-1, :-1] = _fd_hessian(self.con.grad, z[:-1])
            return h

    aug_constraints += [_Shifted(con) for con in generic]
    aug = ConvexProgram(
        n=n + 1,
        objective=lambda z: z[-1],
        gradient=lambda z: np.eye(n + 1)[-1],
        hessian=lambda z: np.zeros((n + 1, n + 1)),
        constraints=aug_constraints,
        lb=np.append(prog.lb, -10.0 * s0 - 1.0),
        ub=np.append(prog.ub, s0 + 1.0),
    )
    z0 = np.append(x0, s0)
    res = solve_convex(aug, z0, tol=1e-6, max_outer=80,
                       _stop_early=lambda z: z[-1] < -1e-9 * max(1.0, s0))
    return bool(res.x[-1] < 0), res.x[:-1]


# ---------------------------------------------------------------------------
# DC surrogates for rate functions


@dataclass
class DcSurrogate:
    """Tangent surrogate for a rate  w*[log(num@p+bn) - log(den@p+bd)].

    Stores the expansion point and the value/gradient of the subtracted
    concave term there; ``tangent`` is the affine over-estimator of that
    term, so ``minorant = w*log(num) - tangent`` under-estimates the true
    rate everywhere and touches it at x0.
    """

    x0: np.ndarray
    g0: float
    g_grad: np.ndarray
    num_a: np.ndarray
    num_b: float
    den_a: np.ndarray
    den_b: float
    weight: float

    def tangent(self, p):
        return self.g0 + self.g_grad @ (np.asarray(p, float) - self.x0)

    def subtracted_term(self, p):
        return self.weight * math.log(float(self.den_a @ p + self.den_b))

    def true_rate(self, p):
        p = np.asarray(p, float)
        return self.weight * (math.log(float(self.num_a @ p + self.num_b))
                              - math.log(float(self.den_a @ p + self.den_b)))

    def minorant(self, p):
        p = np.asarray(p, float)
        return self.weight * math.log(float(self.num_a @ p + self.num_b)) \
            - self.tangent(p)


def make_dc_surrogate(num_a, num_b, den_a, den_b, weight, x0) -> DcSurrogate:
    """Build the tangent surrogate of the subtracted log at x0."""
    x0 = np.asarray(x0, dtype=float)
    den0 = float(den_a @ x0 + den_b)
    if den0 <= 0:
        raise ValueError("denominator must be positive at the expansion point")
    g0 = weight * math.log(den0)
    g_grad = (weight / den0) * np.asarray(den_a, float)
    return DcSurrogate(x0=x0.copy(), g0=g0, g_grad=g_grad,
                       num_a=np.asarray(num_a, float), num_b=float(num_b),
                       den_a=np.asarray(den_a, float), den_b=float(den_b),
                       weight=float(weight))


def build_rate_surrogate(net, ch, alloc_prev, q, kind: str = "access"):
    """Tangent surrogates for every assigned link of one direction.

    Returns (surrogates, basis) where the power vector layout is the one
    given by the PowerBasis of that direction (access links first, then
    fronthaul).  kind selects which link family the surrogates cover.
    """
    from .phy import direction_power_basis

    basis = direction_power_basis(net, ch, alloc_prev, q)
    p0 = basis.assigned_powers(alloc_prev)
    weight = net.w_s / LN2
    surrogates = []
    if kind == "access":
        for li in range(len(basis.acc_links)):
            den_a = basis.den_acc[li]
            num_a = den_a.copy()
            num_a[li] += basis.own_acc[li]
            surrogates.append(make_dc_surrogate(num_a, basis.noise, den_a,
                                                basis.noise, weight, p0))
    elif kind == "fronthaul":
        off = len(basis.acc_links)
        for li in range(len(basis.fh_links)):
            den_a = basis.den_fh[li]
            num_a = den_a.copy()
            num_a[off + li] += basis.own_fh[li]
            surrogates.append(make_dc_surrogate(num_a, basis.noise, den_a,
                                                basis.noise, weight, p0))
    else:
        raise ValueError(f"unknown link kind: {kind}")
    return surrogates, basis
