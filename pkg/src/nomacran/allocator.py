"""Three-step block-coordinate allocation loop.

Each outer iteration reassigns subcarriers at frozen powers (a relaxed
linear program plus rounding), re-optimizes powers at the fixed assignment
(successive tangent-surrogate convexification of the rate constraints),
and, once the power trajectory has settled, re-splits the end-to-end delay
budget so the rate floors track where capacity is cheap.  The iteration
objective is guarded to be non-increasing: a reassignment whose
re-optimized power is worse than the incumbent is reverted.
"""

from dataclasses import dataclass, field, replace
import math
import time

import numpy as np

from .topology import DL, UL, N_DIR, ChannelRealization, NetworkInstance
from .delay import (DelayBudget, DelayInfeasibleError, QosThresholds,
                    RateFloors, adjust_delays, floors_from_budget)
from .phy import (Allocation, access_denominators, aggregate_rates,
                  check_constraints, direction_power_basis,
                  fronthaul_denominators, own_access_gain, total_power)
from .convex import ConvexProgram, LogAffineConstraint, solve_convex, solve_lp

LN2 = math.log(2.0)
EPS_TH_DEFAULT = 1e-4
Z_TH_DEFAULT = 100
SCA_ROUNDS = 30
SCA_TOL = 1e-6


class PowerStepInfeasibleError(RuntimeError):
    """No power vector satisfies the rate floors at the fixed assignment."""


@dataclass
class IterationTrace:
    """Per-iteration objective, feasibility flags, power change and timing."""

    objectives: list = field(default_factory=list)
    power_change: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    wall_time: float = 0.0

    def is_monotone(self, slack: float = 1e-6) -> bool:
        obj = self.objectives
        return all(obj[z + 1] <= obj[z] + slack for z in range(len(obj) - 1))


@dataclass
class SolveOutcome:
    """Final allocation with status, trace and the constraint report."""

    allocation: Allocation
    status: str                       # converged | iteration-cap | infeasible
    trace: IterationTrace
    report: object
    objective_w: float
    mode: str
    delay_mode: str
    iterations: int


def _probe_powers(net: NetworkInstance):
    """Nominal per-link powers used for links outside the current assignment."""
    p_acc = np.empty((net.num_users, net.k1, N_DIR))
    p_acc[:, :, UL] = 0.5 * net.p_user_ul / net.k1
    p_acc[:, :, DL] = 0.5 * net.p_rrh_dl / net.k1
    p_fh = np.empty((net.k2, net.num_rrh, N_DIR))
    p_fh[:, :, UL] = 0.5 * net.p_rrh_ul / net.k2
    p_fh[:, :, DL] = 0.5 * net.p_bbu_dl / net.k2
    return p_acc, p_fh


def _adaptive_probes(net: NetworkInstance, alloc: Allocation):
    """Probe powers tracking the current power scale of each transmitter.

    Candidate links priced at the incumbent scale let the assignment
    program trade channels honestly; the half-budget nominal is the upper
    fallback when a transmitter has nothing assigned yet.
    """
    probe_acc, probe_fh = _probe_powers(net)

    def mean_on(p, mask):
        return float(p[mask].mean()) if mask.any() else None

    for q in (UL, DL):
        acc_mask = alloc.tau[:, :, q] > 0.5
        class_mean = mean_on(alloc.p_acc[:, :, q], acc_mask)
        if q == UL:
            for i in range(net.num_users):
                m = mean_on(alloc.p_acc[i, :, q], acc_mask[i])
                val = m if m is not None else class_mean
                if val is not None:
                    probe_acc[i, :, q] = min(val, probe_acc[i, 0, q])
        else:
            for j in range(net.num_rrh):
                users = net.users_at_rrh(j)
                m = mean_on(alloc.p_acc[users, :, q], acc_mask[users])
                val = m if m is not None else class_mean
                if val is not None:
                    probe_acc[users, :, q] = min(val, probe_acc[users[0], 0, q])
        fh_mask = alloc.x[:, :, q] > 0.5
        class_mean_fh = mean_on(alloc.p_fh[:, :, q], fh_mask)
        if q == UL:
            for j in range(net.num_rrh):
                m = mean_on(alloc.p_fh[:, j, q], fh_mask[:, j])
                val = m if m is not None else class_mean_fh
                if val is not None:
                    probe_fh[:, j, q] = min(val, probe_fh[0, j, q])
        else:
            if class_mean_fh is not None:
                probe_fh[:, :, q] = np.minimum(class_mean_fh, probe_fh[:, :, q])
    return probe_acc, probe_fh


def initialize(net: NetworkInstance, ch: ChannelRealization) -> Allocation:
    """Round-robin single-user assignment, half-budget powers, equal delay split."""
    tau = np.zeros((net.num_users, net.k1, N_DIR))
    for j in range(net.num_rrh):
        users = net.users_at_rrh(j)
        for k1 in range(net.k1):
            tau[users[k1 % len(users)], k1, :] = 1.0
    x = np.zeros((net.k2, net.num_rrh, N_DIR))
    for k2 in range(net.k2):
        x[k2, k2 % net.num_rrh, :] = 1.0

    p_acc, p_fh = _probe_powers(net)
    for i in range(net.num_users):
        n_links = int(tau[i, :, UL].sum())
        if n_links:
            p_acc[i, tau[i, :, UL] > 0.5, UL] = 0.5 * net.p_user_ul / n_links
    for j in range(net.num_rrh):
        users = net.users_at_rrh(j)
        assigned = tau[users, :, DL].sum()
        if assigned:
            mask = tau[users, :, DL] > 0.5
            sub = p_acc[users, :, DL]
            sub[mask] = 0.5 * net.p_rrh_dl / assigned
            p_acc[users, :, DL] = sub
        n_fh = int(x[:, j, UL].sum())
        if n_fh:
            p_fh[x[:, j, UL] > 0.5, j, UL] = 0.5 * net.p_rrh_ul / n_fh
    n_fh_dl = x[:, :, DL].sum()
    if n_fh_dl:
        mask = x[:, :, DL] > 0.5
        sub = p_fh[:, :, DL]
        sub[mask] = 0.5 * net.p_bbu_dl / n_fh_dl
        p_fh[:, :, DL] = sub

    return Allocation(p_acc=p_acc, tau=tau, p_fh=p_fh, x=x,
                      budget=DelayBudget.equal_thirds(net))


# ---------------------------------------------------------------------------
# subcarrier step


def _not_worse(cand_rep, prev_rep, tol: float = 1e-6) -> bool:
    """Candidate acceptable when no constraint family got (newly) worse."""
    return all(cand_rep.normalized[f] <= max(prev_rep.normalized[f], tol)
               for f in cand_rep.normalized)


def subcarrier_step(alloc: Allocation, ch: ChannelRealization,
                    net: NetworkInstance, floors: RateFloors,
                    thr: QosThresholds):
    """Reassign subcarriers at frozen powers and interference.

    Solves the continuous relaxation (assignment weights in [0, 1]) per
    direction, rounds per subcarrier keeping at most the multiplexing cap
    of the largest weights above 0.5/cap, then re-verifies the full
    constraint set; subcarriers whose reassignment breaks feasibility fall
    back to the incumbent assignment column by column.
    """
    probe_acc, probe_fh = _adaptive_probes(net, alloc)
    probed = Allocation(p_acc=np.where(alloc.tau > 0.5, alloc.p_acc, probe_acc),
                        tau=alloc.tau.copy(),
                        p_fh=np.where(alloc.x > 0.5, alloc.p_fh, probe_fh),
                        x=alloc.x.copy(), budget=alloc.budget)
    rates = aggregate_rates(net, ch, probed)
    tau_new = alloc.tau.copy()
    x_new = alloc.x.copy()
    info = {"sub_ok": True, "lp_status": []}

    for q in (UL, DL):
        sol = _direction_assignment_lp(probed, ch, net, floors, rates, q)
        if sol is None:
            info["lp_status"].append("infeasible")
            info["sub_ok"] = False
            continue
        info["lp_status"].append("optimal")
        tau_frac, x_frac = sol
        tau_new[:, :, q] = _round_access(net, tau_frac)
        x_new[:, :, q] = _round_fronthaul(net, x_frac)

    p_acc = np.where(tau_new > 0.5, probed.p_acc, probe_acc)
    p_fh = np.where(x_new > 0.5, probed.p_fh, probe_fh)
    candidate = Allocation(p_acc=p_acc, tau=tau_new, p_fh=p_fh, x=x_new,
                           budget=alloc.budget)
    if np.array_equal(tau_new, alloc.tau) and np.array_equal(x_new, alloc.x):
        return alloc, info

    prev_rep = check_constraints(alloc, ch, net, thr, floors=floors)
    cand_rep = check_constraints(candidate, ch, net, thr, floors=floors)
    if _not_worse(cand_rep, prev_rep):
        return candidate, info

    # revert changed subcarrier columns one at a time until acceptable again
    tau_c, x_c = tau_new.copy(), x_new.copy()
    changed_k1 = [k1 for k1 in range(net.k1)
                  if not np.array_equal(tau_c[:, k1, :], alloc.tau[:, k1, :])]
    changed_k2 = [k2 for k2 in range(net.k2)
                  if not np.array_equal(x_c[k2], alloc.x[k2])]
    reverted = False
    for kind, col in [("acc", k) for k in changed_k1] + [("fh", k) for k in changed_k2]:
        if kind == "acc":
            tau_c[:, col, :] = alloc.tau[:, col, :]
        else:
            x_c[col] = alloc.x[col]
        p_acc = np.where(tau_c > 0.5, probed.p_acc, probe_acc)
        p_fh = np.where(x_c > 0.5, probed.p_fh, probe_fh)
        candidate = Allocation(p_acc=p_acc, tau=tau_c.copy(), p_fh=p_fh,
                               x=x_c.copy(), budget=alloc.budget)
        cand_rep = check_constraints(candidate, ch, net, thr, floors=floors)
        if _not_worse(cand_rep, prev_rep):
            reverted = True
            break
    if not reverted:
        info["sub_ok"] = False
        return alloc, info
    info["partial_revert"] = True
    return candidate, info


def _direction_assignment_lp(alloc, ch, net, floors, rates, q):
    """Relaxed assignment program for one direction; None when infeasible."""
    n_tau = net.num_users * net.k1
    n_x = net.k2 * net.num_rrh
    n = n_tau + n_x

    def ti(i, k1):
        return i * net.k1 + k1

    def xi(k2, j):
        return n_tau + k2 * net.num_rrh + j

    p_acc = alloc.p_acc[:, :, q]
    p_fh = alloc.p_fh[:, :, q]
    r_acc = rates.acc_link[:, :, q]
    r_fh = rates.fh_link[:, :, q]

    c_obj = np.concatenate([p_acc.ravel(), p_fh.ravel()])
    rows, rhs = [], []

    def add(row, b):
        rows.append(row)
        rhs.append(b)

    for j in range(net.num_rrh):
        users = net.users_at_rrh(j)
        for k1 in range(net.k1):
            row = np.zeros(n)
            for i in users:
                row[ti(i, k1)] = 1.0
            add(row, float(net.l1))
    for k2 in range(net.k2):
        row = np.zeros(n)
        for j in range(net.num_rrh):
            row[xi(k2, j)] = 1.0
        add(row, float(net.l2))

    if q == UL:
        for i in range(net.num_users):
            row = np.zeros(n)
            row[ti(i, 0):ti(i, 0) + net.k1] = p_acc[i]
            add(row, net.p_user_ul)
        for j in range(net.num_rrh):
            row = np.zeros(n)
            for k2 in range(net.k2):
                row[xi(k2, j)] = p_fh[k2, j]
            add(row, net.p_rrh_ul)
        for j in range(net.num_rrh):
            row = np.zeros(n)
            for i in net.users_at_rrh(j):
                row[ti(i, 0):ti(i, 0) + net.k1] = -r_acc[i]
            add(row, -floors.rrh_ul[j])
        row = np.zeros(n)
        row[n_tau:] = -r_fh.ravel()
        add(row, -floors.bbu_ul)
        row = np.zeros(n)
        row[:n_tau] = r_acc.ravel()
        row[n_tau:] = -r_fh.ravel()
        add(row, 0.0)
    else:
        for j in range(net.num_rrh):
            row = np.zeros(n)
            for i in net.users_at_rrh(j):
                row[ti(i, 0):ti(i, 0) + net.k1] = p_acc[i]
            add(row, net.p_rrh_dl)
        row = np.zeros(n)
        row[n_tau:] = p_fh.ravel()
        add(row, net.p_bbu_dl)
        for i in range(net.num_users):
            row = np.zeros(n)
            row[ti(i, 0):ti(i, 0) + net.k1] = -r_acc[i]
            add(row, -floors.user_dl[i])
        row = np.zeros(n)
        row[:n_tau] = -r_acc.ravel()
        row[n_tau:] = r_fh.ravel()
        add(row, 0.0)

    for s in range(net.num_slices):
        row = np.zeros(n)
        for i in net.users_in_slice(s):
            row[ti(i, 0):ti(i, 0) + net.k1] = -r_acc[i]
        add(row, -float(net.r_rsv[s, q]))

    # decode-order gates at frozen interference: exclude pairings that the
    # current denominators show cannot satisfy the SIC ordering
    if net.l1 >= 2:
        den = access_denominators(net, ch, alloc, q)
        g_own = own_access_gain(net, ch, q)
        for j in range(net.num_rrh):
            users = net.users_at_rrh(j)
            for k1 in range(net.k1):
                for a in users:
                    for b in users:
                        if a == b or not g_own[a, k1] > g_own[b, k1]:
                            continue
                        lhs = g_own[b, k1] * den[a, k1]
                        rhsv = g_own[a, k1] * den[b, k1]
                        if lhs > rhsv * (1 + 1e-12):
                            row = np.zeros(n)
                            row[ti(a, k1)] = 1.0
                            row[ti(b, k1)] = 1.0
                            add(row, 1.0)
    if net.l2 >= 2:
        den_f = fronthaul_denominators(net, ch, alloc, q)
        gain = ch.fronthaul_gain[:, :, q]
        for k2 in range(net.k2):
            for a in range(net.num_rrh):
                for b in range(net.num_rrh):
                    if a == b or not gain[k2, a] > gain[k2, b]:
                        continue
                    if gain[k2, b] * den_f[k2, a] > gain[k2, a] * den_f[k2, b] * (1 + 1e-12):
                        row = np.zeros(n)
                        row[xi(k2, a)] = 1.0
                        row[xi(k2, b)] = 1.0
                        add(row, 1.0)

    res = solve_lp(c_obj, a_ineq=np.asarray(rows), b_ineq=np.asarray(rhs),
                   bounds=[(0.0, 1.0)] * n)
    if not res.ok:
        return None
    tau_frac = res.x[:n_tau].reshape(net.num_users, net.k1)
    x_frac = res.x[n_tau:].reshape(net.k2, net.num_rrh)
    return tau_frac, x_frac


def _round_access(net, tau_frac):
    """Per (RRH, subcarrier): keep at most l1 largest weights above 0.5/l1."""
    out = np.zeros_like(tau_frac)
    cutoff = 0.5 / net.l1
    for j in range(net.num_rrh):
        users = net.users_at_rrh(j)
        for k1 in range(net.k1):
            cands = sorted(((float(tau_frac[i, k1]), -int(i)) for i in users
                            if tau_frac[i, k1] > cutoff), reverse=True)
            for frac, neg_i in cands[: net.l1]:
                out[-neg_i, k1] = 1.0
    return out


def _round_fronthaul(net, x_frac):
    out = np.zeros_like(x_frac)
    cutoff = 0.5 / net.l2
    for k2 in range(net.k2):
        cands = sorted(((float(x_frac[k2, j]), -int(j)) for j in range(net.num_rrh)
                        if x_frac[k2, j] > cutoff), reverse=True)
        for frac, neg_j in cands[: net.l2]:
            out[k2, -neg_j] = 1.0
    return out


# ---------------------------------------------------------------------------
# power step


def _direction_floor_groups(net, floors, basis, q):
    """(link-index-array, floor) groups for this direction's rate floors."""
    groups = []
    acc_users = np.array([i for i, _ in basis.acc_links], dtype=int)
    n_acc = len(basis.acc_links)
    n_all = basis.n
    if q == UL:
        for j in range(net.num_rrh):
            if floors.rrh_ul[j] > 0:
                idx = np.flatnonzero(net.user_rrh[acc_users] == j)
                groups.append((idx, float(floors.rrh_ul[j]), f"rrh_ul[{j}]"))
        if floors.bbu_ul > 0:
            groups.append((np.arange(n_acc, n_all), float(floors.bbu_ul), "bbu_ul"))
    else:
        for i in range(net.num_users):
            if floors.user_dl[i] > 0:
                idx = np.flatnonzero(acc_users == i)
                groups.append((idx, float(floors.user_dl[i]), f"user_dl[{i}]"))
    for s in range(net.num_slices):
        if net.r_rsv[s, q] > 0:
            idx = np.flatnonzero(net.user_slice[acc_users] == s)
            groups.append((idx, float(net.r_rsv[s, q]), f"slice[{s}]"))
    return groups


def power_step(alloc: Allocation, ch: ChannelRealization, net: NetworkInstance,
               floors: RateFloors, sca_rounds: int = SCA_ROUNDS,
               sca_tol: float = SCA_TOL, solver_tol: float = 1e-8):
    """Minimize transmit power at fixed assignments and delay budget.

    Inner loop: rebuild tangent surrogates of the rate constraints at the
    current powers, solve the resulting convex program, repeat until the
    objective change falls below sca_tol (relative) or the round cap.
    Raises PowerStepInfeasibleError when no power vector can satisfy the
    floors.
    """
    p_acc = alloc.p_acc.copy()
    p_fh = alloc.p_fh.copy()
    info = {"pow_ok": True, "sca_rounds": [], "verified": True}

    for q in (UL, DL):
        basis = direction_power_basis(net, ch, alloc, q)
        groups = _direction_floor_groups(net, floors, basis, q)
        if basis.n == 0:
            if groups:
                raise PowerStepInfeasibleError(
                    f"power step infeasible: rate floors with no assigned links "
                    f"(direction {q})")
            continue
        if not groups:
            # nothing forces any rate: the unconstrained minimum is zero power
            for li, (i, k1) in enumerate(basis.acc_links):
                p_acc[i, k1, q] = 0.0
            for li, (k2, j) in enumerate(basis.fh_links):
                p_fh[k2, j, q] = 0.0
            info["sca_rounds"].append(0)
            continue
        if any(len(idx) == 0 and flo > 0 for idx, flo, _ in groups):
            raise PowerStepInfeasibleError(
                f"power step infeasible: rate floor on unserved queue (direction {q})")
        if len(basis.fh_links) == 0 and q == UL:
            raise PowerStepInfeasibleError(
                "power step infeasible: no uplink fronthaul links")

        p_vec = _sca_minimize(net, basis, groups, ch, alloc, q,
                              sca_rounds, sca_tol, solver_tol, info)
        for li, (i, k1) in enumerate(basis.acc_links):
            p_acc[i, k1, q] = p_vec[li]
        off = len(basis.acc_links)
        for li, (k2, j) in enumerate(basis.fh_links):
            p_fh[k2, j, q] = p_vec[off + li]

    new_alloc = Allocation(p_acc=p_acc, tau=alloc.tau.copy(), p_fh=p_fh,
                           x=alloc.x.copy(), budget=alloc.budget)
    return new_alloc, info


def _sca_minimize(net, basis, groups, ch, alloc, q, sca_rounds, sca_tol,
                  solver_tol, info):
    """Tangent-surrogate rounds over the scaled power vector of direction q."""
    n = basis.n
    n_acc = len(basis.acc_links)
    scale = basis.var_caps
    sigma = basis.noise
    # sigma-normalized affine forms in the scaled variable z = p / cap
    a_den = np.vstack([basis.den_acc, basis.den_fh]) * scale[None, :] / sigma
    a_num = a_den.copy()
    own = np.concatenate([basis.own_acc, basis.own_fh])
    a_num[np.arange(n), np.arange(n)] += own * scale / sigma
    w_hz = 1.0 / LN2      # rates handled in bits/s/Hz

    static_cons = []
    for idx, cap, _name in basis.cap_groups:
        lin = np.zeros(n)
        lin[idx] = scale[idx] / cap
        static_cons.append(LogAffineConstraint(lin=lin, const=-1.0))
    sic_rows, sic_consts = basis.sic_rows(net, ch)
    for row, cst in zip(sic_rows, sic_consts):
        static_cons.append(LogAffineConstraint(lin=row * scale, const=float(cst)))

    acc_idx = np.arange(n_acc)
    fh_idx = np.arange(n_acc, n)

    def build_constraints(z0):
        cons = list(static_cons)
        d0 = 1.0 + a_den @ z0
        n0 = 1.0 + a_num @ z0
        for idx, flo, _name in groups:
            lin = (w_hz / d0[idx])[:, None] * a_den[idx]
            lin = lin.sum(axis=0)
            const = flo / net.w_s + w_hz * float(
                (np.log(d0[idx]) - (a_den[idx] @ z0) / d0[idx]).sum())
            cons.append(LogAffineConstraint(lin=lin, const=const,
                                            log_a=a_num[idx],
                                            log_b=np.ones(len(idx)),
                                            log_w=np.full(len(idx), w_hz)))
        # queue stability: the side that must stay small gets the affine
        # over-estimator, the covering side keeps its concave minorant
        small, large = (acc_idx, fh_idx) if q == UL else (fh_idx, acc_idx)
        if len(small) and len(large):
            lin = ((w_hz / n0[small])[:, None] * a_num[small]).sum(axis=0)
            lin += ((w_hz / d0[large])[:, None] * a_den[large]).sum(axis=0)
            const = w_hz * float(
                (np.log(n0[small]) - (a_num[small] @ z0) / n0[small]).sum())
            const += w_hz * float(
                (np.log(d0[large]) - (a_den[large] @ z0) / d0[large]).sum())
            log_a = np.vstack([a_den[small], a_num[large]])
            cons.append(LogAffineConstraint(
                lin=lin, const=const, log_a=log_a,
                log_b=np.ones(log_a.shape[0]),
                log_w=np.full(log_a.shape[0], w_hz)))
        return cons

    mu_warm = None

    def solve_at(z0, x_start):
        prog = ConvexProgram(
            n=n,
            objective=lambda v: float(scale @ v),
            gradient=lambda v: scale,
            hessian=lambda v: np.zeros((n, n)),
            constraints=build_constraints(z0),
            lb=np.zeros(n),
            ub=np.ones(n),
        )
        mu0 = None if mu_warm is None else mu_warm * 100.0
        return solve_convex(prog, x_start, tol=solver_tol, mu_init=mu0)

    z = basis.assigned_powers(alloc) / scale
    # links that no floor pulls up and whose rate only appears on the small
    # side of the stability coupling start near zero: a tangent built at
    # high power over-credits their rate and stalls the descent
    floored = np.zeros(n, dtype=bool)
    for idx, _flo, _name in groups:
        floored[idx] = True
    small_side = np.arange(n_acc) if q == UL else np.arange(n_acc, n)
    drop = small_side[~floored[small_side]]
    z[drop] = np.minimum(z[drop], 1e-12)

    obj_cur = float(scale @ z)
    rounds_done = 0
    prev_delta = None
    for rnd in range(sca_rounds):
        res = solve_at(z, z)
        if res.status == "infeasible":
            if rnd > 0:
                break
            # tangents built far from the feasible set under-estimate the
            # rates; re-expand at the least-violating point and retry
            restored = False
            z_r = np.clip(res.x, 0.0, 1.0)
            for _ in range(10):
                res = solve_at(z_r, z_r)
                if res.status != "infeasible":
                    restored = True
                    break
                z_next = np.clip(res.x, 0.0, 1.0)
                if np.allclose(z_next, z_r, rtol=0, atol=1e-15):
                    break
                z_r = z_next
            if not restored:
                raise PowerStepInfeasibleError(
                    f"power step infeasible (direction {q})")
        mu_warm = res.mu_final
        obj_new = float(scale @ res.x)
        rounds_done = rnd + 1
        if obj_new > obj_cur * (1 + 1e-12) and rnd > 0:
            break
        z = res.x
        delta = abs(obj_cur - obj_new)
        obj_cur = obj_new
        if delta <= sca_tol * max(obj_cur, 1e-300):
            break
        # diminishing returns: a slowly contracting tail whose total
        # remaining sum is bounded well under the verification tolerances
        if (prev_delta is not None and rnd >= 7
                and delta <= 3e-4 * obj_cur and delta >= 0.7 * prev_delta):
            break
        prev_delta = delta
    info["sca_rounds"].append(rounds_done)

    p_vec = z * scale
    r_acc, r_fh = basis.link_rates(p_vec, net.w_s)
    rates_all = np.concatenate([r_acc, r_fh])
    for idx, flo, _name in groups:
        if rates_all[idx].sum() < flo * (1 - 1e-6) - 1e-9:
            info["verified"] = False
    return p_vec


# ---------------------------------------------------------------------------
# delay step and the outer loop


def delay_step(alloc: Allocation, ch: ChannelRealization, net: NetworkInstance,
               thr: QosThresholds):
    """Re-split the delay budget from the current rates; returns (alloc, floors).

    The new budget keeps the current allocation feasible by construction
    (every new floor is at or below the rate its queue currently gets).
    """
    rates = aggregate_rates(net, ch, alloc)
    budget = adjust_delays(rates.rrh_total[:, UL], float(rates.bbu_total[UL]),
                           rates.user_total[:, DL], thr, net.d_total_max)
    new_alloc = replace(alloc, budget=budget)
    return new_alloc, floors_from_budget(thr, budget)


def _effective_power_vector(alloc: Allocation) -> np.ndarray:
    return np.concatenate([(alloc.tau * alloc.p_acc).ravel(),
                           (alloc.x * alloc.p_fh).ravel()])


def run(net: NetworkInstance, ch: ChannelRealization, mode: str = "noma",
        delay_mode: str = "dynamic", eps_th: float = EPS_TH_DEFAULT,
        z_th: int = Z_TH_DEFAULT) -> SolveOutcome:
    """Full solve: iterate the three steps until the power vector settles.

    mode "ofdma" caps multiplexing at one user (RRH) per subcarrier.  In
    delay_mode "dynamic" the budget re-split activates once the fixed-split
    phase has converged, so the dynamic solution continues (and can only
    improve on) the fixed-split one; "fixed" keeps the equal split.
    """
    if mode == "ofdma":
        net = replace(net, l1=1, l2=1)
    elif mode != "noma":
        raise ValueError(f"unknown mode: {mode}")
    if delay_mode not in ("dynamic", "fixed"):
        raise ValueError(f"unknown delay mode: {delay_mode}")

    thr = QosThresholds.from_network(net)
    alloc = initialize(net, ch)
    floors = floors_from_budget(thr, alloc.budget)
    trace = IterationTrace()
    t0 = time.perf_counter()
    prev_eff = _effective_power_vector(alloc)
    prev_obj = np.inf
    phase2 = False
    status = "iteration-cap"
    iterations = 0

    for z in range(1, z_th + 1):
        iterations = z
        flags = {}
        candidate, sub_info = subcarrier_step(alloc, ch, net, floors, thr)
        flags.update(sub_info)
        try:
            candidate, pow_info = power_step(candidate, ch, net, floors)
            flags.update(pow_info)
        except PowerStepInfeasibleError as exc:
            if not (np.array_equal(candidate.tau, alloc.tau)
                    and np.array_equal(candidate.x, alloc.x)):
                # retry at the incumbent assignment before giving up
                try:
                    candidate, pow_info = power_step(alloc, ch, net, floors)
                    flags.update(pow_info)
                    flags["sub_reverted"] = True
                except PowerStepInfeasibleError:
                    status = "infeasible"
                    flags["error"] = str(exc)
                    trace.flags.append(flags)
                    break
            else:
                status = "infeasible"
                flags["error"] = str(exc)
                trace.flags.append(flags)
                break

        obj = total_power(candidate)
        if obj > prev_obj * (1 + 1e-12):
            # descent guard: this iteration made things worse, keep incumbent
            candidate = alloc
            obj = prev_obj
            flags["iteration_reverted"] = True
        alloc = candidate

        eff = _effective_power_vector(alloc)
        rel_change = float(np.linalg.norm(eff - prev_eff)
                           / (1.0 + np.linalg.norm(prev_eff)))
        prev_eff = eff
        prev_obj = obj

        delay_applied = False
        if delay_mode == "dynamic" and phase2:
            try:
                alloc, floors = delay_step(alloc, ch, net, thr)
                delay_applied = True
            except DelayInfeasibleError as exc:
                status = "infeasible"
                flags["error"] = str(exc)
                trace.objectives.append(obj)
                trace.power_change.append(rel_change)
                trace.flags.append(flags)
                break
        flags["delay_applied"] = delay_applied

        trace.objectives.append(obj)
        trace.power_change.append(rel_change)
        trace.flags.append(flags)

        if rel_change <= eps_th:
            if phase2 or delay_mode == "fixed":
                status = "converged"
                break
            phase2 = True
            try:
                alloc, floors = delay_step(alloc, ch, net, thr)
                flags["delay_applied"] = True
            except DelayInfeasibleError as exc:
                status = "infeasible"
                flags["error"] = str(exc)
                break

    trace.wall_time = time.perf_counter() - t0
    report = check_constraints(alloc, ch, net, thr,
                               floors=floors_from_budget(thr, alloc.budget))
    if status == "converged" and not report.feasible:
        status = "iteration-cap"
    return SolveOutcome(allocation=alloc, status=status, trace=trace,
                        report=report, objective_w=total_power(alloc),
                        mode=mode, delay_mode=delay_mode, iterations=iterations)
