"""Link SINRs, rates, total power and the full constraint report.

Interference convention on a shared access subcarrier: the receiver of
link (i, k1) sees intra-cell interference from co-scheduled users of the
same RRH whose gain on k1 strictly exceeds its own (weaker-gain signals
are cancelled), weighted by the receiver's own channel gain, plus
inter-cell interference from every scheduled user of other RRHs through
the corresponding cross gain.  Fronthaul links follow the same rule across
RRHs.  Assignment weights enter interference fractionally so the same
formulas serve relaxed and binary allocations.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .topology import DL, UL, N_DIR, ChannelRealization, NetworkInstance
from .delay import DelayBudget, QosThresholds, RateFloors, floors_from_budget

FEAS_TOL = 1e-6

CONSTRAINT_FAMILIES = (
    "access_mux_cap", "rrh_dl_power", "user_ul_power", "access_sic_order",
    "fh_mux_cap", "rrh_ul_power", "bbu_dl_power", "fh_sic_order",
    "delay_split", "rrh_ul_rate_floor", "bbu_ul_rate_floor",
    "user_dl_rate_floor", "ul_queue_stability", "dl_queue_stability",
    "slice_isolation",
)


@dataclass(frozen=True)
class Allocation:
    """Decision state: powers, assignment weights and the delay budget.

    Assignment weights live in [0, 1]; a final allocation is binary.
    Power entries of unassigned links are kept as nominal probe values so
    candidate links can be rated during subcarrier reassignment.
    """

    p_acc: np.ndarray        # (num_users, k1, 2) Watts
    tau: np.ndarray          # (num_users, k1, 2) in [0, 1]
    p_fh: np.ndarray         # (k2, num_rrh, 2) Watts
    x: np.ndarray            # (k2, num_rrh, 2) in [0, 1]
    budget: DelayBudget

    def __post_init__(self):
        for arr in (self.p_acc, self.tau, self.p_fh, self.x):
            arr.setflags(write=False)

    def is_binary(self, tol: float = 1e-9) -> bool:
        for arr in (self.tau, self.x):
            if np.abs(arr - np.round(arr)).max() > tol:
                return False
        return True


@dataclass(frozen=True)
class RateReport:
    """Per-link rates plus assignment-weighted totals (bits/s)."""

    acc_link: np.ndarray     # (num_users, k1, 2) unweighted per-link rates
    fh_link: np.ndarray      # (k2, num_rrh, 2)
    rrh_total: np.ndarray    # (num_rrh, 2) access totals per RRH
    bbu_total: np.ndarray    # (2,) fronthaul totals
    slice_total: np.ndarray  # (num_slices, 2) access totals per slice
    user_total: np.ndarray   # (num_users, 2) access totals per user

    def __post_init__(self):
        for arr in (self.acc_link, self.fh_link, self.rrh_total,
                    self.bbu_total, self.slice_total, self.user_total):
            arr.setflags(write=False)


def sic_order(gains):
    """Decode order on one subcarrier: descending gain, ties by user index."""
    for _, g in gains:
        if g <= 0:
            raise ValueError("gains must be positive")
    return [u for u, _ in sorted(gains, key=lambda ug: (-ug[1], ug[0]))]


def own_access_gain(net: NetworkInstance, ch: ChannelRealization, q: int) -> np.ndarray:
    """(num_users, k1) gain of each user on its serving RRH."""
    idx = np.arange(net.num_users)
    return ch.access_gain[idx, :, net.user_rrh[idx], q]


def access_denominators(net: NetworkInstance, ch: ChannelRealization,
                        alloc: Allocation, q: int) -> np.ndarray:
    """(num_users, k1) noise-plus-interference per access link."""
    t = alloc.tau[:, :, q] * alloc.p_acc[:, :, q]
    gain = ch.access_gain[:, :, :, q]
    g_own = own_access_gain(net, ch, q)

    # per-RRH scheduled power on each subcarrier
    s_rrh = np.zeros((net.num_rrh, net.k1))
    for j in range(net.num_rrh):
        s_rrh[j] = t[net.users_at_rrh(j)].sum(axis=0)

    inter = np.einsum("ikj,jk->ik", gain, s_rrh)
    idx = np.arange(net.num_users)
    inter -= gain[idx, :, net.user_rrh[idx]] * s_rrh[net.user_rrh[idx], :]

    intra = np.zeros_like(inter)
    for j in range(net.num_rrh):
        users = net.users_at_rrh(j)
        g_j = g_own[users]                        # (u, k1)
        t_j = t[users]
        stronger = g_j[None, :, :] > g_j[:, None, :]
        intra[users] = g_j * np.einsum("uvk,vk->uk", stronger, t_j)
    return ch.noise_power + intra + inter


def fronthaul_denominators(net: NetworkInstance, ch: ChannelRealization,
                           alloc: Allocation, q: int) -> np.ndarray:
    """(k2, num_rrh) noise-plus-interference per fronthaul link."""
    xp = alloc.x[:, :, q] * alloc.p_fh[:, :, q]
    gain = ch.fronthaul_gain[:, :, q]
    stronger = gain[:, :, None] > gain[:, None, :]   # [k2, f, j]: g_f > g_j
    inter = gain * np.einsum("kfj,kf->kj", stronger, xp)
    return ch.noise_power + inter


def access_sinr(alloc: Allocation, ch: ChannelRealization, net: NetworkInstance,
                i: int, k1: int, q: int) -> float:
    den = access_denominators(net, ch, alloc, q)
    g = own_access_gain(net, ch, q)
    return float(alloc.p_acc[i, k1, q] * g[i, k1] / den[i, k1])


def fronthaul_sinr(alloc: Allocation, ch: ChannelRealization, net: NetworkInstance,
                   k2: int, j: int, q: int) -> float:
    den = fronthaul_denominators(net, ch, alloc, q)
    return float(alloc.p_fh[k2, j, q] * ch.fronthaul_gain[k2, j, q] / den[k2, j])


def access_rate(gamma, bandwidth_hz):
    """Shannon rate bandwidth * log2(1 + gamma), bits/s."""
    if np.any(np.asarray(gamma) < 0):
        raise ValueError("SINR must be non-negative")
    return bandwidth_hz * np.log2(1.0 + gamma)


fronthaul_rate = access_rate


def aggregate_rates(net: NetworkInstance, ch: ChannelRealization,
                    alloc: Allocation) -> RateReport:
    """Per-link rates and the assignment-weighted totals."""
    acc_link = np.zeros((net.num_users, net.k1, N_DIR))
    fh_link = np.zeros((net.k2, net.num_rrh, N_DIR))
    for q in (UL, DL):
        den = access_denominators(net, ch, alloc, q)
        g = own_access_gain(net, ch, q)
        acc_link[:, :, q] = access_rate(alloc.p_acc[:, :, q] * g / den, net.w_s)
        den_fh = fronthaul_denominators(net, ch, alloc, q)
        fh_link[:, :, q] = access_rate(
            alloc.p_fh[:, :, q] * ch.fronthaul_gain[:, :, q] / den_fh, net.w_s)

    weighted_acc = alloc.tau * acc_link
    user_total = weighted_acc.sum(axis=1)
    rrh_total = np.zeros((net.num_rrh, N_DIR))
    for j in range(net.num_rrh):
        rrh_total[j] = user_total[net.users_at_rrh(j)].sum(axis=0)
    slice_total = np.zeros((net.num_slices, N_DIR))
    for s in range(net.num_slices):
        slice_total[s] = user_total[net.users_in_slice(s)].sum(axis=0)
    bbu_total = (alloc.x * fh_link).sum(axis=(0, 1))
    return RateReport(acc_link=acc_link, fh_link=fh_link, rrh_total=rrh_total,
                      bbu_total=bbu_total, slice_total=slice_total,
                      user_total=user_total)


def total_power(alloc: Allocation) -> float:
    """Assignment-weighted transmit power over all links and directions (W)."""
    return float((alloc.tau * alloc.p_acc).sum() + (alloc.x * alloc.p_fh).sum())


@dataclass
class ConstraintReport:
    """Signed residuals (<= 0 means satisfied) per constraint family."""

    residuals: dict          # family -> ndarray of absolute residuals
    normalized: dict         # family -> worst normalized residual (float)
    feasible: bool
    max_normalized: float
    worst_family: str

    def to_csv_row(self):
        cells = [f"{self.max_normalized!r}", self.worst_family]
        cells += [f"{self.normalized[f]!r}" for f in CONSTRAINT_FAMILIES]
        return cells

    @staticmethod
    def csv_header():
        return ["max_residual", "worst_family"] + [f"res_{f}" for f in CONSTRAINT_FAMILIES]


def check_constraints(alloc: Allocation, ch: ChannelRealization,
                      net: NetworkInstance, thr: QosThresholds,
                      floors: RateFloors | None = None,
                      tol: float = FEAS_TOL) -> ConstraintReport:
    """Evaluate every scheduling, power, SIC, delay and rate constraint.

    Pure reporting: never raises on violations.  Residuals are absolute
    (counts, Watts, bits/s, seconds); the feasibility verdict uses
    per-family normalized residuals against `tol`.
    """
    if floors is None:
        floors = floors_from_budget(thr, alloc.budget)
    rates = aggregate_rates(net, ch, alloc)
    res = {}
    norm = {}

    def _norm(values, scales):
        values = np.atleast_1d(np.asarray(values, dtype=float))
        scales = np.broadcast_to(np.asarray(scales, dtype=float), values.shape)
        if values.size == 0:
            return 0.0
        return float((values / np.maximum(scales, 1e-300)).max())

    # multiplexing caps
    mux = np.zeros((net.num_rrh, net.k1, N_DIR))
    for j in range(net.num_rrh):
        mux[j] = alloc.tau[net.users_at_rrh(j)].sum(axis=0)
    res["access_mux_cap"] = mux - net.l1
    norm["access_mux_cap"] = _norm(res["access_mux_cap"], net.l1)
    fh_mux = alloc.x.sum(axis=1) - net.l2
    res["fh_mux_cap"] = fh_mux
    norm["fh_mux_cap"] = _norm(fh_mux, net.l2)

    # power caps
    eff_acc = alloc.tau * alloc.p_acc
    rrh_dl = np.array([eff_acc[net.users_at_rrh(j), :, DL].sum()
                       for j in range(net.num_rrh)]) - net.p_rrh_dl
    res["rrh_dl_power"] = rrh_dl
    norm["rrh_dl_power"] = _norm(rrh_dl, net.p_rrh_dl)
    user_ul = eff_acc[:, :, UL].sum(axis=1) - net.p_user_ul
    res["user_ul_power"] = user_ul
    norm["user_ul_power"] = _norm(user_ul, net.p_user_ul)
    eff_fh = alloc.x * alloc.p_fh
    rrh_ul = eff_fh[:, :, UL].sum(axis=0) - net.p_rrh_ul
    res["rrh_ul_power"] = rrh_ul
    norm["rrh_ul_power"] = _norm(rrh_ul, net.p_rrh_ul)
    bbu_dl = np.array([eff_fh[:, :, DL].sum() - net.p_bbu_dl])
    res["bbu_dl_power"] = bbu_dl
    norm["bbu_dl_power"] = _norm(bbu_dl, net.p_bbu_dl)

    # SIC decode-order conditions for co-scheduled links
    sic_res, sic_norm = [], []
    for q in (UL, DL):
        den = access_denominators(net, ch, alloc, q)
        g_own = own_access_gain(net, ch, q)
        for j in range(net.num_rrh):
            users = net.users_at_rrh(j)
            for k1 in range(net.k1):
                on = [u for u in users if alloc.tau[u, k1, q] > 0.5]
                for a in on:
                    for b in on:
                        if a == b or not g_own[a, k1] > g_own[b, k1]:
                            continue
                        lhs = g_own[b, k1] * den[a, k1]
                        rhs = g_own[a, k1] * den[b, k1]
                        sic_res.append(lhs - rhs)
                        sic_norm.append((lhs - rhs) / max(rhs, 1e-300))
    res["access_sic_order"] = np.array(sic_res)
    norm["access_sic_order"] = float(max(sic_norm, default=0.0))

    fh_res, fh_norm = [], []
    for q in (UL, DL):
        den = fronthaul_denominators(net, ch, alloc, q)
        gain = ch.fronthaul_gain[:, :, q]
        for k2 in range(net.k2):
            on = [j for j in range(net.num_rrh) if alloc.x[k2, j, q] > 0.5]
            for a in on:
                for b in on:
                    if a == b or not gain[k2, a] > gain[k2, b]:
                        continue
                    lhs = gain[k2, b] * den[k2, a]
                    rhs = gain[k2, a] * den[k2, b]
                    fh_res.append(lhs - rhs)
                    fh_norm.append((lhs - rhs) / max(rhs, 1e-300))
    res["fh_sic_order"] = np.array(fh_res)
    norm["fh_sic_order"] = float(max(fh_norm, default=0.0))

    # delay budget split over all (user, RRH) chains
    chain = alloc.budget.chain_totals() - net.d_total_max
    res["delay_split"] = chain
    norm["delay_split"] = _norm(chain, net.d_total_max)

    # rate floors from the delay budget
    r10 = floors.rrh_ul - rates.rrh_total[:, UL]
    res["rrh_ul_rate_floor"] = r10
    norm["rrh_ul_rate_floor"] = _norm(r10, np.maximum(floors.rrh_ul, rates.rrh_total[:, UL]))
    r11 = np.array([floors.bbu_ul - rates.bbu_total[UL]])
    res["bbu_ul_rate_floor"] = r11
    norm["bbu_ul_rate_floor"] = _norm(r11, max(floors.bbu_ul, rates.bbu_total[UL]))
    r12 = floors.user_dl - rates.user_total[:, DL]
    res["user_dl_rate_floor"] = r12
    norm["user_dl_rate_floor"] = _norm(r12, np.maximum(floors.user_dl, rates.user_total[:, DL]))

    # queue stability couplings between access and fronthaul
    acc_ul = rates.rrh_total[:, UL].sum()
    r13 = np.array([acc_ul - rates.bbu_total[UL]])
    res["ul_queue_stability"] = r13
    norm["ul_queue_stability"] = _norm(r13, max(acc_ul, rates.bbu_total[UL], 1.0))
    acc_dl = rates.rrh_total[:, DL].sum()
    r14 = np.array([rates.bbu_total[DL] - acc_dl])
    res["dl_queue_stability"] = r14
    norm["dl_queue_stability"] = _norm(r14, max(acc_dl, rates.bbu_total[DL], 1.0))

    # slice isolation reservations
    r15 = net.r_rsv - rates.slice_total
    res["slice_isolation"] = r15
    norm["slice_isolation"] = _norm(r15, np.maximum(net.r_rsv, rates.slice_total))

    worst = max(CONSTRAINT_FAMILIES, key=lambda f: norm[f])
    max_norm = norm[worst]
    return ConstraintReport(residuals=res, normalized=norm,
                            feasible=bool(max_norm <= tol),
                            max_normalized=float(max_norm), worst_family=worst)


@dataclass
class PowerBasis:
    """Affine structure of one direction's power vector.

    Variables are the powers of the assigned links, access links first then
    fronthaul.  Every link's noise-plus-interference is affine in that
    vector: ``noise + den_row @ p``; the received signal adds
    ``own * p_own`` on top.  The decode-order (SIC) conditions are linear
    rows over the same vector.
    """

    q: int
    acc_links: list              # [(user, k1), ...]
    fh_links: list               # [(k2, rrh), ...]
    noise: float
    den_acc: np.ndarray          # (n_acc, n)
    own_acc: np.ndarray          # (n_acc,)
    den_fh: np.ndarray           # (n_fh, n)
    own_fh: np.ndarray           # (n_fh,)
    var_caps: np.ndarray         # (n,) transmitter cap per variable
    cap_groups: list             # [(var_index_array, cap, name), ...]

    @property
    def n(self) -> int:
        return len(self.acc_links) + len(self.fh_links)

    def assigned_powers(self, alloc: Allocation) -> np.ndarray:
        p = np.empty(self.n)
        for li, (i, k1) in enumerate(self.acc_links):
            p[li] = alloc.p_acc[i, k1, self.q]
        off = len(self.acc_links)
        for li, (k2, j) in enumerate(self.fh_links):
            p[off + li] = alloc.p_fh[k2, j, self.q]
        return p

    def link_rates(self, p: np.ndarray, bandwidth_hz: float):
        """(access_rates, fronthaul_rates) in bits/s at power vector p."""
        den_a = self.noise + self.den_acc @ p
        num_a = den_a + self.own_acc * p[: len(self.acc_links)]
        den_f = self.noise + self.den_fh @ p
        num_f = den_f + self.own_fh * p[len(self.acc_links):]
        scale = bandwidth_hz / math.log(2.0)
        return scale * np.log(num_a / den_a), scale * np.log(num_f / den_f)

    def sic_rows(self, net: NetworkInstance, ch: ChannelRealization):
        """Linear decode-order conditions rows@p + const <= 0 (scaled O(1))."""
        rows, consts = [], []
        g_own = own_access_gain(net, ch, self.q)
        by_rrh_k1 = {}
        for li, (i, k1) in enumerate(self.acc_links):
            by_rrh_k1.setdefault((net.user_rrh[i], k1), []).append((li, i))
        for (_, k1), members in sorted(by_rrh_k1.items()):
            for la, ua in members:
                for lb, ub_ in members:
                    if ua == ub_ or not g_own[ua, k1] > g_own[ub_, k1]:
                        continue
                    ga, gb = g_own[ua, k1], g_own[ub_, k1]
                    row = gb * self.den_acc[la] - ga * self.den_acc[lb]
                    const = self.noise * (gb - ga)
                    s = max(self.noise * (ga + gb), 1e-300)
                    rows.append(row / s)
                    consts.append(const / s)
        off = len(self.acc_links)
        gain = ch.fronthaul_gain[:, :, self.q]
        by_k2 = {}
        for li, (k2, j) in enumerate(self.fh_links):
            by_k2.setdefault(k2, []).append((li, j))
        for k2, members in sorted(by_k2.items()):
            for la, ja in members:
                for lb, jb in members:
                    if ja == jb or not gain[k2, ja] > gain[k2, jb]:
                        continue
                    ga, gb = gain[k2, ja], gain[k2, jb]
                    row = gb * self.den_fh[la] - ga * self.den_fh[lb]
                    const = self.noise * (gb - ga)
                    s = max(self.noise * (ga + gb), 1e-300)
                    rows.append(row / s)
                    consts.append(const / s)
        if not rows:
            return np.zeros((0, self.n)), np.zeros(0)
        return np.asarray(rows), np.asarray(consts)


def direction_power_basis(net: NetworkInstance, ch: ChannelRealization,
                          alloc: Allocation, q: int) -> PowerBasis:
    """Build the affine interference structure of direction q's assignment."""
    acc_links = [(int(i), int(k1))
                 for i in range(net.num_users)
                 for k1 in range(net.k1)
                 if alloc.tau[i, k1, q] > 0.5]
    fh_links = [(int(k2), int(j))
                for k2 in range(net.k2)
                for j in range(net.num_rrh)
                if alloc.x[k2, j, q] > 0.5]
    n_acc, n_fh = len(acc_links), len(fh_links)
    n = n_acc + n_fh
    g_own = own_access_gain(net, ch, q)
    gain = ch.access_gain[:, :, :, q]

    den_acc = np.zeros((n_acc, n))
    own_a = np.zeros(n_acc)
    for la, (i, k1) in enumerate(acc_links):
        own_a[la] = g_own[i, k1]
        for lb, (u, k1b) in enumerate(acc_links):
            if k1b != k1 or u == i:
                continue
            if net.user_rrh[u] == net.user_rrh[i]:
                if g_own[u, k1] > g_own[i, k1]:
                    den_acc[la, lb] = g_own[i, k1]
            else:
                den_acc[la, lb] = gain[i, k1, net.user_rrh[u]]

    fh_gain = ch.fronthaul_gain[:, :, q]
    den_fh = np.zeros((n_fh, n))
    own_f = np.zeros(n_fh)
    for la, (k2, j) in enumerate(fh_links):
        own_f[la] = fh_gain[k2, j]
        for lb, (k2b, f) in enumerate(fh_links):
            if k2b != k2 or f == j:
                continue
            if fh_gain[k2, f] > fh_gain[k2, j]:
                den_fh[la, n_acc + lb] = fh_gain[k2, j]

    var_caps = np.empty(n)
    cap_groups = []
    if q == UL:
        for i in range(net.num_users):
            idx = [li for li, (u, _) in enumerate(acc_links) if u == i]
            if idx:
                cap_groups.append((np.array(idx), net.p_user_ul, f"user_ul_power[{i}]"))
                var_caps[idx] = net.p_user_ul
        for j in range(net.num_rrh):
            idx = [n_acc + li for li, (_, jj) in enumerate(fh_links) if jj == j]
            if idx:
                cap_groups.append((np.array(idx), net.p_rrh_ul, f"rrh_ul_power[{j}]"))
                var_caps[idx] = net.p_rrh_ul
    else:
        for j in range(net.num_rrh):
            idx = [li for li, (u, _) in enumerate(acc_links)
                   if net.user_rrh[u] == j]
            if idx:
                cap_groups.append((np.array(idx), net.p_rrh_dl, f"rrh_dl_power[{j}]"))
                var_caps[idx] = net.p_rrh_dl
        idx = [n_acc + li for li in range(n_fh)]
        if idx:
            cap_groups.append((np.array(idx), net.p_bbu_dl, "bbu_dl_power"))
            var_caps[idx] = net.p_bbu_dl

    return PowerBasis(q=q, acc_links=acc_links, fh_links=fh_links,
                      noise=ch.noise_power, den_acc=den_acc, own_acc=own_a,
                      den_fh=den_fh, own_fh=own_f, var_caps=var_caps,
                      cap_groups=cap_groups)
