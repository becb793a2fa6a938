"""Effective-bandwidth delay QoS: rate floors, budget splitting, queue oracle.

Each end-to-end connection crosses three queues: the uplink queue of the
sending RRH, the central BBU queue, and the per-user downlink queue at the
receiving RRH.  For a Poisson bit-arrival process at rate lam served under
QoS exponent theta, the delay-violation probability is bounded by
``eta * exp(-lam * (e**theta - 1) * d_max)``; inverting the bound at target
delta turns a delay budget into a minimum-rate floor per queue.
"""

from dataclasses import dataclass
import csv
import math

import numpy as np

from .topology import NetworkInstance

_THETA_SERIES_GUARD = 1e-8


class DelayInfeasibleError(ValueError):
    """Raised when no delay split can satisfy the total budget."""

    def __init__(self, message, chain=None):
        super().__init__(message)
        self.chain = chain


def effective_bandwidth(lam: float, theta: float) -> float:
    """lam * (e**theta - 1) / theta, continuously extended at theta -> 0+."""
    if theta <= 0:
        raise ValueError("theta must be positive")
    if lam < 0:
        raise ValueError("arrival rate must be non-negative")
    if theta < _THETA_SERIES_GUARD:
        return lam * (1.0 + theta / 2.0 + theta * theta / 6.0)
    return lam * math.expm1(theta) / theta


def violation_probability(lam: float, theta: float, eta: float, d_max: float) -> float:
    """Upper bound on P(queuing delay > d_max) for a Poisson arrival at rate lam."""
    if not (0 < eta <= 1):
        raise ValueError("eta must lie in (0, 1]")
    return eta * math.exp(-lam * math.expm1(theta) * d_max)


def min_rate_floor(theta: float, delta: float, d_max: float) -> float:
    """Smallest arrival rate whose violation bound meets delta at budget d_max."""
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    if theta <= 0:
        raise ValueError("theta must be positive")
    if d_max <= 0:
        raise ValueError(f"degenerate delay budget: {d_max}")
    return math.log(1.0 / delta) / (math.expm1(theta) * d_max)


def min_delay_from_rate(theta: float, delta: float, rate: float) -> float:
    """Budget at which min_rate_floor equals `rate` (algebraic inverse)."""
    if rate <= 0:
        raise DelayInfeasibleError("segment starved (non-positive rate)")
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    if theta <= 0:
        raise ValueError("theta must be positive")
    return math.log(1.0 / delta) / (math.expm1(theta) * rate)


@dataclass(frozen=True)
class QosThresholds:
    """Per-queue QoS exponents plus violation/buffer probabilities.

    delta and eta are 3-vectors ordered (RRH uplink, BBU, user downlink).
    """

    theta_rrh: np.ndarray    # (num_rrh,)
    theta_bbu: float
    theta_user: np.ndarray   # (num_users,)
    delta: np.ndarray        # (3,)
    eta: np.ndarray          # (3,)

    def __post_init__(self):
        if (self.theta_rrh <= 0).any() or self.theta_bbu <= 0 or (self.theta_user <= 0).any():
            raise ValueError("QoS exponents must be positive")
        if ((self.delta <= 0) | (self.delta >= 1)).any():
            raise ValueError("delta must lie in (0, 1)")
        if ((self.eta <= 0) | (self.eta > 1)).any():
            raise ValueError("eta must lie in (0, 1]")
        self.theta_rrh.setflags(write=False)
        self.theta_user.setflags(write=False)
        self.delta.setflags(write=False)
        self.eta.setflags(write=False)

    @classmethod
    def from_network(cls, net: NetworkInstance) -> "QosThresholds":
        return cls(
            theta_rrh=np.full(net.num_rrh, net.theta),
            theta_bbu=net.theta,
            theta_user=np.full(net.num_users, net.theta),
            delta=np.full(3, net.delta),
            eta=np.full(3, net.eta),
        )


@dataclass(frozen=True)
class DelayBudget:
    """Per-segment delay budgets; every (user, RRH) chain must fit the total."""

    d_rrh_ul: np.ndarray     # (num_rrh,)
    d_bbu: float
    d_user_dl: np.ndarray    # (num_users,), downlink queue at the user's RRH
    d_total_max: float

    def __post_init__(self):
        self.d_rrh_ul.setflags(write=False)
        self.d_user_dl.setflags(write=False)

    def chain_totals(self) -> np.ndarray:
        """(num_users, num_rrh) matrix of chain sums d_rrh[j] + d_bbu + d_user[i]."""
        return self.d_user_dl[:, None] + self.d_rrh_ul[None, :] + self.d_bbu

    def is_valid(self, tol: float = 1e-12) -> bool:
        if (self.d_rrh_ul <= 0).any() or self.d_bbu <= 0 or (self.d_user_dl <= 0).any():
            return False
        return bool((self.chain_totals() <= self.d_total_max * (1 + tol)).all())

    @classmethod
    def equal_thirds(cls, net: NetworkInstance) -> "DelayBudget":
        third = net.d_total_max / 3.0
        return cls(
            d_rrh_ul=np.full(net.num_rrh, third),
            d_bbu=third,
            d_user_dl=np.full(net.num_users, third),
            d_total_max=net.d_total_max,
        )


@dataclass(frozen=True)
class RateFloors:
    """Minimum-rate floors implied by a delay budget, one per queue."""

    rrh_ul: np.ndarray       # (num_rrh,) uplink access total per RRH
    bbu_ul: float            # uplink fronthaul total into the BBU
    user_dl: np.ndarray      # (num_users,) downlink access rate per user

    def __post_init__(self):
        self.rrh_ul.setflags(write=False)
        self.user_dl.setflags(write=False)


def floors_from_budget(thr: QosThresholds, budget: DelayBudget) -> RateFloors:
    rrh = np.array([
        min_rate_floor(thr.theta_rrh[j], thr.delta[0], budget.d_rrh_ul[j])
        for j in range(len(thr.theta_rrh))
    ])
    bbu = min_rate_floor(thr.theta_bbu, thr.delta[1], budget.d_bbu)
    user = np.array([
        min_rate_floor(thr.theta_user[i], thr.delta[2], budget.d_user_dl[i])
        for i in range(len(thr.theta_user))
    ])
    return RateFloors(rrh_ul=rrh, bbu_ul=bbu, user_dl=user)


def adjust_delays(rrh_ul_rates: np.ndarray, bbu_ul_rate: float,
                  user_dl_rates: np.ndarray, thr: QosThresholds,
                  d_total_max: float) -> DelayBudget:
    """Split the end-to-end budget given the rates each queue currently gets.

    Every segment receives its minimal delay (the budget at which its rate
    floor equals the current rate) plus a share of the remaining chain slack
    proportional to that minimal delay.  Segments shared by several chains
    take the smallest share over their chains, so every chain stays within
    d_total_max.  Raises DelayInfeasibleError when some chain cannot fit.
    """
    num_rrh = len(rrh_ul_rates)
    num_users = len(user_dl_rates)
    dmin_rrh = np.empty(num_rrh)
    dmin_user = np.empty(num_users)
    for j in range(num_rrh):
        if rrh_ul_rates[j] <= 0:
            raise DelayInfeasibleError("segment starved (RRH uplink)", chain=(None, j))
        dmin_rrh[j] = min_delay_from_rate(thr.theta_rrh[j], thr.delta[0], rrh_ul_rates[j])
    if bbu_ul_rate <= 0:
        raise DelayInfeasibleError("segment starved (BBU)", chain=(None, None))
    dmin_bbu = min_delay_from_rate(thr.theta_bbu, thr.delta[1], bbu_ul_rate)
    for i in range(num_users):
        if user_dl_rates[i] <= 0:
            raise DelayInfeasibleError("segment starved (user downlink)", chain=(i, None))
        dmin_user[i] = min_delay_from_rate(thr.theta_user[i], thr.delta[2], user_dl_rates[i])

    totals = dmin_user[:, None] + dmin_rrh[None, :] + dmin_bbu
    worst = np.unravel_index(np.argmax(totals), totals.shape)
    if totals[worst] > d_total_max * (1 + 1e-12):
        raise DelayInfeasibleError(
            f"delay budget infeasible: chain (user {worst[0]}, rrh {worst[1]}) "
            f"needs {totals[worst]:.3e}s of {d_total_max:.3e}s",
            chain=(int(worst[0]), int(worst[1])),
        )

    ratio = np.maximum(d_total_max / totals - 1.0, 0.0)
    m_rrh = ratio.min(axis=0)
    m_user = ratio.min(axis=1)
    m_bbu = ratio.min()
    return DelayBudget(
        d_rrh_ul=dmin_rrh * (1.0 + m_rrh),
        d_bbu=float(dmin_bbu * (1.0 + m_bbu)),
        d_user_dl=dmin_user * (1.0 + m_user),
        d_total_max=d_total_max,
    )


def queue_oracle(lam: float, service_rate: float, d_max: float,
                 num_packets: int, seed: int = 0,
                 packet_bits: float = 256.0):
    """Empirical delay-violation probability of a FIFO fluid-served queue.

    Bits arrive in fixed-size packets as a Poisson process of rate
    lam / packet_bits packets per second and are served at `service_rate`
    bits/s.  Returns (violation_fraction, ci_half) where ci_half is a 95%
    normal-approximation half-width ('rule of three' when no violations).
    """
    if lam < 0:
        raise ValueError("arrival rate must be non-negative")
    if lam == 0:
        return 0.0, 0.0
    if service_rate <= lam:
        raise ValueError("unstable queue: service_rate must exceed arrival rate")
    if num_packets < 10_000:
        raise ValueError("num_packets must be at least 10^4")

    rng = np.random.default_rng(seed)
    interarrivals = rng.exponential(packet_bits / lam, size=num_packets)
    service_time = packet_bits / service_rate
    # Lindley recursion as a reflected walk: the first packet waits zero,
    # then W_n = max(0, W_{n-1} + S - A_n) = U_n - min_{k<=n} U_k.
    u = np.cumsum(service_time - interarrivals[1:])
    wait = np.empty(num_packets)
    wait[0] = 0.0
    wait[1:] = u - np.minimum.accumulate(np.minimum(u, 0.0))
    sojourn = wait + service_time
    p_hat = float(np.mean(sojourn > d_max))
    if p_hat == 0.0:
        ci_half = 3.0 / num_packets
    else:
        ci_half = 1.96 * math.sqrt(p_hat * (1.0 - p_hat) / num_packets)
    return p_hat, ci_half


def write_oracle_csv(path, records):
    """Dump oracle-vs-bound records; keys: lam, theta, delta, d_max,
    empirical, analytic, ci_half."""
    fields = ["lam", "theta", "delta", "d_max", "empirical", "analytic", "ci_half"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for rec in records:
            writer.writerow({k: repr(float(rec[k])) for k in fields})
