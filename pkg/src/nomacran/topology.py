"""Network scenarios and seeded channel realizations.

A scenario is a cloud RAN: one central baseband unit (BBU), J radio heads
(RRHs) on a ring around it, and paired users dropped uniformly over the
coverage disc.  Users and RRHs communicate on K1 access subcarriers, RRHs
and the BBU on K2 fronthaul subcarriers, in both uplink and downlink
(FDD, independent fading per direction).  Channel power gains follow
``omega * d**-exponent`` with omega drawn Exponential(1) (squared Rayleigh
envelope), independently per user, subcarrier, link and direction.
"""

from dataclasses import dataclass, field
import math

import numpy as np

UL, DL = 0, 1
N_DIR = 2

# Built-in default scenario (dense urban drop, tactile-grade delay budget).
DEFAULT_SCENARIO = {
    "num_rrh": 2,
    "num_slices": 2,
    "users_per_slice_per_rrh": 1,
    "w_s_hz": 625e3,
    "w_ac_hz": 5e6,
    "w_fh_hz": 10e6,
    "k1": None,             # default: floor(w_ac / w_s)
    "k2": None,             # default: floor(w_fh / w_s)
    "p_rrh_dl_dbm": 43.0,
    "p_rrh_ul_dbm": 43.0,
    "p_bbu_dl_dbm": 47.0,
    "p_user_ul_dbm": 18.0,
    "l1": 2,
    "l2": 2,
    "alpha": 3.0,
    "beta": 3.0,
    "noise_psd_dbm_hz": -174.0,
    "area_km2": 10.0,
    "d_rrh_bbu_m": 1000.0,
    "min_user_rrh_dist_m": 10.0,
    "r_rsv_ul_bps": 2e6,
    "r_rsv_dl_bps": 2e6,
    "d_total_max_s": 1e-3,
    "theta": 11.0,
    "delta": 1e-3,
    "eta": 1.0,
}


def dbm_to_watt(x_dbm: float) -> float:
    """10**((x - 30) / 10); rejects non-finite input."""
    if not math.isfinite(x_dbm):
        raise ValueError(f"non-finite dBm value: {x_dbm}")
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def watt_to_dbm(x_watt: float) -> float:
    """Inverse of dbm_to_watt; rejects non-positive powers."""
    if not (x_watt > 0.0) or not math.isfinite(x_watt):
        raise ValueError(f"power must be positive and finite, got {x_watt}")
    return 30.0 + 10.0 * math.log10(x_watt)


@dataclass(frozen=True)
class NetworkInstance:
    """Static scenario: geometry, slices, pairs, budgets, QoS parameters.

    Rates are bits/s, delays seconds, powers Watts throughout.
    """

    num_rrh: int
    num_slices: int
    users_per_slice_per_rrh: int
    pairs: tuple
    k1: int
    k2: int
    w_s: float
    w_ac: float
    w_fh: float
    p_rrh_dl: float
    p_rrh_ul: float
    p_bbu_dl: float
    p_user_ul: float
    l1: int
    l2: int
    alpha: float
    beta: float
    noise_psd: float
    area_km2: float
    d_rrh_bbu: float
    min_user_rrh_dist: float
    r_rsv: np.ndarray          # (num_slices, 2): reserved rate per slice per direction
    d_total_max: float
    theta: float
    delta: float
    eta: float
    user_slice: np.ndarray = field(repr=False, default=None)
    user_rrh: np.ndarray = field(repr=False, default=None)
    rrh_xy: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        n = self.users_per_slice_per_rrh
        idx = np.arange(self.num_users)
        object.__setattr__(self, "user_slice", idx // (self.num_rrh * n))
        object.__setattr__(self, "user_rrh", (idx // n) % self.num_rrh)
        angles = 2.0 * np.pi * np.arange(self.num_rrh) / self.num_rrh
        xy = self.d_rrh_bbu * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        object.__setattr__(self, "rrh_xy", xy)
        for arr in (self.r_rsv, self.user_slice, self.user_rrh, self.rrh_xy):
            arr.setflags(write=False)

    @property
    def num_users(self) -> int:
        return self.num_rrh * self.num_slices * self.users_per_slice_per_rrh

    @property
    def noise_power(self) -> float:
        """Per-subcarrier noise power sigma = noise_psd * w_s (Watts)."""
        return self.noise_psd * self.w_s

    def users_at_rrh(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.user_rrh == j)

    def users_in_slice(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.user_slice == s)


@dataclass(frozen=True)
class ChannelRealization:
    """Sampled gains for one Monte-Carlo trial; fully determined by seed."""

    access_gain: np.ndarray      # (num_users, k1, num_rrh, 2), linear power gain
    fronthaul_gain: np.ndarray   # (k2, num_rrh, 2)
    noise_power: float
    seed: int
    user_xy: np.ndarray = field(repr=False, default=None)
    user_rrh_dist: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        for arr in (self.access_gain, self.fronthaul_gain, self.user_xy,
                    self.user_rrh_dist):
            if arr is not None:
                arr.setflags(write=False)


def _default_pairs(num_users, user_slice):
    """Pair users within their slice where possible, leftovers across."""
    remaining = []
    pairs = []
    for s in sorted(set(user_slice.tolist())):
        members = [i for i in range(num_users) if user_slice[i] == s]
        while len(members) >= 2:
            pairs.append((members.pop(0), members.pop(0)))
        remaining.extend(members)
    while len(remaining) >= 2:
        pairs.append((remaining.pop(0), remaining.pop(0)))
    if remaining:
        raise ValueError("odd user count cannot be paired")
    return tuple(pairs)


def build_network(config: dict | None = None, **overrides) -> NetworkInstance:
    """Validate a scenario description and construct a NetworkInstance.

    Unspecified fields take the built-in defaults.  ``config`` and keyword
    overrides use the flat scenario keys (see DEFAULT_SCENARIO).
    """
    cfg = dict(DEFAULT_SCENARIO)
    for source in (config or {}), overrides:
        for key, value in source.items():
            if key not in DEFAULT_SCENARIO and key != "pairs":
                raise ValueError(f"unknown scenario key: {key}")
            cfg[key] = value

    j = int(cfg["num_rrh"])
    s = int(cfg["num_slices"])
    n = int(cfg["users_per_slice_per_rrh"])
    if j < 1:
        raise ValueError("num_rrh must be >= 1")
    if s < 1:
        raise ValueError("num_slices must be >= 1")
    if n < 1:
        raise ValueError("users_per_slice_per_rrh must be >= 1")

    w_s = float(cfg["w_s_hz"])
    w_ac = float(cfg["w_ac_hz"])
    w_fh = float(cfg["w_fh_hz"])
    k1 = int(cfg["k1"]) if cfg["k1"] is not None else int(w_ac // w_s)
    k2 = int(cfg["k2"]) if cfg["k2"] is not None else int(w_fh // w_s)
    if k1 < 1 or k2 < 1:
        raise ValueError("subcarrier counts must be >= 1")
    if k1 * w_s > w_ac * (1 + 1e-12):
        raise ValueError("access subcarriers exceed access bandwidth (k1 * w_s > w_ac)")
    if k2 * w_s > w_fh * (1 + 1e-12):
        raise ValueError("fronthaul subcarriers exceed fronthaul bandwidth (k2 * w_s > w_fh)")

    l1, l2 = int(cfg["l1"]), int(cfg["l2"])
    if not (1 <= l1 <= 2 and 1 <= l2 <= 2):
        raise ValueError("NOMA cap exceeds supported SIC depth (l1, l2 must be 1 or 2)")

    powers = {
        "p_rrh_dl": dbm_to_watt(float(cfg["p_rrh_dl_dbm"])),
        "p_rrh_ul": dbm_to_watt(float(cfg["p_rrh_ul_dbm"])),
        "p_bbu_dl": dbm_to_watt(float(cfg["p_bbu_dl_dbm"])),
        "p_user_ul": dbm_to_watt(float(cfg["p_user_ul_dbm"])),
    }
    for name, value in powers.items():
        if value <= 0:
            raise ValueError(f"{name} must be positive")

    d_total = float(cfg["d_total_max_s"])
    if d_total <= 0:
        raise ValueError("d_total_max_s must be positive")
    delta = float(cfg["delta"])
    eta = float(cfg["eta"])
    theta = float(cfg["theta"])
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0, 1)")
    if not (0 < eta <= 1):
        raise ValueError("eta must lie in (0, 1]")
    if theta <= 0:
        raise ValueError("theta must be positive")

    num_users = j * s * n
    user_slice = np.arange(num_users) // (j * n)
    if "pairs" in cfg and cfg.get("pairs") is not None:
        pairs = tuple(tuple(p) for p in cfg["pairs"])
        if len(pairs) == 0:
            raise ValueError("pair list is empty")
        seen = [u for p in pairs for u in p]
        if sorted(seen) != list(range(num_users)):
            raise ValueError("every user must belong to exactly one pair")
    else:
        pairs = _default_pairs(num_users, user_slice)

    r_rsv = np.zeros((s, N_DIR))
    r_rsv[:, UL] = float(cfg["r_rsv_ul_bps"])
    r_rsv[:, DL] = float(cfg["r_rsv_dl_bps"])
    if (r_rsv < 0).any():
        raise ValueError("reserved slice rates must be non-negative")

    return NetworkInstance(
        num_rrh=j,
        num_slices=s,
        users_per_slice_per_rrh=n,
        pairs=pairs,
        k1=k1,
        k2=k2,
        w_s=w_s,
        w_ac=w_ac,
        w_fh=w_fh,
        l1=l1,
        l2=l2,
        alpha=float(cfg["alpha"]),
        beta=float(cfg["beta"]),
        noise_psd=dbm_to_watt(float(cfg["noise_psd_dbm_hz"])),
        area_km2=float(cfg["area_km2"]),
        d_rrh_bbu=float(cfg["d_rrh_bbu_m"]),
        min_user_rrh_dist=float(cfg["min_user_rrh_dist_m"]),
        r_rsv=r_rsv,
        d_total_max=d_total,
        theta=theta,
        delta=delta,
        eta=eta,
        **powers,
    )


def sample_channels(net: NetworkInstance, seed: int) -> ChannelRealization:
    """Draw one channel realization; identical (net, seed) gives identical gains.

    Users fall uniformly on the coverage disc centered at the BBU; the
    user-RRH distance is clamped below at net.min_user_rrh_dist.
    """
    rng = np.random.default_rng(seed)
    i_tot, k1, k2, j_tot = net.num_users, net.k1, net.k2, net.num_rrh

    u = rng.random((i_tot, 2))
    radius = math.sqrt(net.area_km2 * 1e6 / math.pi)
    r = radius * np.sqrt(u[:, 0])
    phi = 2.0 * np.pi * u[:, 1]
    user_xy = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)

    diff = user_xy[:, None, :] - net.rrh_xy[None, :, :]
    dist = np.maximum(np.hypot(diff[..., 0], diff[..., 1]), net.min_user_rrh_dist)

    omega_acc = rng.exponential(1.0, size=(i_tot, k1, j_tot, N_DIR))
    omega_fh = rng.exponential(1.0, size=(k2, j_tot, N_DIR))

    access_gain = omega_acc * (dist ** -net.alpha)[:, None, :, None]
    fronthaul_gain = omega_fh * net.d_rrh_bbu ** -net.beta

    return ChannelRealization(
        access_gain=access_gain,
        fronthaul_gain=fronthaul_gain,
        noise_power=net.noise_power,
        seed=int(seed),
        user_xy=user_xy,
        user_rrh_dist=dist,
    )


def load_scenario(path) -> dict:
    """Parse a flat ``key = value`` scenario file ('#' starts a comment)."""
    cfg = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in DEFAULT_SCENARIO:
                raise ValueError(f"{path}:{lineno}: unknown scenario key: {key}")
            try:
                parsed = int(value)
            except ValueError:
                try:
                    parsed = float(value)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: non-numeric value for {key}")
            cfg[key] = parsed
    return cfg
