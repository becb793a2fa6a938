"""Joint subcarrier/power/delay allocation for NOMA cloud-RAN downlink and
uplink with statistical queuing-delay guarantees, plus a Monte-Carlo
experiment harness and CLI."""

__version__ = "0.1.0"

from ._kernels import IMPL as KERNEL_IMPL
from .topology import (DL, UL, ChannelRealization, NetworkInstance,
                       build_network, dbm_to_watt, load_scenario,
                       sample_channels, watt_to_dbm)
from .delay import (DelayBudget, DelayInfeasibleError, QosThresholds,
                    RateFloors, adjust_delays, effective_bandwidth,
                    floors_from_budget, min_delay_from_rate, min_rate_floor,
                    queue_oracle, violation_probability)
from .phy import (Allocation, ConstraintReport, RateReport, access_rate,
                  access_sinr, aggregate_rates, check_constraints,
                  fronthaul_rate, fronthaul_sinr, sic_order, total_power)
from .convex import (ConvexProgram, ConvexResult, DcSurrogate,
                     LogAffineConstraint, LpResult, build_rate_surrogate,
                     make_dc_surrogate, solve_convex, solve_lp)

__all__ = [
    "KERNEL_IMPL", "UL", "DL",
    "NetworkInstance", "ChannelRealization", "build_network",
    "sample_channels", "dbm_to_watt", "watt_to_dbm", "load_scenario",
    "QosThresholds", "DelayBudget", "RateFloors", "DelayInfeasibleError",
    "effective_bandwidth", "violation_probability", "min_rate_floor",
    "min_delay_from_rate", "adjust_delays", "floors_from_budget",
    "queue_oracle",
    "Allocation", "RateReport", "ConstraintReport", "sic_order",
    "access_sinr", "fronthaul_sinr", "access_rate", "fronthaul_rate",
    "aggregate_rates", "total_power", "check_constraints",
    "ConvexProgram", "ConvexResult", "LpResult", "LogAffineConstraint",
    "DcSurrogate", "solve_lp", "solve_convex", "make_dc_surrogate",
    "build_rate_surrogate",
]
