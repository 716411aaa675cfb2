"""Market clearing and pricing for storage with state-of-charge dependent bids."""
from .bids import SocBid, is_edcr, segment_of, stage_cost, trajectory_cost, validate_bid
from .dispatch import (
    DispatchSolution,
    Scenario,
    ScenarioOptions,
    Storage,
    StorageSpec,
    flexible_load,
    generator,
    oracle_enumerate,
    solve_one_shot,
)
from .linprog import LpBuilder, Tolerances, solve_lp
from .pricing import PriceSchedule, extract_lmp, individual_profit_max, loc, tlmp
from .rolling import make_forecasts, r_lmp, r_tlmp, rolling_dispatch, rolling_loc_audit

__version__ = "0.1.0"

__all__ = [
    "DispatchSolution", "LpBuilder", "PriceSchedule", "Scenario", "ScenarioOptions", "SocBid", "Storage",
    "StorageSpec", "Tolerances", "extract_lmp", "flexible_load", "generator", "individual_profit_max",
    "is_edcr", "loc", "make_forecasts", "oracle_enumerate", "r_lmp", "r_tlmp", "rolling_dispatch",
    "rolling_loc_audit", "segment_of", "solve_lp", "solve_one_shot", "stage_cost", "tlmp",
    "trajectory_cost", "validate_bid",
]
