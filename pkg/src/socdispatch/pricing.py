"""Prices, settlements and incentive audits for SoC-bid markets.

LMP is the power-balance dual.  TLMP adjusts it per unit and direction by
the SoC-transition and ramp multipliers.  Lost opportunity cost (LOC) is
the gap between a unit's best self-schedule profit at the posted prices
and the profit of the schedule it was dispatched to.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .bids import (
    SimultaneousOperationError,
    SocBid,
    edcr_closed_form_cost,
    gamma_linear_constant,
    is_edcr,
    trajectory_cost,
    validate_bid,
)
from .dispatch import (
    EPIGRAPH,
    GAMMA,
    DispatchInfeasibleError,
    DispatchKkt,
    DispatchSolution,
    Scenario,
    Storage,
    StorageDuals,
    StorageSchedule,
    StorageSpec,
    _schedule,
    _unit_duals,
    _kkt_report,
    add_storage_block,
    ramp_differences,
    solve_one_shot,
    unit_kkt_rows,
)
from .linprog import LpBuilder, LpProblem, LpSolution, Tolerances, solve_lp

__all__ = [
    "IndividualOptimum",
    "LocEntry",
    "LocReport",
    "PerformanceMetrics",
    "PriceSchedule",
    "ProbeRow",
    "Settlement",
    "bid_cost",
    "edcr_perturbations",
    "extract_lmp",
    "individual_profit_max",
    "kkt_residuals_individual",
    "loc",
    "loc_report",
    "payment",
    "performance_metrics",
    "settlement_summary",
    "tlmp",
    "tlmp_schedule",
    "truthfulness_probe",
]

UNIFORM = "uniform"
DISCRIMINATIVE = "discriminative"


@dataclass(frozen=True, eq=False)
class PriceSchedule:
    kind: str
    uniform: np.ndarray | None = None
    charge: Mapping[str, np.ndarray] | None = None
    discharge: Mapping[str, np.ndarray] | None = None

    def __post_init__(self):
        if self.kind == UNIFORM:
            if self.uniform is None:
                raise ValueError("uniform schedule needs a price vector")
            object.__setattr__(self, "uniform", np.asarray(self.uniform, dtype=float))
        elif self.kind == DISCRIMINATIVE:
            if self.charge is None or self.discharge is None or set(self.charge) != set(self.discharge):
                raise ValueError("discriminative schedule needs charge and discharge prices for every storage")
            for k in self.charge:
                if len(self.charge[k]) != len(self.discharge[k]):
                    raise ValueError(f"storage {k}: charge/discharge price lengths differ")
        else:
            raise ValueError(f"unknown price kind {self.kind!r}")

    @classmethod
    def flat(cls, prices: Sequence[float]) -> "PriceSchedule":
        return cls(UNIFORM, uniform=np.asarray(prices, dtype=float))

    @property
    def T(self) -> int:
        if self.kind == UNIFORM:
            return len(self.uniform)
        return len(next(iter(self.charge.values())))

    def for_storage(self, storage_id: str) -> tuple[np.ndarray, np.ndarray]:
        """(charge price, discharge price) seen by one unit."""
        if self.kind == UNIFORM:
            return self.uniform, self.uniform
        if storage_id not in self.charge:
            raise KeyError(f"no prices for storage {storage_id}")
        return np.asarray(self.charge[storage_id], float), np.asarray(self.discharge[storage_id], float)


def extract_lmp(solution: DispatchSolution) -> PriceSchedule:
    if solution.lam is None:
        raise ValueError("solution carries no power-balance duals")
    return PriceSchedule.flat(solution.lam.copy())


def tlmp_from_duals(lam: np.ndarray, duals: StorageDuals, etaC: float, etaD: float) -> tuple[np.ndarray, np.ndarray]:
    dC = ramp_differences(duals.muC_lo, duals.muC_hi)
    dD = ramp_differences(duals.muD_lo, duals.muD_hi)
    return lam - etaC * duals.phi - dC, lam - duals.phi / etaD + dD


def tlmp(solution: DispatchSolution, storage_id: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-interval (charge, discharge) TLMP of one unit."""
    if solution.lam is None or solution.duals is None or storage_id not in solution.duals:
        raise ValueError(f"solution carries no duals for storage {storage_id}")
    if solution.scenario is None:
        raise ValueError("solution does not reference its scenario")
    bid = solution.scenario.unit(storage_id).bid
    return tlmp_from_duals(solution.lam, solution.duals[storage_id], bid.etaC, bid.etaD)


def tlmp_schedule(solution: DispatchSolution, scenario: Scenario) -> PriceSchedule:
    charge, discharge = {}, {}
    for unit in scenario.fleet:
        if solution.lam is None or solution.duals is None:
            raise ValueError("solution carries no duals")
        charge[unit.id], discharge[unit.id] = tlmp_from_duals(
            solution.lam, solution.duals[unit.id], unit.bid.etaC, unit.bid.etaD)
    return PriceSchedule(DISCRIMINATIVE, charge=charge, discharge=discharge)


# --------------------------------------------------------------------------
# costs and payments


def bid_cost(bid: SocBid, s: float, gC: Sequence[float], gD: Sequence[float], gamma: int | None = None) -> float:
    """Bid cost of a schedule; the gamma-linear form when end-state control is active."""
    gC, gD = np.asarray(gC, float), np.asarray(gD, float)
    if gamma is not None:
        return -bid.cC[gamma - 1] * gC.sum() + bid.cD[gamma - 1] * gD.sum() + gamma_linear_constant(bid, s, gamma)
    try:
        return trajectory_cost(bid, s, gC, gD)
    except SimultaneousOperationError:
        pass
    # simultaneous operation has no stage-cost value; the convex form extends it
    return edcr_closed_form_cost(bid, s, gC, gD).max_form


def payment(prices: PriceSchedule, storage_id: str, gC: Sequence[float], gD: Sequence[float]) -> float:
    pC, pD = prices.for_storage(storage_id)
    return float(pD @ np.asarray(gD, float) - pC @ np.asarray(gC, float))


# --------------------------------------------------------------------------
# individual profit maximization


@dataclass(frozen=True, eq=False)
class IndividualOptimum:
    Q: float
    schedule: StorageSchedule
    multipliers: StorageDuals
    gamma: int | None
    lp: LpProblem
    lp_solution: LpSolution


def individual_profit_max(bid: SocBid, spec: StorageSpec, prices: PriceSchedule, *,
                          gamma: int | None = None, storage_id: str = "self",
                          tolerances: Tolerances | None = None) -> IndividualOptimum:
    """Best price-taking self-schedule: maximize payment minus bid cost."""
    unit = Storage(storage_id, bid, spec)
    T = prices.T
    pC, pD = prices.for_storage(storage_id)
    lp = LpBuilder()
    block = add_storage_block(lp, unit, T, cost_mode=GAMMA if gamma is not None else EPIGRAPH, gamma=gamma)
    for t in range(T):
        lp.add_cost(block["gC"][t], pC[t])
        lp.add_cost(block["gD"][t], -pD[t])
    problem = lp.build()
    sol = solve_lp(problem, tolerances or Tolerances())
    if sol.status != "optimal":
        raise DispatchInfeasibleError(f"self-schedule problem of {storage_id} is {sol.status}")
    return IndividualOptimum(
        Q=0.0 - sol.objective,
        schedule=_schedule(sol.x, unit, block),
        multipliers=_unit_duals(sol, unit, block, T),
        gamma=gamma, lp=problem, lp_solution=sol,
    )


def kkt_residuals_individual(bid: SocBid, spec: StorageSpec, prices: PriceSchedule,
                             schedule: StorageSchedule, multipliers: StorageDuals | None,
                             gamma: int | None = None) -> DispatchKkt:
    """Stationarity/complementarity of the self-schedule problem.

    Same rows as the market audit with the unit's own prices in place of
    the power-balance dual.
    """
    if multipliers is None:
        raise ValueError("multipliers are required")
    unit = Storage(schedule.id, bid, spec)
    pC, pD = prices.for_storage(schedule.id)
    rows = unit_kkt_rows(unit, schedule, multipliers, gamma, pC, pD)
    k = schedule.id
    return _kkt_report(DispatchKkt, {k: rows[0]}, {k: rows[1]}, {k: rows[2]}, {k: rows[3]}, {k: rows[4]})


# --------------------------------------------------------------------------
# lost opportunity cost


@dataclass(frozen=True, eq=False)
class LocEntry:
    id: str
    Q: float
    payment: float
    cost: float
    loc: float
    self_schedule: StorageSchedule


@dataclass(frozen=True, eq=False)
class LocReport:
    entries: Mapping[str, LocEntry]
    negative_prices: bool = False

    @property
    def max_loc(self) -> float:
        return max(e.loc for e in self.entries.values())

    @property
    def min_loc(self) -> float:
        return min(e.loc for e in self.entries.values())


def loc(prices: PriceSchedule, schedule: StorageSchedule, bid: SocBid, spec: StorageSpec, *,
        gamma: int | None = None, tolerances: Tolerances | None = None) -> LocEntry:
    """LOC of a dispatched schedule: Q - payment + F."""
    if len(schedule.gC) != prices.T:
        raise ValueError(f"schedule length {len(schedule.gC)} does not match price horizon {prices.T}")
    best = individual_profit_max(bid, spec, prices, gamma=gamma, storage_id=schedule.id, tolerances=tolerances)
    pay = payment(prices, schedule.id, schedule.gC, schedule.gD)
    cost = bid_cost(bid, spec.s, schedule.gC, schedule.gD, gamma)
    return LocEntry(schedule.id, best.Q, pay, cost, best.Q - pay + cost, best.schedule)


def loc_report(prices: PriceSchedule, schedules: Sequence[StorageSchedule], scenario: Scenario, *,
               gamma: int | Mapping[str, int] | None = None) -> LocReport:
    entries = {}
    for sch in sorted(schedules, key=lambda s: s.id):
        unit = scenario.unit(sch.id)
        g = gamma.get(sch.id) if isinstance(gamma, Mapping) else gamma
        entries[sch.id] = loc(prices, sch, unit.bid, unit.spec, gamma=g, tolerances=scenario.options.tolerances)
    if prices.kind == UNIFORM:
        negative = bool(np.any(prices.uniform < 0))
    else:
        negative = any(bool(np.any(np.asarray(v) < 0)) for v in (*prices.charge.values(), *prices.discharge.values()))
    return LocReport(entries, negative)


# --------------------------------------------------------------------------
# truthfulness


@dataclass(frozen=True, eq=False)
class ProbeRow:
    label: str
    bid: SocBid
    profit: float
    skipped: str | None = None


def edcr_perturbations(bid: SocBid, count: int, rng: np.random.Generator, scale: float = 0.3,
                       max_tries: int = 1000) -> list[SocBid]:
    """Random misreports that keep monotonicity, the price spread and EDCR."""
    out: list[SocBid] = []
    ratio = bid.etaC * bid.etaD
    cD = np.asarray(bid.cD, float)
    cC = np.asarray(bid.cC, float)
    tries = 0
    while len(out) < count and tries < max_tries:
        tries += 1
        steps = -np.diff(cD) * rng.uniform(0.0, 2.0, bid.K - 1)
        top_D = cD[0] * (1 + rng.uniform(-scale, scale))
        top_C = cC[0] * (1 + rng.uniform(-scale, scale))
        new_D = top_D - np.concatenate([[0.0], np.cumsum(steps)])
        new_C = top_C - np.concatenate([[0.0], np.cumsum(steps * ratio)])
        candidate = SocBid(bid.E, tuple(new_C), tuple(new_D), bid.etaC, bid.etaD)
        if not validate_bid(candidate) and is_edcr(candidate).ok:
            out.append(candidate)
    return out


def truthfulness_probe(scenario: Scenario, storage_id: str, perturbations: Sequence[SocBid],
                       labels: Sequence[str] | None = None) -> list[ProbeRow]:
    """True profit of each misreport at the prices of the truthful run.

    The first row is the truthful bid.  Misreports that break the bid
    assumptions or EDCR are kept as skipped rows with the reason.
    """
    baseline = solve_one_shot(scenario)
    prices = extract_lmp(baseline)
    truth = scenario.unit(storage_id)

    def profit(sch: StorageSchedule) -> float:
        return payment(prices, storage_id, sch.gC, sch.gD) - bid_cost(truth.bid, truth.spec.s, sch.gC, sch.gD)

    rows = [ProbeRow("truthful", truth.bid, profit(baseline.schedule(storage_id)))]
    labels = list(labels) if labels is not None else [f"perturbation {i + 1}" for i in range(len(perturbations))]
    for label, fake in zip(labels, perturbations):
        problems = validate_bid(fake)
        report = is_edcr(fake)
        if problems or not report.ok:
            rows.append(ProbeRow(label, fake, math.nan, "; ".join(problems or report.violations)))
            continue
        run = solve_one_shot(scenario.with_unit(dataclasses.replace(truth, bid=fake)))
        rows.append(ProbeRow(label, fake, profit(run.schedule(storage_id))))
    return rows


# --------------------------------------------------------------------------
# settlement and metrics


@dataclass(frozen=True, eq=False)
class Settlement:
    charge_paid: Mapping[str, float]
    discharge_received: Mapping[str, float]
    net_payment: Mapping[str, float]
    demand_charge: float
    operator_net: float


def settlement_summary(schedules: Sequence[StorageSchedule], prices: PriceSchedule,
                       demand: Sequence[float], energy_price: Sequence[float] | None = None) -> Settlement:
    """Cash flows: storage payments per direction, demand charge and operator balance.

    Demand always pays the energy price (the LMP, or ``energy_price`` when
    the storage prices are discriminative).
    """
    demand = np.asarray(demand, float)
    if energy_price is None:
        if prices.kind != UNIFORM:
            raise ValueError("discriminative prices need an explicit energy price for demand")
        energy_price = prices.uniform
    energy_price = np.asarray(energy_price, float)
    if len(demand) != prices.T or len(energy_price) != prices.T:
        raise ValueError("horizon mismatch")
    paid, received, net = {}, {}, {}
    for sch in schedules:
        pC, pD = prices.for_storage(sch.id)
        paid[sch.id] = float(pC @ sch.gC)
        received[sch.id] = float(pD @ sch.gD)
        net[sch.id] = received[sch.id] - paid[sch.id]
    demand_charge = float(energy_price @ demand)
    return Settlement(paid, received, net, demand_charge, demand_charge - sum(net.values()))


@dataclass(frozen=True)
class PerformanceMetrics:
    profit: float
    mileage: float
    margin: float


def performance_metrics(schedule: StorageSchedule, prices: PriceSchedule, bid: SocBid,
                        gamma: int | None = None, eps: float = 1e-12) -> PerformanceMetrics:
    """Profit (payment minus bid cost), mileage sum(gC + gD), and profit over discharge revenue."""
    if len(schedule.gC) != prices.T:
        raise ValueError("horizon mismatch")
    _, pD = prices.for_storage(schedule.id)
    profit = payment(prices, schedule.id, schedule.gC, schedule.gD) - bid_cost(
        bid, schedule.e[0], schedule.gC, schedule.gD, gamma)
    mileage = float(np.sum(schedule.gC) + np.sum(schedule.gD))
    revenue = float(pD @ schedule.gD)
    return PerformanceMetrics(profit, mileage, profit / max(revenue, eps))
