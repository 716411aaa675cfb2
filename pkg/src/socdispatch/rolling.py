"""Rolling-window look-ahead dispatch and its binding-interval prices."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dispatch import (
    EPIGRAPH,
    GAMMA,
    DispatchInfeasibleError,
    DispatchSolution,
    Scenario,
    StorageSchedule,
    solve_one_shot,
)
from .pricing import DISCRIMINATIVE, LocReport, PriceSchedule, loc_report, tlmp

__all__ = [
    "ForecastSet",
    "RollingInfeasibleError",
    "RollingLocAudit",
    "RollingResult",
    "make_forecasts",
    "r_lmp",
    "r_tlmp",
    "rolling_dispatch",
    "rolling_loc_audit",
]


@dataclass(frozen=True, eq=False)
class ForecastSet:
    windows: tuple  # windows[t] covers intervals t+1 .. t+len
    provenance: str = "true"

    def window(self, start: int) -> np.ndarray:
        return self.windows[start]


def make_forecasts(scenario: Scenario, W: int, model: str = "none", *, offsets: Sequence[float] | None = None,
                   sigma: float = 0.0, factors: Sequence[float] | None = None, seed: int = 0) -> ForecastSet:
    """Demand forecasts for every window; the binding slot is always exact.

    ``additive`` adds ``offsets[k-1]`` (or seeded N(0, sigma) draws) to the
    k-th advisory slot; ``multiplicative`` scales it by ``factors[k-1]`` (or
    by ``1 + N(0, sigma)``).
    """
    if W < 1:
        raise ValueError("window length must be at least 1")
    if not np.isfinite(sigma) or any(not np.isfinite(v) for v in (offsets or ())) \
            or any(not np.isfinite(v) for v in (factors or ())):
        raise ValueError("error model parameters must be finite")
    rng = np.random.default_rng(seed)
    d = np.asarray(scenario.demand, float)
    T = len(d)
    windows = []
    for t in range(T):
        true = d[t:min(t + W, T)].copy()
        lags = len(true) - 1
        if model == "none" or lags == 0:
            windows.append(true)
            continue
        if model == "additive":
            err = np.asarray(offsets[:lags], float) if offsets is not None else rng.normal(0.0, sigma, lags)
            true[1:] += err
        elif model == "multiplicative":
            fac = np.asarray(factors[:lags], float) if factors is not None else 1.0 + rng.normal(0.0, sigma, lags)
            true[1:] *= fac
        else:
            raise ValueError(f"unknown forecast error model {model!r}")
        windows.append(true)
    return ForecastSet(tuple(windows), "true" if model == "none" else "perturbed")


def supplied_forecasts(windows: Sequence[Sequence[float]]) -> ForecastSet:
    return ForecastSet(tuple(np.asarray(w, float) for w in windows), "supplied")


class RollingInfeasibleError(DispatchInfeasibleError):
    def __init__(self, message: str, window: int, partial: "RollingResult", cause: Exception):
        super().__init__(message, getattr(cause, "interval", None), getattr(cause, "limit", None))
        self.window = window
        self.partial = partial


@dataclass(frozen=True, eq=False)
class RollingResult:
    scenario: Scenario
    W: int
    gamma: int | Mapping[str, int] | None
    windows: tuple  # DispatchSolution per window
    schedules: tuple  # realized StorageSchedule per storage
    complete: bool = True

    @property
    def T(self) -> int:
        return len(self.windows)

    def schedule(self, storage_id: str) -> StorageSchedule:
        for s in self.schedules:
            if s.id == storage_id:
                return s
        raise KeyError(storage_id)

    @property
    def objective(self) -> float:
        """Bid cost of the implemented dispatch, summed over the fleet."""
        from .pricing import bid_cost

        total = 0.0
        for sch in self.schedules:
            unit = self.scenario.unit(sch.id)
            total += bid_cost(unit.bid, unit.spec.s, sch.gC, sch.gD)
        return total


def _window_gamma(gamma, scope: str, reaches_end: bool):
    if gamma is None or (scope == "final" and not reaches_end):
        return None
    return gamma


def rolling_dispatch(scenario: Scenario, W: int, forecasts: ForecastSet | None = None,
                     gamma: int | Mapping[str, int] | None = None, gamma_scope: str = "window") -> RollingResult:
    """Clear window after window, implementing only the first interval of each.

    With ``gamma`` set, each window uses the gamma-linear cost and confines its
    terminal SoC to segment ``gamma`` (``gamma_scope="final"`` applies that
    only to windows ending at the horizon).
    """
    if W < 1:
        raise ValueError("window length must be at least 1")
    if gamma_scope not in ("window", "final"):
        raise ValueError("gamma_scope must be 'window' or 'final'")
    T = scenario.T
    forecasts = forecasts or make_forecasts(scenario, W)
    ids = [u.id for u in scenario.fleet]
    e = {u.id: [u.spec.s] for u in scenario.fleet}
    gC = {i: [] for i in ids}
    gD = {i: [] for i in ids}
    solved: list[DispatchSolution] = []

    def result(complete: bool) -> RollingResult:
        schedules = tuple(StorageSchedule(i, np.array(gC[i]), np.array(gD[i]), np.array(e[i])) for i in ids)
        return RollingResult(scenario, W, gamma, tuple(solved), schedules, complete)

    for t in range(T):
        demand = forecasts.window(t)
        if len(demand) != min(W, T - t):
            raise ValueError(f"forecast for window {t + 1} has length {len(demand)}, expected {min(W, T - t)}")
        fleet = []
        for u in scenario.fleet:
            sp = u.spec
            s = min(max(e[u.id][-1], sp.eMin), sp.eMax)
            g0C = gC[u.id][-1] if t else sp.g0C
            g0D = gD[u.id][-1] if t else sp.g0D
            fleet.append(dataclasses.replace(u, spec=dataclasses.replace(sp, s=s, g0C=g0C, g0D=g0D)))
        g = _window_gamma(gamma, gamma_scope, t + len(demand) == T)
        options = dataclasses.replace(scenario.options, window=W, gamma=g)
        window = Scenario(tuple(demand), tuple(fleet), options)
        try:
            sol = solve_one_shot(window, GAMMA if g is not None else EPIGRAPH)
        except DispatchInfeasibleError as exc:
            raise RollingInfeasibleError(f"window {t + 1} infeasible: {exc}", t + 1, result(False), exc) from exc
        solved.append(sol)
        for u in scenario.fleet:
            sch = sol.schedule(u.id)
            gC[u.id].append(float(sch.gC[0]))
            gD[u.id].append(float(sch.gD[0]))
            e[u.id].append(e[u.id][-1] + u.bid.etaC * sch.gC[0] - sch.gD[0] / u.bid.etaD)
    return result(True)


def r_lmp(result: RollingResult) -> PriceSchedule:
    return PriceSchedule.flat([float(w.lam[0]) for w in result.windows])


def r_tlmp(result: RollingResult) -> PriceSchedule:
    charge, discharge = {}, {}
    for u in result.scenario.fleet:
        pairs = [tlmp(w, u.id) for w in result.windows]
        charge[u.id] = np.array([p[0][0] for p in pairs])
        discharge[u.id] = np.array([p[1][0] for p in pairs])
    return PriceSchedule(DISCRIMINATIVE, charge=charge, discharge=discharge)


@dataclass(frozen=True, eq=False)
class RollingLocAudit:
    result: RollingResult
    lmp: LocReport
    tlmp: LocReport


def rolling_loc_audit(scenario: Scenario, W: int, forecasts: ForecastSet | None = None,
                      gamma: int | Mapping[str, int] | None = None, gamma_scope: str = "window") -> RollingLocAudit:
    """LOC of the implemented rolling dispatch under R-LMP and under R-TLMP.

    The self-schedule benchmark spans the full horizon; with ``gamma`` it
    uses the gamma-linear cost and terminal segment, as the market did.
    """
    result = rolling_dispatch(scenario, W, forecasts, gamma, gamma_scope)
    return RollingLocAudit(
        result,
        loc_report(r_lmp(result), result.schedules, scenario, gamma=gamma),
        loc_report(r_tlmp(result), result.schedules, scenario, gamma=gamma),
    )
