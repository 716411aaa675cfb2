"""SoC-dependent bids: validation, stage and multi-interval costs.

Segment indices in the public API are 1-based (``1..K``), matching the way
bids are usually written down; arrays inside are 0-based.

A bid partitions the SoC axis at breakpoints ``E[0] < ... < E[K]``.  In
segment ``k`` the storage values charging at ``cC[k]`` $/MWh (a benefit) and
prices discharging at ``cD[k]`` $/MWh.  Segment lookup is half-open,
``[E[k-1], E[k])``, with the top segment closed; the cost formulas are
continuous across breakpoints so the convention does not affect values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "BidStructureError",
    "ClosedFormCost",
    "EdcrReport",
    "EpigraphPieces",
    "NotEdcrError",
    "ProfileReport",
    "SimultaneousOperationError",
    "SocBid",
    "SocDomainError",
    "affine_composition_profile",
    "charge_cost",
    "discharge_cost",
    "edcr_closed_form_cost",
    "epigraph_pieces",
    "gamma_linear_constant",
    "integral_oracle_cost",
    "is_edcr",
    "segment_of",
    "stage_cost",
    "trajectory_cost",
    "validate_bid",
]

SIMULTANEOUS_TOL = 1e-9


class BidStructureError(ValueError):
    pass


class SocDomainError(ValueError):
    pass


class SimultaneousOperationError(ValueError):
    pass


class NotEdcrError(ValueError):
    pass


@dataclass(frozen=True)
class SocBid:
    """Piecewise-constant charge-benefit / discharge-cost curves over SoC."""

    E: tuple
    cC: tuple
    cD: tuple
    etaC: float = 1.0
    etaD: float = 1.0

    def __post_init__(self):
        E = tuple(float(v) for v in self.E)
        cC = tuple(float(v) for v in self.cC)
        cD = tuple(float(v) for v in self.cD)
        if len(E) < 2:
            raise BidStructureError("E needs at least two breakpoints (K >= 1)")
        if len(cC) != len(E) - 1 or len(cD) != len(E) - 1:
            raise BidStructureError(
                f"cC and cD need K={len(E) - 1} entries, got {len(cC)} and {len(cD)}")
        if not all(math.isfinite(v) for v in E + cC + cD + (self.etaC, self.etaD)):
            raise BidStructureError("bid parameters must be finite")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "cC", cC)
        object.__setattr__(self, "cD", cD)
        object.__setattr__(self, "etaC", float(self.etaC))
        object.__setattr__(self, "etaD", float(self.etaD))

    @property
    def K(self) -> int:
        return len(self.cC)

    @property
    def soc_range(self) -> tuple[float, float]:
        return self.E[0], self.E[-1]

    def _tol(self) -> float:
        return 1e-9 * (1.0 + max(abs(self.E[0]), abs(self.E[-1])))


def validate_bid(bid: SocBid) -> list[str]:
    """Violated conditions of the bid (empty when the bid is acceptable).

    Checks strictly increasing breakpoints, efficiencies in (0, 1], the
    monotonicity of both price curves and the charge/discharge spread
    ``cC[1]/etaC < cD[K]*etaD``.  Indices in messages are 1-based.
    """
    problems = []
    for k in range(bid.K):
        if not bid.E[k] < bid.E[k + 1]:
            problems.append(f"E not strictly increasing at k={k + 1}")
    for name, eta in (("etaC", bid.etaC), ("etaD", bid.etaD)):
        if not 0.0 < eta <= 1.0:
            problems.append(f"{name}={eta} outside (0, 1]")
    for k in range(bid.K - 1):
        if bid.cC[k] < bid.cC[k + 1]:
            problems.append(f"cC not non-increasing at k={k + 1}")
        if bid.cD[k] < bid.cD[k + 1]:
            problems.append(f"cD not non-increasing at k={k + 1}")
    if bid.etaC > 0 and not bid.cC[0] / bid.etaC < bid.cD[-1] * bid.etaD:
        problems.append(
            f"spread violated: cC[1]/etaC={bid.cC[0] / bid.etaC:g} >= cD[K]*etaD={bid.cD[-1] * bid.etaD:g}")
    return problems


def segment_of(bid: SocBid, e: float) -> int:
    lo, hi = bid.soc_range
    tol = bid._tol()
    if not (lo - tol <= e <= hi + tol):
        raise SocDomainError(f"SoC {e} outside [{lo}, {hi}]")
    # bisect_right over interior breakpoints gives the half-open convention
    k = int(np.searchsorted(bid.E[1:-1], e, side="right"))
    return k + 1


class EdcrReport(NamedTuple):
    ok: bool
    ratios: list  # ratio for k = 2..K; None where undefined
    violations: list


def is_edcr(bid: SocBid, tol: float = 1e-9) -> EdcrReport:
    """Equal decremental-cost ratio test: ``dcC_k = etaC*etaD * dcD_k`` for all k."""
    target = bid.etaC * bid.etaD
    scale = 1.0 + max(abs(v) for v in bid.cC + bid.cD)
    ratios, violations = [], []
    for k in range(1, bid.K):
        dC = bid.cC[k] - bid.cC[k - 1]
        dD = bid.cD[k] - bid.cD[k - 1]
        ratios.append(dC / dD if dD != 0 else None)
        if abs(dC - target * dD) > tol * scale:
            if dD == 0:
                violations.append(f"k={k + 1}: cD flat while cC changes, ratio undefined")
            else:
                violations.append(f"k={k + 1}: ratio {dC / dD:g} != etaC*etaD={target:g}")
    return EdcrReport(not violations, ratios, violations)


def _dC(bid: SocBid, k: int) -> float:
    # 0-based difference cC[k] - cC[k+1]
    return bid.cC[k] - bid.cC[k + 1]


def _dD(bid: SocBid, k: int) -> float:
    return bid.cD[k] - bid.cD[k + 1]


def _charge_crossing(bid: SocBid, m: int, n: int, e: float) -> float:
    # sum_{k=m}^{n-1} dcC_k/etaC * (E_{k+1} - e) in 1-based indices
    return sum(_dC(bid, k - 1) / bid.etaC * (bid.E[k] - e) for k in range(m, n))


def _discharge_crossing(bid: SocBid, m: int, n: int, e: float) -> float:
    # sum_{k=n+1}^{m} etaD * dcD_{k-1} * (E_k - e) in 1-based indices
    return sum(bid.etaD * _dD(bid, k - 2) * (bid.E[k - 1] - e) for k in range(n + 1, m + 1))


def charge_cost(bid: SocBid, e_t: float, gC: float) -> float:
    """Charging benefit ``f^C`` of ``gC`` MW starting from SoC ``e_t``."""
    if gC < 0:
        raise ValueError("charging power must be nonnegative")
    after = e_t + gC * bid.etaC
    if after > bid.E[-1] + bid._tol():
        raise SocDomainError(f"charging {gC} MW from {e_t} ends at {after} above E_(K+1)={bid.E[-1]}")
    m, n = segment_of(bid, e_t), segment_of(bid, min(after, bid.E[-1]))
    value = gC * bid.cC[n - 1]
    if n > m:
        value += _charge_crossing(bid, m, n, e_t)
    return value


def discharge_cost(bid: SocBid, e_t: float, gD: float) -> float:
    """Discharging cost ``f^D`` of ``gD`` MW starting from SoC ``e_t``.

    The crossing term uses ``dcD_{k-1}``; with ``dcD_k`` the top segment
    would reference a price that does not exist.
    """
    if gD < 0:
        raise ValueError("discharging power must be nonnegative")
    after = e_t - gD / bid.etaD
    if after < bid.E[0] - bid._tol():
        raise SocDomainError(f"discharging {gD} MW from {e_t} ends at {after} below E_1={bid.E[0]}")
    m, n = segment_of(bid, e_t), segment_of(bid, max(after, bid.E[0]))
    value = gD * bid.cD[n - 1]
    if n < m:
        value += _discharge_crossing(bid, m, n, e_t)
    return value


def stage_cost(bid: SocBid, e_t: float, gC: float, gD: float) -> float:
    if gC > SIMULTANEOUS_TOL and gD > SIMULTANEOUS_TOL:
        raise SimultaneousOperationError(f"simultaneous charge {gC} and discharge {gD}")
    return discharge_cost(bid, e_t, gD) - charge_cost(bid, e_t, gC)


def trajectory_cost(bid: SocBid, s: float, gC: Sequence[float], gD: Sequence[float]) -> float:
    """Total bid cost of a dispatch, summing stage costs along the SoC path."""
    gC = np.asarray(gC, dtype=float)
    gD = np.asarray(gD, dtype=float)
    if gC.shape != gD.shape:
        raise ValueError("gC and gD must have equal length")
    e = float(s)
    total = 0.0
    for t in range(gC.size):
        try:
            total += stage_cost(bid, e, gC[t], gD[t])
        except SocDomainError as exc:
            raise SocDomainError(f"interval {t + 1}: {exc}") from exc
        e = e + gC[t] * bid.etaC - gD[t] / bid.etaD
    return total


def soc_path(bid: SocBid, s: float, gC: Sequence[float], gD: Sequence[float]) -> np.ndarray:
    gC = np.asarray(gC, dtype=float)
    gD = np.asarray(gD, dtype=float)
    return float(s) + np.concatenate([[0.0], np.cumsum(gC * bid.etaC - gD / bid.etaD)])


class EpigraphPieces(NamedTuple):
    """Affine pieces ``alpha[j] + charge[j]*sum(gC) + discharge[j]*sum(gD)``."""

    alpha: np.ndarray
    charge: np.ndarray
    discharge: np.ndarray

    def evaluate(self, total_charge: float, total_discharge: float) -> np.ndarray:
        return self.alpha + self.charge * total_charge + self.discharge * total_discharge


def _require_edcr(bid: SocBid) -> None:
    report = is_edcr(bid)
    if not report.ok:
        raise NotEdcrError("bid does not satisfy EDCR: " + "; ".join(report.violations))


def _cumulative_charge_value(bid: SocBid) -> np.ndarray:
    # sum_{k<j} dcC_k (E_{k+1} - E_1) / etaC for j = 1..K
    out = np.zeros(bid.K)
    for j in range(1, bid.K):
        out[j] = out[j - 1] + _dC(bid, j - 1) * (bid.E[j] - bid.E[0]) / bid.etaC
    return out


def epigraph_pieces(bid: SocBid, s: float) -> EpigraphPieces:
    _require_edcr(bid)
    i = segment_of(bid, s)
    cum = _cumulative_charge_value(bid)
    cC = np.array(bid.cC)
    h = cC[i - 1] * (s - bid.E[0]) / bid.etaC + cum[i - 1]
    alpha = -cum - cC * (s - bid.E[0]) / bid.etaC + h
    return EpigraphPieces(alpha, -cC, np.array(bid.cD))


def gamma_linear_constant(bid: SocBid, s: float, gamma: int) -> float:
    """Constant of the multi-interval cost when the final SoC lies in segment ``gamma``."""
    if not 1 <= gamma <= bid.K:
        raise ValueError(f"gamma={gamma} outside 1..{bid.K}")
    m = segment_of(bid, s)
    if gamma > m:
        return -_charge_crossing(bid, m, gamma, s)
    if gamma < m:
        return _discharge_crossing(bid, m, gamma, s)
    return 0.0


class ClosedFormCost(NamedTuple):
    max_form: float
    case_form: float
    m: int
    n: int


def edcr_closed_form_cost(bid: SocBid, s: float, gC: Sequence[float], gD: Sequence[float]) -> ClosedFormCost:
    """Multi-interval cost of an EDCR bid from the start and end segments only."""
    _require_edcr(bid)
    gC = np.asarray(gC, dtype=float)
    gD = np.asarray(gD, dtype=float)
    path = soc_path(bid, s, gC, gD)
    lo, hi = bid.soc_range
    tol = bid._tol()
    if np.any(path < lo - tol) or np.any(path > hi + tol):
        t = int(np.nonzero((path < lo - tol) | (path > hi + tol))[0][0])
        raise SocDomainError(f"SoC {path[t]} leaves [{lo}, {hi}] after interval {t}")
    SC, SD = float(gC.sum()), float(gD.sum())
    pieces = epigraph_pieces(bid, s)
    max_form = float(np.max(pieces.evaluate(SC, SD)))
    m = segment_of(bid, s)
    n = segment_of(bid, float(np.clip(path[-1], lo, hi)))
    case_form = -bid.cC[n - 1] * SC + bid.cD[n - 1] * SD + gamma_linear_constant(bid, s, n)
    return ClosedFormCost(max_form, case_form, m, n)


def integral_oracle_cost(bid: SocBid, e_t: float, gC: float, gD: float, step: float = 1e-4) -> float:
    """Brute-force stage cost: midpoint sum of the marginal curve over SoC slices.

    Charging accumulates ``cC(e)/etaC`` per MWh of SoC gained, discharging
    ``etaD*cD(e)`` per MWh of SoC released.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if gC > SIMULTANEOUS_TOL and gD > SIMULTANEOUS_TOL:
        raise SimultaneousOperationError(f"simultaneous charge {gC} and discharge {gD}")
    lo, hi = bid.soc_range
    inner = np.asarray(bid.E[1:-1])

    def integrate(a: float, b: float, prices: np.ndarray) -> float:
        if b <= a:
            return 0.0
        if a < lo - bid._tol() or b > hi + bid._tol():
            raise SocDomainError(f"SoC range [{a}, {b}] outside [{lo}, {hi}]")
        count = max(1, math.ceil((b - a) / step))
        edges = np.linspace(a, b, count + 1)
        mids = 0.5 * (edges[:-1] + edges[1:])
        seg = np.searchsorted(inner, mids, side="right")
        return float(np.sum(prices[seg] * np.diff(edges)))

    benefit = integrate(e_t, e_t + gC * bid.etaC, np.asarray(bid.cC) / bid.etaC)
    cost = integrate(e_t - gD / bid.etaD, e_t, np.asarray(bid.cD) * bid.etaD)
    return cost - benefit


class ProfileReport(NamedTuple):
    g: np.ndarray
    cost: np.ndarray
    second_diff: np.ndarray  # aligned with g; nan at the ends and next to infeasible points
    feasible: np.ndarray
    violations: list  # g-locations of midpoint-convexity failures, one per run of failing points


def loop_dispatch(bid: SocBid, g: float) -> tuple[tuple[float, float], tuple[float, float]]:
    """Two-interval dispatch moving the SoC by ``g`` and then back to where it started.

    ``g > 0`` charges first, ``g < 0`` discharges first.
    """
    if g >= 0:
        return (g / bid.etaC, 0.0), (0.0, g * bid.etaD)
    return (0.0, -g / bid.etaC), (-g * bid.etaD, 0.0)


def affine_composition_profile(
    bid: SocBid,
    s: float,
    g_grid: Sequence[float] | None = None,
    *,
    side: str = "discharge",
    points: int = 101,
    soc_bounds: tuple[float, float] | None = None,
    tol: float = 1e-9,
) -> ProfileReport:
    """Cost of a two-interval loop-back dispatch along its SoC excursion ``g``.

    Restricting the multi-interval cost to this affine slice exposes its
    curvature: an EDCR bid gives a straight line on either side of ``g = 0``,
    while a non-EDCR bid bends at SoC breakpoints.  Without ``g_grid`` the
    grid spans the feasible excursions on ``side`` (``"charge"``: ``g >= 0``,
    ``"discharge"``: ``g <= 0``, ``"both"``).
    """
    lo, hi = soc_bounds or bid.soc_range
    if g_grid is None:
        span = {"charge": (0.0, hi - s), "discharge": (lo - s, 0.0), "both": (lo - s, hi - s)}
        if side not in span:
            raise ValueError(f"side must be one of {sorted(span)}")
        g_grid = np.linspace(*span[side], points)
    g = np.asarray(g_grid, dtype=float)
    cost = np.full(g.shape, np.nan)
    for idx, value in enumerate(g):
        if not lo - bid._tol() <= s + value <= hi + bid._tol():
            continue
        gC, gD = loop_dispatch(bid, value)
        try:
            cost[idx] = trajectory_cost(bid, s, gC, gD)
        except SocDomainError:
            pass
    feasible = np.isfinite(cost)
    second = np.full(g.shape, np.nan)
    if g.size >= 3:
        second[1:-1] = cost[:-2] - 2.0 * cost[1:-1] + cost[2:]
    failing = np.nan_to_num(second, nan=0.0) < -tol * (1.0 + np.nan_to_num(np.abs(cost)))
    violations = []
    idx = 0
    while idx < g.size:
        if failing[idx]:
            end = idx
            while end + 1 < g.size and failing[end + 1]:
                end += 1
            run = np.arange(idx, end + 1)
            worst = run[np.argmin(second[run])]
            violations.append(float(g[worst]))
            idx = end + 1
        else:
            idx += 1
    return ProfileReport(g, cost, second, feasible, violations)
