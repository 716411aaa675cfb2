"""One-shot multi-interval economic dispatch with SoC-dependent bids.

Every participant is a (generalized) storage unit.  Under EDCR bids the
multi-interval cost of a unit is the maximum of K affine functions of its
total charge and discharge, so the clearing problem is an LP in epigraph
form.  :func:`oracle_enumerate` solves the original non-convex problem by
enumerating SoC segment assignments and is the independent check.

Row labels of the clearing LP (``t`` is 1-based)::

    balance[t]        sum_i (gD - gC) = demand                 lambda_t
    soc[id,t]         e_t + etaC*gC - gD/etaD - e_(t+1) = 0    phi_t
    rampC[id,t]       -rCdown <= gC_t - gC_(t-1) <= rCup       (mu_lo, mu_hi)
    rampD[id,t]       -rDdown <= gD_t - gD_(t-1) <= rDup
    epi[id,j]         theta - (alpha_j - cC_j*sum gC + cD_j*sum gD) >= 0
"""
from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bids import (
    NotEdcrError,
    SocBid,
    _charge_crossing,
    _discharge_crossing,
    epigraph_pieces,
    gamma_linear_constant,
    is_edcr,
    segment_of,
    validate_bid,
)
from .linprog import LpBuilder, LpProblem, LpSolution, Tolerances, solve_lp

__all__ = [
    "DispatchInfeasibleError",
    "DispatchKkt",
    "DispatchSolution",
    "SimultaneityReport",
    "OracleSizeError",
    "Scenario",
    "ScenarioOptions",
    "Storage",
    "StorageDuals",
    "StorageSchedule",
    "StorageSpec",
    "build_clearing_lp",
    "check_no_simultaneous",
    "flexible_load",
    "generator",
    "kkt_residuals_dispatch",
    "unit_kkt_rows",
    "oracle_enumerate",
    "solve_one_shot",
]

EPIGRAPH = "epigraph"
GAMMA = "gamma"


class DispatchInfeasibleError(RuntimeError):
    def __init__(self, message: str, interval: int | None = None, limit: str | None = None):
        super().__init__(message)
        self.interval = interval
        self.limit = limit


class OracleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class StorageSpec:
    gCmax: float
    gDmax: float
    rCup: float = math.inf
    rCdown: float = math.inf
    rDup: float = math.inf
    rDdown: float = math.inf
    eMin: float = 0.0
    eMax: float = math.inf
    s: float = 0.0
    g0C: float = 0.0
    g0D: float = 0.0

    def __post_init__(self):
        for name in ("gCmax", "gDmax", "rCup", "rCdown", "rDup", "rDdown"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        if not self.eMin <= self.s <= self.eMax:
            raise ValueError(f"initial SoC {self.s} outside [{self.eMin}, {self.eMax}]")


@dataclass(frozen=True)
class Storage:
    id: str
    bid: SocBid
    spec: StorageSpec

    def __post_init__(self):
        lo, hi = self.bid.soc_range
        tol = 1e-9 * (1 + abs(lo) + abs(hi))
        if self.spec.eMin < lo - tol or self.spec.eMax > hi + tol:
            raise ValueError(
                f"storage {self.id}: SoC limits [{self.spec.eMin}, {self.spec.eMax}] exceed bid range [{lo}, {hi}]")


def generator(id: str, cost: float, capacity: float, *, energy: float = 1e4,
              ramp: float = math.inf) -> Storage:
    """A dispatchable generator as a discharge-only storage with a large reservoir."""
    bid = SocBid((0.0, energy), (0.0,), (cost,))
    spec = StorageSpec(gCmax=0.0, gDmax=capacity, rDup=ramp, rDdown=ramp,
                       eMin=0.0, eMax=energy, s=energy)
    return Storage(id, bid, spec)


def flexible_load(id: str, value: float, capacity: float, *, energy: float = 1e4) -> Storage:
    """An elastic demand: charging is consumption valued at ``value`` $/MWh."""
    bid = SocBid((0.0, energy), (value,), (value + 1.0,))
    spec = StorageSpec(gCmax=capacity, gDmax=0.0, eMin=0.0, eMax=energy, s=0.0)
    return Storage(id, bid, spec)


@dataclass(frozen=True)
class ScenarioOptions:
    window: int | None = None
    gamma: int | Mapping[str, int] | None = None
    tolerances: Tolerances = field(default_factory=Tolerances)

    def gamma_for(self, storage_id: str) -> int | None:
        if self.gamma is None or isinstance(self.gamma, int):
            return self.gamma
        return self.gamma.get(storage_id)


@dataclass(frozen=True)
class Scenario:
    demand: tuple
    fleet: tuple
    options: ScenarioOptions = field(default_factory=ScenarioOptions)

    def __post_init__(self):
        object.__setattr__(self, "demand", tuple(float(d) for d in self.demand))
        object.__setattr__(self, "fleet", tuple(self.fleet))
        if len(self.demand) < 1:
            raise ValueError("horizon must contain at least one interval")
        if not self.fleet:
            raise ValueError("fleet must not be empty")
        ids = [u.id for u in self.fleet]
        if len(set(ids)) != len(ids):
            raise ValueError("storage ids must be unique")
        for unit in self.fleet:
            gamma = self.options.gamma_for(unit.id)
            if gamma is not None and not 1 <= gamma <= unit.bid.K:
                raise ValueError(f"storage {unit.id}: gamma={gamma} outside 1..{unit.bid.K}")

    @property
    def T(self) -> int:
        return len(self.demand)

    def unit(self, storage_id: str) -> Storage:
        for u in self.fleet:
            if u.id == storage_id:
                return u
        raise KeyError(storage_id)

    def with_unit(self, unit: Storage) -> "Scenario":
        fleet = tuple(unit if u.id == unit.id else u for u in self.fleet)
        return dataclasses.replace(self, fleet=fleet)


@dataclass(frozen=True, eq=False)
class StorageSchedule:
    id: str
    gC: np.ndarray
    gD: np.ndarray
    e: np.ndarray  # length T+1, e[0] = initial SoC
    theta: float = math.nan


@dataclass(frozen=True, eq=False)
class StorageDuals:
    phi: np.ndarray
    muC_lo: np.ndarray
    muC_hi: np.ndarray
    muD_lo: np.ndarray
    muD_hi: np.ndarray
    rhoC_lo: np.ndarray
    rhoC_hi: np.ndarray
    rhoD_lo: np.ndarray
    rhoD_hi: np.ndarray
    soc_lo: np.ndarray  # bound multipliers of e_2..e_(T+1)
    soc_hi: np.ndarray
    epigraph: np.ndarray | None = None  # weights of the K pieces; None in gamma mode


@dataclass(frozen=True, eq=False)
class DispatchSolution:
    schedules: tuple
    objective: float
    cost_mode: str
    lam: np.ndarray | None = None
    duals: Mapping[str, StorageDuals] | None = None
    gamma: Mapping[str, int] | None = None
    no_simultaneous: bool = True
    nonneg_lmp: bool = True
    assignment: tuple | None = None
    lp: LpProblem | None = None
    lp_solution: LpSolution | None = None
    scenario: Scenario | None = None

    @property
    def T(self) -> int:
        return len(self.schedules[0].gC)

    def schedule(self, storage_id: str) -> StorageSchedule:
        for sch in self.schedules:
            if sch.id == storage_id:
                return sch
        raise KeyError(storage_id)


# --------------------------------------------------------------------------
# LP construction


def _gamma_map(scenario: Scenario, cost_mode: str) -> dict[str, int]:
    if cost_mode != GAMMA:
        return {}
    out = {}
    for unit in scenario.fleet:
        g = scenario.options.gamma_for(unit.id)
        if g is None:
            raise ValueError(f"storage {unit.id}: gamma-mode requires an end segment")
        out[unit.id] = g
    return out


def add_storage_block(lp: LpBuilder, unit: Storage, T: int, *, cost_mode: str = EPIGRAPH,
                      gamma: int | None = None, terminal_gamma: bool | None = None) -> dict:
    """Variables, SoC/ramp rows and bid cost of one unit over ``T`` intervals.

    ``cost_mode="epigraph"`` charges the max-of-pieces cost through a free
    variable theta; ``"gamma"`` uses the linear cost valid when the final SoC
    lies in segment ``gamma``.  ``terminal_gamma`` (default: gamma-mode)
    confines the final SoC to that segment.
    """
    bid, sp, uid = unit.bid, unit.spec, unit.id
    report = is_edcr(bid)
    if not report.ok:
        raise NotEdcrError(f"storage {uid}: bid is not EDCR ({'; '.join(report.violations)}); "
                           "use oracle_enumerate for non-EDCR bids")
    s = min(max(sp.s, sp.eMin), sp.eMax)
    gC = [lp.add_var(f"gC[{uid},{t}]", 0.0, sp.gCmax) for t in range(1, T + 1)]
    gD = [lp.add_var(f"gD[{uid},{t}]", 0.0, sp.gDmax) for t in range(1, T + 1)]
    e = [lp.add_var(f"e[{uid},1]", s, s)]
    for t in range(2, T + 2):
        lo, hi = sp.eMin, sp.eMax
        if t == T + 1 and (terminal_gamma if terminal_gamma is not None else cost_mode == GAMMA):
            lo = max(lo, bid.E[gamma - 1])
            hi = min(hi, bid.E[gamma])
            if lo > hi:
                raise DispatchInfeasibleError(
                    f"storage {uid}: segment {gamma} does not intersect SoC limits", T, "end-state segment")
        e.append(lp.add_var(f"e[{uid},{t}]", lo, hi))
    for t in range(T):
        lp.add_eq(f"soc[{uid},{t + 1}]",
                  {e[t]: 1.0, gC[t]: bid.etaC, gD[t]: -1.0 / bid.etaD, e[t + 1]: -1.0}, 0.0)
    for name, g, up, down, g0 in (("rampC", gC, sp.rCup, sp.rCdown, sp.g0C),
                                   ("rampD", gD, sp.rDup, sp.rDdown, sp.g0D)):
        lp.add_range(f"{name}[{uid},1]", {g[0]: 1.0}, g0 - down, g0 + up)
        for t in range(1, T):
            lp.add_range(f"{name}[{uid},{t + 1}]", {g[t]: 1.0, g[t - 1]: -1.0}, -down, up)
    block = {"gC": gC, "gD": gD, "e": e, "theta": None}
    if cost_mode == EPIGRAPH:
        pieces = epigraph_pieces(bid, s)
        theta = lp.add_var(f"theta[{uid}]", -math.inf, math.inf, 1.0)
        for j in range(bid.K):
            row = {theta: 1.0}
            row.update({v: -pieces.charge[j] for v in gC})
            row.update({v: -pieces.discharge[j] for v in gD})
            lp.add_range(f"epi[{uid},{j + 1}]", row, pieces.alpha[j], math.inf)
        block["theta"] = theta
    elif cost_mode == GAMMA:
        for v in gC:
            lp.add_cost(v, -bid.cC[gamma - 1])
        for v in gD:
            lp.add_cost(v, bid.cD[gamma - 1])
        lp.const += gamma_linear_constant(bid, s, gamma)
    else:
        raise ValueError(f"unknown cost mode {cost_mode!r}")
    return block


def build_clearing_lp(scenario: Scenario, cost_mode: str = EPIGRAPH) -> tuple[LpProblem, dict]:
    """The clearing LP and the variable index map ``{storage id: block}``."""
    T = scenario.T
    gammas = _gamma_map(scenario, cost_mode)
    lp = LpBuilder()
    blocks = {u.id: add_storage_block(lp, u, T, cost_mode=cost_mode, gamma=gammas.get(u.id))
              for u in scenario.fleet}
    for t in range(T):
        row: dict[int, float] = {}
        for b in blocks.values():
            row[b["gD"][t]] = 1.0
            row[b["gC"][t]] = -1.0
        lp.add_eq(f"balance[{t + 1}]", row, scenario.demand[t])
    return lp.build(), blocks


# --------------------------------------------------------------------------
# solving


def _unit_duals(sol: LpSolution, unit: Storage, block: dict, T: int) -> StorageDuals:
    uid = unit.id
    rC = [sol.row_multipliers(f"rampC[{uid},{t}]") for t in range(1, T + 1)]
    rD = [sol.row_multipliers(f"rampD[{uid},{t}]") for t in range(1, T + 1)]
    gC, gD, e = block["gC"], block["gD"], block["e"][1:]
    epi = None
    if block["theta"] is not None:
        epi = np.array([sol.row_multipliers(f"epi[{uid},{j}]")[0] for j in range(1, unit.bid.K + 1)])
    return StorageDuals(
        phi=np.array([sol.dual(f"soc[{uid},{t}]") for t in range(1, T + 1)]),
        muC_lo=np.array([m[0] for m in rC]), muC_hi=np.array([m[1] for m in rC]),
        muD_lo=np.array([m[0] for m in rD]), muD_hi=np.array([m[1] for m in rD]),
        rhoC_lo=sol.z_lower[gC].copy(), rhoC_hi=sol.z_upper[gC].copy(),
        rhoD_lo=sol.z_lower[gD].copy(), rhoD_hi=sol.z_upper[gD].copy(),
        soc_lo=sol.z_lower[e].copy(), soc_hi=sol.z_upper[e].copy(),
        epigraph=epi,
    )


def _schedule(x: np.ndarray, unit: Storage, block: dict) -> StorageSchedule:
    theta = float(x[block["theta"]]) if block["theta"] is not None else math.nan
    # round-off can leave a basic power a hair below zero
    return StorageSchedule(unit.id, np.maximum(x[block["gC"]], 0.0), np.maximum(x[block["gD"]], 0.0),
                           x[block["e"]].copy(), theta)


def diagnose_infeasibility(scenario: Scenario, cost_mode: str = EPIGRAPH) -> tuple[int | None, str]:
    """Earliest interval at which the dispatch becomes infeasible, and the likely limit."""
    T = scenario.T
    for t in range(T):
        d = scenario.demand[t]
        if d > sum(u.spec.gDmax for u in scenario.fleet) + 1e-9:
            return t + 1, "discharge capacity"
        if -d > sum(u.spec.gCmax for u in scenario.fleet) + 1e-9:
            return t + 1, "charge capacity"
    tol = scenario.options.tolerances
    for horizon in range(1, T + 1):
        prefix = dataclasses.replace(scenario, demand=scenario.demand[:horizon])
        mode = cost_mode if horizon == T else EPIGRAPH
        try:
            problem, _ = build_clearing_lp(prefix, mode)
        except DispatchInfeasibleError as exc:
            return exc.interval, exc.limit or "end-state segment"
        if solve_lp(problem, tol).status != "infeasible":
            continue
        loose = tuple(dataclasses.replace(u, spec=dataclasses.replace(
            u.spec, rCup=math.inf, rCdown=math.inf, rDup=math.inf, rDdown=math.inf)) for u in prefix.fleet)
        relaxed, _ = build_clearing_lp(dataclasses.replace(prefix, fleet=loose), mode)
        if solve_lp(relaxed, tol).status != "infeasible":
            return horizon, "ramp"
        return horizon, "end-state segment" if mode == GAMMA and horizon == T else "SoC"
    return None, "unknown"


def solve_one_shot(scenario: Scenario, cost_mode: str = EPIGRAPH) -> DispatchSolution:
    """Clear the multi-interval market as an LP and read prices off the duals."""
    tol = scenario.options.tolerances
    problem, blocks = build_clearing_lp(scenario, cost_mode)
    sol = solve_lp(problem, tol)
    if sol.status != "optimal":
        if sol.status == "infeasible":
            interval, limit = diagnose_infeasibility(scenario, cost_mode)
            raise DispatchInfeasibleError(
                f"dispatch infeasible at interval {interval} ({limit})", interval, limit)
        raise DispatchInfeasibleError(f"clearing LP is {sol.status}")
    T = scenario.T
    lam = np.array([sol.dual(f"balance[{t}]") for t in range(1, T + 1)])
    schedules = tuple(_schedule(sol.x, u, blocks[u.id]) for u in scenario.fleet)
    duals = {u.id: _unit_duals(sol, u, blocks[u.id], T) for u in scenario.fleet}
    solution = DispatchSolution(
        schedules=schedules, objective=sol.objective, cost_mode=cost_mode, lam=lam, duals=duals,
        gamma=_gamma_map(scenario, cost_mode) or None, lp=problem, lp_solution=sol, scenario=scenario,
    )
    report = check_no_simultaneous(solution, tol=1e-7)
    return dataclasses.replace(solution, no_simultaneous=report.ok, nonneg_lmp=report.nonneg_lmp)


# --------------------------------------------------------------------------
# non-convex oracle


def _reachable_sequences(unit: Storage, T: int) -> list[tuple[int, ...]]:
    """Segment sequences of e_2..e_(T+1) that interval arithmetic cannot rule out."""
    bid, sp = unit.bid, unit.spec
    up, down = sp.gCmax * bid.etaC, sp.gDmax / bid.etaD
    out: list[tuple[int, ...]] = []

    def extend(prefix: tuple[int, ...], lo: float, hi: float) -> None:
        if len(prefix) == T:
            out.append(prefix)
            return
        r_lo, r_hi = max(lo - down, sp.eMin), min(hi + up, sp.eMax)
        for n in range(1, bid.K + 1):
            a, b = max(r_lo, bid.E[n - 1]), min(r_hi, bid.E[n])
            if a <= b + 1e-12:
                extend(prefix + (n,), a, max(a, b))

    s = sp.s
    extend((), s, s)
    return out


def _assignment_cost(unit: Storage, seq: tuple[int, ...], c: np.ndarray, block: dict) -> float:
    """Write the linear stage costs induced by ``seq`` into ``c``; return the constant."""
    bid = unit.bid
    const = 0.0
    m = segment_of(bid, unit.spec.s)
    for t, n in enumerate(seq):
        # Extending both price terms to every (m, n) keeps the cost linear when an
        # interval both charges and discharges; it reduces to f^D - f^C otherwise.
        c[block["gC"][t]] = -bid.cC[n - 1]
        c[block["gD"][t]] = bid.cD[n - 1]
        if n > m:
            f0 = -_charge_crossing(bid, m, n, 0.0)
            f1 = -_charge_crossing(bid, m, n, 1.0)
        elif n < m:
            f0 = _discharge_crossing(bid, m, n, 0.0)
            f1 = _discharge_crossing(bid, m, n, 1.0)
        else:
            f0 = f1 = 0.0
        c[block["e"][t]] = f1 - f0
        const += f0
        m = n
    return const


def oracle_enumerate(scenario: Scenario, *, max_T: int = 6, max_K: int = 4, max_N: int = 3,
                     backend: str = "highs", rel_tol: float = 1e-9) -> DispatchSolution:
    """Global optimum of the non-convex dispatch by segment-assignment enumeration.

    For each assignment of the segment holding every post-dispatch SoC, the
    stage costs are linear and the dispatch is an LP with each SoC confined
    to its segment.  Works for any bid satisfying the monotonicity
    assumptions, EDCR or not.  Ties go to the lexicographically smallest
    assignment (storage-major, then time).  No duals are produced.
    """
    T, N = scenario.T, len(scenario.fleet)
    K = max(u.bid.K for u in scenario.fleet)
    if T > max_T or K > max_K or N > max_N:
        raise OracleSizeError(f"oracle limited to T<={max_T}, K<={max_K}, N<={max_N}; got T={T}, K={K}, N={N}")
    for u in scenario.fleet:
        problems = validate_bid(u.bid)
        if problems:
            raise ValueError(f"storage {u.id}: {'; '.join(problems)}")

    lp = LpBuilder()
    blocks = {}
    for u in scenario.fleet:
        sp = u.spec
        blk = {
            "gC": [lp.add_var(f"gC[{u.id},{t}]", 0.0, sp.gCmax) for t in range(1, T + 1)],
            "gD": [lp.add_var(f"gD[{u.id},{t}]", 0.0, sp.gDmax) for t in range(1, T + 1)],
            "e": [lp.add_var(f"e[{u.id},{t}]", sp.s, sp.s) if t == 1
                  else lp.add_var(f"e[{u.id},{t}]", sp.eMin, sp.eMax) for t in range(1, T + 2)],
        }
        bid, gC, gD, e = u.bid, blk["gC"], blk["gD"], blk["e"]
        for t in range(T):
            lp.add_eq(f"soc[{u.id},{t + 1}]",
                      {e[t]: 1.0, gC[t]: bid.etaC, gD[t]: -1.0 / bid.etaD, e[t + 1]: -1.0}, 0.0)
        for name, g, up, down, g0 in (("rampC", gC, sp.rCup, sp.rCdown, sp.g0C),
                                       ("rampD", gD, sp.rDup, sp.rDdown, sp.g0D)):
            lp.add_range(f"{name}[{u.id},1]", {g[0]: 1.0}, g0 - down, g0 + up)
            for t in range(1, T):
                lp.add_range(f"{name}[{u.id},{t + 1}]", {g[t]: 1.0, g[t - 1]: -1.0}, -down, up)
        blocks[u.id] = blk
    for t in range(T):
        row = {}
        for blk in blocks.values():
            row[blk["gD"][t]] = 1.0
            row[blk["gC"][t]] = -1.0
        lp.add_eq(f"balance[{t + 1}]", row, scenario.demand[t])
    base = lp.build()
    solve = _lp_backend(backend, scenario.options.tolerances)

    per_unit = [_reachable_sequences(u, T) for u in scenario.fleet]
    best = None  # (objective, key, x)
    for combo in itertools.product(*per_unit):
        c = np.zeros(base.n_vars)
        lb, ub = base.lb.copy(), base.ub.copy()
        const = 0.0
        for u, seq in zip(scenario.fleet, combo):
            blk = blocks[u.id]
            const += _assignment_cost(u, seq, c, blk)
            for t, n in enumerate(seq):
                j = blk["e"][t + 1]
                lb[j] = max(lb[j], u.bid.E[n - 1])
                ub[j] = min(ub[j], u.bid.E[n])
        if np.any(lb > ub):
            continue
        problem = dataclasses.replace(base, c=c, lb=lb, ub=ub, const=const)
        result = solve(problem)
        if result is None:
            continue
        obj, x = result
        if best is None or obj < best[0] - rel_tol * (1 + abs(best[0])) or (
                abs(obj - best[0]) <= rel_tol * (1 + abs(best[0])) and combo < best[1]):
            best = (obj, combo, x)
    if best is None:
        raise DispatchInfeasibleError("no segment assignment admits a feasible dispatch")
    obj, combo, x = best
    schedules = tuple(_schedule(x, u, {**blocks[u.id], "theta": None}) for u in scenario.fleet)
    return DispatchSolution(schedules=schedules, objective=obj, cost_mode="oracle", assignment=combo,
                            scenario=scenario)


def _lp_backend(name: str, tol: Tolerances):
    if name == "simplex":
        def run(problem: LpProblem):
            sol = solve_lp(problem, tol)
            return (sol.objective, sol.x) if sol.optimal else None
        return run
    if name == "highs":
        from scipy.optimize import linprog

        def run(problem: LpProblem):
            p = problem
            fin_lo, fin_hi = np.isfinite(p.lo_in), np.isfinite(p.hi_in)
            A_ub = np.vstack([p.A_in[fin_hi], -p.A_in[fin_lo]])
            b_ub = np.concatenate([p.hi_in[fin_hi], -p.lo_in[fin_lo]])
            res = linprog(p.c, A_ub=A_ub if len(b_ub) else None, b_ub=b_ub if len(b_ub) else None,
                          A_eq=p.A_eq, b_eq=p.b_eq, bounds=np.column_stack([p.lb, p.ub]), method="highs")
            if res.status != 0:
                return None
            return float(res.fun + p.const), np.asarray(res.x)
        return run
    raise ValueError(f"unknown LP backend {name!r}")


# --------------------------------------------------------------------------
# audits


@dataclass(frozen=True, eq=False)
class SimultaneityReport:
    ok: bool
    verdicts: Mapping[str, np.ndarray]  # per storage, True where min(gC, gD) <= tol
    nonneg_lmp: bool


def check_no_simultaneous(solution: DispatchSolution, tol: float = 1e-7) -> SimultaneityReport:
    """No interval both charges and discharges a unit (expected under nonnegative LMPs)."""
    verdicts = {s.id: np.minimum(s.gC, s.gD) <= tol for s in solution.schedules}
    ok = all(bool(np.all(v)) for v in verdicts.values())
    nonneg = solution.lam is None or bool(np.all(solution.lam >= -tol))
    return SimultaneityReport(ok, verdicts, nonneg)


def ramp_differences(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """``(mu_hi - mu_lo)[t+1] - (mu_hi - mu_lo)[t]`` with zero beyond the horizon."""
    net = np.asarray(hi) - np.asarray(lo)
    return np.append(net[1:], 0.0) - net


def cost_gradient(unit: Storage, duals: StorageDuals, gamma: int | None) -> tuple[float, float]:
    """Subgradient of the unit's bid cost w.r.t. (gC_t, gD_t), as certified by the LP."""
    if duals.epigraph is not None:
        w = duals.epigraph
        return -float(w @ np.array(unit.bid.cC)), float(w @ np.array(unit.bid.cD))
    return -unit.bid.cC[gamma - 1], unit.bid.cD[gamma - 1]


@dataclass(frozen=True, eq=False)
class DispatchKkt:
    charge: Mapping[str, np.ndarray]
    discharge: Mapping[str, np.ndarray]
    soc: Mapping[str, np.ndarray]
    epigraph: Mapping[str, float]
    complementarity: Mapping[str, np.ndarray]
    max_stationarity: float
    max_complementarity: float

    @property
    def max_residual(self) -> float:
        return max(self.max_stationarity, self.max_complementarity)


def kkt_residuals_dispatch(scenario: Scenario, solution: DispatchSolution) -> DispatchKkt:
    """Stationarity and complementarity of the clearing problem at ``solution``.

    Per unit and interval::

        discharge:  dF/dgD - lambda + phi/etaD - DeltaD + (rhoD_hi - rhoD_lo) = 0
        charge:     dF/dgC + lambda - etaC*phi - DeltaC + (rhoC_hi - rhoC_lo) = 0

    with ``Delta`` the forward difference of net ramp multipliers.  The SoC
    and epigraph stationarity rows are reported too.
    """
    if solution.lam is None or solution.duals is None:
        raise ValueError("solution carries no dual variables")
    charge, discharge, soc, epi, comp = {}, {}, {}, {}, {}
    for unit in scenario.fleet:
        rows = unit_kkt_rows(unit, solution.schedule(unit.id), solution.duals[unit.id],
                             (solution.gamma or {}).get(unit.id), solution.lam, solution.lam)
        charge[unit.id], discharge[unit.id], soc[unit.id], epi[unit.id], comp[unit.id] = rows
    return _kkt_report(DispatchKkt, charge, discharge, soc, epi, comp)


def _kkt_report(cls, charge, discharge, soc, epi, comp):
    stat = max([float(np.max(np.abs(np.concatenate([charge[k], discharge[k], soc[k]])))) for k in charge]
               + list(epi.values()))
    worst = max(float(np.max(c, initial=0.0)) for c in comp.values())
    return cls(charge, discharge, soc, epi, comp, stat, worst)


def unit_kkt_rows(unit: Storage, sch: StorageSchedule, du: StorageDuals, gamma: int | None,
                  price_charge: np.ndarray, price_discharge: np.ndarray):
    """Residual rows of one unit facing the given marginal prices.

    Returns ``(charge, discharge, soc, epigraph, complementarity)``.
    """
    bid, sp = unit.bid, unit.spec
    gradC, gradD = cost_gradient(unit, du, gamma)
    dC = ramp_differences(du.muC_lo, du.muC_hi)
    dD = ramp_differences(du.muD_lo, du.muD_hi)
    rD = gradD - price_discharge + du.phi / bid.etaD - dD + (du.rhoD_hi - du.rhoD_lo)
    rC = gradC + price_charge - bid.etaC * du.phi - dC + (du.rhoC_hi - du.rhoC_lo)
    rS = du.phi - np.append(du.phi[1:], 0.0) - du.soc_lo + du.soc_hi
    epi = abs(1.0 - float(np.sum(du.epigraph))) if du.epigraph is not None else 0.0

    T = len(sch.gC)
    prevC = np.concatenate([[sp.g0C], sch.gC[:-1]])
    prevD = np.concatenate([[sp.g0D], sch.gD[:-1]])
    products = [
        du.muC_lo * _slack(sch.gC - prevC + sp.rCdown), du.muC_hi * _slack(sp.rCup - sch.gC + prevC),
        du.muD_lo * _slack(sch.gD - prevD + sp.rDdown), du.muD_hi * _slack(sp.rDup - sch.gD + prevD),
        du.rhoC_lo * sch.gC, du.rhoC_hi * _slack(sp.gCmax - sch.gC),
        du.rhoD_lo * sch.gD, du.rhoD_hi * _slack(sp.gDmax - sch.gD),
        du.soc_lo * _slack(sch.e[1:] - _soc_floor(unit, gamma, T)),
        du.soc_hi * _slack(_soc_cap(unit, gamma, T) - sch.e[1:]),
    ]
    if du.epigraph is not None:
        pieces = epigraph_pieces(bid, sch.e[0])
        products.append(du.epigraph * (sch.theta - pieces.evaluate(sch.gC.sum(), sch.gD.sum())))
    return rC, rD, rS, epi, np.abs(np.concatenate(products))


def _slack(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.where(np.isfinite(values), values, 0.0)


def _soc_floor(unit: Storage, gamma: int | None, T: int) -> np.ndarray:
    floor = np.full(T, unit.spec.eMin)
    if gamma is not None:
        floor[-1] = max(floor[-1], unit.bid.E[gamma - 1])
    return floor


def _soc_cap(unit: Storage, gamma: int | None, T: int) -> np.ndarray:
    cap = np.full(T, unit.spec.eMax)
    if gamma is not None:
        cap[-1] = min(cap[-1], unit.bid.E[gamma])
    return cap
