"""Shared fixtures, random instance generators and brute-force oracles."""
from __future__ import annotations

import itertools
import math

import numpy as np

from socdispatch.bids import SimultaneousOperationError, SocBid, SocDomainError, trajectory_cost
from socdispatch.dispatch import DispatchInfeasibleError, Scenario, Storage, StorageSpec, solve_one_shot

BID_A = SocBid((0, 5, 10), (10, 8), (15, 13))
BID_B = SocBid((0, 5, 10), (10, 8), (15, 14))
OS1_SPEC = StorageSpec(gCmax=5, gDmax=5, rCup=10, rCdown=10, rDup=10, rDdown=10, eMin=0, eMax=10, s=4)


def os1(bid: SocBid = BID_A, **spec_changes) -> Scenario:
    spec = StorageSpec(**{**OS1_SPEC.__dict__, **spec_changes})
    return Scenario((-1.0, 1.0), (Storage("s1", bid, spec),))


def random_bid(rng: np.random.Generator, K: int, edcr: bool = True) -> SocBid:
    etaC = float(rng.choice([1.0, 0.95, 0.9]))
    etaD = float(rng.choice([1.0, 0.95, 0.9]))
    widths = rng.uniform(2.0, 6.0, K)
    E = np.concatenate([[0.0], np.cumsum(widths)]) + float(rng.uniform(0, 2))
    dD = rng.uniform(0.0, 4.0, K - 1)
    cD = float(rng.uniform(25, 35)) - np.concatenate([[0.0], np.cumsum(dD)])
    dC = etaC * etaD * dD if edcr else rng.uniform(0.0, 4.0, K - 1)
    top = float(rng.uniform(5.0, cD[-1] * etaD * etaC - 1.0))
    cC = top - np.concatenate([[0.0], np.cumsum(dC)])
    return SocBid(tuple(E), tuple(cC), tuple(cD), etaC, etaD)


def random_storage(rng: np.random.Generator, sid: str, K: int, edcr: bool = True) -> Storage:
    bid = random_bid(rng, K, edcr)
    lo, hi = bid.soc_range
    cap = float(rng.uniform(1.0, 3.0))
    ramps = rng.uniform(1.0, 4.0, 4)
    spec = StorageSpec(cap, cap, *map(float, ramps), eMin=lo, eMax=hi, s=float(rng.uniform(lo, hi)))
    return Storage(sid, bid, spec)


def random_scenario(rng: np.random.Generator, T: int | None = None, K: int | None = None, N: int | None = None,
                    edcr: bool = True) -> Scenario:
    T = T or int(rng.integers(1, 5))
    N = N or int(rng.integers(1, 3))
    fleet = tuple(random_storage(rng, f"s{i + 1}", K or int(rng.integers(1, 4)), edcr) for i in range(N))
    total = sum(u.spec.gDmax for u in fleet)
    demand = tuple(float(v) for v in rng.uniform(-0.8, 0.8, T) * total)
    return Scenario(demand, fleet)


def feasible_scenarios(rng: np.random.Generator, count: int, **kwargs):
    """Yield ``(scenario, solution)`` pairs, redrawing infeasible scenarios."""
    produced = 0
    while produced < count:
        sc = random_scenario(rng, **kwargs)
        try:
            sol = solve_one_shot(sc)
        except DispatchInfeasibleError:
            continue
        produced += 1
        yield sc, sol


def random_feasible_trajectory(rng: np.random.Generator, bid: SocBid, s: float, T: int):
    """A non-simultaneous schedule whose SoC path stays inside the bid range."""
    lo, hi = bid.soc_range
    e = s
    gC, gD = np.zeros(T), np.zeros(T)
    for t in range(T):
        target = float(rng.uniform(lo, hi))
        if target >= e:
            gC[t] = (target - e) / bid.etaC
        else:
            gD[t] = (e - target) * bid.etaD
        e = e + bid.etaC * gC[t] - gD[t] / bid.etaD
    return gC, gD


def grid_profit_oracle(bid: SocBid, spec: StorageSpec, pC, pD, step: float = 1.0,
                       terminal: tuple[float, float] | None = None):
    """Best profit over non-simultaneous schedules on a power grid of ``step``.

    Enumerates every per-interval action (idle, charge k*step, discharge
    k*step), checks capacity, ramp and SoC limits, and scores payment minus
    the stage-cost sum.  Returns ``(profit, gC, gD)``.
    """
    T = len(pC)
    levels_C = np.arange(0.0, spec.gCmax + 1e-9, step)
    levels_D = np.arange(0.0, spec.gDmax + 1e-9, step)
    actions = [(0.0, 0.0)] + [(g, 0.0) for g in levels_C[1:]] + [(0.0, g) for g in levels_D[1:]]
    best = (-math.inf, None, None)
    tol = 1e-9
    for plan in itertools.product(actions, repeat=T):
        gC = np.array([a[0] for a in plan])
        gD = np.array([a[1] for a in plan])
        prevC = np.concatenate([[spec.g0C], gC[:-1]])
        prevD = np.concatenate([[spec.g0D], gD[:-1]])
        if np.any(gC - prevC > spec.rCup + tol) or np.any(prevC - gC > spec.rCdown + tol):
            continue
        if np.any(gD - prevD > spec.rDup + tol) or np.any(prevD - gD > spec.rDdown + tol):
            continue
        e = spec.s + np.cumsum(bid.etaC * gC - gD / bid.etaD)
        if np.any(e < spec.eMin - tol) or np.any(e > spec.eMax + tol):
            continue
        if terminal is not None and not terminal[0] - tol <= e[-1] <= terminal[1] + tol:
            continue
        try:
            cost = trajectory_cost(bid, spec.s, gC, gD)
        except (SocDomainError, SimultaneousOperationError):
            continue
        profit = float(np.dot(pD, gD) - np.dot(pC, gC)) - cost
        if profit > best[0] + 1e-12:
            best = (profit, gC, gD)
    return best


def vertex_enumeration(c, A, b, lb, ub):
    """Minimum of c.x over {A x = b, lb <= x <= ub} by enumerating bases (tiny, bounded LPs)."""
    c, A, b = np.asarray(c, float), np.asarray(A, float), np.asarray(b, float)
    m, n = A.shape
    best = math.inf
    for basis in itertools.combinations(range(n), m):
        others = [j for j in range(n) if j not in basis]
        for values in itertools.product(*[(lb[j], ub[j]) for j in others]):
            B = A[:, basis]
            if abs(np.linalg.det(B)) < 1e-12:
                continue
            rhs = b - A[:, others] @ np.array(values) if others else b
            xb = np.linalg.solve(B, rhs)
            x = np.zeros(n)
            x[list(basis)] = xb
            x[others] = values
            if np.all(x >= np.asarray(lb) - 1e-9) and np.all(x <= np.asarray(ub) + 1e-9):
                best = min(best, float(c @ x))
    return best
