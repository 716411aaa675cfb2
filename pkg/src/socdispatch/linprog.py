"""Dense bounded-variable revised simplex with a complete dual solution.

Problems are stated as::

    minimize    c @ x + const
    subject to  A_eq @ x  = b_eq          (one free multiplier per row)
                lo <= A_in @ x <= hi      (a lower and an upper multiplier per row)
                lb <= x <= ub

Sign convention for multipliers (all reported for a *minimization*):

* equality rows: ``y = d(objective)/d(rhs)``, free sign;
* two-sided rows and variable bounds: a pair ``(lower, upper)`` of
  nonnegative multipliers with ``d(objective)/d(lo) = lower`` and
  ``d(objective)/d(hi) = -upper``.

Stationarity therefore reads
``c - A_eq.T @ y - A_in.T @ (lower - upper) - (z_lower - z_upper) = 0``.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

__all__ = [
    "LpBuilder",
    "LpProblem",
    "LpSolution",
    "LpValidationError",
    "OptimalityReport",
    "SolverError",
    "Tolerances",
    "check_lp_optimality",
    "solve_lp",
]

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


class LpValidationError(ValueError):
    """Raised for a structurally malformed problem."""


class SolverError(RuntimeError):
    """Numerical breakdown inside the simplex iterations."""

    def __init__(self, message: str, *, phase: int, iterations: int, detail: str = ""):
        super().__init__(f"{message} (phase {phase}, iteration {iterations}){': ' + detail if detail else ''}")
        self.phase = phase
        self.iterations = iterations
        self.detail = detail


@dataclass(frozen=True)
class Tolerances:
    feas: float = 1e-8
    comp: float = 1e-8
    gap: float = 1e-7
    pivot: float = 1e-9
    max_iter: int = 20000

    @classmethod
    def from_env(cls) -> "Tolerances":
        """Default tolerances, with ``SOCDISPATCH_TOL`` overriding feas/comp."""
        raw = os.environ.get("SOCDISPATCH_TOL")
        if not raw:
            return cls()
        try:
            value = float(raw)
        except ValueError:
            value = math.nan
        if not (value > 0 and math.isfinite(value)):
            raise ValueError(f"SOCDISPATCH_TOL must be a positive number, got {raw!r}")
        return cls(feas=value, comp=value)


@dataclass(frozen=True, eq=False)
class LpProblem:
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_in: np.ndarray
    lo_in: np.ndarray
    hi_in: np.ndarray
    eq_labels: tuple = ()
    in_labels: tuple = ()
    var_names: tuple = ()
    const: float = 0.0

    def __post_init__(self):
        n = self.c.shape[0]
        for name in ("c", "lb", "ub"):
            arr = getattr(self, name)
            if arr.ndim != 1 or arr.shape[0] != n:
                raise LpValidationError(f"{name} must be a vector of length {n}")
        if self.A_eq.shape != (len(self.b_eq), n):
            raise LpValidationError(f"A_eq has shape {self.A_eq.shape}, expected ({len(self.b_eq)}, {n})")
        if self.A_in.shape != (len(self.lo_in), n) or len(self.hi_in) != len(self.lo_in):
            raise LpValidationError("inequality block shapes are inconsistent")
        if not np.all(np.isfinite(self.c)):
            raise LpValidationError("objective coefficients must be finite")
        if not (np.all(np.isfinite(self.A_eq)) and np.all(np.isfinite(self.A_in))):
            raise LpValidationError("constraint coefficients must be finite")
        if not np.all(np.isfinite(self.b_eq)):
            raise LpValidationError("equality right-hand sides must be finite")
        bad = np.nonzero(~(self.lb <= self.ub))[0]
        if bad.size:
            j = int(bad[0])
            raise LpValidationError(f"variable {self._vname(j)}: lower bound {self.lb[j]} exceeds upper {self.ub[j]}")
        if np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise LpValidationError("variable bounds must not exclude every real value")
        bad = np.nonzero(~(self.lo_in <= self.hi_in))[0]
        if bad.size:
            raise LpValidationError(f"row {self.in_labels[int(bad[0])] if self.in_labels else int(bad[0])}: lo > hi")
        eq_labels = self.eq_labels or tuple(f"eq{i}" for i in range(len(self.b_eq)))
        in_labels = self.in_labels or tuple(f"in{i}" for i in range(len(self.lo_in)))
        if len(eq_labels) != len(self.b_eq) or len(in_labels) != len(self.lo_in):
            raise LpValidationError("one label per constraint row is required")
        labels = eq_labels + in_labels
        if len(set(labels)) != len(labels):
            raise LpValidationError("constraint labels must be unique")
        object.__setattr__(self, "eq_labels", tuple(eq_labels))
        object.__setattr__(self, "in_labels", tuple(in_labels))
        if not self.var_names:
            object.__setattr__(self, "var_names", tuple(f"x{j}" for j in range(n)))

    def _vname(self, j: int) -> str:
        return self.var_names[j] if self.var_names else f"x{j}"

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.c @ x + self.const)


class LpBuilder:
    """Incremental construction of an :class:`LpProblem` with labelled rows."""

    def __init__(self) -> None:
        self._c: list[float] = []
        self._lb: list[float] = []
        self._ub: list[float] = []
        self._names: list[str] = []
        self._eq: list[tuple[dict[int, float], float]] = []
        self._eq_labels: list[str] = []
        self._in: list[tuple[dict[int, float], float, float]] = []
        self._in_labels: list[str] = []
        self._index: dict[str, int] = {}
        self.const = 0.0

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf, cost: float = 0.0) -> int:
        if name in self._index:
            raise LpValidationError(f"duplicate variable {name!r}")
        self._index[name] = len(self._c)
        self._c.append(float(cost))
        self._lb.append(float(lb))
        self._ub.append(float(ub))
        self._names.append(name)
        return len(self._c) - 1

    def var(self, name: str) -> int:
        return self._index[name]

    def add_cost(self, j: int, coef: float) -> None:
        self._c[j] += float(coef)

    def add_eq(self, label: str, coeffs: Mapping[int, float], rhs: float) -> None:
        self._check_row(coeffs)
        self._eq.append((dict(coeffs), float(rhs)))
        self._eq_labels.append(label)

    def add_range(self, label: str, coeffs: Mapping[int, float], lo: float = -math.inf, hi: float = math.inf) -> None:
        self._check_row(coeffs)
        self._in.append((dict(coeffs), float(lo), float(hi)))
        self._in_labels.append(label)

    def _check_row(self, coeffs: Mapping[int, float]) -> None:
        for j in coeffs:
            if not 0 <= j < len(self._c):
                raise LpValidationError(f"row references undeclared variable index {j}")

    def build(self) -> LpProblem:
        n = len(self._c)
        A_eq = np.zeros((len(self._eq), n))
        for r, (row, _) in enumerate(self._eq):
            for j, v in row.items():
                A_eq[r, j] += v
        A_in = np.zeros((len(self._in), n))
        for r, (row, _, _) in enumerate(self._in):
            for j, v in row.items():
                A_in[r, j] += v
        return LpProblem(
            c=np.array(self._c, dtype=float),
            lb=np.array(self._lb, dtype=float),
            ub=np.array(self._ub, dtype=float),
            A_eq=A_eq,
            b_eq=np.array([b for _, b in self._eq], dtype=float),
            A_in=A_in,
            lo_in=np.array([lo for _, lo, _ in self._in], dtype=float),
            hi_in=np.array([hi for _, _, hi in self._in], dtype=float),
            eq_labels=tuple(self._eq_labels),
            in_labels=tuple(self._in_labels),
            var_names=tuple(self._names),
            const=self.const,
        )


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: str
    x: np.ndarray | None = None
    objective: float = math.nan
    y_eq: np.ndarray | None = None
    row_lower: np.ndarray | None = None
    row_upper: np.ndarray | None = None
    z_lower: np.ndarray | None = None
    z_upper: np.ndarray | None = None
    iterations: int = 0
    degenerate: bool = False
    labels: Mapping[str, tuple[str, int]] = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def dual(self, label: str) -> float:
        """Multiplier of an equality row, or ``lower - upper`` of a two-sided row."""
        kind, r = self.labels[label]
        if kind == "eq":
            return float(self.y_eq[r])
        return float(self.row_lower[r] - self.row_upper[r])

    def row_multipliers(self, label: str) -> tuple[float, float]:
        kind, r = self.labels[label]
        if kind == "eq":
            raise KeyError(f"{label!r} is an equality row; use dual()")
        return float(self.row_lower[r]), float(self.row_upper[r])

    def dual_objective(self, problem: LpProblem) -> float:
        total = problem.const + float(problem.b_eq @ self.y_eq)
        total += _finite_dot(problem.lo_in, self.row_lower) - _finite_dot(problem.hi_in, self.row_upper)
        total += _finite_dot(problem.lb, self.z_lower) - _finite_dot(problem.ub, self.z_upper)
        return total


def _finite_dot(bound: np.ndarray, mult: np.ndarray) -> float:
    mask = np.isfinite(bound)
    return float(bound[mask] @ mult[mask])


def _initial_value(lb: float, ub: float) -> float:
    if math.isfinite(lb):
        return lb
    if math.isfinite(ub):
        return ub
    return 0.0


class _Simplex:
    # Working form: A x = b, lb <= x <= ub, columns = structurals, row slacks, artificials.

    def __init__(self, A, b, lb, ub, tol: Tolerances):
        self.A = A
        self.b = b
        self.lb = lb
        self.ub = ub
        self.tol = tol
        self.m, self.n = A.shape
        self.iterations = 0
        self.phase = 1

    def _factor(self, basis):
        try:
            lu = scipy.linalg.lu_factor(self.A[:, basis], check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SolverError("basis factorization failed", phase=self.phase,
                              iterations=self.iterations, detail=str(exc)) from exc
        if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) < 1e-13:
            raise SolverError("singular basis", phase=self.phase, iterations=self.iterations)
        return lu

    def run(self, cost: np.ndarray, basis: list[int], x: np.ndarray) -> str:
        tol = self.tol
        A, lb, ub = self.A, self.lb, self.ub
        is_basic = np.zeros(self.n, dtype=bool)
        is_basic[basis] = True
        movable = ub - lb > 0
        degenerate_streak = 0
        while True:
            if self.iterations >= tol.max_iter:
                raise SolverError("iteration limit reached", phase=self.phase, iterations=self.iterations)
            nonbasic = ~is_basic
            if self.m:
                lu = self._factor(basis)
                rhs = self.b - A[:, nonbasic] @ x[nonbasic]
                x[basis] = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
                y = scipy.linalg.lu_solve(lu, cost[basis], trans=1, check_finite=False)
            else:
                y = np.zeros(0)
            d = cost - A.T @ y
            dtol = tol.feas * (1.0 + np.abs(cost))
            can_up = nonbasic & movable & (x < ub) & (d < -dtol)
            can_down = nonbasic & movable & (x > lb) & (d > dtol)
            candidates = np.nonzero(can_up | can_down)[0]
            if candidates.size == 0:
                self.basis, self.y, self.d = basis, y, d
                return OPTIMAL
            if degenerate_streak > 50:
                q = int(candidates[0])  # Bland: smallest index
            else:
                q = int(candidates[np.argmax(np.abs(d[candidates]))])  # argmax keeps the first on ties
            sigma = 1.0 if d[q] < 0 else -1.0
            w = scipy.linalg.lu_solve(lu, A[:, q], check_finite=False) if self.m else np.zeros(0)
            rate = -sigma * w  # d x_B / d t
            step = ub[q] - lb[q]
            leave = -1
            leave_to = 0.0
            xb = x[basis]
            for i in np.argsort(basis, kind="stable"):  # smallest basic index wins ties
                r = rate[i]
                if r < -tol.pivot:
                    bound = lb[basis[i]]
                    if not math.isfinite(bound):
                        continue
                    ratio = max((xb[i] - bound) / -r, 0.0)
                elif r > tol.pivot:
                    bound = ub[basis[i]]
                    if not math.isfinite(bound):
                        continue
                    ratio = max((bound - xb[i]) / r, 0.0)
                else:
                    continue
                margin = 1e-12 * (1.0 + step) if math.isfinite(step) else 0.0
                if ratio < step - margin or (leave < 0 and ratio < step):
                    step, leave, leave_to = ratio, i, bound
            if not math.isfinite(step):
                self.ray_var = q
                return UNBOUNDED
            self.iterations += 1
            degenerate_streak = degenerate_streak + 1 if step <= tol.feas else 0
            x[q] += sigma * step
            if leave < 0:
                # entering variable moves to its opposite bound; basis unchanged
                x[q] = ub[q] if sigma > 0 else lb[q]
                continue
            out = basis[leave]
            x[out] = leave_to
            is_basic[out] = False
            is_basic[q] = True
            basis[leave] = q


def solve_lp(problem: LpProblem, tolerances: Tolerances | None = None) -> LpSolution:
    """Solve ``problem`` to a basic optimal solution with complete multipliers.

    Status ``"infeasible"`` and ``"unbounded"`` are returned, not raised.
    Pricing is Dantzig with smallest-index ties, falling back to Bland's rule
    on long degenerate runs, so the output is a deterministic function of the
    input.
    """
    tol = tolerances or Tolerances()
    p = problem
    n, m_eq, m_in = p.n_vars, len(p.b_eq), len(p.lo_in)
    m = m_eq + m_in
    labels = {lab: ("eq", r) for r, lab in enumerate(p.eq_labels)}
    labels.update({lab: ("in", r) for r, lab in enumerate(p.in_labels)})

    n_work = n + m_in
    A = np.zeros((m, n_work + m))
    A[:m_eq, :n] = p.A_eq
    A[m_eq:, :n] = p.A_in
    A[m_eq:, n:n_work] = -np.eye(m_in)
    b = np.concatenate([p.b_eq, np.zeros(m_in)])
    lb = np.concatenate([p.lb, p.lo_in, np.zeros(m)])
    ub = np.concatenate([p.ub, p.hi_in, np.full(m, np.inf)])
    x = np.array([_initial_value(lb[j], ub[j]) for j in range(n_work)] + [0.0] * m)

    residual = b - A[:, :n_work] @ x[:n_work]
    sign = np.where(residual >= 0, 1.0, -1.0)
    A[np.arange(m), n_work + np.arange(m)] = sign
    x[n_work:] = np.abs(residual)
    basis = list(range(n_work, n_work + m))

    engine = _Simplex(A, b, lb, ub, tol)
    if m:
        phase1_cost = np.concatenate([np.zeros(n_work), np.ones(m)])
        engine.run(phase1_cost, basis, x)
        infeasibility = float(np.sum(x[n_work:]))
        scale = 1.0 + float(np.max(np.abs(b), initial=0.0))
        if infeasibility > tol.feas * scale:
            return LpSolution(INFEASIBLE, iterations=engine.iterations, labels=labels)
        ub[n_work:] = 0.0
        x[n_work:] = np.minimum(x[n_work:], 0.0)
    engine.phase = 2
    cost = np.concatenate([p.c, np.zeros(n_work - n + m)])
    status = engine.run(cost, basis, x)
    if status == UNBOUNDED:
        return LpSolution(UNBOUNDED, iterations=engine.iterations, labels=labels)

    d, y = engine.d, engine.y
    is_basic = np.zeros(n_work + m, dtype=bool)
    is_basic[basis] = True
    d = np.where(is_basic, 0.0, d)
    # Nonbasic structurals/slacks sit at a bound; the sign of d fixes which multiplier it is.
    z_lo = np.where(np.isfinite(lb) & (d > 0), d, 0.0)
    z_hi = np.where(np.isfinite(ub) & (d < 0), -d, 0.0)
    xs = x[:n].copy()
    # a basic variable at a bound signals degeneracy; fixed variables are always there, so skip them
    degenerate = bool(np.any(
        is_basic[:n_work] & (lb[:n_work] < ub[:n_work])
        & ((np.isfinite(lb[:n_work]) & (np.abs(x[:n_work] - lb[:n_work]) <= tol.feas * (1 + np.abs(lb[:n_work]))))
           | (np.isfinite(ub[:n_work]) & (np.abs(ub[:n_work] - x[:n_work]) <= tol.feas * (1 + np.abs(ub[:n_work])))))
    )) or bool(np.any(is_basic[n_work:]))
    return LpSolution(
        status=OPTIMAL,
        x=xs,
        objective=p.objective_value(xs),
        y_eq=y[:m_eq].copy(),
        row_lower=z_lo[n:n_work].copy(),
        row_upper=z_hi[n:n_work].copy(),
        z_lower=z_lo[:n].copy(),
        z_upper=z_hi[:n].copy(),
        iterations=engine.iterations,
        degenerate=degenerate,
        labels=labels,
    )


@dataclass(frozen=True)
class OptimalityReport:
    primal: float
    dual: float
    complementarity: float
    gap: float

    def within(self, tol: Tolerances) -> bool:
        return self.primal <= tol.feas and self.dual <= tol.feas and self.complementarity <= tol.comp


def check_lp_optimality(problem: LpProblem, solution: LpSolution) -> OptimalityReport:
    """Residuals of the optimality conditions for a claimed optimum.

    ``primal`` is the worst violation of a row or bound, ``dual`` the worst
    stationarity residual or wrong-signed/unpaired multiplier, and
    ``complementarity`` the worst product of a multiplier with its slack.
    ``gap`` is the absolute primal-dual objective difference.
    """
    p, s = problem, solution
    x = s.x
    eq_res = np.abs(p.A_eq @ x - p.b_eq) if len(p.b_eq) else np.zeros(0)
    ax = p.A_in @ x if len(p.lo_in) else np.zeros(0)
    in_res = np.concatenate([np.maximum(p.lo_in - ax, 0.0), np.maximum(ax - p.hi_in, 0.0)])
    bound_res = np.concatenate([np.maximum(p.lb - x, 0.0), np.maximum(x - p.ub, 0.0)])
    primal = float(np.max(np.concatenate([eq_res, in_res, bound_res]), initial=0.0))

    stat = p.c - p.A_eq.T @ s.y_eq - p.A_in.T @ (s.row_lower - s.row_upper) - (s.z_lower - s.z_upper)
    signs = np.concatenate([-s.row_lower, -s.row_upper, -s.z_lower, -s.z_upper])
    unpaired = np.concatenate([
        np.where(np.isfinite(p.lo_in), 0.0, np.abs(s.row_lower)),
        np.where(np.isfinite(p.hi_in), 0.0, np.abs(s.row_upper)),
        np.where(np.isfinite(p.lb), 0.0, np.abs(s.z_lower)),
        np.where(np.isfinite(p.ub), 0.0, np.abs(s.z_upper)),
    ])
    dual = float(np.max(np.concatenate([np.abs(stat), np.maximum(signs, 0.0), unpaired]), initial=0.0))

    def products(mult, gap_):
        finite = np.isfinite(gap_)
        return np.abs(mult * np.where(finite, gap_, 0.0))

    comp = np.concatenate([
        products(s.row_lower, ax - p.lo_in),
        products(s.row_upper, p.hi_in - ax),
        products(s.z_lower, x - p.lb),
        products(s.z_upper, p.ub - x),
    ])
    complementarity = float(np.max(comp, initial=0.0))
    gap = abs(p.objective_value(x) - s.dual_objective(p))
    return OptimalityReport(primal=primal, dual=dual, complementarity=complementarity, gap=gap)


def labelled(solution: LpSolution, labels: Sequence[str]) -> np.ndarray:
    """Signed multipliers for a list of row labels, as a vector."""
    return np.array([solution.dual(lab) for lab in labels])
