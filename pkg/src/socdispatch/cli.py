"""Command-line front end.

Exit codes: 0 success, 2 parse/validation error, 3 unmet precondition
(e.g. non-EDCR bid in LP mode), 4 oracle size guard, 5 solver failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .bids import NotEdcrError, affine_composition_profile, is_edcr, validate_bid
from .dispatch import (
    EPIGRAPH,
    GAMMA,
    DispatchInfeasibleError,
    DispatchSolution,
    OracleSizeError,
    Scenario,
    oracle_enumerate,
    solve_one_shot,
)
from .io import ScenarioFormatError, fmt, load_scenario, rounded, write_csv
from .linprog import SolverError
from .pricing import PriceSchedule, extract_lmp, loc_report, tlmp_schedule
from .rolling import ForecastSet, make_forecasts, r_lmp, r_tlmp, rolling_dispatch, supplied_forecasts

EXIT_OK, EXIT_INPUT, EXIT_PRECONDITION, EXIT_GUARD, EXIT_SOLVER = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# argument helpers


def parse_gamma(text: str | None, scenario: Scenario):
    """``3`` for every storage, or ``id=3,id2=1``; falls back to the file's options."""
    if text is None:
        return scenario.options.gamma
    try:
        if "=" not in text:
            return int(text)
        out = {}
        for part in text.split(","):
            key, value = part.split("=")
            out[key.strip()] = int(value)
        return out
    except ValueError:
        raise CliError(EXIT_INPUT, f"cannot parse --gamma {text!r}") from None


def _gamma_checked(gamma, scenario: Scenario):
    if gamma is None:
        return None
    for u in scenario.fleet:
        g = gamma if isinstance(gamma, int) else gamma.get(u.id)
        if g is None:
            raise CliError(EXIT_PRECONDITION, f"--gamma missing for storage {u.id}")
        if not 1 <= g <= u.bid.K:
            raise CliError(EXIT_INPUT, f"gamma={g} outside 1..{u.bid.K} for storage {u.id}")
    return gamma


def parse_forecast(text: str, scenario: Scenario, W: int, seed: int) -> ForecastSet:
    """``none``, ``additive:sigma=1``, ``additive:offsets=1;0.5``,
    ``multiplicative:sigma=0.1``, ``multiplicative:factors=1.1;0.9`` or
    ``file:windows.json`` (a list of per-window demand lists)."""
    kind, _, rest = text.partition(":")
    if kind == "none":
        return make_forecasts(scenario, W)
    if kind == "file":
        try:
            windows = json.loads(Path(rest).read_text(encoding="utf-8"))
            return supplied_forecasts(windows)
        except (OSError, ValueError, TypeError) as exc:
            raise CliError(EXIT_INPUT, f"cannot read forecast file {rest!r}: {exc}") from None
    if kind not in ("additive", "multiplicative"):
        raise CliError(EXIT_INPUT, f"unknown forecast model {kind!r}")
    params = {}
    for part in filter(None, rest.split(",")):
        key, _, value = part.partition("=")
        try:
            if key == "sigma":
                params["sigma"] = float(value)
            elif key in ("offsets", "factors"):
                params[key] = [float(v) for v in value.split(";")]
            else:
                raise ValueError(key)
        except ValueError:
            raise CliError(EXIT_INPUT, f"bad forecast parameter {part!r}") from None
    try:
        return make_forecasts(scenario, W, kind, seed=seed, **params)
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None


def _load(path: str):
    try:
        return load_scenario(path)
    except FileNotFoundError:
        raise CliError(EXIT_INPUT, f"{path}: no such file") from None
    except ScenarioFormatError as exc:
        raise CliError(EXIT_INPUT, f"{path}: {exc}") from None


def _require_valid_bids(scenario: Scenario) -> None:
    for u in scenario.fleet:
        problems = validate_bid(u.bid)
        if problems:
            raise CliError(EXIT_PRECONDITION, f"storage {u.id}: {'; '.join(problems)}")


def _solve(scenario: Scenario, gamma=None) -> DispatchSolution:
    _require_valid_bids(scenario)
    if gamma is not None:
        scenario = dataclasses.replace(scenario, options=dataclasses.replace(scenario.options, gamma=gamma))
    return solve_one_shot(scenario, GAMMA if gamma is not None else EPIGRAPH)


def _out_dir(path: str | None) -> Path | None:
    if path is None:
        return None
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(summary: dict, out: Path | None) -> None:
    text = json.dumps(rounded(summary), indent=2)
    if out is not None:
        (out / "summary.json").write_text(text + "\n", encoding="utf-8")
    print(text)


# --------------------------------------------------------------------------
# writers


def _dispatch_rows(schedules):
    for sch in schedules:
        for t in range(len(sch.gC)):
            yield t + 1, sch.id, float(sch.gC[t]), float(sch.gD[t]), float(sch.e[t + 1])


DUAL_HEADER = ("t", "id", "lambda", "phi", "muC_lo", "muC_hi", "muD_lo", "muD_hi",
               "rhoC_lo", "rhoC_hi", "rhoD_lo", "rhoD_hi")


def _dual_rows(solution: DispatchSolution, t_offset: int = 0, only_first: bool = False):
    for sch in solution.schedules:
        du = solution.duals[sch.id]
        for t in range(1 if only_first else len(sch.gC)):
            yield (t + 1 + t_offset, sch.id, float(solution.lam[t]), float(du.phi[t]),
                   float(du.muC_lo[t]), float(du.muC_hi[t]), float(du.muD_lo[t]), float(du.muD_hi[t]),
                   float(du.rhoC_lo[t]), float(du.rhoC_hi[t]), float(du.rhoD_lo[t]), float(du.rhoD_hi[t]))


def _price_rows(prices: PriceSchedule):
    if prices.kind == "uniform":
        return ("t", "price"), [(t + 1, float(p)) for t, p in enumerate(prices.uniform)]
    rows = []
    for sid in sorted(prices.charge):
        pC, pD = prices.for_storage(sid)
        rows.extend((t + 1, sid, float(pC[t]), float(pD[t])) for t in range(len(pC)))
    return ("t", "id", "charge", "discharge"), rows


LOC_HEADER = ("id", "scheme", "Q", "payment", "cost", "loc")


# --------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    doc = _load(args.path)
    ok = True
    for u in doc.scenario.fleet:
        problems = validate_bid(u.bid)
        report = is_edcr(u.bid)
        ratios = ", ".join(fmt(r) for r in report.ratios)
        verdict = "ok" if not problems else "violated (" + "; ".join(problems) + ")"
        print(f"storage {u.id}: bid shape: {verdict}; EDCR: {'yes' if report.ok else 'no'}"
              + (f" (ratios {ratios})" if ratios else ""))
        ok &= not problems
    return EXIT_OK if ok else EXIT_INPUT


def cmd_clear(args) -> int:
    doc = _load(args.path)
    sc = doc.scenario
    out = _out_dir(args.out)
    if args.mode == "oracle":
        _require_valid_bids(sc)
        sol = oracle_enumerate(sc)
    else:
        sol = _solve(sc, _gamma_checked(parse_gamma(args.gamma, sc), sc))
    summary = {"command": "clear", "mode": args.mode, "objective": sol.objective, "T": sc.T,
               "storages": [u.id for u in sc.fleet]}
    if sol.lam is not None:
        summary.update(lmp=[float(v) for v in sol.lam], no_simultaneous=sol.no_simultaneous, nonneg_lmp=sol.nonneg_lmp)
    else:
        summary["assignment"] = [list(a) for a in sol.assignment]
    if out is not None:
        write_csv(out / "dispatch.csv", ("t", "id", "gC", "gD", "e"), _dispatch_rows(sol.schedules))
        if sol.duals is not None:
            write_csv(out / "duals.csv", DUAL_HEADER, _dual_rows(sol))
            write_csv(out / "prices.csv", *_price_rows(extract_lmp(sol)))
    _emit(summary, out)
    return EXIT_OK


def _roll(args, doc):
    sc = doc.scenario
    W = args.window or sc.options.window or sc.T
    gamma = _gamma_checked(parse_gamma(args.gamma, sc), sc)
    _require_valid_bids(sc)
    seed = args.seed if args.seed is not None else doc.seed
    forecasts = parse_forecast(args.forecast, sc, W, seed)
    return rolling_dispatch(sc, W, forecasts, gamma, args.gamma_scope), gamma


def cmd_roll(args) -> int:
    doc = _load(args.path)
    result, gamma = _roll(args, doc)
    out = _out_dir(args.out)
    lmp, tl = r_lmp(result), r_tlmp(result)
    if out is not None:
        write_csv(out / "dispatch.csv", ("t", "id", "gC", "gD", "e"), _dispatch_rows(result.schedules))
        write_csv(out / "duals.csv", DUAL_HEADER,
                  (row for t, w in enumerate(result.windows) for row in _dual_rows(w, t, only_first=True)))
        rows = []
        for sid in sorted(tl.charge):
            rows.extend((t + 1, sid, float(lmp.uniform[t]), float(tl.charge[sid][t]), float(tl.discharge[sid][t]))
                        for t in range(result.T))
        write_csv(out / "prices.csv", ("t", "id", "r_lmp", "r_tlmp_charge", "r_tlmp_discharge"), rows)
    _emit({"command": "roll", "window": result.W, "gamma": gamma, "objective": result.objective,
           "r_lmp": [float(v) for v in lmp.uniform]}, out)
    return EXIT_OK


def _priced(args, doc):
    """(prices, schedules, gamma) for the requested scheme."""
    sc = doc.scenario
    if args.scheme in ("lmp", "tlmp"):
        gamma = _gamma_checked(parse_gamma(args.gamma, sc), sc)
        sol = _solve(sc, gamma)
        prices = extract_lmp(sol) if args.scheme == "lmp" else tlmp_schedule(sol, sc)
        return prices, sol.schedules, gamma
    result, gamma = _roll(args, doc)
    return (r_lmp(result) if args.scheme == "r-lmp" else r_tlmp(result)), result.schedules, gamma


def cmd_price(args) -> int:
    doc = _load(args.path)
    prices, _, _ = _priced(args, doc)
    header, rows = _price_rows(prices)
    out = _out_dir(args.out)
    if out is not None:
        write_csv(out / "prices.csv", header, rows)
    print(",".join(header))
    for row in rows:
        print(",".join(fmt(v) if isinstance(v, float) else str(v) for v in row))
    return EXIT_OK


def cmd_loc(args) -> int:
    doc = _load(args.path)
    prices, schedules, gamma = _priced(args, doc)
    report = loc_report(prices, schedules, doc.scenario, gamma=gamma)
    rows = [(e.id, args.scheme, e.Q, e.payment, e.cost, e.loc) for e in report.entries.values()]
    out = _out_dir(args.out)
    if out is not None:
        write_csv(out / "loc.csv", LOC_HEADER, rows)
    print(",".join(LOC_HEADER))
    for row in rows:
        print(",".join(fmt(v) if isinstance(v, float) else str(v) for v in row))
    if report.negative_prices:
        print("note: negative prices present", file=sys.stderr)
    return EXIT_OK


def cmd_demo_affine(args) -> int:
    doc = _load(args.path)
    sc = doc.scenario
    unit = sc.unit(args.storage) if args.storage else sc.fleet[0]
    if args.points < 2:
        raise CliError(EXIT_INPUT, "--points must be at least 2")
    s = unit.spec.s if args.soc is None else args.soc
    rep = affine_composition_profile(unit.bid, s, side=args.side, points=args.points,
                                     soc_bounds=(unit.spec.eMin, unit.spec.eMax))
    rows = [(float(g), "" if np.isnan(c) else float(c), "" if np.isnan(d) else float(d))
            for g, c, d in zip(rep.g, rep.cost, rep.second_diff)]
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_csv(args.out, ("g", "cost", "second_diff"), rows)
    else:
        print("g,cost,second_diff")
        for row in rows:
            print(",".join(fmt(v) if isinstance(v, float) else v for v in row))
    note = "none" if not rep.violations else ", ".join(fmt(v) for v in rep.violations)
    print(f"storage {unit.id}: convexity violations at g = {note}", file=sys.stderr)
    return EXIT_OK


def cmd_compare_oracle(args) -> int:
    doc = _load(args.path)
    sc = doc.scenario
    _require_valid_bids(sc)
    oracle = oracle_enumerate(sc)
    edcr = all(is_edcr(u.bid).ok for u in sc.fleet)
    summary = {"command": "compare-oracle", "edcr": edcr, "oracle_objective": oracle.objective}
    if not edcr:
        summary["note"] = "non-EDCR fleet: no LP counterpart, oracle result only"
    else:
        lp = solve_one_shot(sc)
        gap = abs(lp.objective - oracle.objective)
        summary.update(lp_objective=lp.objective, gap=gap,
                       equivalent=gap <= 1e-7 * (1 + abs(oracle.objective)))
    _emit(summary, None)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="socdispatch", description="Clear and price markets with SoC-dependent storage bids.")
    parser.add_argument("--seed", type=int, default=None, help="seed for forecast noise (default: file meta.seed, else 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_cmd(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("path", help="scenario JSON file")
        p.set_defaults(func=func)
        return p

    def rolling_opts(p):
        p.add_argument("--window", type=int, default=None, help="window length W (default: file option or T)")
        p.add_argument("--forecast", default="none", help="none | additive:sigma=.. | additive:offsets=a;b | "
                                                          "multiplicative:sigma=.. | multiplicative:factors=a;b | file:path")
        p.add_argument("--gamma-scope", choices=("window", "final"), default="window")

    scenario_cmd("validate", cmd_validate, "check bid assumptions and EDCR")

    p = scenario_cmd("clear", cmd_clear, "one-shot clearing")
    p.add_argument("--mode", choices=("oneshot", "oracle"), default="oneshot")
    p.add_argument("--gamma", default=None, help="end-state segment: g or id=g,id2=g")
    p.add_argument("--out", default=None)

    p = scenario_cmd("roll", cmd_roll, "rolling-window dispatch")
    rolling_opts(p)
    p.add_argument("--gamma", default=None)
    p.add_argument("--out", default=None)

    for name, func in (("price", cmd_price), ("loc", cmd_loc)):
        p = scenario_cmd(name, func, "price schedule" if name == "price" else "lost opportunity cost")
        p.add_argument("--scheme", choices=("lmp", "tlmp", "r-lmp", "r-tlmp"), default="lmp")
        rolling_opts(p)
        p.add_argument("--gamma", default=None)
        p.add_argument("--out", default=None)

    p = scenario_cmd("demo-affine", cmd_demo_affine, "loop-back cost profile of one storage")
    p.add_argument("--storage", default=None)
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--side", choices=("discharge", "charge", "both"), default="discharge")
    p.add_argument("--soc", type=float, default=None, help="starting SoC (default: the storage's s)")
    p.add_argument("--out", default=None, help="CSV file (default: stdout)")

    scenario_cmd("compare-oracle", cmd_compare_oracle, "LP versus enumeration objective")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NotEdcrError as exc:
        print(f"error: EDCR required; use --mode oracle ({exc})", file=sys.stderr)
        return EXIT_PRECONDITION
    except OracleSizeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (DispatchInfeasibleError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except KeyError as exc:
        print(f"error: unknown storage {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
