"""Scenario documents (JSON) and tabular report writers.

Document layout::

    {"meta": {"name": ..., "description": ..., "seed": 0},
     "horizon": T,
     "demand": [...],
     "storages": [{"id": ..., "bid": {"E", "cC", "cD", "etaC", "etaD"},
                   "spec": {"gCmax", "gDmax", "rCup", "rCdown", "rDup", "rDdown",
                            "eMin", "eMax", "s", "g0C", "g0D"}}],
     "options": {"window": W, "gamma": g or {id: g}, "tolerances": {...}}}

Infinite limits are written as the strings ``"inf"`` / ``"-inf"``.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .bids import BidStructureError, SocBid
from .dispatch import Scenario, ScenarioOptions, Storage, StorageSpec
from .linprog import Tolerances

SPEC_FIELDS = ("gCmax", "gDmax", "rCup", "rCdown", "rDup", "rDdown", "eMin", "eMax", "s", "g0C", "g0D")
REQUIRED_SPEC = ("gCmax", "gDmax")
TOL_FIELDS = ("feas", "comp", "gap", "pivot", "max_iter")


class ScenarioFormatError(ValueError):
    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass(frozen=True)
class ScenarioDocument:
    scenario: Scenario
    name: str = ""
    description: str = ""
    seed: int = 0
    extra_meta: dict = field(default_factory=dict)


def fmt(value: float) -> str:
    """12 significant digits; integers and infinities kept readable."""
    if isinstance(value, (bool, str)) or value is None:
        return str(value)
    return format(float(value) + 0.0, ".12g")  # + 0.0 folds -0 into 0


def _number(raw: Any, where: str) -> float:
    if isinstance(raw, str) and raw.strip().lower() in ("inf", "+inf", "infinity", "-inf", "-infinity"):
        return -math.inf if raw.strip().startswith("-") else math.inf
    if isinstance(raw, bool) or not isinstance(raw, (int, float)):
        raise ScenarioFormatError(where, f"expected a number, got {raw!r}")
    if math.isnan(raw):
        raise ScenarioFormatError(where, "NaN is not allowed")
    return float(raw)


def _numbers(raw: Any, where: str) -> tuple[float, ...]:
    if not isinstance(raw, list):
        raise ScenarioFormatError(where, f"expected a list of numbers, got {type(raw).__name__}")
    return tuple(_number(v, f"{where}[{i}]") for i, v in enumerate(raw))


def _encode(value: float) -> float | str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def _object(raw: Any, where: str) -> dict:
    if not isinstance(raw, dict):
        raise ScenarioFormatError(where, f"expected an object, got {type(raw).__name__}")
    return raw


def _parse_storage(raw: Any, where: str) -> Storage:
    raw = _object(raw, where)
    sid = raw.get("id")
    if not isinstance(sid, str) or not sid:
        raise ScenarioFormatError(f"{where}.id", "expected a non-empty string")
    b = _object(raw.get("bid"), f"{where}.bid")
    for key in ("E", "cC", "cD"):
        if key not in b:
            raise ScenarioFormatError(f"{where}.bid.{key}", "missing")
    try:
        bid = SocBid(_numbers(b["E"], f"{where}.bid.E"), _numbers(b["cC"], f"{where}.bid.cC"),
                     _numbers(b["cD"], f"{where}.bid.cD"),
                     _number(b.get("etaC", 1.0), f"{where}.bid.etaC"),
                     _number(b.get("etaD", 1.0), f"{where}.bid.etaD"))
    except BidStructureError as exc:
        raise ScenarioFormatError(f"{where}.bid", str(exc)) from exc
    sp = _object(raw.get("spec"), f"{where}.spec")
    unknown = set(sp) - set(SPEC_FIELDS)
    if unknown:
        raise ScenarioFormatError(f"{where}.spec", f"unknown fields {sorted(unknown)}")
    values = {}
    for key in SPEC_FIELDS:
        if key in sp:
            values[key] = _number(sp[key], f"{where}.spec.{key}")
        elif key in REQUIRED_SPEC:
            raise ScenarioFormatError(f"{where}.spec.{key}", "missing")
    if "eMin" not in values or "eMax" not in values:
        lo, hi = bid.soc_range
        values.setdefault("eMin", lo)
        values.setdefault("eMax", hi)
    try:
        return Storage(sid, bid, StorageSpec(**values))
    except ValueError as exc:
        raise ScenarioFormatError(f"{where}.spec", str(exc)) from exc


def _parse_options(raw: Any) -> ScenarioOptions:
    raw = _object(raw if raw is not None else {}, "options")
    window = raw.get("window")
    if window is not None and (isinstance(window, bool) or not isinstance(window, int) or window < 1):
        raise ScenarioFormatError("options.window", "expected a positive integer")
    gamma = raw.get("gamma")
    if isinstance(gamma, dict):
        for k, v in gamma.items():
            if isinstance(v, bool) or not isinstance(v, int):
                raise ScenarioFormatError(f"options.gamma.{k}", "expected an integer segment index")
    elif gamma is not None and (isinstance(gamma, bool) or not isinstance(gamma, int)):
        raise ScenarioFormatError("options.gamma", "expected an integer or an object of integers")
    try:
        tol = Tolerances.from_env()
    except ValueError as exc:
        raise ScenarioFormatError("SOCDISPATCH_TOL", str(exc)) from None
    if "tolerances" in raw:
        t = _object(raw["tolerances"], "options.tolerances")
        unknown = set(t) - set(TOL_FIELDS)
        if unknown:
            raise ScenarioFormatError("options.tolerances", f"unknown fields {sorted(unknown)}")
        kwargs = {k: _number(v, f"options.tolerances.{k}") for k, v in t.items()}
        if "max_iter" in kwargs:
            kwargs["max_iter"] = int(kwargs["max_iter"])
        tol = dataclasses.replace(tol, **kwargs)
    return ScenarioOptions(window=window, gamma=gamma, tolerances=tol)


def scenario_from_dict(doc: Any) -> ScenarioDocument:
    doc = _object(doc, "document")
    meta = _object(doc.get("meta", {}), "meta")
    demand = _numbers(doc.get("demand"), "demand")
    if "horizon" in doc:
        horizon = doc["horizon"]
        if isinstance(horizon, bool) or not isinstance(horizon, int) or horizon < 1:
            raise ScenarioFormatError("horizon", "expected a positive integer")
        if horizon != len(demand):
            raise ScenarioFormatError("demand", f"length {len(demand)} does not match horizon {horizon}")
    storages = doc.get("storages")
    if not isinstance(storages, list) or not storages:
        raise ScenarioFormatError("storages", "expected a non-empty list")
    fleet = tuple(_parse_storage(s, f"storages[{i}]") for i, s in enumerate(storages))
    options = _parse_options(doc.get("options"))
    try:
        scenario = Scenario(demand, fleet, options)
    except ValueError as exc:
        raise ScenarioFormatError("document", str(exc)) from exc
    seed = meta.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ScenarioFormatError("meta.seed", "expected an integer")
    extra = {k: v for k, v in meta.items() if k not in ("name", "description", "seed")}
    return ScenarioDocument(scenario, str(meta.get("name", "")), str(meta.get("description", "")), seed, extra)


def scenario_to_dict(document: ScenarioDocument) -> dict:
    sc = document.scenario
    storages = []
    for u in sc.fleet:
        storages.append({
            "id": u.id,
            "bid": {"E": list(u.bid.E), "cC": list(u.bid.cC), "cD": list(u.bid.cD),
                    "etaC": u.bid.etaC, "etaD": u.bid.etaD},
            "spec": {k: _encode(getattr(u.spec, k)) for k in SPEC_FIELDS},
        })
    options: dict[str, Any] = {}
    if sc.options.window is not None:
        options["window"] = sc.options.window
    if sc.options.gamma is not None:
        options["gamma"] = dict(sc.options.gamma) if not isinstance(sc.options.gamma, int) else sc.options.gamma
    options["tolerances"] = {k: getattr(sc.options.tolerances, k) for k in TOL_FIELDS}
    meta = {"name": document.name, "description": document.description, "seed": document.seed}
    meta.update(document.extra_meta)
    return {"meta": meta, "horizon": sc.T, "demand": list(sc.demand), "storages": storages, "options": options}


def load_scenario(path: str | Path) -> ScenarioDocument:
    """Read a scenario file; syntax errors carry line and column."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"line {exc.lineno}, column {exc.colno}", exc.msg) from exc
    return scenario_from_dict(raw)


def dump_scenario(document: ScenarioDocument, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(document), indent=2) + "\n", encoding="utf-8")


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) if isinstance(v, float) else v for v in row])


def rounded(obj: Any) -> Any:
    """Recursively round floats to 12 significant digits for JSON output."""
    if isinstance(obj, float):
        return _encode(obj) if math.isinf(obj) else float(fmt(obj)) + 0.0
    if isinstance(obj, dict):
        return {k: rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    return obj
