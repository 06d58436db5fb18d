"""File formats: JSON case files, long-format CSV time series, records, reports, manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import platform
from datetime import datetime, timedelta
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .grid import Bus, CaseError, Generator, GridCase, Line, WindFarm
from .sim import INTERVALS_PER_HOUR, HourScenario, IntervalRealization, IntervalRecord
from .uncertainty import WindUncertainty

logger = logging.getLogger(__name__)


class CaseSchemaError(CaseError):
    """The case document does not match the schema."""


class UncertaintyError(CaseError):
    """The uncertainty block is inconsistent."""


class TimeSeriesError(ValueError):
    pass


_NUM = {"type": "number"}
_NONNEG = {"type": "number", "minimum": 0}
_PROB = {"oneOf": [{"type": "number"}, {"type": "string", "pattern": r"^\s*[0-9.eE+-]+(\s*/\s*[0-9.]+)?\s*$"}]}
_NUM_ARRAY = {"type": "array", "items": _NUM}

CASE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["buses", "lines", "generators"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "base_mva": {"type": "number", "exclusiveMinimum": 0},
        "buses": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object", "required": ["id"], "additionalProperties": False,
                "properties": {"id": {"type": "integer"}, "demand": _NUM,
                               "reference": {"type": "boolean"}},
            },
        },
        "lines": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False,
                "required": ["id", "from_bus", "to_bus", "susceptance", "capacity"],
                "properties": {"id": {"type": "integer"}, "from_bus": {"type": "integer"},
                               "to_bus": {"type": "integer"}, "susceptance": _NUM,
                               "capacity": _NUM, "eps": _PROB},
            },
        },
        "generators": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False,
                "required": ["id", "bus", "pmin", "pmax", "ramp_up", "ramp_down"],
                "properties": {
                    "id": {"type": "integer"}, "bus": {"type": "integer"},
                    "pmin": _NUM, "pmax": _NUM, "ramp_up": _NUM, "ramp_down": _NUM,
                    "c1": _NUM, "c2": _NUM, "eps": _PROB,
                    "dispatchable": {"type": "boolean"},
                    "p_fixed": {"type": ["number", "null"]},
                    "alpha_fixed": {"type": ["number", "null"]},
                    "alpha_group": {"type": ["string", "null"]},
                    "committed": {"type": "boolean"},
                },
            },
        },
        "wind_farms": {
            "type": "array",
            "items": {
                "type": "object", "required": ["bus"], "additionalProperties": False,
                "properties": {"bus": {"type": "integer"}, "forecast": _NONNEG},
            },
        },
        "uncertainty": {
            "type": "object", "additionalProperties": False,
            "required": ["sigma2"],
            "properties": {
                "sigma2": _NUM_ARRAY, "mu_bar": _NUM_ARRAY, "sigma2_bar": _NUM_ARRAY,
                "gamma_mu": _PROB, "gamma_sigma": _PROB,
            },
        },
        "monitored_lines": {"type": ["array", "null"], "items": {"type": "integer"}},
    },
}


def parse_probability(value) -> float:
    """Accept ``0.0025``, ``"0.0025"`` or ``"1/6"``."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    try:
        return float(Fraction(str(value).replace(" ", "")))
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a probability: {value!r}") from None


def case_from_dict(doc: dict) -> tuple[GridCase, WindUncertainty | None]:
    """Build and validate a case (and its uncertainty block) from a parsed document."""
    try:
        jsonschema.validate(doc, CASE_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise CaseSchemaError(f"schema error at {where}: {exc.message}") from None

    buses = [Bus(b["id"], float(b.get("demand", 0.0)), bool(b.get("reference", False)))
             for b in doc["buses"]]
    lines = []
    for ln in doc["lines"]:
        kw = {"eps": parse_probability(ln["eps"])} if "eps" in ln else {}
        lines.append(Line(ln["id"], ln["from_bus"], ln["to_bus"], float(ln["susceptance"]),
                          float(ln["capacity"]), **kw))
    gens = []
    for g in doc["generators"]:
        kw = {k: g[k] for k in ("dispatchable", "p_fixed", "alpha_fixed", "alpha_group",
                                "committed") if k in g}
        if "eps" in g:
            kw["eps"] = parse_probability(g["eps"])
        gens.append(Generator(g["id"], g["bus"], float(g["pmin"]), float(g["pmax"]),
                              float(g["ramp_up"]), float(g["ramp_down"]),
                              float(g.get("c1", 0.0)), float(g.get("c2", 0.0)), **kw))
    winds = [WindFarm(w["bus"], float(w.get("forecast", 0.0))) for w in doc.get("wind_farms", [])]
    case = GridCase(buses, lines, gens, winds, float(doc.get("base_mva", 100.0)),
                    doc.get("monitored_lines"), doc.get("name", "case"))
    case.validate()

    u = None
    blk = doc.get("uncertainty")
    if blk is not None:
        k = len(winds)
        arrays = {}
        for key in ("sigma2", "mu_bar", "sigma2_bar"):
            arr = np.asarray(blk.get(key, [0.0] * k), dtype=float)
            if arr.size != k:
                raise UncertaintyError(f"uncertainty.{key} has {arr.size} entries for {k} wind farms")
            arrays[key] = arr
        g_mu = parse_probability(blk.get("gamma_mu", 0.6))
        g_sig = parse_probability(blk.get("gamma_sigma", g_mu))
        try:
            u = WindUncertainty(arrays["sigma2"], arrays["mu_bar"], arrays["sigma2_bar"], g_mu, g_sig)
        except ValueError as exc:
            buses_bad = [winds[i].bus for i in np.flatnonzero(arrays["sigma2_bar"] > arrays["sigma2"])]
            extra = f" (wind buses {buses_bad})" if buses_bad else ""
            raise UncertaintyError(f"{exc}{extra}") from None
    elif winds:
        logger.info("case has wind farms but no uncertainty block")
    return case, u


def case_to_dict(case: GridCase, u: WindUncertainty | None = None) -> dict:
    doc = {
        "name": case.name,
        "base_mva": case.base_mva,
        "buses": [{"id": b.id, "demand": b.demand, "reference": b.is_reference} for b in case.buses],
        "lines": [{"id": ln.id, "from_bus": ln.from_bus, "to_bus": ln.to_bus,
                   "susceptance": ln.susceptance, "capacity": ln.capacity, "eps": ln.eps}
                  for ln in case.lines],
        "generators": [{
            "id": g.id, "bus": g.bus, "pmin": g.pmin, "pmax": g.pmax, "ramp_up": g.ramp_up,
            "ramp_down": g.ramp_down, "c1": g.c1, "c2": g.c2, "eps": g.eps,
            "dispatchable": g.dispatchable, "p_fixed": g.p_fixed, "alpha_fixed": g.alpha_fixed,
            "alpha_group": g.alpha_group, "committed": g.committed,
        } for g in case.generators],
        "wind_farms": [{"bus": w.bus, "forecast": w.forecast} for w in case.wind_farms],
        "monitored_lines": None if case.monitored_lines is None else list(case.monitored_lines),
    }
    if u is not None:
        doc["uncertainty"] = {"sigma2": u.sigma2.tolist(), "mu_bar": u.mu_bar.tolist(),
                              "sigma2_bar": u.sigma2_bar.tolist(),
                              "gamma_mu": u.gamma_mu, "gamma_sigma": u.gamma_sigma}
    return doc


def load_case(path) -> tuple[GridCase, WindUncertainty | None]:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CaseSchemaError(f"{path}: not valid JSON ({exc})") from None
    return case_from_dict(doc)


def save_case(path, case: GridCase, u: WindUncertainty | None = None) -> None:
    write_json(path, case_to_dict(case, u))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n",
                          encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# time series ---------------------------------------------------------------

TS_KINDS = ("load", "wind", "commitment", "hydro")


def write_timeseries(path, rows) -> None:
    """Rows are ``(timestamp, kind, id, value)``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "kind", "bus", "value"])
        for ts, kind, bus, value in rows:
            stamp = ts.isoformat(timespec="minutes") if isinstance(ts, datetime) else ts
            w.writerow([stamp, kind, bus, repr(float(value))])


def read_timeseries(path) -> list[tuple[datetime, str, int, float]]:
    """Parse a long-format series, enforcing nondecreasing timestamps."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"timestamp", "kind", "bus", "value"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise TimeSeriesError(f"{path}: header must contain {sorted(need)}")
        prev = None
        for lineno, r in enumerate(reader, start=2):
            try:
                ts = datetime.fromisoformat(r["timestamp"].strip())
                kind = r["kind"].strip()
                bus = int(r["bus"])
                value = float(r["value"])
            except (ValueError, AttributeError) as exc:
                raise TimeSeriesError(f"{path}:{lineno}: {exc}") from None
            if kind not in TS_KINDS:
                raise TimeSeriesError(f"{path}:{lineno}: unknown kind {kind!r}")
            if prev is not None and ts < prev:
                raise TimeSeriesError(f"{path}:{lineno}: timestamps not monotone ({ts} after {prev})")
            if kind in ("load", "wind") and value < 0:
                raise TimeSeriesError(f"{path}:{lineno}: negative {kind} value {value}")
            prev = ts
            rows.append((ts, kind, bus, value))
    return rows


def scenarios_from_rows(rows) -> list[HourScenario]:
    """Group hourly forecast rows into one scenario per timestamp.

    ``commitment`` and ``hydro`` rows carry a generator id in the bus column.
    """
    by_ts: dict[datetime, HourScenario] = {}
    for ts, kind, key, value in rows:
        if ts.minute or ts.second or ts.microsecond:
            raise TimeSeriesError(f"forecast timestamp {ts} is not on the hour")
        s = by_ts.get(ts)
        if s is None:
            s = by_ts[ts] = HourScenario(hour=len(by_ts), demand={}, wind={},
                                         timestamp=ts.isoformat(timespec="minutes"))
        if kind == "load":
            s.demand[key] = value
        elif kind == "wind":
            s.wind[key] = value
        elif kind == "commitment":
            s.commitment = (s.commitment or {}) | {key: bool(value)}
        else:
            s.hydro_dispatch = (s.hydro_dispatch or {}) | {key: value}
    for s in by_ts.values():
        if not s.demand:
            s.demand = None
    return list(by_ts.values())


def realizations_from_rows(rows, scenarios: list[HourScenario]) -> dict[int, list[IntervalRealization]]:
    """Group 5-minute rows under their forecast hour, checking 12 intervals per hour."""
    hour_of = {datetime.fromisoformat(s.timestamp): s.hour for s in scenarios}
    grouped: dict[int, dict[datetime, IntervalRealization]] = {s.hour: {} for s in scenarios}
    for ts, kind, bus, value in rows:
        top = ts.replace(minute=0, second=0, microsecond=0)
        if top not in hour_of:
            raise TimeSeriesError(f"realization at {ts} has no forecast hour")
        if ts.minute % 5 or ts.second or ts.microsecond:
            raise TimeSeriesError(f"realization timestamp {ts} is not on a 5-minute boundary")
        slots = grouped[hour_of[top]]
        r = slots.get(ts)
        if r is None:
            r = slots[ts] = IntervalRealization(tau=ts.minute // 5 + 1, wind={}, demand={},
                                                timestamp=ts.isoformat(timespec="minutes"))
        if kind == "wind":
            r.wind[bus] = value
        elif kind == "load":
            r.demand[bus] = value
        else:
            raise TimeSeriesError(f"kind {kind!r} is not allowed in realizations")
    out = {}
    for s in scenarios:
        slots = grouped[s.hour]
        if len(slots) != INTERVALS_PER_HOUR:
            raise TimeSeriesError(f"hour {s.timestamp}: {len(slots)} intervals, "
                                  f"expected {INTERVALS_PER_HOUR}")
        out[s.hour] = [slots[k] for k in sorted(slots)]
    return out


def realization_rows(realizations: dict, scenarios: list[HourScenario]) -> list:
    rows = []
    for s in scenarios:
        start = datetime.fromisoformat(s.timestamp)
        for r in realizations[s.hour]:
            ts = start + timedelta(minutes=5 * (r.tau - 1))
            rows += [(ts, "load", b, v) for b, v in r.demand.items()]
            rows += [(ts, "wind", b, v) for b, v in r.wind.items()]
    return rows


# records and reports -------------------------------------------------------

RECORD_FIELDS = ["hour", "tau", "omega_total", "ace", "cost", "imbalance",
                 "ramp_up", "ramp_down", "overloads", "clipped"]


def _ids(values) -> str:
    return ";".join(str(v) for v in values)


class RecordWriter:
    """Append-only CSV writer for interval records (one writer per file)."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._w = csv.writer(self._fh)
        self._w.writerow(RECORD_FIELDS)

    def write(self, records) -> None:
        for r in records:
            self._w.writerow([
                r.hour, r.tau, repr(r.omega_total), repr(r.ace), repr(r.cost), int(r.imbalance),
                _ids(r.ramp_up), _ids(r.ramp_down),
                ";".join(f"{k}:{v!r}" for k, v in sorted(r.overloads.items())),
                _ids(r.clipped),
            ])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_records(path, records) -> None:
    with RecordWriter(path) as w:
        w.write(records)


def read_records(path) -> list[IntervalRecord]:
    def ids(s):
        return tuple(int(x) for x in s.split(";") if x)

    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            over = {}
            for item in filter(None, r["overloads"].split(";")):
                k, v = item.split(":")
                over[int(k)] = float(v)
            out.append(IntervalRecord(
                hour=int(r["hour"]), tau=int(r["tau"]), omega_total=float(r["omega_total"]),
                ace=float(r["ace"]), cost=float(r["cost"]), imbalance=bool(int(r["imbalance"])),
                ramp_up=ids(r["ramp_up"]), ramp_down=ids(r["ramp_down"]), overloads=over,
                clipped=ids(r["clipped"]),
            ))
    return out


# manifest ------------------------------------------------------------------

def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import clarabel
    import scipy

    return {"rccopf": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__,
            "clarabel": getattr(clarabel, "__version__", "unknown"),
            "jsonschema": _dist_version("jsonschema")}


def _dist_version(name: str) -> str:
    from importlib.metadata import PackageNotFoundError, version

    try:
        return version(name)
    except PackageNotFoundError:
        return "unknown"


def write_manifest(out_dir, command: str, parameters: dict, inputs: dict) -> dict:
    """Record the command, every parameter, input hashes and library versions.

    ``inputs`` maps a role (``case``, ``forecasts``...) to a file path.
    """
    manifest = {
        "command": command,
        "parameters": parameters,
        "inputs": {role: {"path": os.fspath(p), "sha256": file_sha256(p)}
                   for role, p in sorted(inputs.items()) if p is not None},
        "versions": versions(),
    }
    write_json(Path(out_dir) / "manifest.json", manifest)
    return manifest


def solution_to_dict(case: GridCase, sol) -> dict:
    d = sol.to_dict(case)
    d["case"] = case.name
    return d


__all__ = [
    "CASE_SCHEMA", "CaseSchemaError", "UncertaintyError", "TimeSeriesError",
    "parse_probability", "case_from_dict", "case_to_dict", "load_case", "save_case",
    "write_json", "write_timeseries", "read_timeseries", "scenarios_from_rows",
    "realizations_from_rows", "realization_rows", "RecordWriter", "write_records",
    "read_records", "write_manifest", "file_sha256", "versions", "solution_to_dict",
]
