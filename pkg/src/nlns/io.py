"""File formats: routing-library text instances, native JSON instances and
solutions, and the comma-separated run-record table.

Text format grammar (one ``KEY : value`` per line before the sections)::

    NAME : <text>
    TYPE : CVRP | SDVRP
    DIMENSION : <nodes incl. depot>
    CAPACITY : <int>
    EDGE_WEIGHT_TYPE : EUC_2D | EXACT_2D
    NODE_COORD_SECTION
    <id> <x> <y>          (DIMENSION lines, ids 1..DIMENSION)
    DEMAND_SECTION
    <id> <demand>         (DIMENSION lines)
    DEPOT_SECTION
    <depot id>
    -1
    EOF

``EUC_2D`` rounds each edge to the nearest integer, ``EXACT_2D`` keeps the
Euclidean distance.  ``COMMENT`` and unknown header keys are ignored.  The
depot is renumbered to node 0 and the remaining nodes keep their order.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
import json
from pathlib import Path

import numpy as np

from .core import CVRP, EXACT, NEAREST, VARIANTS, Instance, InstanceError, Solution, Tour

INSTANCE_FORMAT = "nlns-instance"
SOLUTION_FORMAT = "nlns-solution"
FORMAT_VERSION = 1

EDGE_TYPES = {"EUC_2D": NEAREST, "EXACT_2D": EXACT}
RUN_FIELDS = ("instance", "seed", "method", "cost", "time", "clock", "config_hash")


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        where = f"{path}:" if path else ""
        where += f"{line}: " if line is not None else (" " if path else "")
        super().__init__(f"{where}{message}")
        self.line = line


# -- routing-library text format ------------------------------------------------


def _number(tok: str, lineno: int, path):
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"expected a number, got {tok!r}", lineno, path) from None


def _int(tok: str, lineno: int, path) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(f"expected an integer, got {tok!r}", lineno, path) from None


def parse_vrplib(text: str, path=None, *, rounding: str | None = None) -> Instance:
    header = {}
    coords = {}
    demands = {}
    depots = []
    section = None
    n = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        upper = line.upper()
        if upper == "EOF":
            break
        if upper.endswith("_SECTION"):
            section = upper
            if section not in ("NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION"):
                raise ParseError(f"unsupported section {line}", lineno, path)
            if n is None:
                raise ParseError("DIMENSION must precede the data sections", lineno, path)
            continue
        if section is None:
            key, sep, value = line.partition(":")
            if not sep:
                raise ParseError(f"expected 'KEY : value', got {line!r}", lineno, path)
            key = key.strip().upper()
            value = value.strip()
            header[key] = (value, lineno)
            if key == "DIMENSION":
                n = _int(value, lineno, path)
                if n < 2:
                    raise ParseError("DIMENSION must be at least 2", lineno, path)
            continue
        toks = line.split()
        if section == "DEPOT_SECTION":
            if len(toks) != 1:
                raise ParseError("one depot id per line expected", lineno, path)
            v = _int(toks[0], lineno, path)
            if v == -1:
                section = "DONE"
                continue
            if not 1 <= v <= n:
                raise ParseError(f"depot id {v} outside 1..{n}", lineno, path)
            depots.append(v)
            continue
        if section == "DONE":
            raise ParseError("data after the end of DEPOT_SECTION", lineno, path)
        width = 3 if section == "NODE_COORD_SECTION" else 2
        if len(toks) != width:
            raise ParseError(f"expected {width} fields, got {len(toks)}", lineno, path)
        node = _int(toks[0], lineno, path)
        if not 1 <= node <= n:
            raise ParseError(f"node {node} outside 1..{n}", lineno, path)
        target = coords if section == "NODE_COORD_SECTION" else demands
        if node in target:
            raise ParseError(f"node {node} listed twice", lineno, path)
        if width == 3:
            target[node] = (_number(toks[1], lineno, path), _number(toks[2], lineno, path))
        else:
            target[node] = _int(toks[1], lineno, path)

    if n is None:
        raise ParseError("missing DIMENSION", None, path)
    if "CAPACITY" not in header:
        raise ParseError("missing CAPACITY", None, path)
    capacity = _int(header["CAPACITY"][0], header["CAPACITY"][1], path)
    variant = CVRP
    if "TYPE" in header:
        value, lineno = header["TYPE"]
        variant = value.lower()
        if variant not in VARIANTS:
            raise ParseError(f"unsupported TYPE {value!r}", lineno, path)
    mode = NEAREST
    if "EDGE_WEIGHT_TYPE" in header:
        value, lineno = header["EDGE_WEIGHT_TYPE"]
        if value.upper() not in EDGE_TYPES:
            raise ParseError(f"unsupported EDGE_WEIGHT_TYPE {value!r}", lineno, path)
        mode = EDGE_TYPES[value.upper()]
    for name, table in (("NODE_COORD_SECTION", coords), ("DEMAND_SECTION", demands)):
        missing = [v for v in range(1, n + 1) if v not in table]
        if missing:
            raise ParseError(f"{name} lacks node {missing[0]}", None, path)
    depot = depots[0] if depots else 1
    order = [depot] + [v for v in range(1, n + 1) if v != depot]
    xy = np.array([coords[v] for v in order])
    dem = np.array([demands[v] for v in order])
    lo = xy.min(axis=0)
    extent = float((xy.max(axis=0) - lo).max())
    name = header.get("NAME", ("", 0))[0]
    try:
        return Instance(xy, dem, capacity, rounding=rounding or mode, variant=variant, name=name,
                        feature_offset=lo, feature_scale=extent if extent > 0 else 1.0)
    except InstanceError as e:
        raise ParseError(str(e), None, path) from None


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def format_vrplib(instance: Instance) -> str:
    edge = {v: k for k, v in EDGE_TYPES.items()}[instance.rounding]
    n = instance.n_customers + 1
    lines = [
        f"NAME : {instance.name or 'instance'}",
        f"TYPE : {instance.variant.upper()}",
        f"DIMENSION : {n}",
        f"EDGE_WEIGHT_TYPE : {edge}",
        f"CAPACITY : {instance.capacity}",
        "NODE_COORD_SECTION",
    ]
    lines += [f"{i + 1} {_fmt(x)} {_fmt(y)}" for i, (x, y) in enumerate(instance.coords)]
    lines.append("DEMAND_SECTION")
    lines += [f"{i + 1} {int(d)}" for i, d in enumerate(instance.demands)]
    lines += ["DEPOT_SECTION", "1", "-1", "EOF", ""]
    return "\n".join(lines)


# -- native instance format -----------------------------------------------------------


def instance_to_dict(instance: Instance) -> dict:
    return {
        "format": INSTANCE_FORMAT,
        "version": FORMAT_VERSION,
        "name": instance.name,
        "variant": instance.variant,
        "rounding": instance.rounding,
        "capacity": instance.capacity,
        "coords": instance.coords.tolist(),
        "demands": instance.demands.tolist(),
        "feature_offset": instance.feature_offset.tolist(),
        "feature_scale": instance.feature_scale,
    }


def instance_from_dict(data: dict, path=None) -> Instance:
    if data.get("format") != INSTANCE_FORMAT:
        raise ParseError("not a native instance file", None, path)
    if data.get("version") != FORMAT_VERSION:
        raise ParseError(f"unsupported instance file version {data.get('version')}", None, path)
    try:
        return Instance(
            data["coords"], data["demands"], data["capacity"],
            rounding=data["rounding"], variant=data["variant"], name=data.get("name", ""),
            feature_offset=data.get("feature_offset", (0.0, 0.0)),
            feature_scale=data.get("feature_scale", 1.0),
        )
    except KeyError as e:
        raise ParseError(f"missing field {e.args[0]!r}", None, path) from None
    except (InstanceError, TypeError, ValueError) as e:
        raise ParseError(str(e), None, path) from None


def dumps(data) -> str:
    return json.dumps(data, sort_keys=True, indent=1) + "\n"


def _load_json(text: str, path):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, e.lineno, path) from None


def parse_instance(path, *, rounding: str | None = None) -> Instance:
    """Read an instance file; ``.json`` is the native format, anything else text."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        inst = instance_from_dict(_load_json(text, path), path)
        return inst.with_rounding(rounding) if rounding and rounding != inst.rounding else inst
    return parse_vrplib(text, path, rounding=rounding)


def write_instance(instance: Instance, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(dumps(instance_to_dict(instance)))
    else:
        path.write_text(format_vrplib(instance))


def is_instance_file(path: Path) -> bool:
    return path.suffix.lower() in (".json", ".vrp", ".txt", ".sd")


def list_instances(directory) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    return sorted(p for p in directory.iterdir() if p.is_file() and is_instance_file(p))


# -- solutions --------------------------------------------------------------------------


def solution_to_dict(solution: Solution, **extra) -> dict:
    inst = solution.instance
    data = {
        "format": SOLUTION_FORMAT,
        "version": FORMAT_VERSION,
        "instance": inst.name,
        "variant": inst.variant,
        "rounding": inst.rounding,
        "cost": solution.cost,
        "tours": [
            {"customers": [int(c) for c in t.customers],
             "deliveries": [int(q) for q in t.deliveries]}
            for t in solution.tours
        ],
    }
    data.update(extra)
    return data


def solution_from_dict(data: dict, instance: Instance, path=None) -> Solution:
    if data.get("format") != SOLUTION_FORMAT:
        raise ParseError("not a solution file", None, path)
    try:
        tours = []
        for t in data["tours"]:
            cs = tuple(int(c) for c in t["customers"])
            qs = t.get("deliveries")
            if qs is None:
                qs = [int(instance.demands[c]) if 0 <= c <= instance.n_customers else 0 for c in cs]
            tours.append(Tour(cs, tuple(int(q) for q in qs)))
        cost = float(data["cost"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed solution: {e}", None, path) from None
    return Solution(instance, tours, cost)


def write_solution(solution: Solution, path, **extra) -> None:
    Path(path).write_text(dumps(solution_to_dict(solution, **extra)))


def read_solution(path, instance: Instance) -> Solution:
    path = Path(path)
    return solution_from_dict(_load_json(path.read_text(), path), instance, path)


# -- run records ----------------------------------------------------------------------


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def format_records(records: list, fields=RUN_FIELDS) -> str:
    buf = _io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow({k: _cell(rec.get(k, "")) for k in fields})
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_records(records: list, path, fields=RUN_FIELDS) -> None:
    Path(path).write_text(format_records(records, fields))


def read_records(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
