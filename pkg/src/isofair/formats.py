"""Topology/profile JSON files and CSV/JSON report writers.

Input schema (all keys except ``links`` and ``routes`` optional)::

    {
      "name": "linear2_alpha1",
      "description": "...",
      "mode": "average" | "aggregate",
      "links":  [{"id": "j1", "capacity": 1.0}, ...],
      "routes": [{"id": "r0", "links": ["j1", "j2"], "weight": 1.0,
                  "utility": {"kind": "alpha_fair", "alpha": 1.0, "weight": 1.0}}, ...],
      "flows":  {"r0": 1.0, ...},
      "profiles": [{"name": "...", "utility": {...} | "utilities": [{...}, ...],
                    "expect": "consistent" | "violated"}]
    }

A route without ``utility`` is alpha-fair with alpha 1; an alpha-fair
utility without its own ``weight`` takes the route's ``weight`` (default 1).
Without ``flows`` every route carries one flow; with it, unlisted routes carry
none.  ``profiles`` is only read by the sweep.  Unknown keys are ignored with
a warning that lists them.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .topology import Topology, TopologyError, build_topology
from .utility import AlphaFair, Mode, NetworkUtilityProfile, utility_from_dict

TOP_KEYS = {"name", "description", "mode", "links", "routes", "flows", "profiles"}
LINK_KEYS = {"id", "capacity"}
ROUTE_KEYS = {"id", "links", "weight", "utility"}
UTILITY_KEYS = {"kind", "alpha", "weight", "lambda", "shift"}
PROFILE_KEYS = {"name", "utility", "utilities", "expect"}


class InputError(ValueError):
    """Malformed input file; the message names the offending line or field."""


class UnknownKeysWarning(UserWarning):
    pass


@dataclass
class ProfileDecl:
    name: str
    profile: NetworkUtilityProfile
    expect: str


@dataclass
class NetworkFile:
    name: str
    topology: Topology
    profile: NetworkUtilityProfile
    y: np.ndarray
    profiles: list[ProfileDecl] = field(default_factory=list)
    unknown_keys: list[str] = field(default_factory=list)


def _unknown(obj: dict, allowed: set, where: str, sink: list):
    extra = sorted(set(obj) - allowed)
    sink.extend(f"{where}.{k}" if where else k for k in extra)


def _utility(data, route_weight: float, where: str, sink: list):
    if data is None:
        return AlphaFair(1.0, route_weight)
    if not isinstance(data, dict):
        raise InputError(f"{where}: utility must be an object")
    _unknown(data, UTILITY_KEYS, where, sink)
    data = dict(data)
    if data.get("kind", "alpha_fair") == "alpha_fair":
        data.setdefault("weight", route_weight)
    try:
        return utility_from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{where}: {exc}") from None


def parse_network(data: dict, name: str = "network") -> NetworkFile:
    if not isinstance(data, dict):
        raise InputError("top level must be a JSON object")
    unknown: list[str] = []
    _unknown(data, TOP_KEYS, "", unknown)
    for key in ("links", "routes"):
        if key not in data:
            raise InputError(f"missing required key {key!r}")
        if not isinstance(data[key], list) or not data[key]:
            raise InputError(f"{key}: expected a non-empty array")

    links = []
    for j, item in enumerate(data["links"]):
        where = f"links[{j}]"
        if not isinstance(item, dict) or "id" not in item or "capacity" not in item:
            raise InputError(f"{where}: needs 'id' and 'capacity'")
        _unknown(item, LINK_KEYS, where, unknown)
        try:
            links.append((str(item["id"]), float(item["capacity"])))
        except (TypeError, ValueError):
            raise InputError(f"{where}.capacity: not a number") from None

    routes, specs = [], []
    for r, item in enumerate(data["routes"]):
        where = f"routes[{r}]"
        if not isinstance(item, dict) or "id" not in item or "links" not in item:
            raise InputError(f"{where}: needs 'id' and 'links'")
        _unknown(item, ROUTE_KEYS, where, unknown)
        if not isinstance(item["links"], list):
            raise InputError(f"{where}.links: expected an array of link ids")
        try:
            weight = float(item.get("weight", 1.0))
        except (TypeError, ValueError):
            raise InputError(f"{where}.weight: not a number") from None
        routes.append((str(item["id"]), [str(j) for j in item["links"]]))
        specs.append(_utility(item.get("utility"), weight, f"{where}.utility", unknown))

    try:
        topology = build_topology(links, routes)
    except TopologyError as exc:
        raise InputError(str(exc)) from None

    try:
        mode = Mode(data.get("mode", "average"))
    except ValueError:
        raise InputError(f"mode: expected 'average' or 'aggregate', got {data['mode']!r}") from None
    profile = NetworkUtilityProfile(tuple(specs), mode)

    if "flows" in data:
        flows = data["flows"]
        if not isinstance(flows, dict):
            raise InputError("flows: expected an object mapping route id to count")
        y = np.zeros(topology.n_routes)
        for route_id, count in flows.items():
            if route_id not in topology.route_ids:
                raise InputError(f"flows.{route_id}: unknown route")
            try:
                y[topology.route_index(route_id)] = float(count)
            except (TypeError, ValueError):
                raise InputError(f"flows.{route_id}: not a number") from None
        if np.any(y < 0):
            raise InputError("flows: counts must be non-negative")
    else:
        y = np.ones(topology.n_routes)

    decls = []
    for k, item in enumerate(data.get("profiles", [])):
        where = f"profiles[{k}]"
        if not isinstance(item, dict) or "name" not in item:
            raise InputError(f"{where}: needs 'name'")
        _unknown(item, PROFILE_KEYS, where, unknown)
        if "utilities" in item:
            per_route = item["utilities"]
            if not isinstance(per_route, list) or len(per_route) != topology.n_routes:
                raise InputError(f"{where}.utilities: need one utility per route")
            prof_specs = tuple(
                _utility(u, 1.0, f"{where}.utilities[{r}]", unknown)
                for r, u in enumerate(per_route)
            )
        else:
            spec = _utility(item.get("utility"), 1.0, f"{where}.utility", unknown)
            prof_specs = (spec,) * topology.n_routes
        expect = item.get("expect", "consistent")
        if expect not in ("consistent", "violated"):
            raise InputError(f"{where}.expect: expected 'consistent' or 'violated'")
        decls.append(ProfileDecl(str(item["name"]), NetworkUtilityProfile(prof_specs, mode), expect))

    if unknown:
        warnings.warn(f"ignoring unknown keys: {', '.join(unknown)}", UnknownKeysWarning, stacklevel=2)
    return NetworkFile(str(data.get("name", name)), topology, profile, y, decls, unknown)


def load_network(path) -> NetworkFile:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return parse_network(data, name=path.stem)
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from None


def network_to_dict(net: NetworkFile) -> dict:
    topo = net.topology
    return {
        "name": net.name,
        "mode": net.profile.mode.value,
        "links": [{"id": l.id, "capacity": l.capacity} for l in topo.links],
        "routes": [
            {"id": r.id, "links": list(r.links), "utility": spec.to_dict()}
            for r, spec in zip(topo.routes, net.profile.specs)
        ],
        "flows": {r.id: float(v) for r, v in zip(topo.routes, net.y)},
    }


# ---------------------------------------------------------------------------
# writers


def fmt(x) -> str:
    """Fixed CSV float format: 6 significant digits."""
    return format(float(x), ".6g")


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def allocation_rows(result, y):
    rows = []
    for route_id, rate, count in zip(result.route_ids, result.allocation, y):
        per_flow = fmt(rate / count) if count > 0 else ""
        rows.append([route_id, fmt(rate), per_flow])
    return rows


def link_rows(result):
    return [
        [link_id, fmt(price), fmt(load), "yes" if link_id in result.saturated_links else "no"]
        for link_id, price, load in zip(result.link_ids, result.link_prices, result.loads)
    ]


def solve_summary(result) -> dict:
    return {
        "objective": result.objective,
        "iterations": result.iterations,
        "kkt_residual": result.kkt_residual,
        "converged": result.converged,
        "primal_violation": result.primal_violation,
        "warnings": list(result.warnings),
    }


def write_solve_outputs(result, y, out_dir) -> list[Path]:
    out = Path(out_dir)
    paths = [out / "allocation.csv", out / "links.csv", out / "report.txt", out / "report.json"]
    _atomic_write(paths[0], _csv_text(["route_id", "rate", "per_flow_rate"], allocation_rows(result, y)))
    _atomic_write(paths[1], _csv_text(["link_id", "price", "load", "saturated"], link_rows(result)))
    summary = solve_summary(result)
    lines = [
        f"objective {fmt(result.objective)}",
        f"iterations {result.iterations}",
        f"kkt_residual {result.kkt_residual:.3e}",
        f"converged {'yes' if result.converged else 'no'}",
        *(f"warning {w}" for w in result.warnings),
    ]
    _atomic_write(paths[2], "\n".join(lines) + "\n")
    doc = {
        "summary": summary,
        "routes": [
            {"id": r, "rate": float(v), "per_flow_rate": float(v / c) if c > 0 else None}
            for r, v, c in zip(result.route_ids, result.allocation, y)
        ],
        "links": [
            {"id": l, "price": float(p), "load": float(ld), "saturated": l in result.saturated_links}
            for l, p, ld in zip(result.link_ids, result.link_prices, result.loads)
        ],
    }
    _atomic_write(paths[3], json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return paths


def _values_cell(values) -> str:
    parts = []
    for v in values:
        if isinstance(v, np.ndarray):
            parts.append("[" + " ".join(fmt(x) for x in v) + "]")
        else:
            parts.append(fmt(v))
    return ";".join(parts)


def witness_rows(report):
    return [
        [w.sample, fmt(w.a), w.direction, _values_cell(w.values), fmt(w.deviation)]
        for w in report.violations
    ]


def check_report_text(report, title: str = "") -> str:
    lines = [
        *( [title] if title else [] ),
        f"property {report.property.value}",
        f"verdict {report.verdict.value}",
        f"pairs_tested {report.pairs_tested}",
        f"pairs_skipped {report.pairs_skipped}",
        f"violations {len(report.violations)}",
        f"inconclusive {len(report.inconclusive)}",
        f"max_deviation {report.max_deviation:.6g}",
        *(f"note {n}" for n in report.notes),
    ]
    return "\n".join(lines) + "\n"


def write_check_outputs(report, out_dir, title: str = "") -> list[Path]:
    out = Path(out_dir)
    paths = [out / "report.txt", out / "report.json", out / "witnesses.csv"]
    _atomic_write(paths[0], check_report_text(report, title))
    _atomic_write(paths[1], json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    _atomic_write(
        paths[2],
        _csv_text(["sample", "a", "direction", "values", "deviation"], witness_rows(report)),
    )
    return paths


def write_sweep_outputs(summary, out_dir) -> list[Path]:
    out = Path(out_dir)
    rows = [
        [
            row.topology, row.profile, row.expect.value, fmt(row.a), fmt(row.deviation),
            "yes" if row.violated else "no",
            "yes" if row.local_traffic else "no",
            "yes" if row.connected else "no",
        ]
        for row in summary.rows
    ]
    header = ["topology", "profile", "expect", "a", "deviation", "violated", "local_traffic", "connected"]
    paths = [out / "summary.csv", out / "report.txt"]
    _atomic_write(paths[0], _csv_text(header, rows))
    lines = [f"conjecture sweep: {summary.label}"]
    for (topo, prof), report in summary.reports.items():
        lines.append(f"{topo} {prof} {report.verdict.value} max_deviation {report.max_deviation:.6g}")
    lines.append(f"expected pattern {'matched' if summary.matches_expected else 'NOT matched'}")
    for topo, prof in summary.mismatches:
        lines.append(f"mismatch {topo} {prof}")
    _atomic_write(paths[1], "\n".join(lines) + "\n")
    return paths


def write_rra_outputs(named_profiles, out_dir) -> list[Path]:
    out = Path(out_dir)
    rows = []
    lines = []
    for name, prof in named_profiles:
        for x, v in zip(prof.x_grid, prof.rra_values):
            rows.append([name, fmt(x), fmt(v)])
        lines.append(
            f"{name} alpha_hat {fmt(prof.alpha_hat)} w_hat {fmt(prof.w_hat)} "
            f"constant {'yes' if prof.is_constant else 'no'}"
        )
    paths = [out / "rra.csv", out / "report.txt"]
    _atomic_write(paths[0], _csv_text(["route_id", "x", "rra"], rows))
    _atomic_write(paths[1], "\n".join(lines) + "\n")
    return paths


def fixture_path(name: str) -> Path:
    """Path of a bundled fixture, e.g. ``fixture_path("linear2_alpha1.json")``."""
    return Path(__file__).parent / "fixtures" / name
