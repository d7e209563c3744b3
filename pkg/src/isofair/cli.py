"""Command-line front end.

    isofair solve|check|sweep|classify|profile-rra <input> [--out DIR]
            [--property NAME] [--set key=value ...] [--seed N]

Exit codes: 0 success or consistent, 2 input error, 3 property violated,
4 solver or check inconclusive.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .formats import (
    InputError,
    NetworkFile,
    UnknownKeysWarning,
    fixture_path,
    load_network,
    write_check_outputs,
    write_rra_outputs,
    write_solve_outputs,
    write_sweep_outputs,
)
from .scaling import (
    EVIDENCE_LABEL,
    ProfileEntry,
    Property,
    SampleConfig,
    SweepCase,
    Verdict,
    check_access_scalability,
    check_capacity_scaling,
    check_flow_scalability,
    check_homogeneity,
    check_iso_elastic,
    conjecture_sweep,
    rra_profile,
)
from .solver import InfeasiblePopulation, NotConverged, SolverConfig, solve_num
from .topology import classify_linear, has_local_traffic, is_connected
from .utility import NetworkUtilityProfile

EXIT_OK, EXIT_INPUT, EXIT_VIOLATED, EXIT_INCONCLUSIVE = 0, 2, 3, 4
COMMANDS = ("solve", "check", "sweep", "classify", "profile-rra")

SOLVER_KEYS = {"primal_tol": float, "kkt_tol": float, "max_iters": int, "step_c": float,
               "interior_floor": float, "method": str}
SAMPLE_KEYS = {"n_pairs": int, "gap_tol": float, "seed": int, "single_route_fraction": float}
OTHER_KEYS = {"a_grid", "alpha", "alphas", "rra_min", "rra_max", "rra_points"}


class UsageError(ValueError):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class RunManifest:
    """One validated CLI invocation."""

    command: str
    input_path: Path
    output_dir: Path
    overrides: dict = field(default_factory=dict)
    property: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if not self.input_path.exists():
            raise UsageError(f"input {self.input_path} does not exist")
        if self.output_dir.exists() and not self.output_dir.is_dir():
            raise UsageError(f"output {self.output_dir} exists and is not a directory")
        unknown = set(self.overrides) - set(SOLVER_KEYS) - set(SAMPLE_KEYS) - OTHER_KEYS
        if unknown:
            raise UsageError(f"unknown --set keys: {', '.join(sorted(unknown))}")
        try:
            self.solver_config()
            self.sample_config()
            self.alpha()
            self.alphas()
            self.rra_grid()
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad --set value: {exc}") from None

    def solver_config(self) -> SolverConfig:
        kw = {k: cast(self.overrides[k]) for k, cast in SOLVER_KEYS.items() if k in self.overrides}
        return SolverConfig(**kw)

    def sample_config(self) -> SampleConfig:
        kw = {k: cast(self.overrides[k]) for k, cast in SAMPLE_KEYS.items() if k in self.overrides}
        if "a_grid" in self.overrides:
            kw["a_grid"] = _floats(self.overrides["a_grid"])
        return SampleConfig(**kw)

    def alpha(self) -> float | None:
        return float(self.overrides["alpha"]) if "alpha" in self.overrides else None

    def alphas(self) -> tuple[float, ...]:
        return _floats(self.overrides.get("alphas", "0.5,1,2"))

    def rra_grid(self) -> np.ndarray:
        lo = float(self.overrides.get("rra_min", 0.1))
        hi = float(self.overrides.get("rra_max", 10.0))
        n = int(self.overrides.get("rra_points", 41))
        if not 0 < lo < hi or n < 2:
            raise ValueError("RRA grid needs 0 < rra_min < rra_max and at least 2 points")
        return np.geomspace(lo, hi, n)


def _profile(net: NetworkFile, manifest: RunManifest) -> NetworkUtilityProfile:
    """File profile, or alpha-fair with the file's weights when ``alpha`` is overridden."""
    alpha = manifest.alpha()
    if alpha is None:
        return net.profile
    weights = [getattr(s, "weight", 1.0) for s in net.profile.specs]
    return NetworkUtilityProfile.alpha_fair(alpha, weights, net.profile.mode)


def _load(path: Path) -> NetworkFile:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", UnknownKeysWarning)
        net = load_network(path)
    for w in caught:
        print(f"warning: {path}: {w.message}", file=sys.stderr)
    return net


def cmd_solve(manifest: RunManifest) -> int:
    net = _load(manifest.input_path)
    profile = _profile(net, manifest)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        result = solve_num(net.topology, profile, net.y, manifest.solver_config())
    write_solve_outputs(result, net.y, manifest.output_dir)
    print(f"objective {result.objective:.10g}")
    print(f"kkt_residual {result.kkt_residual:.3e}")
    for route_id, rate in zip(result.route_ids, result.allocation):
        print(f"  {route_id} {rate:.6g}")
    if not result.converged:
        print("solver did not converge", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def cmd_check(manifest: RunManifest) -> int:
    if manifest.property is None:
        raise UsageError(f"check needs --property, one of {', '.join(p.value for p in Property)}")
    try:
        prop = Property(manifest.property)
    except ValueError:
        raise UsageError(f"unknown property {manifest.property!r}") from None
    net = _load(manifest.input_path)
    profile = _profile(net, manifest)
    sample, solver = manifest.sample_config(), manifest.solver_config()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        if prop is Property.ISO_ELASTIC:
            report = check_iso_elastic(profile, sample)
        elif prop is Property.HOMOGENEITY:
            report = check_homogeneity(profile, sample)
        elif prop is Property.ACCESS_SCALABLE:
            report = check_access_scalability(profile, sample)
        elif prop is Property.FLOW_SCALABLE:
            report = check_flow_scalability(net.topology, profile, net.y, sample, solver)
        else:
            report = check_capacity_scaling(net.topology, profile, net.y, sample, solver)
    write_check_outputs(report, manifest.output_dir, title=net.name)
    print(f"{prop.value}: {report.verdict.value} "
          f"({report.pairs_tested} tested, {len(report.violations)} violations, "
          f"max deviation {report.max_deviation:.3g})")
    return report.exit_code


def _sweep_inputs(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    files = sorted(path.rglob("*.json"))
    if not files:
        raise UsageError(f"no fixture files under {path}")
    return files


def cmd_sweep(manifest: RunManifest) -> int:
    cases = []
    for path in _sweep_inputs(manifest.input_path):
        net = _load(path)
        entries = tuple(
            ProfileEntry(
                decl.name,
                lambda n, p=decl.profile: p,
                Verdict.CONSISTENT if decl.expect == "consistent" else Verdict.VIOLATED,
            )
            for decl in net.profiles
        )
        cases.append(SweepCase(net.name, net.topology, tuple(net.y), entries))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NotConverged)
        summary = conjecture_sweep(
            cases,
            alphas=manifest.alphas(),
            sample_config=manifest.sample_config(),
            solver_config=manifest.solver_config(),
        )
    write_sweep_outputs(summary, manifest.output_dir)
    print(f"conjecture sweep over {len(cases)} topologies ({EVIDENCE_LABEL})")
    for (topo, prof), report in summary.reports.items():
        print(f"  {topo} {prof}: {report.verdict.value}")
    decided = [
        (topo, prof) for topo, prof in summary.mismatches
        if summary.outcome(topo, prof) is not Verdict.INCONCLUSIVE
    ]
    if decided:
        print(f"expected pattern NOT matched: {decided}")
        return EXIT_VIOLATED
    if summary.mismatches:
        print(f"inconclusive entries: {summary.mismatches}")
        return EXIT_INCONCLUSIVE
    print("expected pattern matched")
    return EXIT_OK


def _yes(flag: bool) -> str:
    return "yes" if flag else "no"


def cmd_classify(manifest: RunManifest) -> int:
    net = _load(manifest.input_path)
    topo = net.topology
    print(
        f"linear: {_yes(classify_linear(topo) is not None)}, "
        f"local-traffic: {_yes(has_local_traffic(topo))}, "
        f"connected: {_yes(is_connected(topo))}"
    )
    return EXIT_OK


def cmd_profile_rra(manifest: RunManifest) -> int:
    net = _load(manifest.input_path)
    profile = _profile(net, manifest)
    grid = manifest.rra_grid()
    named = [(route_id, rra_profile(spec, grid))
             for route_id, spec in zip(net.topology.route_ids, profile.specs)]
    write_rra_outputs(named, manifest.output_dir)
    for name, prof in named:
        shape = "constant" if prof.is_constant else "non-constant"
        print(f"{name}: {shape} rra, alpha_hat {prof.alpha_hat:.6g}, w_hat {prof.w_hat:.6g}")
    return EXIT_OK


HANDLERS = {
    "solve": cmd_solve,
    "check": cmd_check,
    "sweep": cmd_sweep,
    "classify": cmd_classify,
    "profile-rra": cmd_profile_rra,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isofair",
        description="Network utility maximization and scaling-law checks.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument(
        "input", nargs="?",
        help="topology JSON file; for sweep a file or directory (default: bundled battery)",
    )
    parser.add_argument("--out", default="isofair_out", help="output directory")
    parser.add_argument("--property", help="property for check: "
                        + ", ".join(p.value for p in Property))
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a tolerance, a_grid, seed, alpha, ...")
    parser.add_argument("--seed", type=int, help="sampling seed")
    return parser


def parse_manifest(argv) -> RunManifest:
    args = build_parser().parse_args(argv)
    overrides = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.input is None:
        if args.command != "sweep":
            raise UsageError(f"{args.command} needs an input file")
        input_path = fixture_path("battery")
    else:
        input_path = Path(args.input)
    return RunManifest(args.command, input_path, Path(args.out), overrides, args.property)


def main(argv=None) -> int:
    try:
        manifest = parse_manifest(argv)
        return HANDLERS[manifest.command](manifest)
    except SystemExit as exc:
        # argparse usage errors
        return EXIT_INPUT if exc.code else EXIT_OK
    except (UsageError, InputError, InfeasiblePopulation, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
