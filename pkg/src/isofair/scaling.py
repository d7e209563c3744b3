"""Scaling-law checks: iso-elasticity, flow/capacity/access scalability,
homogeneity of the network utility, and relative risk aversion profiles.

Every check samples a finite set of states and scale factors, so a clean
report is evidence consistent with a property, while a witness is a concrete
counterexample.  Samples use one random stream per sample index, derived from
``(seed, index)``, so reports do not depend on evaluation order.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .solver import SolverConfig, select_flow_population, solve_num
from .topology import Topology, has_local_traffic, is_connected, scale_capacity
from .utility import (
    AlphaFair,
    CustomUtility,
    Exponential,
    LogShifted,
    Mode,
    NetworkUtilityProfile,
    UtilitySpec,
    network_utility,
)


class Property(str, Enum):
    ISO_ELASTIC = "iso-elasticity"
    FLOW_SCALABLE = "flow-scalability"
    CAPACITY_SCALING = "capacity-scaling"
    ACCESS_SCALABLE = "access-scalability"
    HOMOGENEITY = "homogeneity"


class Verdict(str, Enum):
    CONSISTENT = "ConsistentWithProperty"
    VIOLATED = "Violated"
    INCONCLUSIVE = "Inconclusive"


EXIT_CODES = {Verdict.CONSISTENT: 0, Verdict.VIOLATED: 3, Verdict.INCONCLUSIVE: 4}


class NonPositiveGridPoint(ValueError):
    pass


@dataclass(frozen=True)
class SampleConfig:
    n_pairs: int = 1000
    a_grid: tuple[float, ...] = (0.1, 0.5, 2.0, 10.0)
    rate_range: tuple[float, float] = (0.05, 20.0)
    pop_range: tuple[float, float] = (0.1, 50.0)
    seed: int = 0
    gap_tol: float = 1e-9
    # share of sampled states whose flows sit on a single route
    single_route_fraction: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "a_grid", tuple(float(a) for a in self.a_grid))
        if self.n_pairs < 1:
            raise ValueError("n_pairs must be positive")
        if not self.a_grid or min(self.a_grid) <= 0:
            raise ValueError("a_grid entries must be positive")
        for lo, hi in (self.rate_range, self.pop_range):
            if not 0 < lo <= hi:
                raise ValueError("sampling intervals must be positive")
        if self.gap_tol <= 0:
            raise ValueError("gap_tol must be positive")
        if not 0 <= self.single_route_fraction <= 1:
            raise ValueError("single_route_fraction must lie in [0, 1]")


@dataclass
class Witness:
    sample: int
    a: float
    direction: str
    inputs: dict
    values: tuple
    deviation: float

    def to_dict(self):
        def plain(v):
            return v.tolist() if isinstance(v, np.ndarray) else v

        return {
            "sample": self.sample,
            "a": self.a,
            "direction": self.direction,
            "inputs": {k: plain(v) for k, v in self.inputs.items()},
            "values": [plain(v) for v in self.values],
            "deviation": self.deviation,
        }


@dataclass
class CheckReport:
    property: Property
    pairs_tested: int = 0
    pairs_skipped: int = 0
    violations: list[Witness] = field(default_factory=list)
    inconclusive: list[Witness] = field(default_factory=list)
    max_deviation: float = 0.0
    counts: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    # per scale factor, for the solver-based checks
    deviations: dict = field(default_factory=dict)

    @property
    def verdict(self) -> Verdict:
        if self.violations:
            return Verdict.VIOLATED
        if self.inconclusive:
            return Verdict.INCONCLUSIVE
        return Verdict.CONSISTENT

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.verdict]

    def _tally(self, direction: str, tested: bool):
        t, s = self.counts.get(direction, (0, 0))
        self.counts[direction] = (t + 1, s) if tested else (t, s + 1)
        if tested:
            self.pairs_tested += 1
        else:
            self.pairs_skipped += 1

    def _record(self, witness: Witness):
        self.violations.append(witness)

    def to_dict(self):
        return {
            "property": self.property.value,
            "verdict": self.verdict.value,
            "pairs_tested": self.pairs_tested,
            "pairs_skipped": self.pairs_skipped,
            "max_deviation": self.max_deviation,
            "counts": {k: {"tested": t, "skipped": s} for k, (t, s) in self.counts.items()},
            "deviations": {f"{a:g}": d for a, d in self.deviations.items()},
            "violations": [w.to_dict() for w in self.violations],
            "inconclusive": [w.to_dict() for w in self.inconclusive],
            "notes": list(self.notes),
        }


def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def sample_state(rng: np.random.Generator, n_routes: int, config: SampleConfig):
    """Draw ``(y, rates)``, log-uniform on the configured ranges.

    With probability ``single_route_fraction`` all flows sit on one route.
    """

    def log_uniform(lo, hi, size):
        return np.exp(rng.uniform(math.log(lo), math.log(hi), size))

    y = log_uniform(*config.pop_range, n_routes)
    rates = log_uniform(*config.rate_range, n_routes)
    if n_routes > 1 and rng.uniform() < config.single_route_fraction:
        keep = rng.integers(n_routes)
        y = np.where(np.arange(n_routes) == keep, y, 0.0)
    return y, rates


def _tie(u: float, v: float, gap_tol: float) -> bool:
    return abs(u - v) < gap_tol * max(1.0, abs(u), abs(v))


def _rel_gap(u: float, v: float) -> float:
    return abs(u - v) / max(1.0, abs(u), abs(v))


def compare_orderings(before: tuple[float, float], after: tuple[float, float], gap_tol: float):
    """Classify a pair of utility comparisons as 'skipped', 'kept' or 'flipped'."""
    if _tie(*before, gap_tol) or _tie(*after, gap_tol):
        return "skipped"
    same = (before[0] > before[1]) == (after[0] > after[1])
    return "kept" if same else "flipped"


def _ordering_step(report, direction, sample, a, inputs, before, after, gap_tol):
    outcome = compare_orderings(before, after, gap_tol)
    report._tally(direction, outcome != "skipped")
    if outcome == "flipped":
        dev = min(_rel_gap(*before), _rel_gap(*after))
        report.max_deviation = max(report.max_deviation, dev)
        report._record(Witness(sample, a, direction, inputs, (*before, *after), dev))


def check_iso_elastic(profile: NetworkUtilityProfile, config: SampleConfig | None = None):
    """Does scaling all rates (or all populations) by ``a`` preserve the ordering of states?"""
    config = config or SampleConfig()
    n = len(profile)
    report = CheckReport(Property.ISO_ELASTIC, notes=profile.conditioning_warnings())
    for i in range(config.n_pairs):
        rng = _rng(config.seed, i)
        y, lam = sample_state(rng, n, config)
        yt, lamt = sample_state(rng, n, config)
        before = (network_utility(profile, y, lam), network_utility(profile, yt, lamt))
        inputs = {"y": y, "rates": lam, "y_other": yt, "rates_other": lamt}
        for a in config.a_grid:
            after = (
                network_utility(profile, y, a * lam),
                network_utility(profile, yt, a * lamt),
            )
            _ordering_step(report, "rate", i, a, inputs, before, after, config.gap_tol)
            after = (
                network_utility(profile, a * y, lam),
                network_utility(profile, a * yt, lamt),
            )
            _ordering_step(report, "population", i, a, inputs, before, after, config.gap_tol)
    return report


def homogeneity_coefficients(profile: NetworkUtilityProfile, y, a: float, direction: str):
    """Exact ``(b, d)`` with ``U(scaled) = b * U + d`` for a uniform alpha-fair profile."""
    alpha = profile.uniform_alpha
    if alpha is None:
        raise ValueError("closed-form homogeneity needs a uniform alpha-fair profile")
    y = np.asarray(y, dtype=float)
    weighted = float(np.dot(profile.weights, y))
    average = profile.mode is Mode.AVERAGE
    if average:
        weighted /= float(y.sum())
    if direction == "rate":
        if alpha != 1:
            return a ** (1 - alpha), 0.0
        return 1.0, weighted * math.log(a)
    if alpha != 1:
        return (a ** (alpha - 1), 0.0) if average else (a**alpha, 0.0)
    if average:
        return 1.0, -weighted * math.log(a)
    return a, -a * weighted * math.log(a)


def _scaled_utility(profile, y, lam, a, direction):
    if direction == "rate":
        return network_utility(profile, y, a * lam)
    return network_utility(profile, a * y, lam)


def check_homogeneity(profile: NetworkUtilityProfile, config: SampleConfig | None = None):
    """Is ``lam -> a*lam`` (and ``y -> a*y``) an affine map of the utility value?

    For uniform alpha-fair profiles the closed-form coefficients are checked
    to 1e-9 (relative when alpha != 1, absolute for the log case).  For any
    other profile, coefficients implied by pairs of samples are compared and
    a disagreement above 1e-6 is a witness that no single affine map exists.
    """
    config = config or SampleConfig()
    n = len(profile)
    report = CheckReport(Property.HOMOGENEITY, notes=profile.conditioning_warnings())
    alpha = profile.uniform_alpha
    if alpha is not None:
        for i in range(config.n_pairs):
            rng = _rng(config.seed, i)
            y, lam = sample_state(rng, n, config)
            u = network_utility(profile, y, lam)
            for a in config.a_grid:
                for direction in ("rate", "population"):
                    b, d = homogeneity_coefficients(profile, y, a, direction)
                    got = _scaled_utility(profile, y, lam, a, direction)
                    want = b * u + d
                    if alpha != 1:
                        dev = abs(got - want) / max(abs(want), 1e-300)
                    else:
                        dev = abs(got - want)
                    report._tally(direction, True)
                    report.max_deviation = max(report.max_deviation, dev)
                    if dev > 1e-9:
                        report._record(
                            Witness(i, a, direction, {"y": y, "rates": lam}, (got, want), dev)
                        )
        return report

    report.notes.append("profile is not uniform alpha-fair: searching for inconsistent (b, d)")
    for a in config.a_grid:
        for direction in ("rate", "population"):
            reference = None
            for i in range(config.n_pairs):
                rng = _rng(config.seed, i)
                s1 = sample_state(rng, n, config)
                s2 = sample_state(rng, n, config)
                u1, u2 = (network_utility(profile, *s) for s in (s1, s2))
                if _tie(u1, u2, config.gap_tol):
                    report._tally(direction, False)
                    continue
                v1 = _scaled_utility(profile, *s1, a, direction)
                v2 = _scaled_utility(profile, *s2, a, direction)
                b = (v1 - v2) / (u1 - u2)
                d = v1 - b * u1
                report._tally(direction, True)
                if reference is None:
                    reference = (b, d)
                    continue
                dev = max(
                    abs(b - reference[0]) / max(1.0, abs(reference[0])),
                    abs(d - reference[1]) / max(1.0, abs(reference[1])),
                )
                report.max_deviation = max(report.max_deviation, dev)
                if dev > 1e-6:
                    inputs = {"y": s1[0], "rates": s1[1], "y_other": s2[0], "rates_other": s2[1]}
                    report._record(Witness(i, a, direction, inputs, (b, d, *reference), dev))
    return report


def _violation_threshold(solver_config: SolverConfig) -> float:
    return max(10 * solver_config.primal_tol, 1e-4)


def _solve_checked(report, topology, profile, y, solver_config, a, direction):
    result = solve_num(topology, profile, y, solver_config)
    if not result.converged:
        report.inconclusive.append(
            Witness(-1, a, direction, {"y": y}, (result.allocation,), result.kkt_residual)
        )
    return result


def check_flow_scalability(
    topology: Topology,
    profile: NetworkUtilityProfile,
    y,
    config: SampleConfig | None = None,
    solver_config: SolverConfig | None = None,
):
    """Is the optimal allocation unchanged when every population is scaled by ``a``?"""
    config = config or SampleConfig()
    solver_config = solver_config or SolverConfig()
    y = np.asarray(y, dtype=float)
    report = CheckReport(Property.FLOW_SCALABLE, notes=profile.conditioning_warnings())
    threshold = _violation_threshold(solver_config)
    base = _solve_checked(report, topology, profile, y, solver_config, 1.0, "population")
    for a in config.a_grid:
        scaled = base if a == 1 else _solve_checked(
            report, topology, profile, a * y, solver_config, a, "population"
        )
        dev = float(np.max(np.abs(scaled.allocation - base.allocation)))
        report._tally("population", True)
        report.deviations[a] = dev
        report.max_deviation = max(report.max_deviation, dev)
        if dev > threshold:
            report._record(
                Witness(0, a, "population", {"y": y}, (base.allocation, scaled.allocation), dev)
            )
    return report


def check_capacity_scaling(
    topology: Topology,
    profile: NetworkUtilityProfile,
    y,
    config: SampleConfig | None = None,
    solver_config: SolverConfig | None = None,
):
    """Does scaling every capacity by ``a`` scale the optimal allocation by ``a``?"""
    config = config or SampleConfig()
    solver_config = solver_config or SolverConfig()
    y = np.asarray(y, dtype=float)
    report = CheckReport(Property.CAPACITY_SCALING, notes=profile.conditioning_warnings())
    threshold = _violation_threshold(solver_config)
    base = _solve_checked(report, topology, profile, y, solver_config, 1.0, "capacity")
    for a in config.a_grid:
        if a == 1:
            scaled = base
        else:
            scaled = _solve_checked(
                report, scale_capacity(topology, a), profile, y, solver_config, a, "capacity"
            )
        dev = float(np.max(np.abs(scaled.allocation - a * base.allocation))) / a
        report._tally("capacity", True)
        report.deviations[a] = dev
        report.max_deviation = max(report.max_deviation, dev)
        if dev > threshold:
            report._record(
                Witness(
                    0, a, "capacity", {"y": y},
                    (a * base.allocation, scaled.allocation), dev,
                )
            )
    return report


def check_access_scalability(profile: NetworkUtilityProfile, config: SampleConfig | None = None):
    """Does the better of two flow populations stay better when rates and
    populations scale together (selection) or populations alone (ordering)?

    Candidate sets are the two-point sets ``{y, y_other}``.
    """
    config = config or SampleConfig()
    n = len(profile)
    report = CheckReport(Property.ACCESS_SCALABLE, notes=profile.conditioning_warnings())
    for i in range(config.n_pairs):
        rng = _rng(config.seed, i)
        y, lam = sample_state(rng, n, config)
        yt, _ = sample_state(rng, n, config)
        lam = np.maximum(lam, 0.0)
        before = (network_utility(profile, y, lam), network_utility(profile, yt, lam))
        inputs = {"y": y, "y_other": yt, "rates": lam}
        for a in config.a_grid:
            after = (network_utility(profile, a * y, lam), network_utility(profile, a * yt, lam))
            _ordering_step(report, "ordering", i, a, inputs, before, after, config.gap_tol)

            scaled = (
                network_utility(profile, a * y, a * lam),
                network_utility(profile, a * yt, a * lam),
            )
            if _tie(*before, config.gap_tol) or _tie(*scaled, config.gap_tol):
                report._tally("selection", False)
                continue
            report._tally("selection", True)
            chosen = select_flow_population(profile, lam, [y, yt])
            chosen_scaled = select_flow_population(profile, a * lam, [a * y, a * yt])
            if not np.array_equal(chosen_scaled, a * chosen):
                dev = min(_rel_gap(*before), _rel_gap(*scaled))
                report.max_deviation = max(report.max_deviation, dev)
                report._record(
                    Witness(i, a, "selection", inputs, (*before, *scaled), dev)
                )
    return report


@dataclass
class RRAProfile:
    x_grid: np.ndarray
    rra_values: np.ndarray
    alpha_hat: float
    w_hat: float
    is_constant: bool

    def to_dict(self):
        return {
            "x_grid": self.x_grid.tolist(),
            "rra_values": self.rra_values.tolist(),
            "alpha_hat": self.alpha_hat,
            "w_hat": self.w_hat,
            "is_constant": self.is_constant,
        }


def rra_profile(utility, x_grid) -> RRAProfile:
    """Relative risk aversion ``-x U''(x) / U'(x)`` over ``x_grid``.

    ``utility`` is a :class:`UtilitySpec` or a ``(value, deriv)`` pair of
    callables.  Without an analytic second derivative, ``U''`` comes from
    central differences of ``U'`` with step ``x * 1e-3`` and one Richardson
    refinement.  Constant RRA identifies the alpha-fair summands:
    ``alpha_hat`` estimates alpha and ``w_hat = U'(1)`` the weight.
    """
    if not isinstance(utility, UtilitySpec):
        value, deriv = utility
        utility = CustomUtility(value, deriv)
    x = np.asarray(x_grid, dtype=float)
    if np.any(x <= 0):
        raise NonPositiveGridPoint("RRA grid points must be positive")
    if x.size < 8 or x.max() / x.min() < 100:
        raise ValueError("RRA grid needs at least 8 points spanning two decades")

    first = np.asarray(utility.deriv(x), dtype=float)
    if isinstance(utility, CustomUtility) and not utility.has_second:
        h = x * 1e-3

        def central(step):
            return (utility.deriv(x + step) - utility.deriv(x - step)) / (2 * step)

        second = (4 * central(h / 2) - central(h)) / 3
    else:
        second = np.asarray(utility.second_deriv(x), dtype=float)

    rra = -x * second / first
    alpha_hat = float(np.median(rra))
    w_hat = float(utility.deriv(1.0))
    is_constant = bool(np.max(np.abs(rra - alpha_hat)) <= 1e-3 * max(1.0, alpha_hat))
    return RRAProfile(x, rra, alpha_hat, w_hat, is_constant)


# ---------------------------------------------------------------------------
# Conjecture sweep

EVIDENCE_LABEL = "empirical evidence, not proof"


@dataclass(frozen=True)
class ProfileEntry:
    name: str
    build: Callable[[int], NetworkUtilityProfile]
    expect: Verdict


@dataclass(frozen=True)
class SweepCase:
    """One topology of the battery; ``entries`` run on it in addition to the shared ones."""

    name: str
    topology: Topology
    y: tuple[float, ...]
    entries: tuple[ProfileEntry, ...] = ()


def mixed_alpha_profile(n_routes: int, alphas=(1.0, 2.0)) -> NetworkUtilityProfile:
    return NetworkUtilityProfile(
        tuple(AlphaFair(alphas[r % len(alphas)]) for r in range(n_routes))
    )


def default_counterexamples() -> dict[str, Callable[[int], NetworkUtilityProfile]]:
    return {
        "exponential": lambda n: NetworkUtilityProfile.uniform(Exponential(1.0), n),
        "log_shifted": lambda n: NetworkUtilityProfile.uniform(LogShifted(1.0), n),
        "mixed_alpha": mixed_alpha_profile,
    }


def standard_entries(alphas, counterexample_profiles) -> list[ProfileEntry]:
    entries = [
        ProfileEntry(
            f"alpha_fair_{a:g}",
            lambda n, a=a: NetworkUtilityProfile.uniform(AlphaFair(a), n),
            Verdict.CONSISTENT,
        )
        for a in alphas
    ]
    entries += [
        ProfileEntry(name, build, Verdict.VIOLATED)
        for name, build in counterexample_profiles.items()
    ]
    return entries


@dataclass
class SweepRow:
    topology: str
    profile: str
    expect: Verdict
    a: float
    deviation: float
    violated: bool
    local_traffic: bool
    connected: bool


@dataclass
class SweepSummary:
    rows: list[SweepRow] = field(default_factory=list)
    reports: dict = field(default_factory=dict)
    label: str = EVIDENCE_LABEL

    def outcome(self, topology: str, profile: str) -> Verdict:
        return self.reports[(topology, profile)].verdict

    @property
    def matches_expected(self) -> bool:
        """True iff alpha-fair entries are consistent and counterexamples are violated."""
        return all(
            self.reports[(row.topology, row.profile)].verdict is row.expect for row in self.rows
        )

    @property
    def mismatches(self) -> list[tuple[str, str]]:
        return sorted(
            {
                (row.topology, row.profile)
                for row in self.rows
                if self.reports[(row.topology, row.profile)].verdict is not row.expect
            }
        )


def conjecture_sweep(
    topologies: Sequence[SweepCase],
    alphas: Sequence[float] = (0.5, 1.0, 2.0),
    counterexample_profiles: dict | None = None,
    sample_config: SampleConfig | None = None,
    solver_config: SolverConfig | None = None,
    extra_entries: Sequence[ProfileEntry] = (),
) -> SweepSummary:
    """Flow-scalability battery over arbitrary topologies.

    Alpha-fair profiles are expected to stay consistent and counterexample
    profiles to produce witnesses.  Outcomes on topologies without local
    traffic are empirical evidence only.
    """
    sample_config = sample_config or SampleConfig()
    solver_config = solver_config or SolverConfig()
    if counterexample_profiles is None:
        counterexample_profiles = default_counterexamples()
    entries = standard_entries(alphas, counterexample_profiles) + list(extra_entries)
    summary = SweepSummary()
    for case in topologies:
        local = has_local_traffic(case.topology)
        connected = is_connected(case.topology)
        for entry in [*entries, *case.entries]:
            profile = entry.build(case.topology.n_routes)
            report = check_flow_scalability(
                case.topology, profile, case.y, sample_config, solver_config
            )
            summary.reports[(case.name, entry.name)] = report
            for a, dev in report.deviations.items():
                summary.rows.append(
                    SweepRow(
                        case.name, entry.name, entry.expect, a, dev,
                        dev > _violation_threshold(solver_config), local, connected,
                    )
                )
    return summary
