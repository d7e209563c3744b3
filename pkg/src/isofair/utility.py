"""Per-route utility functions and the network utility aggregator.

The weighted alpha-fair family is the iso-elastic one; ``Exponential`` and
``LogShifted`` are strictly concave, increasing, and deliberately not
iso-elastic, so they serve as counterexamples for the scaling checks.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import brentq


class NonPositiveArgument(ValueError):
    pass


class ZeroPopulation(ValueError):
    pass


class RateUndefined(ValueError):
    pass


# Near-log band where the 1/(1 - alpha) factor is badly conditioned.
NEAR_LOG_BAND = (0.999, 1.001)


def _check_domain(x, allow_zero: bool) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    bad = arr < 0 if allow_zero else arr <= 0
    if np.any(bad) or np.any(np.isnan(arr)):
        raise NonPositiveArgument(f"utility argument must be positive, got {x}")
    return arr


def _out(arr: np.ndarray):
    return float(arr) if arr.ndim == 0 else arr


class UtilitySpec:
    """Interface shared by the built-in utilities.

    Subclasses implement ``_value``, ``_deriv``, ``_second`` and
    ``_inverse_deriv`` on float arrays; the public methods validate the
    domain.  ``deriv_range`` is the open interval covered by ``deriv`` on
    ``(0, inf)``.
    """

    kind: str = "abstract"
    value_finite_at_zero = False
    deriv_finite_at_zero = False
    deriv_range: tuple[float, float] = (0.0, math.inf)

    def value(self, x):
        arr = _check_domain(x, self.value_finite_at_zero)
        with np.errstate(divide="ignore", over="ignore"):
            return _out(self._value(arr))

    def deriv(self, x):
        arr = _check_domain(x, self.deriv_finite_at_zero)
        with np.errstate(divide="ignore", over="ignore"):
            return _out(self._deriv(arr))

    def second_deriv(self, x):
        arr = _check_domain(x, self.deriv_finite_at_zero)
        with np.errstate(divide="ignore", over="ignore"):
            return _out(self._second(arr))

    def inverse_deriv(self, q):
        """Solve ``deriv(x) == q`` for x.

        Outside ``deriv_range`` the result is 0 (q too large) or ``inf``
        (q too small); callers clip it into their box.
        """
        q = np.asarray(q, dtype=float)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return _out(self._inverse_deriv(q))

    def is_alpha_fair(self) -> bool:
        return False

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class AlphaFair(UtilitySpec):
    """``w x^(1-alpha)/(1-alpha)``, or ``w log x`` when alpha is exactly 1."""

    alpha: float
    weight: float = 1.0

    kind = "alpha_fair"

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise ValueError(f"weight must be positive, got {self.weight}")

    @property
    def value_finite_at_zero(self):
        return self.alpha < 1

    def _value(self, x):
        if self.alpha == 1:
            return self.weight * np.log(x)
        return self.weight * x ** (1 - self.alpha) / (1 - self.alpha)

    def _deriv(self, x):
        return self.weight * x ** (-self.alpha)

    def _second(self, x):
        return -self.alpha * self.weight * x ** (-self.alpha - 1)

    def _inverse_deriv(self, q):
        return (self.weight / q) ** (1 / self.alpha)

    def is_alpha_fair(self) -> bool:
        return True

    @property
    def near_log(self) -> bool:
        lo, hi = NEAR_LOG_BAND
        return lo <= self.alpha <= hi and self.alpha != 1

    def to_dict(self):
        return {"kind": self.kind, "alpha": self.alpha, "weight": self.weight}


@dataclass(frozen=True)
class Exponential(UtilitySpec):
    """``-exp(-lam x)``: absolute (not relative) risk aversion is constant."""

    lam: float

    kind = "exponential"
    value_finite_at_zero = True
    deriv_finite_at_zero = True

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be positive, got {self.lam}")

    @property
    def deriv_range(self):
        return (0.0, self.lam)

    def _value(self, x):
        return -np.exp(-self.lam * x)

    def _deriv(self, x):
        return self.lam * np.exp(-self.lam * x)

    def _second(self, x):
        return -self.lam**2 * np.exp(-self.lam * x)

    def _inverse_deriv(self, q):
        x = -np.log(q / self.lam) / self.lam
        return np.where(q >= self.lam, 0.0, x)

    def to_dict(self):
        return {"kind": self.kind, "lambda": self.lam}


@dataclass(frozen=True)
class LogShifted(UtilitySpec):
    """``log(s + x)``."""

    shift: float

    kind = "log_shifted"
    value_finite_at_zero = True
    deriv_finite_at_zero = True

    def __post_init__(self):
        if not (self.shift > 0 and math.isfinite(self.shift)):
            raise ValueError(f"shift must be positive, got {self.shift}")

    @property
    def deriv_range(self):
        return (0.0, 1.0 / self.shift)

    def _value(self, x):
        return np.log(self.shift + x)

    def _deriv(self, x):
        return 1.0 / (self.shift + x)

    def _second(self, x):
        return -1.0 / (self.shift + x) ** 2

    def _inverse_deriv(self, q):
        return np.maximum(1.0 / q - self.shift, 0.0)

    def to_dict(self):
        return {"kind": self.kind, "shift": self.shift}


class CustomUtility(UtilitySpec):
    """Utility given by callables.

    Only the RRA profiler consumes these; the solver accepts them too but
    inverts the derivative by root bracketing, so supply an exact ``deriv``.
    ``second`` is optional.
    """

    kind = "custom"

    def __init__(
        self,
        value: Callable[[float], float],
        deriv: Callable[[float], float],
        second: Callable[[float], float] | None = None,
        name: str = "custom",
    ):
        self._value_fn = value
        self._deriv_fn = deriv
        self._second_fn = second
        self.name = name

    @property
    def has_second(self) -> bool:
        return self._second_fn is not None

    def _value(self, x):
        return np.vectorize(self._value_fn, otypes=[float])(x)

    def _deriv(self, x):
        return np.vectorize(self._deriv_fn, otypes=[float])(x)

    def _second(self, x):
        if self._second_fn is None:
            raise NotImplementedError(f"{self.name} has no analytic second derivative")
        return np.vectorize(self._second_fn, otypes=[float])(x)

    def _inverse_deriv(self, q):
        def solve(qi):
            if not qi > 0:
                return math.inf
            lo, hi = 1e-300, 1.0
            if self._deriv_fn(lo) <= qi:
                return 0.0
            while self._deriv_fn(hi) > qi:
                hi *= 2.0
                if hi > 1e300:
                    return math.inf
            return brentq(lambda t: self._deriv_fn(t) - qi, lo, hi, xtol=1e-300, rtol=1e-15)

        return np.vectorize(solve, otypes=[float])(q)

    def __repr__(self):
        return f"CustomUtility({self.name!r})"


def utility_from_dict(data: dict | None) -> UtilitySpec:
    if data is None:
        return AlphaFair(1.0, 1.0)
    kind = data.get("kind", "alpha_fair")
    if kind == "alpha_fair":
        return AlphaFair(float(data.get("alpha", 1.0)), float(data.get("weight", 1.0)))
    if kind == "exponential":
        return Exponential(float(data.get("lambda", 1.0)))
    if kind == "log_shifted":
        return LogShifted(float(data.get("shift", 1.0)))
    raise ValueError(f"unknown utility kind {kind!r}")


def utility_value(spec: UtilitySpec, x):
    return spec.value(x)


def utility_deriv(spec: UtilitySpec, x):
    return spec.deriv(x)


def utility_second_deriv(spec: UtilitySpec, x):
    return spec.second_deriv(x)


class Mode(str, Enum):
    AVERAGE = "average"
    AGGREGATE = "aggregate"


@dataclass(frozen=True)
class NetworkUtilityProfile:
    """One utility per route plus the aggregation mode.

    ``Mode.AVERAGE`` divides the flow-weighted sum by the total population,
    i.e. it is the utility of the average flow; ``Mode.AGGREGATE`` does not.
    """

    specs: tuple[UtilitySpec, ...]
    mode: Mode = Mode.AVERAGE

    def __post_init__(self):
        object.__setattr__(self, "specs", tuple(self.specs))
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.specs:
            raise ValueError("profile needs at least one route utility")

    @classmethod
    def uniform(cls, spec: UtilitySpec, n_routes: int, mode=Mode.AVERAGE):
        return cls((spec,) * n_routes, mode)

    @classmethod
    def alpha_fair(cls, alpha: float, weights: Sequence[float], mode=Mode.AVERAGE):
        return cls(tuple(AlphaFair(alpha, w) for w in weights), mode)

    def __len__(self):
        return len(self.specs)

    @property
    def uniform_alpha(self) -> float | None:
        """Common alpha when every route is alpha-fair with the same alpha."""
        if not all(isinstance(s, AlphaFair) for s in self.specs):
            return None
        alphas = {s.alpha for s in self.specs}
        return alphas.pop() if len(alphas) == 1 else None

    @property
    def weights(self) -> np.ndarray | None:
        if not all(isinstance(s, AlphaFair) for s in self.specs):
            return None
        return np.array([s.weight for s in self.specs])

    def conditioning_warnings(self) -> list[str]:
        return [
            f"route {r}: alpha={s.alpha} lies near 1; the 1/(1-alpha) factor is ill-conditioned"
            for r, s in enumerate(self.specs)
            if isinstance(s, AlphaFair) and s.near_log
        ]


def per_route_terms(profile: NetworkUtilityProfile, y, rates) -> np.ndarray:
    """``y_r U_r(rates_r / y_r)``, with zero for routes carrying no flows."""
    y = np.asarray(y, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if y.shape != (len(profile),) or rates.shape != (len(profile),):
        raise ValueError(
            f"profile has {len(profile)} routes, got y{y.shape} and rates{rates.shape}"
        )
    if np.any(y < 0):
        raise ValueError("flow counts must be non-negative")
    terms = np.zeros(len(profile))
    for r, spec in enumerate(profile.specs):
        if y[r] == 0:
            continue
        if rates[r] < 0:
            raise RateUndefined(f"route {r}: negative rate {rates[r]}")
        if rates[r] == 0 and not spec.value_finite_at_zero:
            raise RateUndefined(f"route {r}: zero rate with {y[r]} flows and unbounded utility")
        terms[r] = y[r] * spec.value(rates[r] / y[r])
    return terms


def network_utility(profile: NetworkUtilityProfile, y, rates) -> float:
    """Network utility of flow population ``y`` under allocation ``rates``.

    Each route's rate is shared equally among its flows.  Average mode
    returns the mean utility per flow, aggregate mode the total.
    """
    total = per_route_terms(profile, y, rates).sum()
    if profile.mode is Mode.AGGREGATE:
        return float(total)
    pop = float(np.sum(y))
    if pop <= 0:
        raise ZeroPopulation("average network utility needs at least one flow")
    return float(total / pop)
