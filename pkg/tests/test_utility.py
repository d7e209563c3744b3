import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isofair.utility import (
    AlphaFair,
    CustomUtility,
    Exponential,
    LogShifted,
    Mode,
    NetworkUtilityProfile,
    NonPositiveArgument,
    RateUndefined,
    ZeroPopulation,
    network_utility,
    per_route_terms,
    utility_deriv,
    utility_from_dict,
    utility_second_deriv,
    utility_value,
)

BUILTINS = [
    AlphaFair(0.5),
    AlphaFair(1.0, 3.0),
    AlphaFair(2.0, 0.7),
    AlphaFair(5.0),
    Exponential(1.0),
    Exponential(0.3),
    LogShifted(1.0),
    LogShifted(0.2),
]

xs = st.floats(0.01, 100.0)


class TestValues:
    def test_log_at_one(self):
        assert utility_value(AlphaFair(1.0, 1.0), 1.0) == 0.0

    def test_power_at_one(self):
        assert utility_value(AlphaFair(3.0, 2.0), 1.0) == pytest.approx(-1.0)

    def test_tcp_at_half(self):
        assert utility_value(AlphaFair(2.0, 1.0), 0.5) == pytest.approx(-2.0)

    def test_derivatives(self):
        assert utility_deriv(AlphaFair(2.0), 2.0) == pytest.approx(0.25)
        assert utility_deriv(AlphaFair(1.0, 3.0), 2.0) == pytest.approx(1.5)
        assert utility_second_deriv(AlphaFair(1.0, 3.0), 2.0) == pytest.approx(-0.75)

    def test_exponential_slope_at_zero(self):
        assert utility_deriv(Exponential(1.0), 0.0) == 1.0
        assert utility_deriv(Exponential(1.0), 1e-300) == pytest.approx(1.0)

    def test_exact_log_branch(self):
        alpha = 1.0 + 1e-12
        near = AlphaFair(alpha)
        assert near.near_log and not AlphaFair(1.0).near_log
        # no blending: the power branch is used right next to 1
        x = 2.0
        assert utility_value(near, x) == pytest.approx(x ** (1 - alpha) / (1 - alpha))

    def test_vectorized(self):
        out = AlphaFair(2.0).value(np.array([0.5, 1.0, 2.0]))
        np.testing.assert_allclose(out, [-2.0, -1.0, -0.5])

    @pytest.mark.parametrize("spec", [AlphaFair(1.0), AlphaFair(2.0)])
    def test_rejects_zero(self, spec):
        with pytest.raises(NonPositiveArgument):
            spec.value(0.0)
        with pytest.raises(NonPositiveArgument):
            spec.deriv(-1.0)

    def test_finite_at_zero(self):
        assert AlphaFair(0.5).value(0.0) == 0.0
        assert Exponential(2.0).value(0.0) == -1.0
        assert LogShifted(1.0).value(0.0) == 0.0

    @pytest.mark.parametrize("bad", [0.0, -1.0, float("inf")])
    def test_parameter_validation(self, bad):
        with pytest.raises(ValueError):
            AlphaFair(bad)
        with pytest.raises(ValueError):
            AlphaFair(1.0, bad)
        with pytest.raises(ValueError):
            Exponential(bad)
        with pytest.raises(ValueError):
            LogShifted(bad)


class TestShape:
    @pytest.mark.parametrize("spec", BUILTINS, ids=repr)
    @given(x=xs)
    def test_increasing_concave(self, spec, x):
        assert spec.deriv(x) > 0
        assert spec.second_deriv(x) < 0

    @pytest.mark.parametrize("spec", BUILTINS, ids=repr)
    @given(x1=xs, x2=xs)
    def test_midpoint_concavity(self, spec, x1, x2):
        mid = spec.value(0.5 * (x1 + x2))
        assert mid >= 0.5 * (spec.value(x1) + spec.value(x2)) - 1e-12 * max(1.0, abs(mid))

    @pytest.mark.parametrize("spec", BUILTINS, ids=repr)
    @given(x=xs)
    def test_first_derivative_matches_differences(self, spec, x):
        h = 1e-5 * x
        fd = (spec.value(x + h) - spec.value(x - h)) / (2 * h)
        d = spec.deriv(x)
        # cancellation in value differences bounds the attainable accuracy
        floor = 1e-10 * max(abs(spec.value(x)), 1.0) / h
        assert abs(fd - d) <= 1e-6 * abs(d) + floor

    @pytest.mark.parametrize("spec", BUILTINS, ids=repr)
    @given(x=xs)
    def test_second_derivative_matches_differences(self, spec, x):
        h = 1e-5 * x
        fd = (spec.deriv(x + h) - spec.deriv(x - h)) / (2 * h)
        d2 = spec.second_deriv(x)
        floor = 1e-12 * abs(spec.deriv(x)) / h
        assert abs(fd - d2) <= 1e-4 * abs(d2) + floor

    @pytest.mark.parametrize("spec", BUILTINS, ids=repr)
    @given(x=st.floats(1e-3, 100.0))
    def test_inverse_derivative(self, spec, x):
        q = spec.deriv(x)
        assert spec.inverse_deriv(q) == pytest.approx(x, rel=1e-9)

    def test_inverse_outside_range(self):
        assert Exponential(2.0).inverse_deriv(3.0) == 0.0
        assert LogShifted(1.0).inverse_deriv(2.0) == 0.0
        assert AlphaFair(2.0).inverse_deriv(0.0) == math.inf


class TestCustom:
    def test_matches_builtin(self):
        ref = AlphaFair(2.0, 1.5)
        custom = CustomUtility(ref.value, ref.deriv, ref.second_deriv, name="tcp")
        x = np.geomspace(0.1, 10, 7)
        np.testing.assert_allclose(custom.value(x), ref.value(x))
        np.testing.assert_allclose(custom.inverse_deriv(ref.deriv(x)), x, rtol=1e-12)

    def test_missing_second(self):
        custom = CustomUtility(math.log, lambda x: 1 / x)
        assert not custom.has_second
        with pytest.raises(NotImplementedError):
            custom.second_deriv(1.0)


class TestSerialization:
    @pytest.mark.parametrize("spec", BUILTINS, ids=repr)
    def test_round_trip(self, spec):
        assert utility_from_dict(spec.to_dict()) == spec

    def test_default(self):
        assert utility_from_dict(None) == AlphaFair(1.0, 1.0)
        assert utility_from_dict({}) == AlphaFair(1.0, 1.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            utility_from_dict({"kind": "cubic"})


class TestNetworkUtility:
    def test_single_route(self):
        prof = NetworkUtilityProfile.uniform(AlphaFair(1.0), 1)
        assert network_utility(prof, [1.0], [2.0]) == pytest.approx(math.log(2))

    def test_two_equal_terms(self):
        prof = NetworkUtilityProfile.uniform(AlphaFair(1.0), 2)
        assert network_utility(prof, [1.0, 1.0], [2.0, 2.0]) == pytest.approx(math.log(2))

    def test_empty_route_dropped(self):
        prof = NetworkUtilityProfile.uniform(AlphaFair(1.0), 2)
        assert network_utility(prof, [2.0, 0.0], [4.0, 0.0]) == pytest.approx(math.log(2))

    def test_aggregate_mode(self):
        prof = NetworkUtilityProfile.uniform(AlphaFair(1.0), 2, Mode.AGGREGATE)
        assert network_utility(prof, [2.0, 0.0], [4.0, 0.0]) == pytest.approx(2 * math.log(2))

    def test_zero_population(self):
        prof = NetworkUtilityProfile.uniform(AlphaFair(1.0), 2)
        with pytest.raises(ZeroPopulation):
            network_utility(prof, [0.0, 0.0], [1.0, 1.0])

    def test_rate_undefined(self):
        prof = NetworkUtilityProfile.uniform(AlphaFair(1.0), 2)
        with pytest.raises(RateUndefined):
            network_utility(prof, [1.0, 1.0], [1.0, 0.0])
        # bounded utilities accept a zero rate
        bounded = NetworkUtilityProfile.uniform(Exponential(1.0), 2)
        assert network_utility(bounded, [1.0, 1.0], [1.0, 0.0]) == pytest.approx(
            0.5 * (-math.exp(-1.0) - 1.0)
        )

    def test_shape_mismatch(self):
        prof = NetworkUtilityProfile.uniform(AlphaFair(1.0), 2)
        with pytest.raises(ValueError):
            per_route_terms(prof, [1.0], [1.0, 1.0])

    def test_profile_helpers(self):
        prof = NetworkUtilityProfile.alpha_fair(2.0, [1.0, 3.0])
        assert prof.uniform_alpha == 2.0
        np.testing.assert_array_equal(prof.weights, [1.0, 3.0])
        mixed = NetworkUtilityProfile((AlphaFair(1.0), AlphaFair(2.0)))
        assert mixed.uniform_alpha is None
        assert NetworkUtilityProfile((Exponential(1.0),)).weights is None

    def test_conditioning_warning(self):
        prof = NetworkUtilityProfile((AlphaFair(1.0005), AlphaFair(1.0)))
        notes = prof.conditioning_warnings()
        assert len(notes) == 1 and "route 0" in notes[0]


state = st.integers(1, 4).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(0.1, 50.0), min_size=n, max_size=n),
        st.lists(st.floats(0.05, 20.0), min_size=n, max_size=n),
        st.lists(st.floats(0.2, 5.0), min_size=n, max_size=n),
    )
)
scales = st.sampled_from([0.1, 0.5, 2.0, 10.0]) | st.floats(0.05, 20.0)


class TestHomogeneity:
    @settings(max_examples=300)
    @given(state, scales, st.sampled_from([0.5, 2.0, 5.0]))
    def test_rate_scaling_power(self, st_, a, alpha):
        y, lam, w = map(np.array, st_)
        prof = NetworkUtilityProfile.alpha_fair(alpha, w)
        lhs = network_utility(prof, y, a * lam)
        rhs = a ** (1 - alpha) * network_utility(prof, y, lam)
        assert lhs == pytest.approx(rhs, rel=1e-9)

    @settings(max_examples=300)
    @given(state, scales)
    def test_rate_scaling_log(self, st_, a):
        y, lam, w = map(np.array, st_)
        prof = NetworkUtilityProfile.alpha_fair(1.0, w)
        shift = np.dot(w, y) / y.sum() * math.log(a)
        lhs = network_utility(prof, y, a * lam)
        assert lhs == pytest.approx(network_utility(prof, y, lam) + shift, abs=1e-9)

    @settings(max_examples=300)
    @given(state, scales, st.sampled_from([0.5, 2.0, 5.0]))
    def test_population_scaling_power(self, st_, a, alpha):
        y, lam, w = map(np.array, st_)
        prof = NetworkUtilityProfile.alpha_fair(alpha, w)
        lhs = network_utility(prof, a * y, lam)
        rhs = a ** (alpha - 1) * network_utility(prof, y, lam)
        assert lhs == pytest.approx(rhs, rel=1e-9)

    @settings(max_examples=300)
    @given(state, scales)
    def test_population_scaling_log(self, st_, a):
        y, lam, w = map(np.array, st_)
        prof = NetworkUtilityProfile.alpha_fair(1.0, w)
        shift = np.dot(w, y) / y.sum() * math.log(a)
        lhs = network_utility(prof, a * y, lam)
        assert lhs == pytest.approx(network_utility(prof, y, lam) - shift, abs=1e-9)

    def test_exponential_breaks_identity(self):
        prof = NetworkUtilityProfile.uniform(Exponential(1.0), 2)
        rng = np.random.default_rng(0)
        ratios = set()
        for _ in range(20):
            y = rng.uniform(0.1, 5, 2)
            lam = rng.uniform(0.1, 5, 2)
            ratios.add(round(network_utility(prof, y, 2 * lam) / network_utility(prof, y, lam), 9))
        assert len(ratios) > 1
