import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isofair.topology import (
    DimensionMismatch,
    DuplicateId,
    EmptyRoute,
    Link,
    NonPositiveCapacity,
    NonPositiveScale,
    Route,
    TopologyError,
    UnknownLink,
    build_topology,
    classify_linear,
    has_local_traffic,
    is_connected,
    is_feasible,
    scale_capacity,
    subnetwork_mask,
    with_local_traffic,
)


def linear2(c1=1.0, c2=1.0):
    return build_topology(
        [("j1", c1), ("j2", c2)],
        [("r0", ["j1", "j2"]), ("r1", ["j1"]), ("r2", ["j2"])],
    )


@st.composite
def topologies(draw):
    n_links = draw(st.integers(1, 5))
    caps = draw(st.lists(st.floats(0.1, 10.0), min_size=n_links, max_size=n_links))
    n_routes = draw(st.integers(1, 6))
    routes = []
    for r in range(n_routes):
        members = draw(st.sets(st.integers(0, n_links - 1), min_size=1, max_size=n_links))
        routes.append((f"r{r}", [f"j{j}" for j in sorted(members)]))
    return build_topology([(f"j{j}", c) for j, c in enumerate(caps)], routes)


class TestBuild:
    def test_smallest_topology(self):
        topo = build_topology([("j", 1.0)], [("r", ["j"])])
        np.testing.assert_array_equal(topo.incidence, [[1]])

    def test_linear_incidence(self):
        np.testing.assert_array_equal(linear2().incidence, [[1, 1, 0], [1, 0, 1]])

    def test_input_order_is_kept(self):
        topo = build_topology([("b", 2.0), ("a", 1.0)], [("y", ["a"]), ("x", ["b"])])
        assert topo.link_ids == ["b", "a"]
        assert topo.route_ids == ["y", "x"]
        np.testing.assert_array_equal(topo.capacities, [2.0, 1.0])

    def test_accepts_objects_and_dicts(self):
        a = build_topology([Link("j", 1.0)], [Route("r", ("j",))])
        b = build_topology([{"id": "j", "capacity": 1}], [{"id": "r", "links": ["j"]}])
        assert a == b
        assert hash(a) == hash(b)

    def test_unknown_link(self):
        with pytest.raises(UnknownLink):
            build_topology([("j1", 1.0)], [("r", ["j9"])])

    def test_empty_route(self):
        with pytest.raises(EmptyRoute):
            build_topology([("j1", 1.0)], [("r", [])])

    @pytest.mark.parametrize("cap", [0.0, -1.0, float("nan"), float("inf")])
    def test_bad_capacity(self, cap):
        with pytest.raises(NonPositiveCapacity):
            build_topology([("j1", cap)], [("r", ["j1"])])

    def test_duplicates(self):
        with pytest.raises(DuplicateId):
            build_topology([("j", 1.0), ("j", 2.0)], [("r", ["j"])])
        with pytest.raises(DuplicateId):
            build_topology([("j", 1.0)], [("r", ["j"]), ("r", ["j"])])
        with pytest.raises(DuplicateId):
            build_topology([("j", 1.0)], [("r", ["j", "j"])])

    def test_needs_links_and_routes(self):
        with pytest.raises(TopologyError):
            build_topology([], [("r", ["j"])])
        with pytest.raises(TopologyError):
            build_topology([("j", 1.0)], [])

    def test_incidence_is_read_only(self):
        with pytest.raises(ValueError):
            linear2().incidence[0, 0] = 0

    @given(topologies())
    def test_incidence_sums(self, topo):
        for j, link in enumerate(topo.links):
            users = sum(link.id in route.links for route in topo.routes)
            assert topo.incidence[j].sum() == users
        for r, route in enumerate(topo.routes):
            assert topo.incidence[:, r].sum() == len(route.links)

    def test_bottleneck(self):
        np.testing.assert_array_equal(linear2(1.0, 3.0).route_bottleneck(), [1.0, 1.0, 3.0])


class TestFeasibility:
    def test_proportional_fair_point(self):
        assert is_feasible(linear2(), [1 / 3, 2 / 3, 2 / 3], 1e-9)

    def test_overloaded(self):
        assert not is_feasible(linear2(), [0.5, 0.6, 0.6], 1e-9)

    def test_negative_rate(self):
        assert not is_feasible(linear2(), [-1e-3, 0.0, 0.0], 1e-9)
        assert is_feasible(linear2(), [-1e-10, 0.0, 0.0], 1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            is_feasible(linear2(), [0.1, 0.1])

    def test_negative_tol(self):
        with pytest.raises(ValueError):
            is_feasible(linear2(), [0.0, 0.0, 0.0], -1.0)

    @given(topologies())
    def test_origin_feasible(self, topo):
        assert is_feasible(topo, np.zeros(topo.n_routes), 0.0)

    @settings(max_examples=200)
    @given(
        topologies(),
        st.floats(0.01, 100.0),
        st.lists(st.floats(0.0, 5.0), min_size=6, max_size=6),
    )
    def test_constraint_homogeneity(self, topo, a, raw):
        rates = np.array(raw[: topo.n_routes])
        tol = 1e-9
        assert is_feasible(scale_capacity(topo, a), a * rates, tol * a) == is_feasible(
            topo, rates, tol
        )


class TestScaleCapacity:
    def test_doubles(self):
        np.testing.assert_allclose(scale_capacity(linear2(), 2.0).capacities, [2.0, 2.0])

    def test_identity(self):
        assert scale_capacity(linear2(), 1.0) == linear2()

    def test_halves(self):
        np.testing.assert_allclose(scale_capacity(linear2(1, 3), 0.5).capacities, [0.5, 1.5])

    @pytest.mark.parametrize("a", [0.0, -2.0])
    def test_rejects_non_positive(self, a):
        with pytest.raises(NonPositiveScale):
            scale_capacity(linear2(), a)


class TestClassifiers:
    def test_linear(self):
        s = classify_linear(linear2())
        assert s is not None
        assert s.long_route == 0 and s.local_routes == (1, 2) and s.K == 2

    def test_linear_with_shuffled_routes(self):
        topo = build_topology(
            [("j1", 1.0), ("j2", 1.0), ("j3", 1.0)],
            [("b", ["j3"]), ("long", ["j1", "j2", "j3"]), ("a", ["j1"]), ("c", ["j2"])],
        )
        s = classify_linear(topo)
        assert s.long_route == 1 and s.local_routes == (2, 3, 0)

    def test_single_link_is_not_linear(self):
        topo = build_topology([("j", 1.0)], [("a", ["j"]), ("b", ["j"])])
        assert classify_linear(topo) is None

    def test_extra_local_route_breaks_linearity(self):
        topo = build_topology(
            [("j1", 1.0), ("j2", 1.0)],
            [("r0", ["j1", "j2"]), ("r1", ["j1"]), ("r2", ["j2"]), ("r3", ["j1"])],
        )
        assert classify_linear(topo) is None

    def test_local_traffic(self):
        assert has_local_traffic(linear2())
        two = build_topology([("j1", 1.0), ("j2", 1.0)], [("r", ["j1", "j2"])])
        assert not has_local_traffic(two)
        assert has_local_traffic(with_local_traffic(two))

    @given(topologies())
    def test_adding_local_routes(self, topo):
        assert has_local_traffic(with_local_traffic(topo))

    def test_connectivity(self):
        assert is_connected(linear2())
        split = build_topology([("j1", 1.0), ("j2", 1.0)], [("a", ["j1"]), ("b", ["j2"])])
        assert not is_connected(split)
        assert is_connected(build_topology([("j", 1.0)], [("r", ["j"])]))

    @given(topologies())
    def test_linear_implies_local_and_connected(self, topo):
        if classify_linear(topo) is not None:
            assert has_local_traffic(topo) and is_connected(topo)

    def test_subnetwork_mask(self):
        np.testing.assert_array_equal(subnetwork_mask(linear2(), ["r0", "r2"]), [True, False, True])
