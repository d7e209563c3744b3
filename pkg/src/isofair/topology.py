"""Link/route topologies, capacity constraints and structural classifiers.

A topology is a set of links with capacities and a set of routes, each route
being a set of links.  Everything downstream indexes vectors by the input
order of ``Topology.links`` and ``Topology.routes``.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np


class TopologyError(ValueError):
    """Base class for invalid topology input."""


class UnknownLink(TopologyError):
    pass


class EmptyRoute(TopologyError):
    pass


class NonPositiveCapacity(TopologyError):
    pass


class DuplicateId(TopologyError):
    pass


class DimensionMismatch(ValueError):
    pass


class NonPositiveScale(ValueError):
    pass


@dataclass(frozen=True)
class Link:
    id: str
    capacity: float

    def __post_init__(self):
        if not np.isfinite(self.capacity) or self.capacity <= 0:
            raise NonPositiveCapacity(
                f"link {self.id!r}: capacity must be positive, got {self.capacity}"
            )


@dataclass(frozen=True)
class Route:
    id: str
    links: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if not self.links:
            raise EmptyRoute(f"route {self.id!r} uses no links")
        if len(set(self.links)) != len(self.links):
            raise DuplicateId(f"route {self.id!r} lists a link more than once")


@dataclass(frozen=True, eq=False)
class Topology:
    """Immutable network topology.

    ``incidence[j, r] == 1`` iff route ``r`` uses link ``j``.  Build instances
    with :func:`build_topology`, which validates the input and derives the
    incidence matrix.
    """

    links: tuple[Link, ...]
    routes: tuple[Route, ...]
    incidence: np.ndarray = field(repr=False)

    @property
    def n_links(self) -> int:
        return len(self.links)

    @property
    def n_routes(self) -> int:
        return len(self.routes)

    @property
    def capacities(self) -> np.ndarray:
        return np.array([link.capacity for link in self.links], dtype=float)

    @property
    def link_ids(self) -> list[str]:
        return [link.id for link in self.links]

    @property
    def route_ids(self) -> list[str]:
        return [route.id for route in self.routes]

    def link_index(self, link_id: str) -> int:
        return self.link_ids.index(link_id)

    def route_index(self, route_id: str) -> int:
        return self.route_ids.index(route_id)

    def route_bottleneck(self) -> np.ndarray:
        """Smallest capacity along each route (upper bound on its rate)."""
        caps = self.capacities[:, None] * np.where(self.incidence > 0, 1.0, np.inf)
        return caps.min(axis=0)

    def load(self, rates) -> np.ndarray:
        return self.incidence @ _as_route_vector(self, rates)

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return self.links == other.links and self.routes == other.routes

    def __hash__(self):
        return hash((self.links, self.routes))


def _coerce_link(item) -> Link:
    if isinstance(item, Link):
        return item
    if isinstance(item, dict):
        return Link(str(item["id"]), float(item["capacity"]))
    link_id, capacity = item
    return Link(str(link_id), float(capacity))


def _coerce_route(item) -> Route:
    if isinstance(item, Route):
        return item
    if isinstance(item, dict):
        return Route(str(item["id"]), tuple(str(j) for j in item["links"]))
    route_id, links = item
    return Route(str(route_id), tuple(str(j) for j in links))


def build_topology(links: Iterable, routes: Iterable) -> Topology:
    """Validate links and routes and derive the link-route incidence matrix.

    ``links`` items may be :class:`Link`, ``(id, capacity)`` tuples or dicts;
    ``routes`` items may be :class:`Route`, ``(id, [link ids])`` or dicts.
    """
    links = tuple(_coerce_link(item) for item in links)
    routes = tuple(_coerce_route(item) for item in routes)
    if not links:
        raise TopologyError("topology needs at least one link")
    if not routes:
        raise TopologyError("topology needs at least one route")

    index = {}
    for j, link in enumerate(links):
        if link.id in index:
            raise DuplicateId(f"duplicate link id {link.id!r}")
        index[link.id] = j
    if len({route.id for route in routes}) != len(routes):
        raise DuplicateId("duplicate route id")

    incidence = np.zeros((len(links), len(routes)), dtype=np.int8)
    for r, route in enumerate(routes):
        for link_id in route.links:
            if link_id not in index:
                raise UnknownLink(f"route {route.id!r} references unknown link {link_id!r}")
            incidence[index[link_id], r] = 1
    incidence.setflags(write=False)
    return Topology(links, routes, incidence)


def _as_route_vector(topology: Topology, values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != (topology.n_routes,):
        raise DimensionMismatch(
            f"expected {topology.n_routes} route entries, got shape {arr.shape}"
        )
    return arr


def is_feasible(topology: Topology, allocation, tol: float = 1e-9) -> bool:
    """True iff ``A @ allocation <= C + tol`` and ``allocation >= -tol``."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    rates = _as_route_vector(topology, allocation)
    if np.any(rates < -tol):
        return False
    return bool(np.all(topology.incidence @ rates <= topology.capacities + tol))


def scale_capacity(topology: Topology, a: float) -> Topology:
    if not a > 0:
        raise NonPositiveScale(f"scale factor must be positive, got {a}")
    links = tuple(replace(link, capacity=link.capacity * a) for link in topology.links)
    return Topology(links, topology.routes, topology.incidence)


def with_local_traffic(topology: Topology, prefix: str = "local_") -> Topology:
    """Add a single-link route to every link that lacks one."""
    routes = list(topology.routes)
    for j, link in enumerate(topology.links):
        if not _has_local_route(topology, j):
            routes.append(Route(f"{prefix}{link.id}", (link.id,)))
    return build_topology(topology.links, routes)


@dataclass(frozen=True)
class LinearStructure:
    """Index view of a linear network.

    ``long_route`` crosses every link; ``local_routes[k]`` is the only route
    besides it on ``links[k]``.
    """

    long_route: int
    local_routes: tuple[int, ...]
    links: tuple[int, ...]

    @property
    def K(self) -> int:
        return len(self.links)


def classify_linear(topology: Topology) -> LinearStructure | None:
    A = topology.incidence
    K = topology.n_links
    if K < 2 or topology.n_routes != K + 1:
        return None
    route_sizes = A.sum(axis=0)
    long_routes = np.flatnonzero(route_sizes == K)
    if len(long_routes) != 1:
        return None
    long_route = int(long_routes[0])
    local = {}
    for r in range(topology.n_routes):
        if r == long_route:
            continue
        if route_sizes[r] != 1:
            return None
        j = int(np.flatnonzero(A[:, r])[0])
        if j in local:
            return None
        local[j] = r
    if len(local) != K:
        return None
    return LinearStructure(long_route, tuple(local[j] for j in range(K)), tuple(range(K)))


def _has_local_route(topology: Topology, j: int) -> bool:
    A = topology.incidence
    single = A.sum(axis=0) == 1
    return bool(np.any(single & (A[j] == 1)))


def has_local_traffic(topology: Topology) -> bool:
    return all(_has_local_route(topology, j) for j in range(topology.n_links))


def is_connected(topology: Topology) -> bool:
    """Connectivity of links through shared routes (link-route bipartite graph)."""
    A = topology.incidence.astype(bool)
    seen = np.zeros(topology.n_links, dtype=bool)
    seen[0] = True
    frontier = [0]
    while frontier:
        j = frontier.pop()
        for r in np.flatnonzero(A[j]):
            for l in np.flatnonzero(A[:, r]):
                if not seen[l]:
                    seen[l] = True
                    frontier.append(int(l))
    return bool(seen.all())


def subnetwork_mask(topology: Topology, route_ids: Sequence[str]) -> np.ndarray:
    """Boolean route mask, for zeroing populations outside a chosen subnetwork."""
    wanted = set(route_ids)
    return np.array([route.id in wanted for route in topology.routes])
