"""Network utility maximization.

``solve_num`` works on link prices: given prices ``p`` each route picks its
rate from ``U_r'(rate_r / y_r) = sum_j A_jr p_j`` (clipped to the route's
rate box), and the prices are driven to minimize the dual function.  The
default ``method="newton"`` warm-starts the prices from a primal log-barrier
path, refines them by Newton on the KKT equations of the detected active set,
and falls back to projected Newton on the dual when that does not certify.
``method="subgradient"`` runs diminishing ``c / sqrt(t)`` steps with price
averaging instead.

Prices are in aggregate units, i.e. they equal the marginal per-flow
utility; divide by ``sum(y)`` for multipliers of the average objective.  The
maximizer itself does not depend on the mode.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .topology import LinearStructure, Topology
from .utility import NetworkUtilityProfile, network_utility


class NotConverged(RuntimeWarning):
    """Solver stopped with residual above tolerance; result carries the best iterate."""


class InfeasiblePopulation(ValueError):
    pass


class NotBracketed(ValueError):
    pass


class TooManyRoutes(ValueError):
    pass


class EmptyCandidateSet(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    primal_tol: float = 1e-8
    kkt_tol: float = 1e-6
    max_iters: int = 200_000
    step_c: float = 0.1
    interior_floor: float = 1e-12
    method: str = "newton"

    def __post_init__(self):
        if not (self.primal_tol > 0 and self.kkt_tol > 0 and self.interior_floor > 0):
            raise ValueError("solver tolerances must be positive")
        if self.step_c <= 0:
            raise ValueError("step constant must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.method not in ("newton", "subgradient"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class SolveResult:
    allocation: np.ndarray
    link_prices: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float
    saturated_links: frozenset
    converged: bool
    primal_violation: float
    route_ids: list = field(default_factory=list)
    link_ids: list = field(default_factory=list)
    loads: np.ndarray | None = None
    warnings: list = field(default_factory=list)


class _Dual:
    """Price-to-rate map and dual function restricted to routes with flows."""

    def __init__(self, topology: Topology, profile: NetworkUtilityProfile, y, floor):
        self.y_full = y
        self.active = np.flatnonzero(y > 0)
        self.A = topology.incidence[:, self.active].astype(float)
        self.C = topology.capacities
        self.y = y[self.active]
        self.specs = [profile.specs[r] for r in self.active]
        bottleneck = topology.route_bottleneck()[self.active]
        if np.any(bottleneck <= floor):
            bad = [topology.routes[r].id for r in self.active[bottleneck <= floor]]
            raise InfeasiblePopulation(f"routes {bad} carry flows but have no capacity")
        self.lo = floor / self.y
        self.hi = bottleneck / self.y
        groups: dict = {}
        for i, spec in enumerate(self.specs):
            groups.setdefault(spec, []).append(i)
        self.groups = [(spec, np.array(idx)) for spec, idx in groups.items()]

    def apply(self, method: str, x):
        """Evaluate ``spec.<method>`` route-wise, one vectorized call per distinct spec."""
        x = np.asarray(x, dtype=float)
        out = np.empty(len(x))
        for spec, idx in self.groups:
            out[idx] = getattr(spec, method)(x[idx])
        return out

    def rates(self, p):
        q = self.A.T @ p
        x = self.apply("inverse_deriv", q)
        x = np.clip(np.nan_to_num(x, nan=0.0, posinf=np.inf), self.lo, self.hi)
        return q, x

    def curvature(self, x):
        """``-d rate / d price`` per route, zero where the rate sits on its box.

        Also returns the curvature the route would have at its clamp point,
        used to keep steps finite on links whose routes are all clamped.
        """
        interior = (x > self.lo) & (x < self.hi)
        with np.errstate(divide="ignore"):
            pseudo = -self.y / self.apply("second_deriv", x)
        pseudo = np.nan_to_num(pseudo, nan=0.0, posinf=0.0)
        return np.where(interior, pseudo, 0.0), pseudo

    def value(self, p, q, x):
        u = float(np.dot(self.y, self.apply("value", x)))
        return u - float(np.dot(q, self.y * x)) + float(np.dot(p, self.C))

    def residuals(self, p, q, x):
        load = self.A @ (self.y * x)
        violation = max(0.0, float(np.max(load - self.C)))
        marg = self.apply("deriv", x)
        scale = np.maximum(np.maximum(marg, q), 1e-300)
        gap = (marg - q) / scale
        at_lo = x <= self.lo
        at_hi = x >= self.hi
        gap = np.where(at_lo, np.maximum(gap, 0.0), gap)
        gap = np.where(at_hi, np.minimum(gap, 0.0), gap)
        stationarity = float(np.max(np.abs(gap))) if len(gap) else 0.0
        priced = p > 1e-12 * max(1.0, float(np.max(p)))
        slack = float(np.max(np.abs(self.C - load)[priced])) if priced.any() else 0.0
        return load, violation, max(stationarity, slack, violation)


def _initial_prices(dual: _Dual) -> np.ndarray:
    p = np.zeros(len(dual.C))
    counts = dual.A.sum(axis=0)
    for j in range(len(p)):
        on = np.flatnonzero(dual.A[j] > 0)
        if not len(on):
            continue
        share = dual.C[j] / dual.y[on].sum()
        marg = [dual.specs[i].deriv(share) / counts[i] for i in on]
        p[j] = float(np.mean(marg))
    return p


def _barrier_path(dual: _Dual, rel_gap: float = 1e-10, max_outer: int = 30, factor: float = 10.0):
    """Primal log-barrier path; returns route rates and link prices.

    Minimizes ``-t * sum_r y_r U_r(rate_r / y_r) - sum_j log(slack_j) -
    sum_r log(rate_r)`` by damped Newton for increasing ``t`` until the
    barrier gap ``(links + routes) / t`` is ``rel_gap`` times the priced
    capacity.  The multipliers ``1 / (t * slack_j)`` approximate the optimal
    prices.
    """
    A, C, y = dual.A, dual.C, dual.y
    per_link = np.maximum(A.sum(axis=1), 1.0)
    lam = 0.5 * np.where(A > 0, (C / per_link)[:, None], np.inf).min(axis=0)
    m = A.shape[0] + A.shape[1]

    def merit(t, lam):
        slack = C - A @ lam
        if np.any(slack <= 0) or np.any(lam <= 0):
            return np.inf
        u = float(np.dot(y, dual.apply("value", lam / y)))
        return -t * u - np.log(slack).sum() - np.log(lam).sum()

    t = float(np.median(1.0 / (lam * dual.apply("deriv", lam / y))))
    for _ in range(max_outer):
        for _ in range(100):
            x = lam / y
            du, d2 = dual.apply("deriv", x), dual.apply("second_deriv", x) / y
            slack = C - A @ lam
            grad = -t * du + A.T @ (1.0 / slack) - 1.0 / lam
            hess = np.diag(-t * d2 + 1.0 / lam**2) + (A.T * (1.0 / slack**2)) @ A
            try:
                step = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
            decrement = -float(grad @ step)
            if not np.isfinite(decrement) or decrement <= 1e-10:
                break
            base, s = merit(t, lam), 1.0
            while s > 1e-20:
                cand = lam + s * step
                if merit(t, cand) <= base - 0.25 * s * decrement:
                    break
                s *= 0.5
            else:
                break
            lam = cand
        p = 1.0 / (t * (C - A @ lam))
        if m / t <= rel_gap * float(np.dot(p, C)):
            break
        t *= factor
    return lam, p


def _polish(dual: _Dual, lam, p, iters: int = 50):
    """Newton on the KKT equations of the active set guessed from ``lam``.

    Links with relative slack below 1e-6 are held at capacity, routes with a
    finite marginal utility at zero and a negligible rate are held at the
    floor; the remaining rates and the held links' prices solve
    ``U_r'(rate_r / y_r) = (A^T p)_r`` and ``A rate = C``.  Returns prices.
    """
    A, C, y = dual.A, dual.C, dual.y
    held = (C - A @ lam) <= 1e-6 * C
    finite0 = np.array([s.deriv_finite_at_zero for s in dual.specs], dtype=bool)
    fixed = finite0 & (lam <= 1e-6 * dual.hi * y)
    free = ~fixed
    lam = np.where(fixed, dual.lo * y, lam)
    As = A[held]
    ps = p[held].copy()
    if not held.any():
        return np.zeros(len(C))
    for _ in range(iters):
        x = lam / y
        q = As.T @ ps
        du = dual.apply("deriv", x)
        scale = np.maximum(np.abs(du), 1e-300)
        r_stat = ((du - q) / scale)[free]
        r_cap = (C[held] - As @ lam) / C[held]
        if max(np.max(np.abs(r_stat), initial=0.0), np.max(np.abs(r_cap))) <= 1e-15:
            break
        d2 = dual.apply("second_deriv", x) / y
        nf, ns = int(free.sum()), int(held.sum())
        J = np.zeros((nf + ns, nf + ns))
        J[:nf, :nf] = np.diag((d2 / scale)[free])
        # unknowns scaled by their magnitude so lstsq does not truncate them
        pscale = np.maximum(ps, 1e-12 * max(float(ps.max()), 1e-300))
        lscale = lam[free]
        J[:nf, nf:] = -(As.T / scale[:, None])[free] * pscale
        J[nf:, :nf] = -(As / C[held][:, None])[:, free] * lscale
        J[:nf, :nf] = J[:nf, :nf] * lscale
        step = -np.linalg.lstsq(J, np.concatenate([r_stat, r_cap]), rcond=1e-13)[0]
        if not np.all(np.isfinite(step)):
            break
        dl, dp = step[:nf] * lscale, step[nf:] * pscale
        s = 1.0
        lf = lam[free]
        while np.any(lf + s * dl <= 0) and s > 1e-12:
            s *= 0.5
        lam = lam.copy()
        lam[free] = lf + s * dl
        ps = ps + s * dp
    out = np.zeros(len(C))
    out[held] = np.maximum(ps, 0.0)
    return out


def _projected_gradient_norm(p, g):
    return float(np.linalg.norm(p - np.maximum(p - g, 0.0)))


def _newton_direction(dual: _Dual, g, free, h):
    d = np.zeros_like(g)
    if free.any():
        Af = dual.A[free]
        H = (Af * h) @ Af.T
        # minimum-norm step: rank-deficient incidence leaves H singular
        d[free] = -np.linalg.lstsq(H, g[free], rcond=1e-12)[0]
    return d


def _line_search(dual: _Dual, p, q, x, g, d):
    base = dual.value(p, q, x)
    pg = _projected_gradient_norm(p, g)
    step = 1.0
    while step > 1e-30:
        p_new = np.maximum(p + step * d, 0.0)
        q_new, x_new = dual.rates(p_new)
        drop = dual.value(p_new, q_new, x_new) - base
        if drop < 0 and drop <= 1e-4 * float(np.dot(g, p_new - p)):
            return p_new
        g_new = dual.C - dual.A @ (dual.y * x_new)
        if _projected_gradient_norm(p_new, g_new) < (1 - 1e-4) * pg:
            return p_new
        step *= 0.5
    return None


def _newton(dual: _Dual, config: SolverConfig, p=None):
    """Projected Newton on the dual function.

    Candidate directions, tried in order until one passes the line search:
    Newton with the exact curvature (zero for routes clamped to their rate
    box), Newton with clamped routes treated as free, and a diagonally
    scaled gradient step.
    """
    p = _initial_prices(dual) if p is None else p
    target = min(config.kkt_tol, config.primal_tol) * 1e-4
    it = 0
    for it in range(1, config.max_iters + 1):
        q, x = dual.rates(p)
        _, _, res = dual.residuals(p, q, x)
        if res <= target:
            break
        g = dual.C - dual.A @ (dual.y * x)
        free = ~((p <= 0) & (g > 0))
        h, pseudo = dual.curvature(x)
        relaxed = np.where(h > 0, h, pseudo)
        candidates = (
            lambda: _newton_direction(dual, g, free, h),
            lambda: _newton_direction(dual, g, free, relaxed),
            lambda: -g / np.maximum(dual.A @ relaxed, 1e-300),
        )
        p_new = None
        for make in candidates:
            d = make()
            if np.all(np.isfinite(d)) and float(np.dot(g, d)) < 0:
                p_new = _line_search(dual, p, q, x, g, d)
                if p_new is not None:
                    break
        if p_new is None:
            break
        p = p_new
    return p, it


def _subgradient(dual: _Dual, config: SolverConfig):
    p = _initial_prices(dual)
    history = []
    avg = p
    for t in range(1, config.max_iters + 1):
        _, x = dual.rates(p)
        g = dual.C - dual.A @ (dual.y * x)
        p = np.maximum(p - config.step_c / math.sqrt(t) * g, 0.0)
        history.append(p)
        if t % 1000 == 0 or t == config.max_iters:
            avg = np.mean(history[int(0.9 * t):], axis=0)
            q, x = dual.rates(avg)
            _, violation, res = dual.residuals(avg, q, x)
            if res <= config.kkt_tol and violation <= config.primal_tol:
                return avg, t
    return avg, config.max_iters


def solve_num(
    topology: Topology,
    profile: NetworkUtilityProfile,
    y,
    config: SolverConfig | None = None,
) -> SolveResult:
    """Maximize network utility over the capacity polytope.

    Routes without flows get rate 0.  On non-convergence the returned
    allocation is scaled back into the feasible set, ``converged`` is False
    and a :class:`NotConverged` warning is issued.
    """
    config = config or SolverConfig()
    y = np.asarray(y, dtype=float)
    if y.shape != (topology.n_routes,) or len(profile) != topology.n_routes:
        raise ValueError("flow population and profile must match the topology's routes")
    if np.any(y < 0) or not np.any(y > 0):
        raise ValueError("flow population must be non-negative with at least one flow")

    dual = _Dual(topology, profile, y, config.interior_floor)
    if config.method == "newton":
        lam, p_bar = _barrier_path(dual)
        p_act, iters = _polish(dual, lam, p_bar), 1
        q, x = dual.rates(p_act)
        _, violation, res = dual.residuals(p_act, q, x)
        if res > config.kkt_tol or violation > config.primal_tol:
            p_act, iters = _newton(dual, config, p_bar)
    else:
        p_act, iters = _subgradient(dual, config)

    q, x = dual.rates(p_act)
    load, violation, res = dual.residuals(p_act, q, x)
    rates = np.zeros(topology.n_routes)
    rates[dual.active] = dual.y * x
    converged = res <= config.kkt_tol and violation <= config.primal_tol
    notes = profile.conditioning_warnings()
    if not converged:
        warnings.warn(
            f"NUM solve stopped after {iters} iterations with residual {res:.3g}",
            NotConverged,
            stacklevel=2,
        )
        notes.append(f"not converged: residual {res:.3g}")
        if violation > config.primal_tol:
            full_load = topology.incidence @ rates
            factor = np.minimum(1.0, topology.capacities / np.maximum(full_load, 1e-300))
            per_route = np.where(topology.incidence > 0, factor[:, None], 1.0).min(axis=0)
            rates = rates * per_route

    load = topology.incidence @ rates
    violation = max(0.0, float(np.max(load - topology.capacities)))
    saturated = frozenset(
        link.id
        for link, l in zip(topology.links, load)
        if l >= link.capacity - 10 * config.primal_tol
    )
    return SolveResult(
        allocation=rates,
        link_prices=p_act,
        objective=network_utility(profile, y, rates),
        iterations=iters,
        kkt_residual=res,
        saturated_links=saturated,
        converged=converged,
        primal_violation=violation,
        route_ids=topology.route_ids,
        link_ids=topology.link_ids,
        loads=load,
        warnings=notes,
    )


def linear_residual(structure: LinearStructure, profile, y, rates) -> float:
    """Long-route marginal utility minus the sum over local routes."""
    y = np.asarray(y, dtype=float)
    rates = np.asarray(rates, dtype=float)
    r0 = structure.long_route
    long_marginal = profile.specs[r0].deriv(rates[r0] / y[r0])
    local = sum(profile.specs[r].deriv(rates[r] / y[r]) for r in structure.local_routes)
    return float(long_marginal - local)


def solve_linear_network(
    structure: LinearStructure,
    capacities,
    profile: NetworkUtilityProfile,
    y,
    tol: float = 1e-10,
    interior_floor: float = 1e-12,
) -> np.ndarray:
    """Optimal allocation on a linear network by bisection on the long route's rate.

    At the optimum every link is saturated, so the local rates are the
    capacities minus the long-route rate, and the long route's marginal
    utility equals the sum of the local ones.
    """
    y = np.asarray(y, dtype=float)
    C = np.asarray(capacities, dtype=float)[list(structure.links)]
    r0 = structure.long_route
    locals_ = list(structure.local_routes)
    if np.any(y[[r0, *locals_]] <= 0):
        raise ValueError("linear-network bisection needs flows on every route")
    spec0 = profile.specs[r0]
    local_specs = [profile.specs[r] for r in locals_]

    def residual(l0):
        return spec0.deriv(l0 / y[r0]) - sum(
            s.deriv((c - l0) / y[r]) for s, c, r in zip(local_specs, C, locals_)
        )

    lo, hi = interior_floor, float(C.min()) - interior_floor
    g_lo, g_hi = residual(lo), residual(hi)
    if abs(g_lo) <= tol:
        mid = lo
    elif abs(g_hi) <= tol:
        mid = hi
    elif not (g_lo > 0 > g_hi):
        raise NotBracketed(
            f"residual does not change sign on [{lo:g}, {hi:g}]: {g_lo:g}, {g_hi:g}; "
            "marginal utilities must cover (0, inf)"
        )
    else:
        while True:
            mid = 0.5 * (lo + hi)
            g = residual(mid)
            if abs(g) <= tol or mid in (lo, hi):
                break
            if g > 0:
                lo = mid
            else:
                hi = mid

    rates = np.zeros(len(y))
    rates[r0] = mid
    rates[locals_] = C - mid
    return rates


def brute_force(topology: Topology, profile: NetworkUtilityProfile, y, resolution: float):
    """Exhaustive grid search over the capacity polytope (at most three routes).

    The grid for route r is ``k * resolution`` up to its bottleneck capacity;
    routes without flows are pinned to 0.  The innermost coordinate is
    searched through a running maximum over its grid, which visits every
    feasible point without materializing the full product.  Ties go to the
    lexicographically smallest rate vector.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    if topology.n_routes > 3:
        raise TooManyRoutes(f"brute force supports at most 3 routes, got {topology.n_routes}")
    y = np.asarray(y, dtype=float)
    bottleneck = topology.route_bottleneck()
    C = topology.capacities
    A = topology.incidence.astype(float)
    eps = 1e-12 * float(C.max())

    grids, values = [], []
    for r, spec in enumerate(profile.specs):
        if y[r] == 0:
            grids.append(np.zeros(1))
            values.append(np.zeros(1))
            continue
        n = int(math.floor(bottleneck[r] / resolution + 1e-9)) + 1
        grid = np.arange(n) * resolution
        vals = np.full(n, -np.inf)
        if spec.value_finite_at_zero:
            vals[0] = y[r] * spec.value(0.0)
        if n > 1:
            vals[1:] = y[r] * spec.value(grid[1:] / y[r])
        grids.append(grid)
        values.append(vals)

    last = topology.n_routes - 1
    prefix_val = np.maximum.accumulate(values[last])
    # first index attaining each running maximum
    improved = np.r_[True, values[last][1:] > prefix_val[:-1]]
    prefix_idx = np.maximum.accumulate(np.where(improved, np.arange(len(prefix_val)), 0))

    if last == 0:
        outer = np.zeros((0, 1))
        outer_val = np.zeros(1)
        outer_load = np.zeros((topology.n_links, 1))
    else:
        mesh = np.meshgrid(*grids[:last], indexing="ij")
        outer = np.stack([m.ravel() for m in mesh])
        vmesh = np.meshgrid(*values[:last], indexing="ij")
        outer_val = sum(v.ravel() for v in vmesh)
        outer_load = A[:, :last] @ outer

    room = np.where(A[:, last:last + 1] > 0, C[:, None] - outer_load, np.inf).min(axis=0)
    feasible = np.all(outer_load <= C[:, None] + eps, axis=0) & (room >= -eps)
    k = np.floor(np.maximum(room, 0.0) / resolution + 1e-9).astype(np.int64)
    k = np.minimum(k, len(prefix_val) - 1)
    total = np.where(feasible, outer_val + prefix_val[k], -np.inf)
    best = int(np.argmax(total))
    if not np.isfinite(total[best]):
        raise ValueError("no grid point has finite utility; refine the resolution")

    rates = np.empty(topology.n_routes)
    rates[:last] = outer[:, best]
    rates[last] = grids[last][prefix_idx[k[best]]]
    return rates


def solve_max_min(topology: Topology, y) -> np.ndarray:
    """Max-min fair allocation of per-flow rates by progressive filling."""
    y = np.asarray(y, dtype=float)
    if y.shape != (topology.n_routes,) or np.any(y < 0):
        raise ValueError("flow population must be non-negative and match the routes")
    A = topology.incidence.astype(float)
    C = topology.capacities
    rates = np.zeros(topology.n_routes)
    frozen = y == 0
    while not frozen.all():
        demand = A[:, ~frozen] @ y[~frozen]
        used = A[:, frozen] @ rates[frozen]
        with np.errstate(divide="ignore", invalid="ignore"):
            level = np.where(demand > 0, (C - used) / demand, np.inf)
        t = float(level.min())
        rates[~frozen] = y[~frozen] * t
        tight = level <= t * (1 + 1e-12)
        frozen |= (A[tight] > 0).any(axis=0)
    return rates


def select_flow_population(
    profile: NetworkUtilityProfile, rates, candidates: Sequence
) -> np.ndarray:
    """Candidate population with the highest network utility; first wins ties."""
    if len(candidates) == 0:
        raise EmptyCandidateSet("no candidate flow populations")
    best, best_val = None, -np.inf
    for cand in candidates:
        val = network_utility(profile, cand, rates)
        if best is None or val > best_val:
            best, best_val = cand, val
    return np.asarray(best, dtype=float)
