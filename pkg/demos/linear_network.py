"""Optimal allocations on the two-link linear network as alpha varies.

Small alpha favours throughput and starves the long route; large alpha
approaches the max-min allocation.  Each solution is cross-checked against
bisection on the long route's optimality condition.
"""

import numpy as np

from isofair import (
    AlphaFair,
    NetworkUtilityProfile,
    classify_linear,
    fixture_path,
    load_network,
    solve_linear_network,
    solve_max_min,
    solve_num,
)

net = load_network(fixture_path("linear2_alpha1.json"))
structure = classify_linear(net.topology)
print("routes:", net.topology.route_ids)
print("max-min:", np.round(solve_max_min(net.topology, net.y), 6))

print(f"{'alpha':>6} {'r0':>9} {'r1':>9} {'r2':>9} {'bisection gap':>14}")
for alpha in (0.05, 0.5, 1.0, 2.0, 5.0, 8.0):
    profile = NetworkUtilityProfile.uniform(AlphaFair(alpha), net.topology.n_routes)
    rates = solve_num(net.topology, profile, net.y).allocation
    check = solve_linear_network(structure, net.topology.capacities, profile, net.y)
    gap = np.max(np.abs(rates - check))
    print(f"{alpha:6g} {rates[0]:9.6f} {rates[1]:9.6f} {rates[2]:9.6f} {gap:14.2e}")
