"""Scaling checks for alpha-fair utilities and for the counterexamples.

Alpha-fair profiles keep their orderings and optimal allocations when
rates, populations or capacities are rescaled.  Exponential, shifted-log
and mixed-alpha profiles do not, and the checks report the witnesses.
"""

from isofair import (
    AlphaFair,
    NetworkUtilityProfile,
    SampleConfig,
    check_flow_scalability,
    check_iso_elastic,
    default_counterexamples,
    fixture_path,
    load_network,
)

net = load_network(fixture_path("local_traffic3.json"))
n = net.topology.n_routes
config = SampleConfig(n_pairs=300)

profiles = {f"alpha_fair_{a:g}": NetworkUtilityProfile.uniform(AlphaFair(a), n) for a in (0.5, 1, 2)}
profiles.update({name: build(n) for name, build in default_counterexamples().items()})

print(f"{'profile':<16} {'iso-elastic':<24} {'flow-scalable':<24} max allocation shift")
for name, profile in profiles.items():
    iso = check_iso_elastic(profile, config)
    flow = check_flow_scalability(net.topology, profile, net.y, config)
    print(f"{name:<16} {iso.verdict.value:<24} {flow.verdict.value:<24} {flow.max_deviation:.3g}")
