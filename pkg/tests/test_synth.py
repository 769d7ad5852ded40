import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from signbal.balance import balance_degree
from signbal.graph import to_adjacency
from signbal.synth import FactionConfig, two_faction_graph


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_noiseless_is_balanced(seed):
    g = two_faction_graph(FactionConfig(n=50, rho=0.0, p_in=0.2, p_out=0.2, seed=seed))
    rep = balance_degree(to_adjacency(g))
    if not rep.degenerate:
        assert rep.d3 == 1.0


def test_signs_follow_factions():
    g, fac = two_faction_graph(FactionConfig(n=60, rho=0.0, p_in=0.2, p_out=0.2), return_factions=True)
    same = fac[g.src] == fac[g.dst]
    assert np.all(g.sign[same] == 1) and np.all(g.sign[~same] == -1)


def test_calibration_band():
    d3 = [balance_degree(to_adjacency(two_faction_graph(FactionConfig(seed=s)))).d3 for s in range(10)]
    assert all(0.8 <= d <= 0.95 for d in d3)


def test_seed_determinism():
    cfg = FactionConfig(n=80, seed=4)
    assert two_faction_graph(cfg) == two_faction_graph(cfg)
    assert two_faction_graph(cfg) != two_faction_graph(FactionConfig(n=80, seed=5))


def test_fixed_topology_across_noise():
    a = to_adjacency(two_faction_graph(FactionConfig(seed=3, rho=0.0)))
    b = to_adjacency(two_faction_graph(FactionConfig(seed=3, rho=0.3)))
    assert np.array_equal(a.indices, b.indices) and np.array_equal(a.indptr, b.indptr)


def test_d3_decreases_with_noise_paired():
    rhos = (0.0, 0.05, 0.1, 0.2, 0.3)
    means = []
    for rho in rhos:
        means.append(np.mean([balance_degree(to_adjacency(two_faction_graph(
            FactionConfig(n=100, rho=rho, seed=s)))).d3 for s in range(8)]))
    assert all(x > y for x, y in zip(means, means[1:]))


def test_config_validation():
    with pytest.raises(ValueError):
        FactionConfig(p_in=1.5)
    with pytest.raises(ValueError):
        FactionConfig(n=2)
