import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from signbal.attack import AttackBudget, balance_attack
from signbal.balance import balance_degree
from signbal.graph import overlap_ratio, to_adjacency
from signbal.restore import balance_learning_restore, irreversibility_experiment
from signbal.synth import FactionConfig, two_faction_graph

from conftest import cycle3, random_signed


def test_balanced_input_is_identity():
    a = to_adjacency(two_faction_graph(FactionConfig(n=40, rho=0.0, p_in=0.3, p_out=0.3)))
    rep = balance_learning_restore(a)
    assert rep.flips_used == 0 and (rep.restored_matrix != a).nnz == 0


def test_unbalanced_cycle_non_unique_repair():
    a = to_adjacency(cycle3((1, 1, -1)))
    # both a flip of the negative edge and a flip of a positive edge repair the cycle
    outcomes = set()
    for e in range(3):
        b = a.toarray().copy()
        r, c = np.nonzero(b)
        b[r[e], c[e]] *= -1
        assert balance_degree(b).d3 == 1.0
        outcomes.add(int((b < 0).sum()))
    assert outcomes == {0, 2}
    rep = balance_learning_restore(a, target_d3=1.0)
    assert rep.d3_after == 1.0 and rep.flips_used == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_trajectory_nondecreasing(seed):
    a = random_signed(25, 0.2, seed=seed)
    rep = balance_learning_restore(a, target_d3=1.0)
    assert np.all(np.diff(rep.d3_trajectory) >= -1e-12)
    assert rep.d3_after == pytest.approx(balance_degree(rep.restored_matrix).d3, abs=1e-12)


def test_ten_percent_attack_restorable():
    a = to_adjacency(two_faction_graph(FactionConfig(seed=1)))
    poisoned = balance_attack(a, AttackBudget(rate=0.1)).final_matrix
    rep = balance_learning_restore(poisoned, target_d3=0.95, clean=a)
    assert rep.d3_after >= 0.9
    assert rep.overlap_with_clean == overlap_ratio(rep.restored_matrix, a)


def test_zero_ptb_noop():
    a = to_adjacency(two_faction_graph(FactionConfig(n=60, rho=0.0, p_in=0.2, p_out=0.2)))
    exp = irreversibility_experiment(a, 0.0)
    assert exp["restore_flips"] == 0 and exp["overlap_restored"] == 1.0


def test_max_flips_respected():
    a = to_adjacency(two_faction_graph(FactionConfig(seed=2)))
    poisoned = balance_attack(a, AttackBudget(rate=0.2)).final_matrix
    rep = balance_learning_restore(poisoned, target_d3=1.0, max_flips=5)
    assert rep.flips_used <= 5
