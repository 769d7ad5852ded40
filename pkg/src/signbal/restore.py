"""Balance learning: greedy sign repair toward a high balance degree.

The greedy rule mirrors :func:`signbal.attack.balance_attack` with the
candidate condition reversed. It restores D3 but not the original signs,
which is what :func:`irreversibility_experiment` measures.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .attack import AttackBudget, FlipState, _greedy, balance_attack
from .balance import balance_degree
from .errors import DataError
from .graph import overlap_ratio

DEFAULT_TARGET_D3 = 0.95


@dataclass
class RestorationReport:
    restored_matrix: sp.csr_matrix
    d3_before: float
    d3_after: float
    flips_used: int
    overlap_with_clean: float = None
    flips: list = None
    d3_trajectory: list = None
    rejected: int = 0

    def to_dict(self):
        return {
            "d3_before": self.d3_before,
            "d3_after": self.d3_after,
            "flips_used": self.flips_used,
            "rejected": self.rejected,
            "overlap_with_clean": self.overlap_with_clean,
            "flips": [{"src": i, "dst": j, "step": k, "gradient": g} for i, j, k, g in self.flips],
            "d3_trajectory": list(self.d3_trajectory),
        }


def balance_learning_restore(poisoned, target_d3=DEFAULT_TARGET_D3, max_flips=None, clean=None):
    """Flip signs greedily until ``d3 >= target_d3``, candidates run out, or
    ``max_flips`` (default |E|) is spent.

    Every selected flip is checked against its exact D3 change and rejected
    (and blacklisted) if it would lower D3, so the trajectory never decreases.
    """
    state = FlipState(poisoned)
    k = state.n_edges if max_flips is None else min(int(max_flips), state.n_edges)
    rejected = []

    def accept(st, e):
        ok = st.flip_gain(e) >= 0
        if not ok:
            rejected.append(e)
        return ok

    def reached(st):
        return st.d3() >= target_d3

    flips, traj, _ = _greedy(state, k, rule=-1, accept=accept, stop=reached)
    restored = state.matrix()
    overlap = None if clean is None else overlap_ratio(restored, clean)
    return RestorationReport(
        restored, traj[0], traj[-1], len(flips), overlap, flips, traj, len(rejected)
    )


def irreversibility_experiment(clean, ptb_rate, seed=0, target_d3=DEFAULT_TARGET_D3, min_clean_d3=0.8):
    """Attack ``clean`` at ``ptb_rate`` then restore; compare both with ``clean``.

    ``seed`` is recorded for bookkeeping; the greedy attack itself is
    deterministic.
    """
    d3_clean = balance_degree(clean).d3
    if d3_clean < min_clean_d3:
        raise DataError(f"clean balance degree {d3_clean:.3f} is below {min_clean_d3}")
    plan = balance_attack(clean, AttackBudget(rate=ptb_rate))
    poisoned = plan.final_matrix
    rep = balance_learning_restore(poisoned, target_d3=target_d3, clean=clean)
    return {
        "seed": seed,
        "ptb_rate": ptb_rate,
        "attack_flips": plan.n_flips,
        "restore_flips": rep.flips_used,
        "d3_clean": d3_clean,
        "d3_poisoned": plan.d3_trajectory[-1],
        "d3_restored": rep.d3_after,
        "overlap_poisoned": overlap_ratio(poisoned, clean),
        "overlap_restored": rep.overlap_with_clean,
        "poisoned": poisoned,
        "restored": rep.restored_matrix,
    }
