"""Greedy balance-attack and the uniform random-flip baseline.

Both attacks only negate signs of existing edges, so ``|A|`` and therefore
``Tr(|A|^3)`` never change. Flipping ``a_ij`` by ``delta = -2 a_ij`` changes
``Tr(A^3)`` by exactly ``3 delta (A^2)_ji`` (the trace is linear in every
off-diagonal entry when the diagonal is zero), so ``A^2`` is maintained
incrementally and each step's gradient equals a full recomputation.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .balance import balance_degree
from .errors import BudgetExceedsEdges, DimensionMismatch, TooManyEdges
from .graph import edge_arrays


@dataclass(frozen=True)
class AttackBudget:
    """Sign-flip budget given either as an absolute count or a rate of |E|."""

    flips: int = None
    rate: float = None

    def __post_init__(self):
        if (self.flips is None) == (self.rate is None):
            raise ValueError("give exactly one of flips or rate")
        if self.flips is not None and self.flips < 0:
            raise ValueError("flips must be >= 0")
        if self.rate is not None and not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")

    def resolve(self, n_edges):
        if self.flips is not None:
            k = int(self.flips)
        else:
            k = int(np.floor(self.rate * n_edges + 0.5))
        if k > n_edges:
            raise BudgetExceedsEdges(f"budget {k} exceeds {n_edges} edges")
        return k


def _resolve(budget, n_edges):
    if not isinstance(budget, AttackBudget):
        budget = AttackBudget(flips=int(budget))
    return budget.resolve(n_edges)


@dataclass
class AttackPlan:
    flips: list
    d3_trajectory: list
    final_matrix: sp.csr_matrix
    budget: int = 0
    early_stopped: bool = False
    method: str = "balance"

    @property
    def n_flips(self):
        return len(self.flips)

    def to_dict(self):
        return {
            "method": self.method,
            "budget": self.budget,
            "n_flips": self.n_flips,
            "early_stopped": self.early_stopped,
            "d3_initial": self.d3_trajectory[0],
            "d3_final": self.d3_trajectory[-1],
            "flips": [
                {"src": i, "dst": j, "step": k, "gradient": g} for i, j, k, g in self.flips
            ],
            "d3_trajectory": list(self.d3_trajectory),
        }


class FlipState:
    """Mutable sign state of a fixed topology with ``A^2`` kept up to date."""

    def __init__(self, m):
        if m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got {m.shape}")
        self.n = m.shape[0]
        self.rows, self.cols, vals = edge_arrays(m)
        if not np.all(np.abs(vals) == 1):
            raise ValueError("attacks operate on {-1, 0, +1} adjacency matrices")
        self.sign = vals.astype(np.int64)
        self.a = np.zeros((self.n, self.n), dtype=np.int64)
        self.a[self.rows, self.cols] = self.sign
        sa = sp.csr_matrix((vals.astype(np.float64), (self.rows, self.cols)), shape=(self.n, self.n))
        self.a2 = np.rint((sa @ sa).toarray()).astype(np.int64)
        self.trace = int(np.sum(self.a2 * self.a.T))
        abs_a = abs(sa)
        self.abs_trace = int(round(float((abs_a @ abs_a).multiply(abs_a.T).sum())))

    @property
    def n_edges(self):
        return len(self.sign)

    @property
    def degenerate(self):
        return self.abs_trace == 0

    def d3(self):
        if self.abs_trace == 0:
            return 1.0
        return (self.trace + self.abs_trace) / (2.0 * self.abs_trace)

    def a2_transposed(self):
        """``(A^2)_ji`` for every edge ``(i, j)``."""
        return self.a2[self.cols, self.rows]

    def gradient(self):
        """Flip-directional gradient of D3 at each edge."""
        if self.abs_trace == 0:
            return np.zeros(self.n_edges)
        return 3.0 * self.a2_transposed() / (2.0 * self.abs_trace)

    def flip_gain(self, e):
        """Exact change of ``Tr(A^3)`` if edge ``e`` were flipped."""
        i, j = self.rows[e], self.cols[e]
        return 3 * (-2 * int(self.sign[e])) * int(self.a2[j, i])

    def flip(self, e):
        i, j = int(self.rows[e]), int(self.cols[e])
        delta = -2 * int(self.sign[e])
        self.trace += 3 * delta * int(self.a2[j, i])
        row_j = self.a[j, :].copy()
        col_i = self.a[:, i].copy()
        self.a2[i, :] += delta * row_j
        self.a2[:, j] += delta * col_i
        self.a[i, j] += delta
        self.sign[e] = -self.sign[e]

    def matrix(self):
        return sp.csr_matrix(
            (self.sign.astype(np.float64), (self.rows, self.cols)), shape=(self.n, self.n)
        )


def _greedy(state, k, rule, batch=1, blocked=None, accept=None, stop=None):
    """Shared greedy loop for attack (rule=+1) and restoration (rule=-1).

    An edge is a candidate when ``rule * a_ij * G_ij > 0``; the candidate with
    the largest ``|G_ij|`` is flipped, ties going to the smallest (i, j).
    """
    flipped = np.zeros(state.n_edges, dtype=bool) if blocked is None else blocked
    flips = []
    traj = [state.d3()]
    early = False
    step = 0
    while len(flips) < k:
        if stop is not None and stop(state):
            break
        if state.degenerate:
            early = True
            break
        grad = state.gradient()
        score = rule * state.sign * state.a2_transposed()
        cand = (score > 0) & ~flipped
        if not cand.any():
            early = True
            break
        step += 1
        idx = np.flatnonzero(cand)
        take = min(batch, k - len(flips))
        if take == 1:
            chosen = [idx[np.argmax(score[idx])]]
        else:
            order = np.lexsort((idx, -score[idx]))
            chosen = idx[order[:take]]
        for e in chosen:
            if accept is not None and not accept(state, e):
                flipped[e] = True
                continue
            flips.append((int(state.rows[e]), int(state.cols[e]), step, float(grad[e])))
            state.flip(e)
            flipped[e] = True
            traj.append(state.d3())
    return flips, traj, early


def balance_attack(m, budget, batch=1):
    """Greedy gradient-guided sign flips that minimise the balance degree.

    ``batch`` > 1 is a fast mode flipping the top-``batch`` candidates per
    gradient evaluation; the default reevaluates after every flip.
    """
    state = FlipState(m)
    k = _resolve(budget, state.n_edges)
    flips, traj, early = _greedy(state, k, rule=+1, batch=batch)
    return AttackPlan(flips, traj, state.matrix(), budget=k, early_stopped=early)


def random_attack(m, budget, seed=0):
    """Negate the signs of ``budget`` edges drawn uniformly without replacement."""
    state = FlipState(m)
    k = _resolve(budget, state.n_edges)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(state.n_edges, size=k, replace=False)
    flips, traj = [], [state.d3()]
    for step, e in enumerate(chosen, start=1):
        g = float(state.gradient()[e])
        flips.append((int(state.rows[e]), int(state.cols[e]), step, g))
        state.flip(e)
        traj.append(state.d3())
    return AttackPlan(flips, traj, state.matrix(), budget=k, method="random")


def exhaustive_best_flip(m, max_edges=5000):
    """Try every single flip and return ``((i, j), delta_d3)`` of the best one.

    Each candidate is scored by recomputing D3 from scratch, so this is an
    oracle independent of the incremental bookkeeping above.
    """
    rows, cols, vals = edge_arrays(m)
    if len(vals) > max_edges:
        raise TooManyEdges(f"{len(vals)} edges exceeds the cap of {max_edges}")
    if len(vals) == 0:
        raise BudgetExceedsEdges("graph has no edges to flip")
    n = m.shape[0]
    base = balance_degree(m).d3
    best, best_d3 = None, np.inf
    for e in range(len(vals)):
        v = vals.copy()
        v[e] = -v[e]
        d3 = balance_degree(sp.csr_matrix((v, (rows, cols)), shape=(n, n))).d3
        if round(d3, 12) < round(best_d3, 12):
            best, best_d3 = (int(rows[e]), int(cols[e])), d3
    return best, best_d3 - base
