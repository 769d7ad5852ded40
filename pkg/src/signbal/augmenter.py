"""Learnable balance augmentation.

A flip-probability ``delta`` lives on the edges of the poisoned graph. It is
fitted by projected gradient descent on the negative balance degree of the
expected augmented adjacency ``A_hat * (1 - 2 delta)`` and the positive view
flips the signs of the top ``nd_percent`` edges ranked by ``delta``.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .balance import EPS, balance_degree
from .errors import DegenerateDenominator, NonFiniteLoss, SupportMismatch
from .graph import edge_arrays

DEFAULT_INIT = 0.1
ND_GRID = tuple(range(5, 55, 5))


@dataclass
class AugmenterState:
    """Flip probabilities on the support of the poisoned graph (row-major)."""

    n: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    nd_percent: float = 0.0
    loss_trace: list = field(default_factory=list)
    step_size: float = None

    @property
    def delta(self):
        return sp.csr_matrix((self.values, (self.rows, self.cols)), shape=(self.n, self.n))

    def copy(self):
        return AugmenterState(
            self.n, self.rows.copy(), self.cols.copy(), self.values.copy(),
            self.nd_percent, list(self.loss_trace), self.step_size,
        )

    def to_dict(self):
        return {
            "n": self.n,
            "nd_percent": self.nd_percent,
            "step_size": self.step_size,
            "delta": [
                [int(i), int(j), float(v)] for i, j, v in zip(self.rows, self.cols, self.values)
            ],
            "loss_trace": [float(x) for x in self.loss_trace],
        }

    @classmethod
    def from_dict(cls, d):
        trip = np.array(d["delta"], dtype=np.float64).reshape(-1, 3)
        return cls(
            int(d["n"]), trip[:, 0].astype(np.int64), trip[:, 1].astype(np.int64),
            trip[:, 2].copy(), d.get("nd_percent", 0.0), list(d.get("loss_trace", [])),
            d.get("step_size"),
        )


def init_state(poisoned, init=DEFAULT_INIT, nd_percent=0.0):
    rows, cols, _ = edge_arrays(poisoned)
    return AugmenterState(
        poisoned.shape[0], rows, cols, np.full(len(rows), float(init)), nd_percent
    )


def _signs(poisoned, state):
    rows, cols, vals = edge_arrays(poisoned)
    if (
        poisoned.shape[0] != state.n
        or not np.array_equal(rows, state.rows)
        or not np.array_equal(cols, state.cols)
    ):
        raise SupportMismatch("augmenter support differs from the poisoned graph")
    return vals


def expected_view(poisoned, state):
    """Entrywise ``a_ij (1 - 2 delta_ij)``; zeros are kept as explicit entries."""
    a = _signs(poisoned, state)
    m = sp.csr_matrix(
        (a * (1.0 - 2.0 * state.values), (state.rows, state.cols)), shape=(state.n, state.n)
    )
    return m


def _loss_grad(a, rows, cols, values, n, eps=EPS):
    mv = a * (1.0 - 2.0 * values)
    m = sp.csr_matrix((mv, (rows, cols)), shape=(n, n))
    nm = abs(m)
    m2 = m @ m
    n2 = nm @ nm
    t = float(m2.multiply(m.T).sum())
    s = float(n2.multiply(nm.T).sum())
    if s <= eps:
        raise DegenerateDenominator(f"expected view has Tr(|M|^3) = {s:g}")
    m2_ji = np.asarray(m2[cols, rows]).reshape(-1)
    n2_ji = np.asarray(n2[cols, rows]).reshape(-1)
    dd_dm = (3.0 * m2_ji * s - t * 3.0 * n2_ji * np.sign(mv)) / (2.0 * s * s)
    loss = -(t + s) / (2.0 * s)
    # dL/d delta = -dD/dM * dM/d delta, with dM/d delta = -2 a
    return loss, 2.0 * a * dd_dm


def balance_loss(poisoned, state):
    """Negative balance degree of the expected view, in [-1, 0]."""
    a = _signs(poisoned, state)
    loss, _ = _loss_grad(a, state.rows, state.cols, state.values, state.n)
    return loss


def balance_loss_gradient(poisoned, state):
    """Gradient of :func:`balance_loss` w.r.t. delta, as a sparse matrix on the support."""
    a = _signs(poisoned, state)
    _, g = _loss_grad(a, state.rows, state.cols, state.values, state.n)
    return sp.csr_matrix((g, (state.rows, state.cols)), shape=(state.n, state.n))


def delta_step(poisoned, state, step_size, line_search=True, max_halvings=30):
    """One projected step ``delta <- clip(delta - eta * grad, 0, 1)`` in place.

    With ``line_search`` the step is halved until the loss does not increase;
    if no halving helps the state is left unchanged. Returns the new loss and
    the step size to try next.
    """
    a = _signs(poisoned, state)
    loss, g = _loss_grad(a, state.rows, state.cols, state.values, state.n)
    if not np.isfinite(loss) or not np.all(np.isfinite(g)):
        raise NonFiniteLoss("balance loss or gradient is not finite")
    eta = step_size
    for _ in range(max_halvings if line_search else 1):
        cand = np.clip(state.values - eta * g, 0.0, 1.0)
        try:
            new_loss, _ = _loss_grad(a, state.rows, state.cols, cand, state.n)
        except DegenerateDenominator:
            new_loss = np.inf
        if not line_search:
            if not np.isfinite(new_loss):
                raise NonFiniteLoss("balance loss diverged")
            state.values = cand
            return new_loss, eta
        if new_loss <= loss:
            state.values = cand
            return new_loss, eta * 1.25
        eta *= 0.5
    return loss, step_size


def auto_step_size(poisoned, state, max_move=0.1):
    """Step size that moves the largest delta coordinate by ``max_move``."""
    a = _signs(poisoned, state)
    _, g = _loss_grad(a, state.rows, state.cols, state.values, state.n)
    gmax = float(np.max(np.abs(g))) if len(g) else 0.0
    return max_move / gmax if gmax > 0 else 1.0


def optimize_delta(poisoned, steps=200, step_size=None, seed=0, init=DEFAULT_INIT,
                   line_search=True, state=None):
    """Fit the flip probabilities by projected gradient descent.

    ``step_size=None`` picks one so that the first step moves the largest
    coordinate by 0.1. ``loss_trace`` has ``steps + 1`` entries. ``seed`` is
    accepted for interface symmetry; the optimisation itself is deterministic.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if state is None:
        state = init_state(poisoned, init)
    else:
        state = state.copy()
    eta = auto_step_size(poisoned, state) if step_size is None else float(step_size)
    state.step_size = eta
    trace = [balance_loss(poisoned, state)]
    for _ in range(steps):
        loss, eta = delta_step(poisoned, state, eta, line_search=line_search)
        trace.append(loss)
    state.loss_trace = trace
    return state


def flip_count(nd_percent, n_edges):
    return int(np.floor(nd_percent / 100.0 * n_edges + 0.5))


def perturbation_mask(state, nd_percent=None):
    """Boolean mask over support entries: the top-k deltas, ties row-major."""
    nd = state.nd_percent if nd_percent is None else nd_percent
    k = flip_count(nd, len(state.values))
    order = np.lexsort((np.arange(len(state.values)), -state.values))
    mask = np.zeros(len(state.values), dtype=bool)
    mask[order[:k]] = True
    return mask


def sample_positive_view(poisoned, state, seed=None, nd_percent=None, stochastic=False):
    """Positive view ``A_p = A_hat - 2 A_hat * E``.

    Deterministic mode flips exactly the top-k edges by delta. Stochastic
    mode draws ``E_ij ~ Bernoulli(delta_ij)`` restricted to those top-k edges.
    """
    a = _signs(poisoned, state)
    mask = perturbation_mask(state, nd_percent)
    if stochastic:
        rng = np.random.default_rng(seed)
        mask &= rng.random(len(mask)) < state.values
    v = np.where(mask, -a, a)
    return sp.csr_matrix((v, (state.rows, state.cols)), shape=(state.n, state.n))


def choose_nd_percent(poisoned, state, grid=ND_GRID, target=0.9):
    """Smallest grid value whose positive view reaches ``d3 >= target``.

    Falls back to the value with the highest positive-view d3. Returns
    ``(nd_percent, d3_by_value)``.
    """
    scores = {}
    for nd in grid:
        d3 = balance_degree(sample_positive_view(poisoned, state, nd_percent=nd)).d3
        scores[nd] = d3
        if d3 >= target:
            return nd, scores
    best = max(grid, key=lambda nd: (scores[nd], -nd))
    return best, scores
