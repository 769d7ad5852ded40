"""Balance degree of signed directed graphs and its gradients.

The balance degree is the fraction of balanced directed 3-cycles,

    D3 = (Tr(A^3) + Tr(|A|^3)) / (2 Tr(|A|^3)),

where a cycle i->j->k->i is balanced when the product of its three signs
is positive. Traces are taken as ``sum((M @ M) * M.T)`` so that ``M^3`` is
never materialised.
"""
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateDenominator, DimensionMismatch, GraphTooLarge
from .graph import edge_arrays

EPS = 1e-12


class GradientMode(str, Enum):
    # |M| held fixed: the right object for sign flips, which keep |A| invariant.
    FLIP_DIRECTIONAL = "flip_directional"
    # quotient rule through numerator and denominator, for real-valued M.
    FULL_REAL = "full_real"


@dataclass(frozen=True)
class BalanceReport:
    d3: float
    balanced_triangles: int
    total_triangles: int
    trace_A3: float
    trace_absA3: float
    degenerate: bool = False

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _check_square(m):
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")


def _prep(m):
    if sp.issparse(m):
        return sp.csr_matrix(m, dtype=np.float64)
    return np.asarray(m, dtype=np.float64)


def _abs(m):
    return abs(m) if sp.issparse(m) else np.abs(m)


def _square_and_trace(m):
    """Return ``(M @ M, Tr(M^3))``."""
    m2 = m @ m
    if sp.issparse(m):
        tr = float(m2.multiply(m.T).sum())
    else:
        tr = float(np.sum(m2 * m.T))
    return m2, tr


def _is_signed(m):
    data = m.data if sp.issparse(m) else m
    return bool(np.all((data == 0) | (np.abs(data) == 1)))


def balance_degree(m, eps=EPS):
    """Balance degree of a (signed or real-valued) square matrix.

    For real-valued input the traces use the actual entries while the
    triangle counts describe the sign pattern. A matrix without directed
    3-cycles is reported with ``d3 = 1`` and ``degenerate = True``.
    """
    m = _prep(m)
    _check_square(m)
    _, t = _square_and_trace(m)
    _, s = _square_and_trace(_abs(m))
    if _is_signed(m):
        t_sgn, s_sgn = t, s
    else:
        sg = m.sign() if sp.issparse(m) else np.sign(m)
        _, t_sgn = _square_and_trace(sg)
        _, s_sgn = _square_and_trace(_abs(sg))
    total = int(round(s_sgn / 3.0))
    balanced = int(round((t_sgn + s_sgn) / 6.0))
    if s <= eps:
        return BalanceReport(1.0, balanced, total, t, s, True)
    d3 = (t + s) / (2.0 * s)
    return BalanceReport(float(min(max(d3, 0.0), 1.0)), balanced, total, t, s, False)


def balance_degree_bruteforce(g, max_nodes=500):
    """Enumerate directed 3-cycles of a :class:`SignedDiGraph` one by one.

    Each cycle is visited once, rooted at its smallest node.
    """
    n = g.node_count
    if n > max_nodes:
        raise GraphTooLarge(f"{n} nodes exceeds the brute-force cap of {max_nodes}")
    out = [dict() for _ in range(n)]
    for i, j, s in g.edges:
        out[i][j] = s
    total = balanced = 0
    for i in range(n):
        for j, s_ij in out[i].items():
            if j <= i:
                continue
            for k, s_jk in out[j].items():
                if k <= i or k == j:
                    continue
                s_ki = out[k].get(i)
                if s_ki is None:
                    continue
                total += 1
                if s_ij * s_jk * s_ki > 0:
                    balanced += 1
    t = 3.0 * (2 * balanced - total)
    s = 3.0 * total
    if total == 0:
        return BalanceReport(1.0, 0, 0, 0.0, 0.0, True)
    return BalanceReport(balanced / total, balanced, total, t, s, False)


def _gradient_parts(m, mode, eps):
    m2, t = _square_and_trace(m)
    n_abs = _abs(m)
    n2, s = _square_and_trace(n_abs)
    if s <= eps:
        raise DegenerateDenominator(f"Tr(|M|^3) = {s:g} is below {eps:g}")
    return m2, n2, t, s


def balance_gradient(m, mode=GradientMode.FLIP_DIRECTIONAL, eps=EPS):
    """Dense gradient of D3 with respect to every entry of ``m``.

    ``flip_directional``: ``G_ij = 3 (M^2)_ji / (2 Tr|M|^3)``.
    ``full_real``: quotient rule with ``d Tr|M|^3 / dM_ij = 3 (|M|^2)_ji sgn(M_ij)``
    and ``sgn(0) = 0``.
    """
    mode = GradientMode(mode)
    m = _prep(m)
    _check_square(m)
    m2, n2, t, s = _gradient_parts(m, mode, eps)
    m2 = m2.toarray() if sp.issparse(m2) else m2
    dt = 3.0 * m2.T
    if mode is GradientMode.FLIP_DIRECTIONAL:
        return dt / (2.0 * s)
    n2 = n2.toarray() if sp.issparse(n2) else n2
    sgn = np.sign(m.toarray() if sp.issparse(m) else m)
    ds = 3.0 * n2.T * sgn
    return (dt * s - t * ds) / (2.0 * s * s)


def balance_gradient_on_support(m, mode=GradientMode.FULL_REAL, eps=EPS):
    """Gradient entries at the nonzeros of ``m`` (row-major order).

    Returns ``(rows, cols, grad)``; avoids forming the dense gradient.
    """
    mode = GradientMode(mode)
    m = _prep(m)
    _check_square(m)
    rows, cols, vals = edge_arrays(m)
    m2, n2, t, s = _gradient_parts(m, mode, eps)
    m2_ji = _lookup(m2, cols, rows)
    dt = 3.0 * m2_ji
    if mode is GradientMode.FLIP_DIRECTIONAL:
        return rows, cols, dt / (2.0 * s)
    ds = 3.0 * _lookup(n2, cols, rows) * np.sign(vals)
    return rows, cols, (dt * s - t * ds) / (2.0 * s * s)


def _lookup(m, r, c):
    if sp.issparse(m):
        return np.asarray(sp.csr_matrix(m)[r, c]).reshape(-1)
    return m[r, c]
