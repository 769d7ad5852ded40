"""Signed directed graphs, edge-list I/O, splits and perturbation accounting."""
import io
import re
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (
    DimensionMismatch,
    DuplicateEdge,
    EmptyGraph,
    MalformedLine,
    SelfLoop,
    TopologyMismatch,
    ZeroRating,
)

_SPLIT = re.compile(r"[,\s]+")
_NODES_HEADER = re.compile(r"#\s*nodes\s*[:=]\s*(\d+)", re.IGNORECASE)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SignedDiGraph:
    """Immutable signed directed graph without self-loops or multi-edges.

    Edges are stored as three parallel arrays (``src``, ``dst``, ``sign``);
    the ``edges`` property gives the list-of-triples view.
    """

    node_count: int
    src: np.ndarray
    dst: np.ndarray
    sign: np.ndarray
    node_labels: dict = field(default=None)

    def __post_init__(self):
        src = _frozen(self.src, np.int64)
        dst = _frozen(self.dst, np.int64)
        sign = _frozen(self.sign, np.int8)
        if not (len(src) == len(dst) == len(sign)):
            raise ValueError("src, dst and sign must have equal length")
        n = int(self.node_count)
        if n < 0:
            raise ValueError("node_count must be non-negative")
        if len(src):
            if src.min() < 0 or dst.min() < 0 or max(src.max(), dst.max()) >= n:
                raise ValueError("edge endpoint out of range")
            if np.any(src == dst):
                k = int(np.flatnonzero(src == dst)[0])
                raise SelfLoop(f"self-loop at node {int(src[k])}")
            if not np.all(np.abs(sign) == 1):
                raise ValueError("signs must be +1 or -1")
            key = src * n + dst
            if len(np.unique(key)) != len(key):
                raise DuplicateEdge("duplicate (src, dst) pair")
        object.__setattr__(self, "node_count", n)
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)
        object.__setattr__(self, "sign", sign)

    @classmethod
    def from_edges(cls, node_count, edges, node_labels=None):
        edges = list(edges)
        if edges:
            s, d, w = zip(*edges)
        else:
            s, d, w = (), (), ()
        return cls(node_count, s, d, w, node_labels)

    @property
    def edges(self):
        return [(int(i), int(j), int(s)) for i, j, s in zip(self.src, self.dst, self.sign)]

    @property
    def edge_count(self):
        return len(self.src)

    @property
    def n_positive(self):
        return int(np.count_nonzero(self.sign > 0))

    @property
    def n_negative(self):
        return int(np.count_nonzero(self.sign < 0))

    def __eq__(self, other):
        if not isinstance(other, SignedDiGraph):
            return NotImplemented
        return (
            self.node_count == other.node_count
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.sign, other.sign)
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"SignedDiGraph(nodes={self.node_count}, edges={self.edge_count}, "
            f"pos={self.n_positive}, neg={self.n_negative})"
        )


@dataclass(frozen=True)
class EdgeSplit:
    train_graph: SignedDiGraph
    test_edges: list

    @property
    def test_src(self):
        return np.array([e[0] for e in self.test_edges], dtype=np.int64)

    @property
    def test_dst(self):
        return np.array([e[1] for e in self.test_edges], dtype=np.int64)

    @property
    def test_sign(self):
        return np.array([e[2] for e in self.test_edges], dtype=np.int8)


def parse_edge_list(text, format="signed"):
    """Parse an edge list into a :class:`SignedDiGraph`.

    ``text`` may be ``bytes``, ``str`` or a readable text/binary stream.
    Fields are separated by whitespace or commas; lines starting with ``#``
    are comments, except that a ``# nodes: N`` header fixes a minimum node
    count (the canonical writer emits one). In ``signed`` mode the third
    field must be +1 or -1; in ``rated`` mode its sign is taken and zero is
    rejected. External ids are remapped to 0..n-1 in first-seen order.
    """
    if format not in ("signed", "rated"):
        raise ValueError(f"unknown format {format!r}")
    if hasattr(text, "read"):
        text = text.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")

    labels = {}
    src, dst, sign = [], [], []
    seen = set()
    min_nodes = 0
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = _NODES_HEADER.match(line)
            if m:
                min_nodes = int(m.group(1))
            continue
        fields = [f for f in _SPLIT.split(line) if f]
        if len(fields) < 3:
            raise MalformedLine(lineno, line)
        try:
            value = float(fields[2])
        except ValueError:
            raise MalformedLine(lineno, line) from None
        if not np.isfinite(value):
            raise MalformedLine(lineno, line)
        if format == "signed":
            if value not in (1.0, -1.0):
                raise MalformedLine(lineno, line)
            s = int(value)
        else:
            if value == 0:
                raise ZeroRating(f"zero rating on line {lineno}")
            s = 1 if value > 0 else -1
        i = labels.setdefault(fields[0], len(labels))
        j = labels.setdefault(fields[1], len(labels))
        if i == j:
            raise SelfLoop(f"self-loop on line {lineno}")
        if (i, j) in seen:
            raise DuplicateEdge(f"duplicate edge {fields[0]}->{fields[1]} on line {lineno}")
        seen.add((i, j))
        src.append(i)
        dst.append(j)
        sign.append(s)
    n = max(len(labels), min_nodes)
    return SignedDiGraph(n, src, dst, sign, labels)


def read_edge_list(path, format="signed"):
    with open(path, "rb") as fh:
        return parse_edge_list(fh.read(), format=format)


def format_edge_list(g, labels=False):
    """Canonical ``src<TAB>dst<TAB>sign`` text with a node-count header.

    With ``labels=True`` the external ids recorded at parse time are written
    instead of the dense indices (when every node has one).
    """
    name = [str(k) for k in range(g.node_count)]
    if labels and g.node_labels and len(g.node_labels) == g.node_count:
        for ext, k in g.node_labels.items():
            name[k] = ext
    lines = [f"# nodes: {g.node_count}"]
    lines += [f"{name[i]}\t{name[j]}\t{'+1' if s > 0 else '-1'}" for i, j, s in g.edges]
    return "\n".join(lines) + "\n"


def write_edge_list(g, path, labels=False):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_edge_list(g, labels))


def to_adjacency(g):
    """Signed adjacency ``A`` with ``A[i, j] = s_ij`` as a CSR matrix."""
    n = g.node_count
    return sp.csr_matrix(
        (g.sign.astype(np.float64), (g.src, g.dst)), shape=(n, n)
    )


def edge_arrays(m):
    """Row, column and value arrays of the nonzeros of ``m`` in row-major order."""
    if sp.issparse(m):
        c = sp.coo_matrix(m)
        mask = c.data != 0
        r, k, v = c.row[mask], c.col[mask], c.data[mask]
        order = np.lexsort((k, r))
        return r[order].astype(np.int64), k[order].astype(np.int64), v[order]
    m = np.asarray(m)
    r, k = np.nonzero(m)
    return r.astype(np.int64), k.astype(np.int64), m[r, k]


def from_adjacency(m, node_labels=None):
    """Inverse of :func:`to_adjacency`; edges come out in row-major order."""
    n = m.shape[0]
    if m.shape != (n, n):
        raise DimensionMismatch(f"adjacency must be square, got {m.shape}")
    r, c, v = edge_arrays(m)
    if not np.all(np.abs(v) == 1):
        raise ValueError("adjacency entries must be in {-1, 0, +1}")
    return SignedDiGraph(n, r, c, v.astype(np.int8), node_labels)


def resign(g, m):
    """Copy of ``g`` (same edge order and labels) with signs read from ``m``."""
    vals = np.asarray(sp.csr_matrix(m)[g.src, g.dst]).reshape(-1)
    if not np.all(np.abs(vals) == 1):
        raise TopologyMismatch("matrix has no signed entry for some edge of the graph")
    return SignedDiGraph(g.node_count, g.src, g.dst, vals.astype(np.int8), g.node_labels)


def split_edges(g, ratio=0.8, seed=0):
    """Uniform train/test edge split; ``round(ratio * |E|)`` training edges."""
    m = g.edge_count
    if m < 2:
        raise EmptyGraph("need at least two edges to split")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0, 1)")
    n_train = int(np.floor(ratio * m + 0.5))
    n_train = min(max(n_train, 1), m - 1)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    train = SignedDiGraph(
        g.node_count, g.src[train_idx], g.dst[train_idx], g.sign[train_idx], g.node_labels
    )
    test = [(int(g.src[k]), int(g.dst[k]), int(g.sign[k])) for k in test_idx]
    return EdgeSplit(train, test)


def _support_and_signs(a, b):
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape {a.shape} vs {b.shape}")
    if sp.issparse(a) or sp.issparse(b):
        a = sp.csr_matrix(a)
        b = sp.csr_matrix(b)
        ra, ca, va = edge_arrays(a)
        rb, cb, vb = edge_arrays(b)
        if not (np.array_equal(ra, rb) and np.array_equal(ca, cb)):
            raise TopologyMismatch("matrices have different nonzero patterns")
        return np.sign(va), np.sign(vb)
    a = np.asarray(a)
    b = np.asarray(b)
    sa = a != 0
    if not np.array_equal(sa, b != 0):
        raise TopologyMismatch("matrices have different nonzero patterns")
    return np.sign(a[sa]), np.sign(b[sa])


def perturbation_distance(a, b):
    """Number of support entries whose sign differs (entry-wise L0 of a - b)."""
    va, vb = _support_and_signs(a, b)
    return int(np.count_nonzero(va != vb))


def overlap_ratio(a, b):
    """Fraction of edges whose signs agree between two same-topology matrices."""
    va, vb = _support_and_signs(a, b)
    if len(va) == 0:
        return 1.0
    return 1.0 - int(np.count_nonzero(va != vb)) / len(va)


def random_features(n, d, seed=0):
    """i.i.d. uniform [-1, 1] node attributes of shape ``(n, d)``."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    return np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n, d))
