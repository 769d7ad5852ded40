"""Desk-scale balance-augmented signed graph contrastive learning.

Pipeline per epoch: both views (poisoned graph and balance-augmented
positive view) go through one shared signed encoder; the two embeddings are
contrasted (inter-view InfoNCE plus an intra-view uniformity term), fused,
and a 2-layer MLP scores edges for the sign-prediction BCE loss. All
gradients are written out by hand in :func:`backward`.
"""
import json
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import scipy.sparse as sp

from . import augmenter as aug
from .errors import ConfigError, NonFinite, ShapeMismatch
from .graph import edge_arrays, random_features
from .seeding import derive_seed

NORM_EPS = 1e-12
PARAM_NAMES = ("W_pos", "W_neg", "W_self", "W_out", "B_out", "W1", "b1", "w2", "b2")


@dataclass
class HyperParams:
    alpha: float = 1.0
    tau: float = 0.5
    lambda_intra: float = 1.0
    k_views: int = 2
    # None selects the smallest n_D% whose positive view reaches d3 >= 0.9
    nd_percent: float = None
    learning_rate: float = 0.001
    epochs: int = 200
    in_dim: int = 64
    hidden_dim: int = 64
    embed_dim: int = 64
    mlp_hidden: int = 64
    seed: int = 0
    optimizer: str = "adam"
    augmenter_warmup: int = 200
    augmenter_step: float = None
    normalize: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.tau <= 0:
            raise ConfigError("tau must be > 0")
        if self.lambda_intra < 0:
            raise ConfigError("lambda_intra must be >= 0")
        if self.k_views != 2:
            raise ConfigError("only two views are supported")
        if self.nd_percent is not None and not 0 <= self.nd_percent <= 100:
            raise ConfigError("nd_percent must lie in [0, 100]")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    @property
    def uses_augmenter(self):
        return not (self.alpha == 0 and self.nd_percent == 0)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown hyperparameters: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelParams:
    W_pos: np.ndarray
    W_neg: np.ndarray
    W_self: np.ndarray
    W_out: np.ndarray
    B_out: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def arrays(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self):
        return ModelParams(**{k: v.copy() for k, v in self.arrays().items()})

    @classmethod
    def zeros_like(cls, other):
        return cls(**{k: np.zeros_like(v) for k, v in other.arrays().items()})

    @property
    def dims(self):
        return {
            "in_dim": self.W_pos.shape[0],
            "hidden_dim": self.W_pos.shape[1],
            "embed_dim": self.W_out.shape[1],
            "mlp_hidden": self.W1.shape[1],
        }


def _glorot(rng, fan_in, fan_out, shape):
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


def init_params(in_dim, hidden_dim, embed_dim, mlp_hidden, seed=0):
    rng = np.random.default_rng(seed)
    return ModelParams(
        W_pos=_glorot(rng, in_dim, hidden_dim, (in_dim, hidden_dim)),
        W_neg=_glorot(rng, in_dim, hidden_dim, (in_dim, hidden_dim)),
        W_self=_glorot(rng, in_dim, hidden_dim, (in_dim, hidden_dim)),
        W_out=_glorot(rng, 2 * hidden_dim, embed_dim, (2 * hidden_dim, embed_dim)),
        B_out=np.zeros(embed_dim),
        W1=_glorot(rng, 2 * embed_dim, mlp_hidden, (2 * embed_dim, mlp_hidden)),
        b1=np.zeros(mlp_hidden),
        w2=_glorot(rng, mlp_hidden, 1, (mlp_hidden,)),
        b2=np.zeros(()),
    )


def init_params_for(hyper):
    return init_params(
        hyper.in_dim, hyper.hidden_dim, hyper.embed_dim, hyper.mlp_hidden,
        seed=derive_seed(hyper.seed, "init"),
    )


def make_features(n, hyper):
    return random_features(n, hyper.in_dim, seed=derive_seed(hyper.seed, "features"))


# ---------------------------------------------------------------- encoder

def signed_operators(adjacency):
    """Row-normalised positive and negative parts of the adjacency.

    Rows with no positive (negative) out-edges are divided by 1.
    """
    a = sp.csr_matrix(adjacency, dtype=np.float64)
    pos = a.multiply(a > 0).tocsr()
    neg = (-a).multiply(a < 0).tocsr()
    out = []
    for part in (pos, neg):
        deg = np.asarray(part.sum(axis=1)).reshape(-1)
        deg[deg == 0] = 1.0
        out.append(sp.diags(1.0 / deg) @ part)
    return out[0].tocsr(), out[1].tocsr()


@dataclass
class ViewInputs:
    """Aggregated features ``P X`` and ``N X`` of one view."""

    px: np.ndarray
    nx: np.ndarray

    @classmethod
    def build(cls, adjacency, features):
        p, n = signed_operators(adjacency)
        return cls(p @ features, n @ features)


def _check_shapes(params, features, adjacency=None):
    if features.shape[1] != params.W_pos.shape[0]:
        raise ShapeMismatch(
            f"features have {features.shape[1]} columns, encoder expects {params.W_pos.shape[0]}"
        )
    if adjacency is not None and adjacency.shape != (features.shape[0],) * 2:
        raise ShapeMismatch(f"adjacency {adjacency.shape} vs {features.shape[0]} nodes")


def _encode_view(params, view, features):
    h = view.px @ params.W_pos + view.nx @ params.W_neg + features @ params.W_self
    return np.tanh(h)


def encode(params, adjacency, features):
    """``Z = tanh(D+^-1 A+ X W_pos + D-^-1 A- X W_neg + X W_self)``."""
    features = np.asarray(features, dtype=np.float64)
    _check_shapes(params, features, adjacency)
    return _encode_view(params, ViewInputs.build(adjacency, features), features)


# ---------------------------------------------------------------- contrastive

def _normalize(z, on=True):
    if not on:
        return z, np.ones((z.shape[0], 1))
    nu = np.sqrt(np.sum(z * z, axis=1, keepdims=True) + NORM_EPS)
    return z / nu, nu


def _normalize_backward(du, u, nu, on=True):
    if not on:
        return du
    return (du - u * np.sum(u * du, axis=1, keepdims=True)) / nu


def _softmax_rows(s):
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def _lse_rows(s):
    mx = s.max(axis=1, keepdims=True)
    return (mx + np.log(np.sum(np.exp(s - mx), axis=1, keepdims=True))).reshape(-1)


def _inter(u1, u2, tau):
    s = u1 @ u2.T / tau
    loss = float(np.mean(_lse_rows(s) - np.diag(s)))
    n = s.shape[0]
    ds = (_softmax_rows(s) - np.eye(n)) / n
    return loss, ds @ u2 / tau, ds.T @ u1 / tau


def _intra(u, tau):
    n = u.shape[0]
    s = u @ u.T / tau
    np.fill_diagonal(s, -np.inf)
    loss = float(np.mean(_lse_rows(s)))
    ds = _softmax_rows(s) / n
    return loss, (ds + ds.T) @ u / tau


def _check_pair(z1, z2):
    if z1.shape != z2.shape:
        raise ShapeMismatch(f"view embeddings differ in shape: {z1.shape} vs {z2.shape}")


def inter_view_loss(z1, z2, tau=0.5, normalize=True):
    """InfoNCE between matching rows of two views (minimised when aligned)."""
    _check_pair(z1, z2)
    u1, _ = _normalize(np.asarray(z1, dtype=np.float64), normalize)
    u2, _ = _normalize(np.asarray(z2, dtype=np.float64), normalize)
    loss, _, _ = _inter(u1, u2, tau)
    if not np.isfinite(loss):
        raise NonFinite("inter-view loss is not finite")
    return loss


def intra_view_loss(views, tau=0.5, normalize=True):
    """Mean over views of ``(1/n) sum_u log sum_{v != u} exp(z_u . z_v / tau)``."""
    if len(views) < 1:
        raise ValueError("need at least one view")
    for z in views[1:]:
        _check_pair(views[0], z)
    total = 0.0
    for z in views:
        u, _ = _normalize(np.asarray(z, dtype=np.float64), normalize)
        total += _intra(u, tau)[0]
    loss = total / len(views)
    if not np.isfinite(loss):
        raise NonFinite("intra-view loss is not finite")
    return loss


def contrastive_loss(z1, z2, hyper):
    return inter_view_loss(z1, z2, hyper.tau, hyper.normalize) + hyper.lambda_intra * intra_view_loss(
        [z1, z2], hyper.tau, hyper.normalize
    )


# ---------------------------------------------------------------- supervised head

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def fuse_embeddings(z1, z2, params):
    """``R = sigmoid([Z1 || Z2] W_out + B_out)``."""
    _check_pair(z1, z2)
    c = np.concatenate([z1, z2], axis=1)
    if c.shape[1] != params.W_out.shape[0]:
        raise ShapeMismatch(f"fused width {c.shape[1]} vs W_out rows {params.W_out.shape[0]}")
    return _sigmoid(c @ params.W_out + params.B_out)


def score_edges(r, src, dst, params):
    """Raw sign scores of edges ``(src[k], dst[k])`` from the 2-layer MLP."""
    e = np.concatenate([r[np.asarray(src)], r[np.asarray(dst)]], axis=1)
    return np.tanh(e @ params.W1 + params.b1) @ params.w2 + params.b2


def predict_sign_score(r, edge, params):
    i, j = edge
    return float(score_edges(r, [i], [j], params)[0])


def label_loss(scores, labels):
    """Mean binary cross-entropy on raw scores, evaluated as softplus(s) - y s."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if s.shape != y.shape:
        raise ShapeMismatch("scores and labels differ in length")
    return float(np.mean(np.logaddexp(0.0, s) - y * s))


# ---------------------------------------------------------------- forward / backward

@dataclass
class Batch:
    """Everything one loss evaluation needs besides the parameters."""

    features: np.ndarray
    view_n: ViewInputs
    view_p: ViewInputs
    src: np.ndarray
    dst: np.ndarray
    labels: np.ndarray

    @classmethod
    def build(cls, features, negative_view, positive_view, src, dst, labels):
        features = np.asarray(features, dtype=np.float64)
        vn = ViewInputs.build(negative_view, features)
        vp = vn if positive_view is negative_view else ViewInputs.build(positive_view, features)
        return cls(features, vn, vp, np.asarray(src), np.asarray(dst),
                   np.asarray(labels, dtype=np.float64))


def total_loss(params, batch, hyper):
    """``alpha * L_con + L_label``; returns ``(total, parts)``."""
    return forward(params, batch, hyper)[0:2]


def forward(params, batch, hyper):
    _check_shapes(params, batch.features)
    x = batch.features
    z1 = _encode_view(params, batch.view_n, x)
    z2 = _encode_view(params, batch.view_p, x)
    u1, nu1 = _normalize(z1, hyper.normalize)
    u2, nu2 = _normalize(z2, hyper.normalize)

    l_inter, du1, du2 = _inter(u1, u2, hyper.tau)
    l_intra1, du1_intra = _intra(u1, hyper.tau)
    l_intra2, du2_intra = _intra(u2, hyper.tau)
    l_intra = 0.5 * (l_intra1 + l_intra2)
    l_con = l_inter + hyper.lambda_intra * l_intra

    c = np.concatenate([z1, z2], axis=1)
    r = _sigmoid(c @ params.W_out + params.B_out)
    e = np.concatenate([r[batch.src], r[batch.dst]], axis=1)
    hid = np.tanh(e @ params.W1 + params.b1)
    s = hid @ params.w2 + params.b2
    l_label = label_loss(s, batch.labels)

    total = hyper.alpha * l_con + l_label
    parts = {"total": total, "contrastive": l_con, "inter": l_inter,
             "intra": l_intra, "label": l_label}
    if not all(np.isfinite(v) for v in parts.values()):
        raise NonFinite(f"non-finite loss: {parts}")
    cache = dict(z1=z1, z2=z2, u1=u1, u2=u2, nu1=nu1, nu2=nu2, du1=du1, du2=du2,
                 du1_intra=du1_intra, du2_intra=du2_intra, c=c, r=r, e=e, hid=hid, s=s)
    return total, parts, cache


def backward(params, batch, hyper, cache=None):
    """Reverse-mode gradients of :func:`total_loss` for every parameter."""
    if cache is None:
        cache = forward(params, batch, hyper)[2]
    g = ModelParams.zeros_like(params)
    m = len(batch.labels)
    emb = params.W_out.shape[1]
    hdim = params.W_pos.shape[1]

    # label head
    ds = (_sigmoid(cache["s"]) - batch.labels) / m
    hid = cache["hid"]
    g.w2 = hid.T @ ds
    g.b2 = np.asarray(ds.sum())
    da1 = np.outer(ds, params.w2) * (1.0 - hid * hid)
    g.W1 = cache["e"].T @ da1
    g.b1 = da1.sum(axis=0)
    de = da1 @ params.W1.T
    dr = np.zeros_like(cache["r"])
    np.add.at(dr, batch.src, de[:, :emb])
    np.add.at(dr, batch.dst, de[:, emb:])

    # fusion
    r = cache["r"]
    dpre = dr * r * (1.0 - r)
    g.W_out = cache["c"].T @ dpre
    g.B_out = dpre.sum(axis=0)
    dc = dpre @ params.W_out.T
    dz1 = dc[:, :hdim].copy()
    dz2 = dc[:, hdim:].copy()

    # contrastive, averaged intra term over the two views
    if hyper.alpha != 0:
        lam = hyper.lambda_intra * 0.5
        du1 = hyper.alpha * (cache["du1"] + lam * cache["du1_intra"])
        du2 = hyper.alpha * (cache["du2"] + lam * cache["du2_intra"])
        dz1 += _normalize_backward(du1, cache["u1"], cache["nu1"], hyper.normalize)
        dz2 += _normalize_backward(du2, cache["u2"], cache["nu2"], hyper.normalize)

    # shared encoder
    x = batch.features
    g.W_pos = np.zeros_like(params.W_pos)
    g.W_neg = np.zeros_like(params.W_neg)
    g.W_self = np.zeros_like(params.W_self)
    for dz, z, view in ((dz1, cache["z1"], batch.view_n), (dz2, cache["z2"], batch.view_p)):
        dh = dz * (1.0 - z * z)
        g.W_pos += view.px.T @ dh
        g.W_neg += view.nx.T @ dh
        g.W_self += x.T @ dh

    for name, v in g.arrays().items():
        if not np.all(np.isfinite(v)):
            raise NonFinite(f"non-finite gradient for {name}")
    return g


def gradient_check(params, batch, hyper, h=1e-5, floor=1e-7):
    """Compare :func:`backward` with central differences on every entry.

    Returns ``{name: max relative error}`` with relative error
    ``|a - f| / max(|a|, |f|, floor)``.
    """
    analytic = backward(params, batch, hyper)
    out = {}
    for name in PARAM_NAMES:
        p = getattr(params, name)
        a = np.asarray(getattr(analytic, name))
        worst = 0.0
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            fp = total_loss(params, batch, hyper)[0]
            p[idx] = old - h
            fm = total_loss(params, batch, hyper)[0]
            p[idx] = old
            fd = (fp - fm) / (2 * h)
            an = float(a[idx])
            err = abs(an - fd) / max(abs(an), abs(fd), floor)
            worst = max(worst, err)
        out[name] = worst
    return out


# ---------------------------------------------------------------- optimisers

class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        for name in PARAM_NAMES:
            setattr(params, name, getattr(params, name) - self.lr * getattr(grads, name))


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.t += 1
        for name in PARAM_NAMES:
            g = getattr(grads, name)
            m = self.m.get(name, np.zeros_like(g))
            v = self.v.get(name, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            mh = m / (1 - self.beta1 ** self.t)
            vh = v / (1 - self.beta2 ** self.t)
            setattr(params, name, getattr(params, name) - self.lr * mh / (np.sqrt(vh) + self.eps))


def make_optimizer(hyper):
    if hyper.optimizer == "sgd":
        return SGD(hyper.learning_rate)
    return Adam(hyper.learning_rate)


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    params: ModelParams
    augmenter: object
    history: list
    features: np.ndarray
    positive_view: sp.csr_matrix
    nd_percent: float = 0.0

    def __iter__(self):
        # allows ``params, state, history = train(...)``
        return iter((self.params, self.augmenter, self.history))


def _labels(poisoned):
    rows, cols, vals = edge_arrays(poisoned)
    return rows, cols, (vals > 0).astype(np.float64)


def train(poisoned, split=None, hyper=None, features=None, callback=None):
    """Jointly train the encoder/head and the balance augmenter.

    ``poisoned`` is the (possibly attacked) training adjacency; its edges and
    signs are the supervised labels. ``split``, when given, must describe the
    same training topology. With ``alpha == 0`` and ``nd_percent == 0`` no
    augmenter is built and the two views coincide.
    """
    hyper = hyper or HyperParams()
    poisoned = sp.csr_matrix(poisoned, dtype=np.float64)
    n = poisoned.shape[0]
    if split is not None and split.train_graph.node_count != n:
        raise ShapeMismatch("split and poisoned graph differ in node count")
    if features is None:
        features = make_features(n, hyper)
    features = np.asarray(features, dtype=np.float64)
    params = init_params_for(hyper)
    _check_shapes(params, features, poisoned)
    src, dst, y = _labels(poisoned)

    state = None
    nd = 0.0
    if hyper.uses_augmenter and hyper.epochs > 0:
        state = aug.optimize_delta(
            poisoned, steps=max(hyper.augmenter_warmup, 1), step_size=hyper.augmenter_step,
            seed=derive_seed(hyper.seed, "augmenter"),
        )
        if hyper.nd_percent is None:
            nd, _ = aug.choose_nd_percent(poisoned, state)
        else:
            nd = hyper.nd_percent
        state.nd_percent = nd

    opt = make_optimizer(hyper)
    vn = ViewInputs.build(poisoned, features)
    positive = poisoned
    history = []
    eta = state.step_size if state is not None else None
    for epoch in range(hyper.epochs):
        if state is not None:
            positive = aug.sample_positive_view(poisoned, state)
            vp = ViewInputs.build(positive, features)
        else:
            vp = vn
        batch = Batch(features, vn, vp, src, dst, y)
        total, parts, cache = forward(params, batch, hyper)
        grads = backward(params, batch, hyper, cache)
        bal = None
        if state is not None:
            bal = aug.balance_loss(poisoned, state)
        opt.step(params, grads)
        if state is not None:
            _, eta = aug.delta_step(poisoned, state, eta)
        rec = {"epoch": epoch, "loss": parts["total"], "contrastive": parts["contrastive"],
               "label": parts["label"], "balance": bal}
        history.append(rec)
        if callback is not None:
            callback(rec)
    if state is not None:
        positive = aug.sample_positive_view(poisoned, state)
    return TrainResult(params, state, history, features, positive, nd)


def embed(params, negative_view, positive_view, features):
    """Fused node embeddings ``R`` for a trained model."""
    z1 = encode(params, negative_view, features)
    z2 = encode(params, positive_view, features)
    return fuse_embeddings(z1, z2, params)


def predict(result, poisoned, src, dst):
    r = embed(result.params, poisoned, result.positive_view, result.features)
    return score_edges(r, src, dst, result.params)


# ---------------------------------------------------------------- checkpoints

_LEN = struct.Struct("<Q")


def save_checkpoint(prefix, params, hyper, epoch=0, seeds=None):
    """Write ``prefix.json`` (manifest) and ``prefix.bin`` (parameters).

    The binary file holds, for each array in manifest order, a little-endian
    uint64 element count followed by that many little-endian float64 values
    in row-major order.
    """
    prefix = str(prefix)
    arrays = params.arrays()
    manifest = {
        "format": "signbal-checkpoint-1",
        "hyperparams": hyper.to_dict(),
        "epoch": int(epoch),
        "seeds": seeds if seeds is not None else {"root": hyper.seed},
        "arrays": [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()],
        "binary": prefix.rsplit("/", 1)[-1] + ".bin",
    }
    with open(prefix + ".bin", "wb") as fh:
        for v in arrays.values():
            flat = np.ascontiguousarray(v, dtype="<f8").reshape(-1)
            fh.write(_LEN.pack(flat.size))
            fh.write(flat.tobytes())
    with open(prefix + ".json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_checkpoint(prefix):
    prefix = str(prefix)
    with open(prefix + ".json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    hyper = HyperParams.from_dict(manifest["hyperparams"])
    arrays = {}
    with open(prefix + ".bin", "rb") as fh:
        for spec in manifest["arrays"]:
            shape = tuple(spec["shape"])
            (count,) = _LEN.unpack(fh.read(_LEN.size))
            expected = int(np.prod(shape)) if shape else 1
            if count != expected:
                raise ShapeMismatch(f"{spec['name']}: {count} values stored, shape {shape} needs {expected}")
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ShapeMismatch(f"{spec['name']}: truncated checkpoint")
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
        if fh.read(1):
            raise ShapeMismatch("trailing bytes in checkpoint")
    if set(arrays) != set(PARAM_NAMES):
        raise ShapeMismatch(f"checkpoint arrays {sorted(arrays)} do not match the model")
    params = ModelParams(**arrays)
    dims = params.dims
    for key, val in dims.items():
        if getattr(hyper, key) != val:
            raise ShapeMismatch(f"{key}={val} in arrays but {getattr(hyper, key)} in manifest")
    return params, hyper, manifest
