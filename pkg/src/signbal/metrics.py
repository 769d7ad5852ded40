"""Link-sign evaluation metrics and the attack/defense evaluation pipeline."""
import csv
import io
import warnings
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.stats import rankdata

from .attack import AttackBudget, balance_attack, random_attack
from .balance import balance_degree
from .errors import ConfigError, LengthMismatch, SingleClass
from .graph import overlap_ratio, split_edges, to_adjacency
from .restore import balance_learning_restore
from .seeding import derive_seed

TABLE_COLUMNS = ("Dataset", "Ptb%", "model", "AUC", "Macro-F1", "Micro-F1", "Binary-F1")
ATTACKS = ("balance", "random", "none")
DEFENSES = ("none", "balance-learning", "ba-sgcl")


def auc(scores, labels):
    """Probability that a random positive outscores a random negative (ties 1/2)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape:
        raise LengthMismatch("scores and labels differ in length")
    n_pos = int(np.count_nonzero(y == 1))
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def confusion(predictions, labels):
    p = np.asarray(predictions).astype(int)
    y = np.asarray(labels).astype(int)
    if p.shape != y.shape:
        raise LengthMismatch("predictions and labels differ in length")
    tp = int(np.count_nonzero((p == 1) & (y == 1)))
    fp = int(np.count_nonzero((p == 1) & (y == 0)))
    tn = int(np.count_nonzero((p == 0) & (y == 0)))
    fn = int(np.count_nonzero((p == 0) & (y == 1)))
    return tp, fp, tn, fn


def _f1(tp, fp, fn, cls):
    denom = 2 * tp + fp + fn
    if denom == 0:
        warnings.warn(f"class {cls} absent from predictions and labels; F1 set to 0", RuntimeWarning)
        return 0.0
    return 2.0 * tp / denom


def _f1_from_counts(tp, fp, tn, fn):
    f_pos = _f1(tp, fp, fn, 1)
    # the negative class swaps the roles of tp/tn and fp/fn
    f_neg = _f1(tn, fn, fp, 0)
    n = tp + fp + tn + fn
    micro = (tp + tn) / n if n else 0.0
    return f_pos, micro, 0.5 * (f_pos + f_neg)


def f1_suite(predictions, labels):
    """``(binary_f1, micro_f1, macro_f1)`` for 0/1 predictions."""
    return _f1_from_counts(*confusion(predictions, labels))


@dataclass(frozen=True)
class EvalReport:
    auc: float
    macro_f1: float
    micro_f1: float
    binary_f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    n_test: int
    misclassified_positive_fraction: float

    @classmethod
    def from_scores(cls, scores, labels):
        """Threshold raw scores at 0 (``sigmoid >= 0.5``) and compute every metric."""
        s = np.asarray(scores, dtype=np.float64)
        y = np.asarray(labels).astype(int)
        pred = (s >= 0).astype(int)
        tp, fp, tn, fn = confusion(pred, y)
        binary, micro, macro = _f1_from_counts(tp, fp, tn, fn)
        wrong = fp + fn
        return cls(
            auc=auc(s, y), macro_f1=macro, micro_f1=micro, binary_f1=binary,
            tp=tp, fp=fp, tn=tn, fn=fn, n_test=len(y),
            misclassified_positive_fraction=fn / wrong if wrong else 0.0,
        )

    def consistent(self):
        if self.tp + self.fp + self.tn + self.fn != self.n_test:
            return False
        b, mi, ma = _f1_from_counts(self.tp, self.fp, self.tn, self.fn)
        return np.allclose([b, mi, ma], [self.binary_f1, self.micro_f1, self.macro_f1], atol=1e-15)

    def to_dict(self):
        return asdict(self)


def _poison(train_adj, attack, ptb_rate, seed):
    if attack == "none" or ptb_rate == 0:
        return train_adj, 0
    budget = AttackBudget(rate=ptb_rate)
    if attack == "balance":
        plan = balance_attack(train_adj, budget)
    elif attack == "random":
        plan = random_attack(train_adj, budget, seed=derive_seed(seed, "attack"))
    else:
        raise ConfigError(f"unknown attack {attack!r}")
    return plan.final_matrix, plan.n_flips


def evaluate_attack(clean, attack="balance", ptb_rate=0.2, defense="ba-sgcl", hyper=None,
                    seeds=(0,), train_ratio=0.8, dataset="synthetic", features=None):
    """Split, poison the training graph, train, and score the clean test edges.

    Returns one row (a flat dict) per seed. ``defense="none"`` and
    ``"balance-learning"`` train the encoder-only arm (alpha = 0, no
    augmenter); ``"ba-sgcl"`` uses ``hyper`` as given.
    """
    from .model import HyperParams, predict, train

    if attack not in ATTACKS:
        raise ConfigError(f"unknown attack {attack!r}")
    if defense not in DEFENSES:
        raise ConfigError(f"unknown defense {defense!r}")
    hyper = hyper or HyperParams()
    rows = []
    for seed in seeds:
        split = split_edges(clean, train_ratio, seed=derive_seed(seed, "split"))
        train_clean = to_adjacency(split.train_graph)
        poisoned, n_flips = _poison(train_clean, attack, ptb_rate, seed)
        d3_poisoned = balance_degree(poisoned).d3
        model_input = poisoned
        extra = {}
        if defense == "balance-learning":
            rep = balance_learning_restore(poisoned, clean=train_clean)
            model_input = rep.restored_matrix
            extra = {"restore_flips": rep.flips_used, "d3_restored": rep.d3_after,
                     "overlap_restored": rep.overlap_with_clean}
        h = replace(hyper, seed=int(seed))
        if defense != "ba-sgcl":
            h = replace(h, alpha=0.0, nd_percent=0)
        res = train(model_input, split, h, features=features)
        scores = predict(res, model_input, split.test_src, split.test_dst)
        rep = EvalReport.from_scores(scores, (split.test_sign > 0).astype(int))
        row = {
            "dataset": dataset, "attack": attack, "ptb_rate": ptb_rate,
            "model": "BA-SGCL" if defense == "ba-sgcl" else (
                "encoder+balance-learning" if defense == "balance-learning" else "encoder"),
            "defense": defense, "seed": int(seed), "n_flips": n_flips,
            "d3_clean": balance_degree(train_clean).d3, "d3_poisoned": d3_poisoned,
            "overlap_poisoned": overlap_ratio(poisoned, train_clean),
            "nd_percent": res.nd_percent,
            "d3_positive_view": balance_degree(res.positive_view).d3,
            **extra, **rep.to_dict(),
        }
        rows.append(row)
    return rows


def table_rows(rows):
    """Project evaluation rows onto the standard results-table columns."""
    return [
        {
            "Dataset": r["dataset"], "Ptb%": round(100 * r["ptb_rate"], 6), "model": r["model"],
            "AUC": r["auc"], "Macro-F1": r["macro_f1"], "Micro-F1": r["micro_f1"],
            "Binary-F1": r["binary_f1"],
        }
        for r in rows
    ]


def to_csv(rows, columns=None):
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r.get(k) for k in columns})
    return buf.getvalue()
