"""Balance-degree attacks and balance-augmented contrastive defense for signed digraphs."""
__version__ = "0.1.0"

from .attack import AttackBudget, AttackPlan, balance_attack, exhaustive_best_flip, random_attack
from .augmenter import (
    AugmenterState,
    balance_loss,
    balance_loss_gradient,
    choose_nd_percent,
    expected_view,
    optimize_delta,
    sample_positive_view,
)
from .balance import (
    BalanceReport,
    GradientMode,
    balance_degree,
    balance_degree_bruteforce,
    balance_gradient,
)
from .graph import (
    EdgeSplit,
    SignedDiGraph,
    from_adjacency,
    overlap_ratio,
    parse_edge_list,
    perturbation_distance,
    random_features,
    split_edges,
    to_adjacency,
)
from .metrics import EvalReport, auc, evaluate_attack, f1_suite
from .model import HyperParams, ModelParams, train
from .restore import RestorationReport, balance_learning_restore, irreversibility_experiment
from .synth import FactionConfig, two_faction_graph
