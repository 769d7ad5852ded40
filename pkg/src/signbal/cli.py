"""Command-line entry point: ``signbal <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
import argparse
import contextlib
import hashlib
import itertools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import __version__
from .attack import AttackBudget, balance_attack, random_attack
from .balance import balance_degree
from .errors import ConfigError, DataError, NumericError
from .graph import format_edge_list, read_edge_list, resign, to_adjacency
from .metrics import ATTACKS, DEFENSES, TABLE_COLUMNS, evaluate_attack, table_rows, to_csv
from .model import HyperParams, save_checkpoint
from .restore import DEFAULT_TARGET_D3, balance_learning_restore, irreversibility_experiment
from .seeding import derive_seed
from .synth import FactionConfig, two_faction_graph

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


@dataclass
class ExperimentConfig:
    input: str = None
    input_format: str = "signed"
    synth: dict = None
    dataset: str = None
    attack: str = "balance"
    ptb_rate: float = 0.2
    defense: str = "ba-sgcl"
    alpha: float = 1.0
    tau: float = 0.5
    lambda_intra: float = 1.0
    nd_percent: float = None
    epochs: int = 200
    lr: float = 0.001
    dim: int = 64
    optimizer: str = "adam"
    augmenter_warmup: int = 200
    train_ratio: float = 0.8
    seeds: list = field(default_factory=lambda: [0])
    deterministic: bool = True
    target_d3: float = DEFAULT_TARGET_D3
    max_flips: int = None
    clean: str = None
    checkpoint: str = None
    out: str = None
    format: str = "json"

    def validate(self, need_graph=True):
        if need_graph and (self.input is None) == (self.synth is None):
            raise ConfigError("give exactly one of --input or --synth")
        if self.input_format not in ("signed", "rated"):
            raise ConfigError(f"unknown input format {self.input_format!r}")
        if self.attack not in ATTACKS:
            raise ConfigError(f"attack must be one of {ATTACKS}")
        if self.defense not in DEFENSES:
            raise ConfigError(f"defense must be one of {DEFENSES}")
        if not 0.0 <= self.ptb_rate <= 1.0:
            raise ConfigError("ptb_rate must lie in [0, 1]")
        if not 0.0 < self.train_ratio < 1.0:
            raise ConfigError("train_ratio must lie in (0, 1)")
        if self.format not in ("json", "csv"):
            raise ConfigError("format must be json or csv")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.synth is not None:
            self.synth_config()
        self.hyper()
        return self

    def hyper(self):
        return HyperParams(
            alpha=self.alpha, tau=self.tau, lambda_intra=self.lambda_intra,
            nd_percent=self.nd_percent, learning_rate=self.lr, epochs=self.epochs,
            hidden_dim=self.dim, embed_dim=self.dim, mlp_hidden=self.dim,
            optimizer=self.optimizer, augmenter_warmup=self.augmenter_warmup,
            seed=self.seeds[0],
        )

    def synth_config(self):
        d = dict(self.synth)
        d.setdefault("seed", derive_seed(self.seeds[0], "synth"))
        try:
            return FactionConfig(**d)
        except TypeError as exc:
            raise ConfigError(f"bad synth config: {exc}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def parse_seeds(text):
    """``"3"``, ``"0,1,4"`` or ``"0-4"`` (inclusive)."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def parse_synth(text):
    """``"n=150,p_in=0.1,rho=0.05"`` -> dict."""
    if text.strip().startswith("{"):
        return json.loads(text)
    d = {}
    for item in text.split(","):
        if not item.strip():
            continue
        if "=" not in item:
            raise ConfigError(f"bad --synth item {item!r}; expected key=value")
        k, v = item.split("=", 1)
        v = v.strip()
        d[k.strip()] = int(v) if v.lstrip("-").isdigit() else float(v)
    return d


# flag -> config key
_FLAGS = {
    "input": "input", "input_format": "input_format", "synth": "synth", "dataset": "dataset",
    "attack": "attack", "ptb_rate": "ptb_rate", "defense": "defense", "alpha": "alpha",
    "tau": "tau", "lambda_intra": "lambda_intra", "nd_percent": "nd_percent",
    "epochs": "epochs", "lr": "lr", "dim": "dim", "optimizer": "optimizer",
    "augmenter_warmup": "augmenter_warmup", "train_ratio": "train_ratio",
    "deterministic": "deterministic", "target_d3": "target_d3", "max_flips": "max_flips",
    "clean": "clean", "checkpoint": "checkpoint", "out": "out", "format": "format",
}


def build_config(args):
    """Defaults, then the JSON config file, then explicitly given flags."""
    merged = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                merged.update(json.load(fh))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        if "seed" in merged:
            merged["seeds"] = [merged.pop("seed")]
    for flag, key in _FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            merged[key] = v
    if getattr(args, "seeds", None) is not None:
        merged["seeds"] = parse_seeds(args.seeds)
    elif getattr(args, "seed", None) is not None:
        merged["seeds"] = [args.seed]
    if isinstance(merged.get("synth"), str):
        merged["synth"] = parse_synth(merged["synth"])
    if isinstance(merged.get("seeds"), (int, str)):
        merged["seeds"] = parse_seeds(merged["seeds"])
    return ExperimentConfig.from_dict(merged)


def load_graph(cfg):
    if cfg.input is not None:
        try:
            return read_edge_list(cfg.input, cfg.input_format), cfg.dataset or os.path.basename(cfg.input)
        except OSError as exc:
            raise DataError(f"cannot read {cfg.input}: {exc}") from None
    return two_faction_graph(cfg.synth_config()), cfg.dataset or "synthetic"


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _emit(text, path):
    if path is None:
        sys.stdout.write(text)
    else:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


@contextlib.contextmanager
def _threads(cfg):
    if cfg.deterministic:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=1):
            yield
    else:
        yield


# ---------------------------------------------------------------- commands

def cmd_analyze(cfg):
    g, name = load_graph(cfg)
    rep = balance_degree(to_adjacency(g))
    out = {"dataset": name, "nodes": g.node_count, "edges": g.edge_count,
           "positive_edges": g.n_positive, "negative_edges": g.n_negative, **rep.to_dict()}
    _emit(_dumps(out), cfg.out)
    if rep.degenerate:
        print("warning: graph has no directed 3-cycles (degenerate balance degree)", file=sys.stderr)
    return out


def _outdir(cfg, default):
    d = cfg.out or default
    os.makedirs(d, exist_ok=True)
    return d


def cmd_attack(cfg):
    g, name = load_graph(cfg)
    a = to_adjacency(g)
    budget = AttackBudget(rate=cfg.ptb_rate)
    if cfg.attack == "balance":
        plan = balance_attack(a, budget)
    elif cfg.attack == "random":
        plan = random_attack(a, budget, seed=derive_seed(cfg.seeds[0], "attack"))
    else:
        raise ConfigError("attack command needs --attack balance or random")
    d = _outdir(cfg, "attack_out")
    poisoned = resign(g, plan.final_matrix)
    _emit(format_edge_list(poisoned, labels=True), os.path.join(d, "poisoned.tsv"))
    report = {"dataset": name, "ptb_rate": cfg.ptb_rate, **plan.to_dict()}
    _emit(_dumps(report), os.path.join(d, "plan.json"))
    summary = {"d3_before": plan.d3_trajectory[0], "d3_after": plan.d3_trajectory[-1],
               "flips": plan.n_flips, "budget": plan.budget, "out": d}
    print(json.dumps(summary, sort_keys=True))
    return report


def cmd_defend(cfg):
    g, name = load_graph(cfg)
    a = to_adjacency(g)
    d = _outdir(cfg, "defend_out")
    if cfg.attack != "none" and cfg.ptb_rate > 0:
        # input is the clean graph: attack it, then restore
        exp = irreversibility_experiment(a, cfg.ptb_rate, seed=cfg.seeds[0], target_d3=cfg.target_d3)
        restored = exp.pop("restored")
        exp.pop("poisoned")
        report = {"dataset": name, **exp}
    else:
        clean = None
        if cfg.clean is not None:
            clean = to_adjacency(read_edge_list(cfg.clean, cfg.input_format))
        rep = balance_learning_restore(a, cfg.target_d3, cfg.max_flips, clean=clean)
        restored = rep.restored_matrix
        report = {"dataset": name, **rep.to_dict()}
    _emit(format_edge_list(resign(g, restored), labels=True), os.path.join(d, "restored.tsv"))
    _emit(_dumps(report), os.path.join(d, "report.json"))
    print(json.dumps({k: report[k] for k in sorted(report) if k.startswith(("d3", "overlap"))},
                     sort_keys=True))
    return report


def _run_eval(cfg):
    g, name = load_graph(cfg)
    hyper = cfg.hyper()
    rows = evaluate_attack(g, cfg.attack, cfg.ptb_rate, cfg.defense, hyper, seeds=cfg.seeds,
                           train_ratio=cfg.train_ratio, dataset=name)
    return rows


def cmd_train_eval(cfg):
    with _threads(cfg):
        rows = _run_eval(cfg)
    if cfg.format == "csv":
        text = to_csv(table_rows(rows), TABLE_COLUMNS)
    else:
        conf = {k: v for k, v in cfg.to_dict().items() if k not in ("out", "checkpoint")}
        text = _dumps({"config": conf, "results": rows})
    _emit(text, cfg.out)
    if cfg.checkpoint:
        from .model import train

        g, _ = load_graph(cfg)
        h = replace(cfg.hyper(), seed=cfg.seeds[-1])
        if cfg.defense != "ba-sgcl":
            h = replace(h, alpha=0.0, nd_percent=0)
        res = train(to_adjacency(g), None, h)
        save_checkpoint(cfg.checkpoint, res.params, h, epoch=h.epochs,
                        seeds={"root": h.seed, "init": derive_seed(h.seed, "init"),
                               "features": derive_seed(h.seed, "features")})
    return rows


def cell_hash(cell):
    blob = json.dumps(cell, sort_keys=True, default=_json_default).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def expand_grid(matrix):
    """Cartesian product of ``matrix["grid"]`` laid over ``matrix["base"]``."""
    base = dict(matrix.get("base", {}))
    grid = matrix.get("grid", {})
    keys = sorted(grid)
    cells = []
    for values in itertools.product(*(grid[k] for k in keys)):
        cell = dict(base)
        cell.update(zip(keys, values))
        cells.append(cell)
    return cells


def _sweep_cell(cell):
    cfg = ExperimentConfig.from_dict({k: v for k, v in cell.items() if k != "out"}).validate()
    with _threads(cfg):
        rows = _run_eval(cfg)
    return rows


def cmd_sweep(cfg, matrix):
    cells = expand_grid(matrix)
    out = cfg.out or "sweep.csv"
    cache = out + ".cells"
    os.makedirs(cache, exist_ok=True)
    for cell in cells:
        ExperimentConfig.from_dict(cell).validate()
    todo = []
    for cell in cells:
        h = cell_hash(cell)
        if not os.path.exists(os.path.join(cache, h + ".json")):
            todo.append((h, cell))
    workers = max(1, int(os.environ.get("SIGNET_THREADS", "1")))
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_sweep_cell, [c for _, c in todo]))
    else:
        results = [_sweep_cell(c) for _, c in todo]
    # results are written by this process only
    for (h, cell), rows in zip(todo, results):
        with open(os.path.join(cache, h + ".json"), "w", encoding="utf-8") as fh:
            fh.write(_dumps({"cell": cell, "rows": rows}))
    all_rows = []
    for cell in cells:
        h = cell_hash(cell)
        with open(os.path.join(cache, h + ".json"), encoding="utf-8") as fh:
            rows = json.load(fh)["rows"]
        for tr, r in zip(table_rows(rows), rows):
            all_rows.append({**tr, "seed": r["seed"], "alpha": cell.get("alpha", 1.0),
                             "attack": r["attack"], "cell": h})
    cols = list(TABLE_COLUMNS) + ["seed", "alpha", "attack", "cell"]
    _emit(to_csv(all_rows, cols), out)
    print(json.dumps({"cells": len(cells), "computed": len(todo), "rows": len(all_rows), "out": out}))
    return all_rows


def cmd_synth(cfg):
    g = two_faction_graph(cfg.synth_config())
    _emit(format_edge_list(g), cfg.out)
    return g


# ---------------------------------------------------------------- parser

def _common(p, graph=True):
    if graph:
        p.add_argument("--input", help="edge-list file (whitespace or comma separated)")
        p.add_argument("--input-format", choices=("signed", "rated"))
        p.add_argument("--synth", help='two-faction generator, e.g. "n=150,p_in=0.1,p_out=0.1,rho=0.05"')
        p.add_argument("--dataset", help="name used in reports")
    p.add_argument("--config", help="JSON config; explicit flags override it")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help='e.g. "0-4" or "0,3,7"')
    p.add_argument("--out")
    p.add_argument("--format", choices=("json", "csv"))
    p.add_argument("--deterministic", dest="deterministic", action="store_true", default=None)
    p.add_argument("--no-deterministic", dest="deterministic", action="store_false")


def _experiment(p):
    p.add_argument("--attack", choices=ATTACKS)
    p.add_argument("--ptb-rate", type=float)
    p.add_argument("--defense", choices=DEFENSES)
    p.add_argument("--alpha", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--lambda-intra", type=float)
    p.add_argument("--nd-percent", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dim", type=int)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--augmenter-warmup", type=int)
    p.add_argument("--train-ratio", type=float)
    p.add_argument("--checkpoint", help="write model checkpoint to PREFIX.json / PREFIX.bin")


def build_parser():
    parser = argparse.ArgumentParser(prog="signbal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="balance degree of a graph")
    _common(p)

    p = sub.add_parser("attack", help="poison a graph by sign flips")
    _common(p)
    p.add_argument("--attack", choices=("balance", "random"))
    p.add_argument("--ptb-rate", type=float)

    p = sub.add_parser("defend", help="balance-learning restoration")
    _common(p)
    p.add_argument("--attack", choices=ATTACKS)
    p.add_argument("--ptb-rate", type=float)
    p.add_argument("--target-d3", type=float)
    p.add_argument("--max-flips", type=int)
    p.add_argument("--clean", help="clean edge list for overlap reporting")

    p = sub.add_parser("train-eval", help="attack, train and evaluate")
    _common(p)
    _experiment(p)

    p = sub.add_parser("sweep", help="run a grid of train-eval cells")
    p.add_argument("matrix", help='JSON file: {"base": {...}, "grid": {"key": [values]}}')
    p.add_argument("--out")

    p = sub.add_parser("synth", help="write a two-faction graph as an edge list")
    _common(p, graph=False)
    p.add_argument("--synth", required=True)
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "sweep":
        try:
            with open(args.matrix, encoding="utf-8") as fh:
                matrix = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load sweep matrix: {exc}") from None
        return cmd_sweep(ExperimentConfig(out=args.out), matrix)
    cfg = build_config(args)
    if args.command == "attack" and cfg.attack == "none":
        raise ConfigError("attack command needs --attack balance or random")
    if args.command == "synth":
        cfg.validate(need_graph=False)
        if cfg.synth is None:
            raise ConfigError("--synth is required")
        return cmd_synth(cfg)
    cfg.validate()
    handler = {"analyze": cmd_analyze, "attack": cmd_attack, "defend": cmd_defend,
               "train-eval": cmd_train_eval}[args.command]
    return handler(cfg)


def main(argv=None):
    try:
        run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
