"""Two-faction signed digraphs with tunable sign noise.

With zero noise every directed triangle has an even number of negative
edges (two hostile camps), so the balance degree is exactly 1.
"""
from dataclasses import asdict, dataclass

import numpy as np

from .graph import SignedDiGraph


@dataclass(frozen=True)
class FactionConfig:
    n: int = 150
    p_in: float = 0.1
    p_out: float = 0.1
    rho: float = 0.05
    seed: int = 0
    faction_prob: float = 0.5

    def __post_init__(self):
        for name in ("p_in", "p_out", "rho", "faction_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} must lie in [0, 1]")
        if self.n < 3:
            raise ValueError("n must be >= 3")

    def to_dict(self):
        return asdict(self)


def two_faction_graph(cfg, return_factions=False):
    """Sample a two-faction graph.

    Random draws are made in a fixed order (factions, topology, noise) over
    the full n x n grid, so for a given seed the topology does not depend on
    ``rho`` and the set of noise-flipped edges grows monotonically with it.
    """
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n
    faction = (rng.random(n) < cfg.faction_prob).astype(np.int8)
    same = faction[:, None] == faction[None, :]
    u_edge = rng.random((n, n))
    u_noise = rng.random((n, n))
    p = np.where(same, cfg.p_in, cfg.p_out)
    mask = u_edge < p
    np.fill_diagonal(mask, False)
    src, dst = np.nonzero(mask)
    sign = np.where(same[src, dst], 1, -1)
    noisy = u_noise[src, dst] < cfg.rho
    sign = np.where(noisy, -sign, sign).astype(np.int8)
    g = SignedDiGraph(n, src, dst, sign)
    if return_factions:
        return g, faction
    return g
