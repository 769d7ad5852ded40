"""Named random substreams derived from a single root seed.

Every stochastic component (split, features, attack, init, augmenter, ...)
draws from its own stream so that changing one stage never perturbs another.
"""
import zlib

import numpy as np


def derive_seed(seed, name):
    """Integer seed for substream ``name`` of root ``seed``."""
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence([int(seed), key])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def substream(seed, name):
    return np.random.default_rng(derive_seed(seed, name))
