"""Counter-based RNG streams derived from one master seed."""
import numpy as np

# stream tags
INIT = 0
EPOCH = 1
SAMPLE = 2
CLASSIFIER = 3
NOISE = 4


def stream(seed, *keys):
    """Independent generator for the logical task identified by ``keys``."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(words))
