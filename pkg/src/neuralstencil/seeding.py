"""Named substreams so every piece of randomness flows from one config seed."""

import numpy as np

_STREAMS = {"init": 0, "data": 1, "noise": 2, "x0": 3, "test": 4, "eval": 5}


def substream(seed, name, index=0):
    """Independent deterministic generator for (seed, stream name, index)."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), _STREAMS[name], int(index)]))
