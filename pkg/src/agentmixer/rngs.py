"""Named RNG sub-streams derived from a single run seed.

Every source of randomness in a run (environment dynamics, parameter
initialization, action sampling, diagnostics) draws from its own stream so
that changing the consumer count of one stream cannot shift another.
"""
from __future__ import annotations

import zlib

import numpy as np

ENV = "env"
POLICY_INIT = "policy-init"
SAMPLING = "sampling"
EVAL = "eval"
GUMBEL_TEST = "gumbel-test"


def stream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Generator for sub-stream ``name[index]`` of the given run seed.

    The stream key is a stable CRC of the name, so stream identity survives
    refactors that reorder creation sites.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), key, int(index))))
