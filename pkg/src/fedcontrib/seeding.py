"""Derivation of independent, reproducible random streams.

Every stochastic component draws from its own stream, keyed by the experiment
seed plus a purpose tag (and usually a client id and round index).  Two
consequences we rely on throughout:

* reruns with the same configuration are bit-identical, and
* honest clients receive the same stream whether or not an attacker is
  present, so paired attack-free / attacked runs stay comparable.
"""

from __future__ import annotations

import numpy as np

# Purpose tags.  Values are arbitrary but must never change once results
# have been recorded.
TAG_DATA = 1
TAG_SPLIT = 2
TAG_PARTITION = 3
TAG_SELECT = 4
TAG_TRAIN = 5
TAG_ATTACK_NOISE = 6
TAG_DEFENSE_RANDOM = 7
TAG_AUGMENT = 8


def child_seed(root: int, *tags: int) -> int:
    """Derive a 64-bit child seed from a root seed and integer tags."""
    words = np.random.SeedSequence((int(root),) + tuple(int(t) for t in tags)).generate_state(2)
    return int(words[0]) << 32 | int(words[1])


def stream(root: int, *tags: int) -> np.random.Generator:
    """Return a generator for the (root, *tags) stream."""
    return np.random.default_rng(np.random.SeedSequence((int(root),) + tuple(int(t) for t in tags)))
