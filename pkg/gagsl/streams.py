"""
Named counter-based random streams.

All randomness flows from one base seed. A stream is addressed by
(seed, name, *counters) and backed by a Philox generator whose key is derived
from that address, so draws never depend on call order elsewhere in the run.
"""
import hashlib
from typing import Tuple, Union

import numpy as np

# Stream names used across the pipeline
THETA = "train.theta"
PHI = "train.phi"
OMEGA = "train.omega"
ATTACK = "attack"
SAMPLING = "sampling"
DATA = "data"

Counter = Union[int, str]


def stream_key(seed: int, name: str, *counters: Counter) -> int:
    """128-bit Philox key for a stream address."""
    address = ":".join([str(int(seed)), name] + [str(c) for c in counters])
    digest = hashlib.sha256(address.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def make_rng(seed: int, name: str, *counters: Counter) -> np.random.Generator:
    """Generator for the stream (seed, name, *counters)."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, name, *counters)))


def child_seed(seed: int, name: str, *counters: Counter) -> int:
    """Derive an integer seed (e.g. a per-trial seed) from a stream address."""
    return stream_key(seed, name, *counters) % (2 ** 31 - 1)


def trial_seeds(base_seed: int, trials: int) -> Tuple[int, ...]:
    """Per-trial seeds for an experiment."""
    return tuple(child_seed(base_seed, "trial", i) for i in range(trials))
