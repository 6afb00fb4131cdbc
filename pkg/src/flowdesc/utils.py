import hashlib
from pathlib import Path
from typing import Union

import numpy as np


def derive_seed(*keys: int) -> int:
    """Stable 63-bit seed derived from a tuple of non-negative integers."""
    sequence = np.random.SeedSequence([int(key) for key in keys])
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(key) for key in keys]))


def file_digest(path: Union[str, Path], length: int = 16) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as stream:
        for chunk in iter(lambda: stream.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()[:length]
