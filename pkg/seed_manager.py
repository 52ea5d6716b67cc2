# seed_manager.py: stable derived seeds, seeded generators and batch sampling

import hashlib
import logging
from typing import Optional

import numpy as np

from errors import EmptyDataError


# ---------------------------
# Logging
# ---------------------------

logger = logging.getLogger(__name__)


def derive_seed(master_seed: int, *keys) -> int:
    """
    Stable 63-bit seed for (master_seed, *keys).

    sha256 over the ':'-joined key path, so the value never depends on the
    interpreter's hash randomization and adding new keys never shifts old ones.
    """
    text = ":".join(str(k) for k in (master_seed, *keys))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & ((1 << 63) - 1)


def make_rng(master_seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, *keys))


class BatchSampler:
    """
    Mini-batches of min(batch_size, n) indices drawn without replacement.

    A fresh permutation is drawn whenever the current one cannot fill another
    batch. When one batch covers the whole split, the indices come back in
    natural order.
    """

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if n < 1:
            raise EmptyDataError("SAMPLER: cannot sample batches from an empty split")
        if batch_size < 1:
            raise ValueError(f"SAMPLER: batch_size must be >= 1, got {batch_size}")
        self.n = n
        self.size = min(batch_size, n)
        self.rng = rng
        self._perm: Optional[np.ndarray] = None
        self._cursor = 0

    def next_batch(self) -> np.ndarray:
        if self.size >= self.n:
            return np.arange(self.n)
        if self._perm is None or self._cursor + self.size > self.n:
            self._perm = self.rng.permutation(self.n)
            self._cursor = 0
        batch = self._perm[self._cursor:self._cursor + self.size]
        self._cursor += self.size
        return batch
