"""FIFO experience store with seeded uniform sampling."""

from __future__ import annotations

import numpy as np

from .errors import DomainError


class InsufficientSamples(DomainError):
    """The buffer holds fewer items than the requested minibatch."""


class ReplayBuffer:
    """Fixed-capacity ring of named transition fields.

    Fields are preallocated float arrays; pushes accept batches of rows and
    evict the oldest entries once the capacity is reached.  Sampling is
    uniform with replacement from whatever is stored.
    """

    def __init__(self, capacity: int, fields: dict):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self._data = {
            name: np.zeros((self.capacity,) + tuple(shape), dtype=float)
            for name, shape in fields.items()
        }
        self._head = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, **rows) -> None:
        """Append a batch of rows (first axis indexes transitions)."""
        if set(rows) != set(self._data):
            raise KeyError(f"fields must be exactly {sorted(self._data)}")
        n = len(next(iter(rows.values())))
        if n > self.capacity:  # only the newest entries can survive anyway
            rows = {k: np.asarray(v)[-self.capacity:] for k, v in rows.items()}
            n = self.capacity
        first = min(n, self.capacity - self._head)
        for name, arr in self._data.items():
            values = np.asarray(rows[name], dtype=float)
            arr[self._head:self._head + first] = values[:first]
            if first < n:
                arr[:n - first] = values[first:]
        self._head = (self._head + n) % self.capacity
        self._size = min(self._size + n, self.capacity)

    def sample(self, rng: np.random.Generator, size: int) -> dict:
        """Uniform sample with replacement; raises below the minibatch size."""
        if self._size < size:
            raise InsufficientSamples(f"buffer holds {self._size} < {size}")
        idx = rng.integers(0, self._size, size)
        return {name: arr[idx] for name, arr in self._data.items()}
