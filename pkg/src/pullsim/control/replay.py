"""Fixed-capacity ring buffer of transitions."""

from __future__ import annotations

import numpy as np


class ReplayBuffer:
    """Stores named fixed-width float fields; the oldest entries are overwritten first.

    >>> buf = ReplayBuffer(4, {"s": 2, "a": 1})
    >>> buf.add(s=[0.0, 1.0], a=[3.0])
    >>> len(buf)
    1
    """

    def __init__(self, capacity: int, fields: dict[str, int]):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = int(capacity)
        self.fields = dict(fields)
        self._data = {k: np.zeros((self.capacity, w)) for k, w in self.fields.items()}
        self._size = 0
        self._next = 0

    def __len__(self):
        return self._size

    def add(self, **values) -> None:
        if set(values) != set(self.fields):
            raise KeyError(f"expected fields {sorted(self.fields)}, got {sorted(values)}")
        for k, v in values.items():
            self._data[k][self._next] = np.ravel(np.asarray(v, dtype=np.float64))
        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """Uniform sample without replacement; at most ``len(self)`` rows."""
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        if batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        n = min(batch_size, self._size)
        idx = rng.choice(self._size, size=n, replace=False)
        return {k: v[idx] for k, v in self._data.items()}

    def all(self) -> dict[str, np.ndarray]:
        return {k: v[: self._size].copy() for k, v in self._data.items()}
