"""Prioritised replay on an array sum-tree."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, InvalidState

PRIORITY_EPS = 1e-6


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r_n: float
    gamma_n: float
    s_next: np.ndarray
    terminal: bool = False


class SumTree:
    """Leaves live at [cap, 2*cap); node i holds the sum of its two children."""

    def __init__(self, capacity):
        size = 1
        while size < capacity:
            size *= 2
        self.leaves = size
        self.depth = size.bit_length() - 1
        self.tree = np.zeros(2 * size)

    def update(self, idx, values):
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64)) + self.leaves
        self.tree[idx] = np.atleast_1d(np.asarray(values, dtype=float))
        # duplicate parents just recompute the same sum
        for _ in range(self.depth):
            idx //= 2
            self.tree[idx] = self.tree[2 * idx] + self.tree[2 * idx + 1]

    @property
    def total(self):
        return self.tree[1]

    def leaf(self, idx):
        return self.tree[np.asarray(idx) + self.leaves]

    def find(self, mass):
        """Vectorised descent: leaf index whose prefix-sum interval holds each mass."""
        mass = np.asarray(mass, dtype=float).copy()
        node = np.ones(mass.shape, dtype=np.int64)
        while node[0] < self.leaves:
            left = 2 * node
            lv = self.tree[left]
            go_right = mass >= lv
            mass = np.where(go_right, mass - lv, mass)
            node = np.where(go_right, left + 1, left)
        return node - self.leaves


class PrioritizedBuffer:
    def __init__(self, capacity, alpha=0.5):
        if capacity < 1:
            raise InvalidParameter("capacity must be positive")
        self.capacity = capacity
        self.alpha = alpha
        self.tree = SumTree(capacity)
        self.data = [None] * capacity
        self.priorities = np.zeros(capacity)
        self.max_priority = 1.0
        self.pos = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, transition):
        i = self.pos
        self.data[i] = transition
        self.priorities[i] = self.max_priority
        self.tree.update(i, self.max_priority**self.alpha)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def probabilities(self):
        """Closed-form sampling probabilities of the stored items."""
        p = self.tree.leaf(np.arange(self.size))
        return p / p.sum()

    def sample_indices(self, batch_size, rng):
        if self.size < batch_size or self.size == 0:
            raise InvalidState(f"buffer holds {self.size} < {batch_size} transitions")
        total = self.tree.total
        bounds = np.linspace(0.0, total, batch_size + 1)
        mass = rng.uniform(bounds[:-1], bounds[1:])
        idx = self.tree.find(np.minimum(mass, np.nextafter(total, 0)))
        # float round-off can land on an empty trailing leaf
        return np.minimum(idx, self.size - 1)

    def sample(self, batch_size, beta, rng):
        """Returns ``(batch, indices, weights)``; weights are (n·P(i))^-beta
        normalised by the batch maximum."""
        idx = self.sample_indices(batch_size, rng)
        probs = self.tree.leaf(idx) / self.tree.total
        w = (self.size * probs) ** (-beta)
        w /= w.max()
        return [self.data[i] for i in idx], idx, w

    def update_priorities(self, indices, signal):
        prio = np.abs(np.asarray(signal, dtype=float)) + PRIORITY_EPS
        self.priorities[indices] = prio
        self.tree.update(indices, prio**self.alpha)
        self.max_priority = max(self.max_priority, float(prio.max()))
