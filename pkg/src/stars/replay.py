"""Per-task prioritized experience replay.

Each task owns one buffer: a FIFO ring of transitions plus a sum tree over
alpha-exponentiated priorities for O(log C) weighted sampling. New
transitions enter with the running maximum raw priority; after a training
step the sampled transitions' priorities are replaced outright with their
fresh values.

Two priority scales coexist deliberately. Sampling probabilities use
(|delta|+eps)^alpha; the task-level mass used by the budget scheduler is
the plain sum of raw |delta|+eps values, maintained incrementally so
reading it never walks the buffer.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np

SampleRef = namedtuple("SampleRef", ["slots", "gens"])

# below this many updates, per-leaf path updates beat a full level rebuild
_PATH_UPDATE_MAX = 32


class SumTree:
    """Complete binary tree of priority sums over `capacity` leaves.

    Nodes live in one array, 1-indexed: node i has children 2i and 2i+1,
    leaves occupy [capacity, 2*capacity). The root is the total mass.
    """

    def __init__(self, capacity):
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError(f"capacity must be a power of two, got {capacity}")
        self.capacity = capacity
        self.depth = int(np.log2(capacity))
        self.nodes = np.zeros(2 * capacity)

    @property
    def total(self):
        return float(self.nodes[1])

    def leaf(self, slot):
        return float(self.nodes[self.capacity + slot])

    def set(self, slot, value):
        idx = self.capacity + slot
        delta = value - self.nodes[idx]
        self.nodes[idx] = value
        idx >>= 1
        while idx:
            self.nodes[idx] += delta
            idx >>= 1

    def set_many(self, slots, values):
        if len(slots) <= _PATH_UPDATE_MAX:
            for s, v in zip(slots, values):
                self.set(int(s), float(v))
            return
        self.nodes[self.capacity + np.asarray(slots)] = values
        lo = self.capacity
        while lo > 1:
            level = self.nodes[lo:2 * lo]
            self.nodes[lo // 2:lo] = level[0::2] + level[1::2]
            lo //= 2

    def find(self, values):
        """Descend for each cumulative value in [0, total); returns leaf slots."""
        values = np.minimum(np.asarray(values, dtype=np.float64),
                            np.nextafter(self.nodes[1], 0.0))
        idx = np.ones(len(values), dtype=np.int64)
        for _ in range(self.depth):
            left = idx << 1
            left_sum = self.nodes[left]
            go_right = values >= left_sum
            values = values - left_sum * go_right
            idx = left + go_right
        return idx - self.capacity


class PrioritizedBuffer:
    """Sum-tree-backed replay buffer for a single task."""

    def __init__(self, task_id, capacity=65536, alpha=0.6, eps=1e-4, state_dim=None,
                 action_dim=None):
        self.task_id = task_id
        self.capacity = capacity
        self.alpha = float(alpha)
        self.eps = float(eps)
        self.tree = SumTree(capacity)
        self.size = 0
        self._next = 0
        self.max_raw = 1.0
        self._raw = np.zeros(capacity)      # per-slot raw priority |delta| + eps
        self._raw_mass = 0.0
        self._gen = np.zeros(capacity, dtype=np.int64)
        self.stale_updates = 0
        self._cols = None
        if state_dim is not None and action_dim is not None:
            self._alloc(state_dim, action_dim)

    def __len__(self):
        return self.size

    def _alloc(self, state_dim, action_dim):
        self._cols = {
            "state": np.zeros((self.capacity, state_dim)),
            "action": np.zeros((self.capacity, action_dim)),
            "reward": np.zeros(self.capacity),
            "next_state": np.zeros((self.capacity, state_dim)),
            "done": np.zeros(self.capacity, dtype=bool),
        }

    def push(self, transition):
        """Store at the next ring slot with the running max priority."""
        if transition.task_id != self.task_id:
            raise ValueError(
                f"transition for task {transition.task_id} pushed to buffer "
                f"for task {self.task_id}"
            )
        if self._cols is None:
            self._alloc(len(transition.state), len(transition.action))
        slot = self._next
        c = self._cols
        c["state"][slot] = transition.state
        c["action"][slot] = transition.action
        c["reward"][slot] = transition.reward
        c["next_state"][slot] = transition.next_state
        c["done"][slot] = transition.done
        raw = self.max_raw
        self._raw_mass += raw - self._raw[slot]
        self._raw[slot] = raw
        self.tree.set(slot, raw ** self.alpha)
        self._gen[slot] += 1
        self._next = (slot + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, n, beta, rng):
        """Stratified draw of n transitions.

        The total mass is split into n equal strata with one uniform draw
        each. Importance weights are (size * P(i))^-beta, normalized by the
        batch maximum. Returns (columns dict, SampleRef, weights).
        """
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        if n < 1:
            raise ValueError("sample size must be >= 1")
        total = self.tree.total
        u = (np.arange(n) + rng.random(n)) * (total / n)
        slots = self.tree.find(u)
        probs = self.tree.nodes[self.tree.capacity + slots] / total
        weights = (self.size * probs) ** (-float(beta))
        weights = weights / weights.max()
        batch = {k: v[slots] for k, v in self._cols.items()}
        return batch, SampleRef(slots, self._gen[slots].copy()), weights

    def update_priorities(self, ref, abs_deltas):
        """Replace priorities of still-resident transitions with fresh values.

        Slots overwritten since sampling are skipped (counted, not an error).
        """
        slots = np.asarray(ref.slots)
        fresh = self._gen[slots] == ref.gens
        self.stale_updates += int((~fresh).sum())
        if not fresh.any():
            return
        slots = slots[fresh]
        raw = np.asarray(abs_deltas, dtype=np.float64)[fresh] + self.eps
        # a slot sampled twice appears twice; keep the last write per slot so
        # the incremental mass stays exact
        _, rev_first = np.unique(slots[::-1], return_index=True)
        keep = len(slots) - 1 - rev_first
        slots, raw = slots[keep], raw[keep]
        self._raw_mass += raw.sum() - self._raw[slots].sum()
        self._raw[slots] = raw
        self.max_raw = max(self.max_raw, float(raw.max()))
        self.tree.set_many(slots, raw ** self.alpha)

    def priority_mass(self):
        """Sum of raw |delta|+eps over live transitions (the scheduler's task mass)."""
        return self._raw_mass
