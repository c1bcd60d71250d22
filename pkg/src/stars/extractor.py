"""Shared-unique feature extraction.

Shared side: a pool of K knowledge components stored as the columns of a
P x K matrix; task j mixes them with its transform weight vector, and the
mixed vector unflattens into the weights of a small shared-branch MLP
(state -> hidden -> shared_dim). Gradients reach the pool from every task's
data, while each transform weight only ever sees its own task.

Unique side: one ordinary MLP (state -> hidden -> unique_dim) shared across
tasks, whose outputs are additionally pulled apart task-by-task with a
triplet hinge: anchor and positive from one task, negative from another,
squared euclidean distance. The triplet term backpropagates into the unique
head only.

The policy consumes [shared, unique] concatenated, in that order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, param
from .nets import MLP


@dataclass
class FeatureBundle:
    shared: object
    unique: object
    combined: object


def sample_triples(rng, task_ids, n_triples):
    """Uniform triples (anchor, positive, negative) over a mixed batch.

    Anchors are uniform over transitions whose task appears at least twice
    and that have at least one other-task transition to act as a negative;
    positives are uniform over the anchor task's other transitions and
    negatives uniform over all other-task transitions. Returns None when no
    eligible anchor exists (degenerate batch).
    """
    task_ids = np.asarray(task_ids)
    total = len(task_ids)
    positions = {t: np.flatnonzero(task_ids == t) for t in np.unique(task_ids)}
    eligible = [i for i in range(total)
                if len(positions[task_ids[i]]) >= 2
                and total - len(positions[task_ids[i]]) >= 1]
    if not eligible:
        return None
    eligible = np.asarray(eligible)
    anchors = eligible[rng.integers(0, len(eligible), size=n_triples)]
    others = {t: np.flatnonzero(task_ids != t) for t in positions}
    pos = np.empty(n_triples, dtype=np.intp)
    neg = np.empty(n_triples, dtype=np.intp)
    for m, a in enumerate(anchors):
        t = task_ids[a]
        same = positions[t]
        rank = int(np.searchsorted(same, a))
        pos[m] = same[(rank + 1 + rng.integers(0, len(same) - 1)) % len(same)]
        neg[m] = others[t][rng.integers(0, len(others[t]))]
    return anchors, pos, neg


def triplet_loss(tape, unique_features, task_ids, margin, n_triples, rng):
    """Mean hinge over sampled triples; returns (loss, degenerate flag)."""
    triples = sample_triples(rng, task_ids, n_triples)
    if triples is None:
        return Tensor(0.0), True
    a, p, n = triples
    fa = tape.gather_rows(unique_features, a)
    d_pos = tape.sq_dist(fa, tape.gather_rows(unique_features, p))
    d_neg = tape.sq_dist(fa, tape.gather_rows(unique_features, n))
    hinge = tape.relu(tape.add_const(tape.sub(d_pos, d_neg), margin))
    return tape.mean(hinge), False


class SharedParameterSet:
    """The P x K component pool and the per-task K-vector transform weights."""

    def __init__(self, state_dim, hidden, shared_dim, k, n_tasks, rng):
        self.state_dim = state_dim
        self.hidden = hidden
        self.shared_dim = shared_dim
        self.k = k
        self.n_tasks = n_tasks
        # shared-branch layout: W1 (state,hidden), b1, W2 (hidden,shared), b2
        self.blocks = [
            (state_dim, hidden), (1, hidden),
            (hidden, shared_dim), (1, shared_dim),
        ]
        sizes = [a * b for a, b in self.blocks]
        self.p_total = sum(sizes)
        self._offsets = np.cumsum([0] + sizes)
        cols = []
        for _ in range(k):
            col = []
            for (a, b), size in zip(self.blocks, sizes):
                if a == 1:  # bias rows start at zero
                    col.append(np.zeros(size))
                else:
                    col.append(rng.uniform(-1.0, 1.0, size=size) / np.sqrt(a))
            cols.append(np.concatenate(col))
        self.phi = param(np.stack(cols, axis=1))
        self.w = [param(rng.uniform(0.0, 1.0 / k, size=(k, 1)))
                  for _ in range(n_tasks)]

    def compose(self, tape, task_id):
        """Mix the pool for one task and unflatten into branch weights."""
        if not 0 <= task_id < self.n_tasks:
            raise ValueError(f"task id {task_id} out of range [0, {self.n_tasks})")
        omega = tape.matmul(self.phi, self.w[task_id])
        weights = []
        for (a, b), lo, hi in zip(self.blocks, self._offsets[:-1], self._offsets[1:]):
            weights.append(tape.reshape(tape.slice_rows(omega, lo, hi), (a, b)))
        return weights

    def compose_np(self, task_id):
        omega = self.phi.data @ self.w[task_id].data
        return [omega[lo:hi].reshape((a, b))
                for (a, b), lo, hi in zip(self.blocks, self._offsets[:-1],
                                          self._offsets[1:])]

    def branch_forward(self, tape, weights, x):
        w1, b1, w2, b2 = weights
        h = tape.relu(tape.add(tape.matmul(x, w1), b1))
        return tape.add(tape.matmul(h, w2), b2)

    def branch_forward_np(self, weights, x):
        w1, b1, w2, b2 = weights
        h = np.maximum(x @ w1 + b1, 0.0)
        return h @ w2 + b2

    def compose_all_np(self):
        """Stacked per-task branch weights for row-wise mixed-task batches."""
        wmat = np.concatenate([w.data for w in self.w], axis=1)   # (K, N)
        omega = (self.phi.data @ wmat).T                          # (N, P)
        out = []
        for (a, b), lo, hi in zip(self.blocks, self._offsets[:-1], self._offsets[1:]):
            out.append(omega[:, lo:hi].reshape((self.n_tasks, a, b)))
        return out

    def named_params(self):
        out = {"extractor.phi": self.phi}
        for j, w in enumerate(self.w):
            out[f"extractor.w{j}"] = w
        return out


class FeatureExtractor:
    def __init__(self, state_dim, n_tasks, hidden=64, shared_dim=32,
                 unique_dim=16, k=5, margin=1.0, pairs=32,
                 unique_enabled=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.shared = SharedParameterSet(state_dim, hidden, shared_dim, k,
                                         n_tasks, rng)
        self.unique = MLP([state_dim, hidden, unique_dim], rng)
        self.unique_enabled = bool(unique_enabled)
        self.margin = float(margin)
        self.pairs = int(pairs)
        self.degenerate_batches = 0
        self.feature_dim = shared_dim + (unique_dim if self.unique_enabled else 0)

    def extract(self, tape, states, task_id):
        """FeatureBundle for a single-task batch of states."""
        weights = self.shared.compose(tape, task_id)
        f_s = self.shared.branch_forward(tape, weights, states)
        if not self.unique_enabled:
            return FeatureBundle(shared=f_s, unique=None, combined=f_s)
        f_u = self.unique.forward(tape, states)
        return FeatureBundle(shared=f_s, unique=f_u,
                             combined=tape.concat([f_s, f_u], axis=1))

    def extract_grouped(self, tape, groups):
        """FeatureBundle over task-grouped sub-batches, concatenated in order.

        groups: list of (task_id, states Tensor) with per-task rows.
        """
        shared_chunks = [
            self.shared.branch_forward(tape, self.shared.compose(tape, tid), states)
            for tid, states in groups
        ]
        f_s = shared_chunks[0] if len(shared_chunks) == 1 else \
            tape.concat(shared_chunks, axis=0)
        if not self.unique_enabled:
            return FeatureBundle(shared=f_s, unique=None, combined=f_s)
        all_states = groups[0][1] if len(groups) == 1 else \
            tape.concat([states for _, states in groups], axis=0)
        f_u = self.unique.forward(tape, all_states)
        return FeatureBundle(shared=f_s, unique=f_u,
                             combined=tape.concat([f_s, f_u], axis=1))

    def triplet_loss(self, tape, unique_features, task_ids, rng):
        loss, degenerate = triplet_loss(tape, unique_features, task_ids,
                                        self.margin, self.pairs, rng)
        if degenerate:
            self.degenerate_batches += 1
        return loss

    # ---- gradient-free paths for rollouts and evaluation ----

    def features_np(self, states, task_id):
        f_s = self.shared.branch_forward_np(self.shared.compose_np(task_id), states)
        if not self.unique_enabled:
            return f_s
        return np.concatenate([f_s, self.unique.forward_np(states)], axis=1)

    def features_np_rows(self, states, task_ids):
        """Row-wise features where row i belongs to task task_ids[i]."""
        w1, b1, w2, b2 = self.shared.compose_all_np()
        t = np.asarray(task_ids)
        h = np.maximum(np.einsum("ni,nio->no", states, w1[t]) + b1[t, 0], 0.0)
        f_s = np.einsum("ni,nio->no", h, w2[t]) + b2[t, 0]
        if not self.unique_enabled:
            return f_s
        return np.concatenate([f_s, self.unique.forward_np(states)], axis=1)

    def named_params(self):
        out = self.shared.named_params()
        if self.unique_enabled:
            out.update(self.unique.named_params("unique"))
        return out

    def trainable_params(self):
        return list(self.named_params().values())
