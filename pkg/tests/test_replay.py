import numpy as np
import pytest

from stars.envs import Transition
from stars.replay import PrioritizedBuffer, SampleRef, SumTree


def make_transition(task_id=0, reward=0.0):
    return Transition(
        state=np.zeros(4), action=np.zeros(2), reward=reward,
        next_state=np.zeros(4), done=False, task_id=task_id,
    )


class FlatOracle:
    """O(C) reference buffer: plain arrays, searchsorted sampling."""

    def __init__(self, capacity, alpha, eps):
        self.capacity = capacity
        self.alpha = alpha
        self.eps = eps
        self.raw = np.zeros(capacity)
        self.live = np.zeros(capacity, dtype=bool)
        self.gen = np.zeros(capacity, dtype=np.int64)
        self.max_raw = 1.0
        self._next = 0

    def push(self):
        slot = self._next
        self.raw[slot] = self.max_raw
        self.live[slot] = True
        self.gen[slot] += 1
        self._next = (slot + 1) % self.capacity
        return slot

    def sample_slots(self, n, rng):
        p = np.where(self.live, self.raw ** self.alpha, 0.0)
        cum = np.cumsum(p)
        total = cum[-1]
        u = (np.arange(n) + rng.random(n)) * (total / n)
        u = np.minimum(u, np.nextafter(total, 0.0))
        return np.searchsorted(cum, u, side="right"), self.gen.copy()

    def update(self, slots, gens, deltas):
        # last write wins per slot; the running max tracks stored values only
        last = {}
        for s, g, d in zip(slots, gens, deltas):
            if self.gen[s] == g:
                last[int(s)] = d
        for s, d in last.items():
            self.raw[s] = d + self.eps
            self.max_raw = max(self.max_raw, d + self.eps)

    def mass(self):
        return self.raw[self.live].sum()


class TestSumTree:
    def test_capacity_must_be_power_of_two(self):
        with pytest.raises(ValueError, match="power of two"):
            SumTree(12)

    def test_single_update_changes_root_by_exact_delta(self):
        tree = SumTree(8)
        for slot, v in enumerate([0.5, 1.5, 2.0]):
            tree.set(slot, v)
        root = tree.nodes[1]
        tree.set(1, 4.5)
        assert tree.nodes[1] == root + (4.5 - 1.5)

    def test_internal_nodes_sum_children(self):
        rng = np.random.default_rng(0)
        tree = SumTree(16)
        vals = rng.random(16)
        tree.set_many(np.arange(16), vals)
        for i in range(1, 16):
            assert tree.nodes[i] == pytest.approx(
                tree.nodes[2 * i] + tree.nodes[2 * i + 1], rel=1e-9)
        assert tree.total == pytest.approx(vals.sum(), rel=1e-12)

    def test_find_matches_searchsorted(self):
        rng = np.random.default_rng(1)
        tree = SumTree(32)
        vals = rng.random(32)
        tree.set_many(np.arange(32), vals)
        u = rng.random(1000) * tree.total
        expect = np.searchsorted(np.cumsum(vals), u, side="right")
        assert np.array_equal(tree.find(u), expect)


class TestPush:
    def test_first_push_gets_priority_one(self):
        buf = PrioritizedBuffer(task_id=0, capacity=8, alpha=0.6)
        buf.push(make_transition())
        assert buf.tree.leaf(0) == 1.0
        assert buf.priority_mass() == 1.0

    def test_push_after_update_carries_new_max(self):
        buf = PrioritizedBuffer(task_id=0, capacity=8, alpha=0.6, eps=0.0)
        buf.push(make_transition())
        buf.update_priorities(SampleRef(np.array([0]), np.array([1])), np.array([5.0]))
        buf.push(make_transition())
        assert buf.tree.leaf(1) == pytest.approx(5.0 ** 0.6)

    def test_ring_overwrites_oldest(self):
        buf = PrioritizedBuffer(task_id=0, capacity=8, alpha=1.0)
        for i in range(11):
            buf.push(make_transition(reward=float(i)))
        assert len(buf) == 8
        rewards = sorted(buf._cols["reward"])
        assert rewards == [3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]

    def test_task_mismatch_rejected(self):
        buf = PrioritizedBuffer(task_id=1, capacity=8)
        with pytest.raises(ValueError, match="task"):
            buf.push(make_transition(task_id=0))


class _FixedRng:
    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64)

    def random(self, n):
        assert n == len(self.values)
        return self.values


class TestSample:
    def test_uniform_priorities_give_unit_weights(self):
        buf = PrioritizedBuffer(task_id=0, capacity=8, alpha=0.6)
        for _ in range(6):
            buf.push(make_transition())
        _, _, w = buf.sample(4, beta=0.7, rng=np.random.default_rng(0))
        assert np.allclose(w, 1.0)

    def test_hand_computed_importance_weights(self):
        # stored priorities [1, 3], size 2, beta 1:
        # raw weights [(2*0.25)^-1, (2*0.75)^-1] = [2, 2/3] -> [1, 1/3]
        buf = PrioritizedBuffer(task_id=0, capacity=2, alpha=1.0, eps=0.0)
        buf.push(make_transition())
        buf.push(make_transition())
        buf.update_priorities(
            SampleRef(np.array([0, 1]), np.array([1, 1])), np.array([1.0, 3.0]))
        _, ref, w = buf.sample(2, beta=1.0, rng=_FixedRng([0.1, 0.9]))
        assert list(ref.slots) == [0, 1]
        assert w[0] == pytest.approx(1.0)
        assert w[1] == pytest.approx(1.0 / 3.0)

    def test_empirical_frequencies_match_probabilities(self):
        buf = PrioritizedBuffer(task_id=0, capacity=4, alpha=1.0, eps=0.0)
        for _ in range(4):
            buf.push(make_transition())
        buf.update_priorities(
            SampleRef(np.arange(4), np.ones(4, dtype=np.int64)),
            np.array([1.0, 2.0, 3.0, 4.0]))
        rng = np.random.default_rng(42)
        counts = np.zeros(4)
        draws = 100_000
        for _ in range(draws // 4):
            _, ref, _ = buf.sample(4, beta=0.4, rng=rng)
            np.add.at(counts, ref.slots, 1)
        freq = counts / draws
        expect = np.array([0.1, 0.2, 0.3, 0.4])
        sigma = np.sqrt(expect * (1 - expect) / draws)
        assert np.all(np.abs(freq - expect) <= 3 * sigma)

    def test_alpha_zero_is_uniform(self):
        buf = PrioritizedBuffer(task_id=0, capacity=8, alpha=0.0, eps=0.0)
        for _ in range(5):
            buf.push(make_transition())
        buf.update_priorities(
            SampleRef(np.arange(5), np.ones(5, dtype=np.int64)),
            np.array([1.0, 10.0, 100.0, 5.0, 0.5]))
        rng = np.random.default_rng(3)
        counts = np.zeros(5)
        draws = 50_000
        for _ in range(draws // 5):
            _, ref, w = buf.sample(5, beta=1.0, rng=rng)
            np.add.at(counts, ref.slots, 1)
            assert np.allclose(w, 1.0)
        freq = counts / draws
        assert np.all(np.abs(freq - 0.2) <= 3 * np.sqrt(0.2 * 0.8 / draws))

    def test_empty_buffer_rejected(self):
        buf = PrioritizedBuffer(task_id=0, capacity=8)
        with pytest.raises(ValueError, match="empty"):
            buf.sample(1, beta=0.4, rng=np.random.default_rng(0))

    def test_never_returns_empty_slot(self):
        buf = PrioritizedBuffer(task_id=0, capacity=16, alpha=0.6)
        for _ in range(3):
            buf.push(make_transition())
        rng = np.random.default_rng(7)
        for _ in range(200):
            _, ref, _ = buf.sample(8, beta=0.4, rng=rng)
            assert np.all(ref.slots < 3)


class TestUpdatePriorities:
    def test_zero_delta_keeps_positive_priority(self):
        buf = PrioritizedBuffer(task_id=0, capacity=4, alpha=0.6, eps=1e-4)
        buf.push(make_transition())
        buf.update_priorities(SampleRef(np.array([0]), np.array([1])), np.array([0.0]))
        assert buf.tree.leaf(0) == pytest.approx(1e-4 ** 0.6)
        assert buf.tree.leaf(0) > 0

    def test_stale_indices_skipped_and_counted(self):
        buf = PrioritizedBuffer(task_id=0, capacity=2, alpha=1.0, eps=0.0)
        buf.push(make_transition())
        buf.push(make_transition())
        _, ref, _ = buf.sample(2, beta=0.4, rng=np.random.default_rng(0))
        buf.push(make_transition())  # overwrites slot 0
        mass_before_slot0 = buf._raw[0]
        buf.update_priorities(ref, np.array([9.0, 7.0]))
        assert buf.stale_updates == 1
        assert buf._raw[0] == mass_before_slot0  # stale write skipped
        assert buf._raw[1] == 7.0

    def test_priorities_always_positive(self):
        buf = PrioritizedBuffer(task_id=0, capacity=8, alpha=0.6, eps=1e-4)
        rng = np.random.default_rng(5)
        for i in range(50):
            buf.push(make_transition())
            if i % 3 == 0 and len(buf) > 1:
                _, ref, _ = buf.sample(2, beta=0.4, rng=rng)
                buf.update_priorities(ref, np.zeros(2))
        live = buf.tree.nodes[buf.tree.capacity:buf.tree.capacity + len(buf)]
        assert np.all(live > 0)


class TestMass:
    def test_empty_mass_is_zero(self):
        assert PrioritizedBuffer(task_id=0, capacity=4).priority_mass() == 0.0

    def test_two_transitions_sum(self):
        buf = PrioritizedBuffer(task_id=0, capacity=4, alpha=1.0, eps=0.0)
        buf.push(make_transition())
        buf.push(make_transition())
        buf.update_priorities(
            SampleRef(np.array([0, 1]), np.array([1, 1])), np.array([2.0, 3.0]))
        assert buf.priority_mass() == pytest.approx(5.0)


def run_fuzz(n_ops, capacity=64, alpha=0.6, eps=1e-4, seed=0, sample_n=8):
    """Random push/sample/update against the flat oracle, in lockstep."""
    buf = PrioritizedBuffer(task_id=0, capacity=capacity, alpha=alpha, eps=eps)
    oracle = FlatOracle(capacity, alpha, eps)
    ctrl = np.random.default_rng(seed)
    for op in range(n_ops):
        choice = ctrl.random()
        if choice < 0.5 or len(buf) == 0:
            buf.push(make_transition())
            oracle.push()
        elif choice < 0.8:
            n = min(sample_n, len(buf))
            s = int(ctrl.integers(1 << 31))
            _, ref, w = buf.sample(n, beta=0.5, rng=np.random.default_rng(s))
            oracle_slots, gens_oracle = oracle.sample_slots(n, np.random.default_rng(s))
            assert np.array_equal(ref.slots, oracle_slots), f"op {op}: sampled slots diverge"
            deltas = ctrl.random(n) * 4.0
            buf.update_priorities(ref, deltas)
            oracle.update(ref.slots, gens_oracle[ref.slots], deltas)
        else:
            # interleave pushes between sample and update to create staleness
            n = min(4, len(buf))
            s = int(ctrl.integers(1 << 31))
            _, ref, _ = buf.sample(n, beta=0.5, rng=np.random.default_rng(s))
            oracle_slots, oracle_gens = oracle.sample_slots(n, np.random.default_rng(s))
            for _ in range(int(ctrl.integers(1, 4))):
                buf.push(make_transition())
                oracle.push()
            deltas = ctrl.random(n) * 4.0
            buf.update_priorities(ref, deltas)
            oracle.update(ref.slots, oracle_gens[ref.slots], deltas)
        assert buf.priority_mass() == pytest.approx(oracle.mass(), rel=1e-9)
        assert buf.tree.total == pytest.approx(
            np.sum(oracle.raw[oracle.live] ** alpha), rel=1e-9)
    return buf, oracle


def test_fuzz_against_flat_oracle():
    run_fuzz(1000, capacity=64, seed=11)


def test_fuzz_small_capacity_heavy_wraparound():
    run_fuzz(500, capacity=8, seed=13, sample_n=4)
