import numpy as np
import pytest

from stars.autodiff import Adam, Tape, Tensor, param
from stars.extractor import FeatureExtractor, sample_triples, triplet_loss
from gradcheck import assert_gradients_match


def make_extractor(state_dim=10, n_tasks=4, hidden=16, shared_dim=8,
                   unique_dim=4, k=5, seed=0, **kw):
    return FeatureExtractor(state_dim=state_dim, n_tasks=n_tasks, hidden=hidden,
                            shared_dim=shared_dim, unique_dim=unique_dim, k=k,
                            rng=np.random.default_rng(seed), **kw)


class TestCompose:
    def test_basis_vector_selects_column(self):
        ex = make_extractor()
        shared = ex.shared
        kk = 3
        shared.w[0].data[:] = 0.0
        shared.w[0].data[kk, 0] = 1.0
        composed = shared.compose_np(0)
        flat = np.concatenate([w.reshape(-1) for w in composed])
        assert np.allclose(flat, shared.phi.data[:, kk])
        assert flat.shape == (shared.p_total,)

    def test_zero_weights_give_zero_response(self):
        ex = make_extractor()
        ex.shared.w[1].data[:] = 0.0
        states = np.random.default_rng(1).standard_normal((5, 10))
        f_s = ex.shared.branch_forward_np(ex.shared.compose_np(1), states)
        assert np.array_equal(f_s, np.zeros((5, 8)))

    def test_matmul_equals_double_loop_oracle(self):
        ex = make_extractor(seed=3)
        shared = ex.shared
        omega = shared.phi.data @ shared.w[2].data
        oracle = np.zeros(shared.p_total)
        for p in range(shared.p_total):
            for k in range(shared.k):
                oracle[p] += shared.phi.data[p, k] * shared.w[2].data[k, 0]
        assert np.allclose(omega[:, 0], oracle, atol=1e-12)

    def test_out_of_range_task_rejected(self):
        ex = make_extractor()
        with pytest.raises(ValueError, match="range"):
            ex.shared.compose(Tape(), 4)

    def test_composition_linearity(self):
        ex = make_extractor(seed=5)
        shared = ex.shared
        rng = np.random.default_rng(8)
        u = rng.standard_normal((shared.k, 1))
        v = rng.standard_normal((shared.k, 1))
        alpha, beta = 0.7, -1.3
        shared.w[0].data = u
        a = np.concatenate([b.reshape(-1) for b in shared.compose_np(0)])
        shared.w[0].data = v
        b = np.concatenate([bb.reshape(-1) for bb in shared.compose_np(0)])
        shared.w[0].data = alpha * u + beta * v
        mixed = np.concatenate([bb.reshape(-1) for bb in shared.compose_np(0)])
        assert np.allclose(mixed, alpha * a + beta * b, atol=1e-12)


class TestExtract:
    def test_same_task_uses_same_parameters(self):
        ex = make_extractor()
        s1 = np.random.default_rng(0).standard_normal((3, 10))
        s2 = np.random.default_rng(1).standard_normal((6, 10))
        w_first = [b.copy() for b in ex.shared.compose_np(2)]
        ex.features_np(s1, 2)
        ex.features_np(s2, 2)
        w_after = ex.shared.compose_np(2)
        assert all(np.array_equal(a, b) for a, b in zip(w_first, w_after))

    def test_combined_length(self):
        ex = make_extractor(shared_dim=8, unique_dim=4)
        states = np.zeros((2, 10))
        f = ex.features_np(states, 0)
        assert f.shape == (2, 12)
        tape = Tape()
        bundle = ex.extract(tape, Tensor(states), 0)
        assert bundle.combined.data.shape == (2, 12)
        # concatenation order is [shared, unique]
        assert np.array_equal(bundle.combined.data[:, :8], bundle.shared.data)
        assert np.array_equal(bundle.combined.data[:, 8:], bundle.unique.data)

    def test_unique_disabled_returns_shared_only(self):
        ex = make_extractor(unique_enabled=False)
        assert ex.feature_dim == 8
        f = ex.features_np(np.zeros((2, 10)), 0)
        assert f.shape == (2, 8)

    def test_tape_and_numpy_paths_agree(self):
        ex = make_extractor(seed=11)
        states = np.random.default_rng(4).standard_normal((7, 10))
        tape = Tape()
        bundle = ex.extract(tape, Tensor(states), 1)
        assert np.allclose(bundle.combined.data, ex.features_np(states, 1))

    def test_row_wise_path_matches_per_task(self):
        ex = make_extractor(seed=12)
        rng = np.random.default_rng(5)
        states = rng.standard_normal((8, 10))
        task_ids = np.array([0, 1, 2, 3, 0, 1, 2, 3])
        rows = ex.features_np_rows(states, task_ids)
        for i in range(8):
            expect = ex.features_np(states[i:i + 1], int(task_ids[i]))
            assert np.allclose(rows[i], expect[0])


class TestGradientIsolation:
    def _grouped_loss(self, ex, groups):
        def forward(tape):
            g = [(tid, Tensor(states)) for tid, states in groups]
            bundle = ex.extract_grouped(tape, g)
            return tape.mean(tape.square(bundle.combined))
        return forward

    def test_absent_task_weight_gets_no_gradient(self):
        ex = make_extractor(seed=7)
        rng = np.random.default_rng(2)
        groups = [(0, rng.standard_normal((3, 10))), (1, rng.standard_normal((2, 10)))]
        tape = Tape()
        loss = self._grouped_loss(ex, groups)(tape)
        tape.backward(loss)
        assert ex.shared.phi.grad is not None
        assert np.abs(ex.shared.phi.grad).max() > 0
        assert np.abs(ex.shared.w[0].grad).max() > 0
        assert ex.shared.w[2].grad is None
        assert ex.shared.w[3].grad is None

    def test_phi_gradient_matches_finite_differences(self):
        ex = make_extractor(seed=9, hidden=6, shared_dim=4, unique_dim=3, k=3)
        rng = np.random.default_rng(3)
        groups = [(0, rng.standard_normal((2, 10))), (1, rng.standard_normal((2, 10)))]
        params = [ex.shared.phi, ex.shared.w[0], ex.shared.w[1]]
        assert_gradients_match(params, self._grouped_loss(ex, groups))

    def test_triplet_gradients_stay_in_unique_head(self):
        ex = make_extractor(seed=13)
        rng = np.random.default_rng(6)
        states = rng.standard_normal((8, 10))
        task_ids = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        tape = Tape()
        bundle = ex.extract_grouped(
            tape, [(0, Tensor(states[:4])), (1, Tensor(states[4:]))])
        loss = ex.triplet_loss(tape, bundle.unique, task_ids,
                               np.random.default_rng(0))
        tape.backward(loss)
        assert ex.shared.phi.grad is None
        assert all(w.grad is None for w in ex.shared.w)
        head_grads = [p.grad for p in ex.unique.named_params("u").values()]
        assert any(g is not None and np.abs(g).max() > 0 for g in head_grads)


class TestTripletLoss:
    def test_inactive_hinge_gives_zero(self):
        m = 1.0
        f = np.zeros((6, 1))
        f[3:] = np.sqrt(m + 1.0)  # cross-task sq-distance m + 1
        task_ids = np.array([0, 0, 0, 1, 1, 1])
        tape = Tape()
        loss, degenerate = triplet_loss(tape, param(f), task_ids, m, 8,
                                        np.random.default_rng(0))
        assert not degenerate
        assert loss.data == 0.0

    def test_equal_distances_give_margin(self):
        m = 0.75
        f = np.zeros((6, 2))
        task_ids = np.array([0, 0, 0, 1, 1, 1])
        tape = Tape()
        loss, _ = triplet_loss(tape, param(f), task_ids, m, 8,
                               np.random.default_rng(0))
        assert loss.data == pytest.approx(m)

    def test_matches_enumerated_oracle(self):
        rng_feat = np.random.default_rng(21)
        f = rng_feat.standard_normal((8, 3))
        task_ids = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        margin, n_triples, seed = 1.0, 4, 1234

        a, p, n = sample_triples(np.random.default_rng(seed), task_ids, n_triples)
        expected = 0.0
        for i in range(n_triples):
            d_pos = np.sum((f[a[i]] - f[p[i]]) ** 2)
            d_neg = np.sum((f[a[i]] - f[n[i]]) ** 2)
            expected += max(0.0, margin + d_pos - d_neg)
        expected /= n_triples

        tape = Tape()
        loss, _ = triplet_loss(tape, param(f), task_ids, margin, n_triples,
                               np.random.default_rng(seed))
        assert loss.data == pytest.approx(expected, rel=1e-12)

    def test_triple_construction_is_valid(self):
        rng = np.random.default_rng(3)
        task_ids = np.array([0, 0, 1, 1, 1, 2])
        a, p, n = sample_triples(rng, task_ids, 64)
        assert np.all(task_ids[a] == task_ids[p])
        assert np.all(a != p)
        assert np.all(task_ids[a] != task_ids[n])

    def test_degenerate_single_task_batch(self):
        ex = make_extractor()
        tape = Tape()
        f = param(np.random.default_rng(0).standard_normal((4, 4)))
        loss = ex.triplet_loss(tape, f, np.zeros(4, dtype=int),
                               np.random.default_rng(0))
        assert loss.data == 0.0
        assert ex.degenerate_batches == 1

    def test_nonnegative_on_random_batches(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            f = rng.standard_normal((10, 4)) * rng.uniform(0.1, 4.0)
            task_ids = rng.integers(0, 3, size=10)
            tape = Tape()
            loss, _ = triplet_loss(tape, param(f), task_ids, 1.0, 8, rng)
            assert loss.data >= 0.0


def test_separation_tendency_after_training():
    rng = np.random.default_rng(42)
    ex = make_extractor(seed=30, unique_dim=4)
    states0 = rng.standard_normal((16, 10)) + np.array([2.0] + [0.0] * 9)
    states1 = rng.standard_normal((16, 10)) - np.array([2.0] + [0.0] * 9)
    states = np.vstack([states0, states1])
    task_ids = np.array([0] * 16 + [1] * 16)
    opt = Adam(list(ex.unique.named_params("u").values()), lr=1e-3)
    trip_rng = np.random.default_rng(7)
    for _ in range(500):
        tape = Tape()
        f_u = ex.unique.forward(tape, Tensor(states))
        loss = ex.triplet_loss(tape, f_u, task_ids, trip_rng)
        tape.backward(loss)
        opt.step()
    f = ex.unique.forward_np(states)
    intra, inter, n_intra, n_inter = 0.0, 0.0, 0, 0
    for i in range(32):
        for j in range(i + 1, 32):
            d = np.sum((f[i] - f[j]) ** 2)
            if task_ids[i] == task_ids[j]:
                intra, n_intra = intra + d, n_intra + 1
            else:
                inter, n_inter = inter + d, n_inter + 1
    assert inter / n_inter > intra / n_intra
