import numpy as np
import pytest

from stars.stats import (
    ImbalanceSummary,
    betainc_reg,
    imbalance_summary,
    student_t_two_sided_p,
    welch_ttest,
)


def write_metrics(path, steps, per_task):
    n = len(per_task[0])
    header = "step," + ",".join(f"sr_{j}" for j in range(n)) + ",sr_mean,sr_std\n"
    with open(path, "w") as fh:
        fh.write(header)
        for s, row in zip(steps, per_task):
            mean, std = np.mean(row), np.std(row)
            vals = ",".join(str(v) for v in row)
            fh.write(f"{s},{vals},{mean},{std}\n")


class TestWelch:
    def test_reference_comparison(self):
        res = welch_ttest(88.5, 5.3, 83.1, 4.6, 10)
        assert res.t == pytest.approx(2.433, abs=1e-3)
        assert res.df == pytest.approx(17.651, abs=1e-3)
        assert res.p == pytest.approx(0.0258, abs=5e-4)

    def test_identical_samples(self):
        res = welch_ttest(5.0, 1.2, 5.0, 1.2, 8)
        assert res.t == 0.0
        assert res.p == 1.0

    def test_equal_variances_reduce_to_pooled_df(self):
        res = welch_ttest(1.0, 2.0, 0.0, 2.0, 10)
        assert res.df == pytest.approx(18.0, rel=1e-12)

    def test_antisymmetry_exact(self):
        a = welch_ttest(88.5, 5.3, 83.1, 4.6, 10)
        b = welch_ttest(83.1, 4.6, 88.5, 5.3, 10)
        assert b.t == -a.t
        assert b.df == a.df
        assert b.p == a.p

    def test_critical_value_df18(self):
        assert student_t_two_sided_p(2.101, 18) == pytest.approx(0.05, abs=5e-4)

    def test_invalid_inputs_rejected(self):
        with pytest.raises(ValueError, match="runs"):
            welch_ttest(1.0, 1.0, 0.0, 1.0, 1)
        with pytest.raises(ValueError, match="positive"):
            welch_ttest(1.0, 0.0, 0.0, 0.0, 10)
        with pytest.raises(ValueError, match="nonnegative"):
            welch_ttest(1.0, -1.0, 0.0, 1.0, 10)


class TestIncompleteBeta:
    def test_bounds(self):
        assert betainc_reg(2.0, 3.0, 0.0) == 0.0
        assert betainc_reg(2.0, 3.0, 1.0) == 1.0

    def test_symmetry_identity(self):
        # I_x(a,b) = 1 - I_{1-x}(b,a)
        for a, b, x in [(2.0, 5.0, 0.3), (0.5, 9.0, 0.7), (4.5, 0.5, 0.2)]:
            assert betainc_reg(a, b, x) == pytest.approx(
                1.0 - betainc_reg(b, a, 1.0 - x), rel=1e-12)

    def test_uniform_case(self):
        # I_x(1,1) = x
        for x in [0.1, 0.5, 0.9]:
            assert betainc_reg(1.0, 1.0, x) == pytest.approx(x, rel=1e-12)

    def test_against_scipy(self):
        scipy_special = pytest.importorskip("scipy.special")
        rng = np.random.default_rng(0)
        for _ in range(200):
            a = float(rng.uniform(0.5, 30))
            b = float(rng.uniform(0.5, 30))
            x = float(rng.uniform(0, 1))
            assert betainc_reg(a, b, x) == pytest.approx(
                float(scipy_special.betainc(a, b, x)), abs=1e-12)


class TestImbalanceSummary:
    def test_single_run_single_task_std_zero(self, tmp_path):
        path = tmp_path / "metrics_0.csv"
        write_metrics(path, [10, 20, 30], [[0.2], [0.5], [1.0]])
        out = imbalance_summary([path])
        assert np.allclose(out.std, 0.0)
        assert np.allclose(out.mean, [0.2, 0.5, 1.0])

    def test_constant_two_task_series(self, tmp_path):
        path = tmp_path / "metrics_0.csv"
        write_metrics(path, [10, 20], [[1.0, 0.0], [1.0, 0.0]])
        out = imbalance_summary([path])
        assert np.allclose(out.mean, 0.5)
        assert np.allclose(out.std, 0.5)

    def test_across_runs_then_across_tasks_order(self, tmp_path):
        # run-averaged per task: task0 [0.3, 0.5], task1 [0.5, 0.4]
        # so mean [0.4, 0.45], std [0.1, 0.05]; the wrong order of averaging
        # (std per run, then averaged) would give [0.3, 0.15]
        p1 = tmp_path / "metrics_0.csv"
        p2 = tmp_path / "metrics_1.csv"
        write_metrics(p1, [10, 20], [[0.2, 1.0], [0.4, 0.6]])
        write_metrics(p2, [10, 20], [[0.4, 0.0], [0.6, 0.2]])
        out = imbalance_summary([p1, p2])
        assert np.allclose(out.per_task, [[0.3, 0.5], [0.5, 0.4]])
        assert np.allclose(out.mean, [0.4, 0.45])
        assert np.allclose(out.std, [0.1, 0.05])

    def test_inconsistent_grids_rejected(self, tmp_path):
        p1 = tmp_path / "metrics_0.csv"
        p2 = tmp_path / "metrics_1.csv"
        write_metrics(p1, [10, 20], [[0.2], [0.4]])
        write_metrics(p2, [10, 30], [[0.2], [0.4]])
        with pytest.raises(ValueError, match="grid"):
            imbalance_summary([p1, p2])

    def test_csv_output_shape(self, tmp_path):
        path = tmp_path / "metrics_0.csv"
        write_metrics(path, [10], [[0.5, 0.7]])
        out = imbalance_summary([path])
        dest = tmp_path / "summary.csv"
        with open(dest, "w") as fh:
            out.to_csv(fh)
        lines = dest.read_text().strip().split("\n")
        assert lines[0] == "step,sr_mean,sr_std,sr_0,sr_1"
        assert len(lines) == 2
