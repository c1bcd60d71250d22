"""Statistical analysis over run scores and metrics files.

Implements the two-sample comparison used to decide whether one method's
run scores beat another's: Welch's t statistic from summary statistics,
Welch-Satterthwaite degrees of freedom, and a two-sided p-value from the
Student-t tail. The tail is evaluated with a self-contained regularized
incomplete beta (Lentz continued fraction plus a Lanczos log-gamma), so no
lookup tables and no scipy.

Also provides the cross-task imbalance summary: per time point, success is
first averaged across runs per task and then summarized across tasks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_LANCZOS = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def _gammaln(z):
    """Log-gamma for z > 0 (Lanczos, g=7)."""
    if z < 0.5:
        # reflection; not hit by the t-tail (arguments are >= 0.5) but kept
        # so the helper is safe standalone
        return math.log(math.pi / math.sin(math.pi * z)) - _gammaln(1.0 - z)
    z -= 1.0
    acc = _LANCZOS[0]
    for i, c in enumerate(_LANCZOS[1:], start=1):
        acc += c / (z + i)
    t = z + 7.5
    return 0.5 * math.log(2.0 * math.pi) + (z + 0.5) * math.log(t) - t + math.log(acc)


def _betacf(a, b, x, max_iter=300, eps=3e-16, fpmin=1e-300):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a} b={b} x={x}")


def betainc_reg(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        _gammaln(a + b) - _gammaln(a) - _gammaln(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t, df):
    """P(|T_df| > |t|) via the incomplete-beta identity."""
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    t2 = t * t
    return betainc_reg(0.5 * df, 0.5, df / (df + t2))


@dataclass
class TTestResult:
    t: float
    df: float
    p: float


def welch_ttest(mean1, std1, mean2, std2, n):
    """Two-sample t-test from summary statistics, n runs per sample.

    t = (m1 - m2) / sqrt(s1^2/n + s2^2/n) with Welch-Satterthwaite degrees
    of freedom and a two-sided p-value.
    """
    if int(n) != n or n < 2:
        raise ValueError(f"need at least 2 runs per sample, got n={n}")
    if std1 < 0 or std2 < 0:
        raise ValueError("standard deviations must be nonnegative")
    if std1 == 0 and std2 == 0:
        raise ValueError("at least one standard deviation must be positive")
    n = int(n)
    v1 = std1 * std1 / n
    v2 = std2 * std2 / n
    se = math.sqrt(v1 + v2)
    t = (mean1 - mean2) / se
    df = (v1 + v2) ** 2 / (v1 * v1 / (n - 1) + v2 * v2 / (n - 1))
    p = 1.0 if t == 0.0 else student_t_two_sided_p(t, df)
    return TTestResult(t=t, df=df, p=p)


# ---- metrics-file summaries -----------------------------------------------


def read_metrics(path):
    """Parse a metrics CSV into (steps, {column: array})."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    data = np.array([[float(v) for v in row] for row in rows]) if rows else \
        np.zeros((0, len(header)))
    cols = {name: data[:, i] for i, name in enumerate(header)}
    if "step" not in cols:
        raise ValueError(f"{path}: no 'step' column")
    return cols["step"], cols


@dataclass
class ImbalanceSummary:
    steps: np.ndarray
    per_task: np.ndarray   # (time, task): success averaged across runs
    mean: np.ndarray       # across-task mean per time point
    std: np.ndarray        # across-task population std per time point

    def to_csv(self, fh):
        n_tasks = self.per_task.shape[1]
        task_cols = ",".join(f"sr_{j}" for j in range(n_tasks))
        fh.write(f"step,sr_mean,sr_std,{task_cols}\n")
        for i, s in enumerate(self.steps):
            tasks = ",".join(f"{v:.10g}" for v in self.per_task[i])
            fh.write(f"{s:.10g},{self.mean[i]:.10g},{self.std[i]:.10g},{tasks}\n")


def imbalance_summary(paths):
    """Across-runs-then-across-tasks success summary for aligned metrics files."""
    paths = list(paths)
    if not paths:
        raise ValueError("need at least one metrics file")
    steps_ref = None
    task_names = None
    stacks = []
    for path in paths:
        steps, cols = read_metrics(path)
        names = sorted((c for c in cols if c.startswith("sr_") and c[3:].isdigit()),
                       key=lambda c: int(c[3:]))
        if not names:
            raise ValueError(f"{path}: no per-task success columns")
        if steps_ref is None:
            steps_ref, task_names = steps, names
        elif len(steps) != len(steps_ref) or not np.array_equal(steps, steps_ref):
            raise ValueError(
                f"{path}: time grid differs from {paths[0]} "
                f"({len(steps)} vs {len(steps_ref)} points)")
        elif names != task_names:
            raise ValueError(f"{path}: task columns differ from {paths[0]}")
        stacks.append(np.stack([cols[c] for c in names], axis=1))
    per_task = np.mean(stacks, axis=0)
    return ImbalanceSummary(
        steps=steps_ref,
        per_task=per_task,
        mean=per_task.mean(axis=1),
        std=per_task.std(axis=1),
    )
