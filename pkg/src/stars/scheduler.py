"""Per-iteration sample budget allocation across task buffers.

The core rule gives each task a share of the global budget proportional to
its buffer's priority mass, clipped to [bmin, bmax]. Clipping alone can
break the exact budget total, so the residual is redistributed among tasks
not pinned at a bound (water-filling: find the scale theta with
sum_j clip(theta * mass_j, bmin, bmax) == budget), which preserves
proportionality wherever the bounds do not bind. Counts are integers via
largest-remainder rounding with task-id tie-break.

`allocate_variant` adds the ablation strategies: even split, multinomial
draws proportional to buffer sizes (pooled uniform sampling), and
multinomial draws proportional to exponentiated masses with no per-task
floor (a single pooled prioritized buffer, which can starve tasks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STRATEGIES = ("taps", "task-equal", "random-pooled", "single-per")


@dataclass
class TaskBudget:
    counts: np.ndarray
    budget: int
    bmin: int | None = None
    bmax: int | None = None


def _check_feasible(n, budget, bmin, bmax):
    for name, v in (("budget", budget), ("bmin", bmin), ("bmax", bmax)):
        if int(v) != v:
            raise ValueError(f"{name} must be an integer, got {v}")
    if bmin < 0 or bmax < bmin:
        raise ValueError(f"invalid bounds [{bmin}, {bmax}]")
    if n * bmin > budget or n * bmax < budget:
        raise ValueError(
            f"infeasible bounds: need {n}*{bmin} <= {budget} <= {n}*{bmax}")


def _waterfill(masses, budget, bmin, bmax):
    """Real-valued allocation clip(theta*m, bmin, bmax) with exact total."""
    m = np.asarray(masses, dtype=np.float64)
    n = len(m)
    if not (m > 0).any():
        return np.full(n, budget / n)
    pos = m > 0
    nz = int((~pos).sum())
    mp = m[pos]
    cands = np.unique(np.concatenate(([0.0], bmin / mp, bmax / mp)))
    totals = bmin * nz + np.clip(cands[:, None] * mp[None, :], bmin, bmax).sum(axis=1)
    x = np.empty(n)
    if budget >= totals[-1]:
        # every positive-mass task is pinned at bmax; the remainder can only
        # go to zero-mass tasks, spread evenly
        x[pos] = bmax
        if nz:
            x[~pos] = (budget - bmax * int(pos.sum())) / nz
        return x
    seg = int(np.searchsorted(totals, budget, side="right")) - 1
    mid = 0.5 * (cands[seg] + cands[seg + 1])
    shares = mid * mp
    low = shares <= bmin
    high = shares >= bmax
    free = ~(low | high)
    free_mass = mp[free].sum()
    fixed = bmin * (nz + int(low.sum())) + bmax * int(high.sum())
    theta = (budget - fixed) / free_mass if free_mass > 0 else mid
    xp = np.where(low, float(bmin), np.where(high, float(bmax), theta * mp))
    x[pos] = xp
    x[~pos] = bmin
    return np.clip(x, bmin, bmax)


def _largest_remainder(x, budget, bmax=None):
    """Round to integers keeping the exact total; ties broken by task id."""
    floor = np.floor(x).astype(np.int64)
    k = int(round(budget - floor.sum()))
    frac = x - floor
    order = np.lexsort((np.arange(len(x)), -frac))
    out = floor.copy()
    for j in order:
        if k <= 0:
            break
        if bmax is None or out[j] < bmax:
            out[j] += 1
            k -= 1
    return out


def _round_to_budget(x, raw, budget, bmax):
    """Integer rounding of the water-filled shares with exact total.

    The k leftover units go to the coordinates where +1 saves the most L1
    distance to the raw (unclipped) shares; where no bound binds this is
    plain largest-remainder rounding, and where clipping pulled a share away
    from its raw value it keeps the result L1-minimal. Ties break by task id.
    """
    floor = np.floor(x).astype(np.int64)
    k = int(round(budget - floor.sum()))
    # savings of +1 over floor, piecewise so the saturated cases are exact
    d = raw - floor
    savings = np.where(d <= 0.0, -1.0, np.where(d >= 1.0, 1.0, 2.0 * d - 1.0))
    order = np.lexsort((np.arange(len(x)), -savings))
    out = floor.copy()
    for j in order:
        if k <= 0:
            break
        if out[j] < bmax:
            out[j] += 1
            k -= 1
    return out


def allocate(masses, budget, bmin, bmax):
    """Budget-proportional allocation with clipping and exact total.

    All-zero masses (start of training) fall back to an even split.
    """
    masses = np.asarray(masses, dtype=np.float64)
    n = len(masses)
    if n < 1:
        raise ValueError("need at least one task")
    if (masses < 0).any():
        raise ValueError("masses must be nonnegative")
    _check_feasible(n, budget, bmin, bmax)
    x = _waterfill(masses, budget, bmin, bmax)
    # shares can land exactly on integers (e.g. a single free task absorbing
    # an integer residual); snap away float noise so ties resolve the same
    # way regardless of the scale of the masses
    near = np.abs(x - np.rint(x)) < 1e-9
    x = np.where(near, np.rint(x), x)
    total = masses.sum()
    raw = budget * masses / total if total > 0 else np.full(n, budget / n)
    counts = _round_to_budget(x, raw, budget, bmax)
    return TaskBudget(counts=counts, budget=int(budget), bmin=int(bmin), bmax=int(bmax))


def allocate_variant(strategy, masses, budget, bmin=None, bmax=None,
                     sizes=None, rng=None):
    """Budget allocation under one of the ablation sampling strategies."""
    masses = np.asarray(masses, dtype=np.float64)
    n = len(masses)
    if strategy == "taps":
        return allocate(masses, budget, bmin, bmax)
    if strategy == "task-equal":
        counts = _largest_remainder(np.full(n, budget / n), budget)
        return TaskBudget(counts=counts, budget=int(budget))
    if strategy == "random-pooled":
        weights = np.asarray(sizes, dtype=np.float64)
    elif strategy == "single-per":
        weights = masses
    else:
        raise ValueError(f"unknown strategy {strategy!r} (expected one of {STRATEGIES})")
    total = weights.sum()
    pvals = weights / total if total > 0 else np.full(n, 1.0 / n)
    counts = rng.multinomial(int(budget), pvals)
    return TaskBudget(counts=counts.astype(np.int64), budget=int(budget))
