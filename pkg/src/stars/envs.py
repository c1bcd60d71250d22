"""Toy multi-task continuous-control suite.

Point-mass double-integrator in the plane: the agent accelerates toward a
goal, earns the negative distance each step plus a terminal bonus, and the
episode ends on success or at the horizon. Tasks share this geometry but
differ in goal position and dynamics mode, so some knowledge transfers
across tasks and some (notably the inverted-actions mode) does not.

State layout: [pos(2), vel(2), goal(2), one-hot task id (N)].
Steps use explicit Euler (position advances with the pre-update velocity),
so from rest with a zero action every mode leaves the position, and hence
the reward, unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DT = 0.1
ACCEL = 4.0
FRICTION = 0.5          # velocity multiplier in high-friction mode
DRIFT_BIAS = np.array([0.05, 0.05])
VEL_LIMIT = 2.0
POS_LIMIT = 1.5
SUCCESS_BONUS = 10.0
DEFAULT_RADIUS = 0.15

MODES = ("standard", "inverted-actions", "high-friction", "drift")


@dataclass
class Transition:
    """One (s, a, r, s', done, task-id) tuple; the unit stored and sampled."""
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    task_id: int


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    goal: tuple
    mode: str
    horizon: int = 100
    success_radius: float = DEFAULT_RADIUS
    n_tasks: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown dynamics mode {self.mode!r}")

    @property
    def state_dim(self):
        return 6 + self.n_tasks

    @property
    def goal_array(self):
        return np.asarray(self.goal, dtype=np.float64)


def make_suite(name, horizon=100):
    """Deterministic task presets: `mt4` or `mt8`."""
    if name == "mt4":
        layout = [
            ((0.7, 0.7), "standard"),
            ((-0.7, 0.7), "standard"),
            ((0.7, -0.7), "standard"),
            ((-0.7, -0.7), "inverted-actions"),
        ]
    elif name == "mt8":
        angles = np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False)
        goals = [(0.8 * np.cos(a), 0.8 * np.sin(a)) for a in angles]
        modes = ["standard", "standard", "inverted-actions", "inverted-actions",
                 "high-friction", "high-friction", "drift", "drift"]
        layout = list(zip(goals, modes))
    else:
        raise ValueError(f"unknown suite {name!r} (expected mt4 or mt8)")
    n = len(layout)
    return [
        TaskSpec(task_id=j, goal=tuple(float(x) for x in goal), mode=mode,
                 horizon=horizon, n_tasks=n)
        for j, (goal, mode) in enumerate(layout)
    ]


def _mode_params(specs):
    """Per-row dynamics parameters for a list of specs (one per batch row)."""
    sign = np.array([-1.0 if s.mode == "inverted-actions" else 1.0 for s in specs])
    fric = np.array([FRICTION if s.mode == "high-friction" else 1.0 for s in specs])
    drift = np.stack([DRIFT_BIAS if s.mode == "drift" else np.zeros(2) for s in specs])
    goals = np.stack([s.goal_array for s in specs])
    radii = np.array([s.success_radius for s in specs])
    return sign, fric, drift, goals, radii


class TaskBatch:
    """Precomputed row-wise dynamics for a fixed list of specs (hot path)."""

    def __init__(self, specs):
        self.specs = list(specs)
        sign, fric, drift, goals, radii = _mode_params(self.specs)
        self.sign = sign[:, None]
        self.fric = fric[:, None]
        self.drift = drift
        self.goals = goals
        self.radii = radii

    def step(self, states, actions):
        actions = np.clip(actions, -1.0, 1.0)
        new_pos = np.clip(states[:, 0:2] + DT * states[:, 2:4],
                          -POS_LIMIT, POS_LIMIT)
        new_vel = np.clip(self.fric * states[:, 2:4]
                          + DT * ACCEL * self.sign * actions + self.drift,
                          -VEL_LIMIT, VEL_LIMIT)
        next_states = states.copy()
        next_states[:, 0:2] = new_pos
        next_states[:, 2:4] = new_vel
        dist = np.sqrt(((new_pos - self.goals) ** 2).sum(axis=1))
        success = dist < self.radii
        rewards = -dist + SUCCESS_BONUS * success
        return next_states, rewards, success


def reset(task, seed):
    """Start state: position uniform in [-1,1]^2 outside twice the success
    radius around the goal (so the radius is under half the start-to-goal
    distance), velocity zero."""
    rng = np.random.default_rng(seed)
    goal = task.goal_array
    while True:
        pos = rng.uniform(-1.0, 1.0, size=2)
        if np.linalg.norm(pos - goal) > 2.0 * task.success_radius:
            break
    state = np.zeros(task.state_dim)
    state[0:2] = pos
    state[4:6] = goal
    state[6 + task.task_id] = 1.0
    return state


def step_batch(specs, states, actions):
    """Advance one step for a batch of rows, row i under specs[i].

    Returns (next_states, rewards, successes); episode-horizon accounting is
    the caller's job.
    """
    return TaskBatch(specs).step(states, actions)


def step(task, state, action):
    """Single-row transition; returns (next_state, reward, success)."""
    ns, r, s = step_batch([task], state[None, :], np.asarray(action, dtype=np.float64)[None, :])
    return ns[0], float(r[0]), bool(s[0])


class PointMassEnv:
    """Stateful wrapper adding episode-step accounting on top of `step`."""

    def __init__(self, task):
        self.task = task
        self.state = None
        self.t = 0

    def reset(self, seed):
        self.state = reset(self.task, seed)
        self.t = 0
        return self.state

    def step(self, action):
        next_state, reward, success = step(self.task, self.state, action)
        self.state = next_state
        self.t += 1
        done = success or self.t >= self.task.horizon
        return next_state, reward, done


def _episode_seeds(task, episodes, seed):
    ss = np.random.SeedSequence((seed, task.task_id))
    return ss.generate_state(episodes, dtype=np.uint64)


def evaluate_success(policy, task, episodes, seed=0):
    """Fraction of deterministic rollouts that reach the goal region.

    `policy` maps a (n, state_dim) batch of states to (n, action_dim)
    actions; all episodes advance in lockstep.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    seeds = _episode_seeds(task, episodes, seed)
    states = np.stack([reset(task, int(s)) for s in seeds])
    stepper = TaskBatch([task])  # broadcasts over same-task rows
    succeeded = np.zeros(episodes, dtype=bool)
    alive = np.ones(episodes, dtype=bool)
    for _ in range(task.horizon):
        if not alive.any():
            break
        actions = np.asarray(policy(states[alive]))
        next_states, _, success = stepper.step(states[alive], actions)
        states[alive] = next_states
        idx = np.flatnonzero(alive)
        succeeded[idx[success]] = True
        alive[idx[success]] = False
    return float(succeeded.mean())
