"""Training loop: collect across tasks, allocate sample budgets, train on the
mixed prioritized batch, refresh priorities, evaluate periodically.

Each iteration steps every task's environment with the current stochastic
policy (pushes enter the task's buffer at max priority), splits the global
batch budget across tasks from their raw priority masses, samples each
task's share from its own buffer, runs the RL and triplet losses over the
mixed batch on one tape, takes one optimizer step per parameter group, and
replaces the sampled transitions' priorities with their fresh TD errors.

Determinism contract: all randomness flows from named generators derived
from the run seed (per-task env streams are seeded seed XOR task-id), and
environments are stepped and reduced in task-id order, so a fixed config
and seed reproduce byte-identical metrics files.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import Adam, Tape, Tensor, load_checkpoint, save_checkpoint
from .config import RunConfig
from .envs import PointMassEnv, TaskBatch, Transition, evaluate_success, make_suite
from .envs import reset as env_reset
from .extractor import FeatureExtractor
from .replay import PrioritizedBuffer
from .sac import SACAgent
from .scheduler import allocate, allocate_variant

ACTION_DIM = 2

# strategies whose within-task sampling is uniform rather than prioritized
_UNIFORM_STRATEGIES = ("task-equal", "random-pooled")


@dataclass
class MetricsRow:
    step: int
    success: list
    sr_mean: float
    sr_std: float
    budgets: list
    masses: list
    loss_critic: float
    loss_actor: float
    loss_alpha: float
    loss_triplet: float


def metrics_header(n_tasks):
    cols = ["step"]
    cols += [f"sr_{j}" for j in range(n_tasks)]
    cols += ["sr_mean", "sr_std"]
    cols += [f"budget_{j}" for j in range(n_tasks)]
    cols += [f"mass_{j}" for j in range(n_tasks)]
    cols += ["loss_critic", "loss_actor", "loss_alpha", "loss_triplet"]
    return ",".join(cols)


def metrics_to_csv(rows, n_tasks, fh):
    fh.write(metrics_header(n_tasks) + "\n")
    for r in rows:
        vals = [f"{r.step:d}"]
        vals += [f"{v:.10g}" for v in r.success]
        vals += [f"{r.sr_mean:.10g}", f"{r.sr_std:.10g}"]
        vals += [f"{v:d}" for v in r.budgets]
        vals += [f"{v:.10g}" for v in r.masses]
        vals += [f"{v:.10g}" for v in
                 (r.loss_critic, r.loss_actor, r.loss_alpha, r.loss_triplet)]
        fh.write(",".join(vals) + "\n")


class Trainer:
    def __init__(self, config: RunConfig):
        config.validate()
        self.config = config
        self.tasks = make_suite(config.suite, config.horizon)
        self.n_tasks = len(self.tasks)
        self.state_dim = self.tasks[0].state_dim
        self.bmin, self.bmax = config.resolved_bounds(self.n_tasks)
        if self.n_tasks * self.bmin > config.budget or \
                self.n_tasks * self.bmax < config.budget:
            raise ValueError(
                f"sched bounds [{self.bmin}, {self.bmax}] infeasible for "
                f"budget {config.budget} over {self.n_tasks} tasks")

        seed = config.seed
        init_rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
        self.noise_rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
        self.update_rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
        self.triplet_rng = np.random.default_rng(np.random.SeedSequence((seed, 3)))
        self.sample_rngs = [
            np.random.default_rng(np.random.SeedSequence((seed, 4, j)))
            for j in range(self.n_tasks)]
        self.sched_rng = np.random.default_rng(np.random.SeedSequence((seed, 5)))
        self.env_rngs = [np.random.default_rng(seed ^ j)
                         for j in range(self.n_tasks)]

        self.extractor = FeatureExtractor(
            state_dim=self.state_dim, n_tasks=self.n_tasks, hidden=config.hidden,
            shared_dim=config.shared_dim, unique_dim=config.unique_dim,
            k=config.k, margin=config.margin, pairs=config.pairs,
            unique_enabled=config.unique_enabled, rng=init_rng)
        self.agent = SACAgent(
            self.extractor.feature_dim, ACTION_DIM, hidden=config.hidden,
            lr=config.lr, tau=config.tau, gamma=config.gamma,
            eps_priority=config.eps_priority, rng=init_rng)
        self.extractor_adam = Adam(self.extractor.trainable_params(), lr=config.lr)

        buffer_alpha = 0.0 if config.strategy in _UNIFORM_STRATEGIES else config.alpha
        self.buffers = [
            PrioritizedBuffer(j, capacity=config.capacity, alpha=buffer_alpha,
                              eps=config.eps_priority, state_dim=self.state_dim,
                              action_dim=ACTION_DIM)
            for j in range(self.n_tasks)]

        self.stepper = TaskBatch(self.tasks)
        self.horizons = np.array([t.horizon for t in self.tasks])
        self.cur_states = np.zeros((self.n_tasks, self.state_dim))
        self.cur_t = np.zeros(self.n_tasks, dtype=np.int64)
        for j in range(self.n_tasks):
            self._reset_task(j)
        self.iterations = (config.total_steps - config.warmup) // config.steps_per_iter
        self.iteration = 0
        self.env_steps = 0  # per task
        self.metrics: list[MetricsRow] = []
        self.last_losses = (0.0, 0.0, 0.0, 0.0)
        self.last_budgets = [0] * self.n_tasks
        self.last_sampled = []
        self._eval_idx = 0

    # ---- rollouts --------------------------------------------------------

    def _next_env_seed(self, j):
        return int(self.env_rngs[j].integers(0, 2 ** 63 - 1))

    def _reset_task(self, j):
        self.cur_states[j] = env_reset(self.tasks[j], self._next_env_seed(j))
        self.cur_t[j] = 0

    def _push(self, j, state, action, reward, next_state, done):
        self.buffers[j].push(Transition(
            state=state, action=action, reward=reward,
            next_state=next_state, done=done, task_id=j))

    def _step_all(self, actions):
        """One env step for every task; pushes and resets in task-id order."""
        states = self.cur_states.copy()
        next_states, rewards, successes = self.stepper.step(self.cur_states, actions)
        self.cur_t += 1
        dones = successes | (self.cur_t >= self.horizons)
        for j in range(self.n_tasks):
            self._push(j, states[j], actions[j], float(rewards[j]),
                       next_states[j], bool(dones[j]))
        self.cur_states = next_states
        for j in np.flatnonzero(dones):
            self._reset_task(int(j))

    def warmup(self):
        for _ in range(self.config.warmup):
            actions = np.stack([rng.uniform(-1.0, 1.0, size=ACTION_DIM)
                                for rng in self.env_rngs])
            self._step_all(actions)
        self.env_steps += self.config.warmup

    def collect(self, n_steps):
        task_ids = np.arange(self.n_tasks)
        for _ in range(n_steps):
            feats = self.extractor.features_np_rows(self.cur_states, task_ids)
            noise = self.noise_rng.standard_normal((self.n_tasks, ACTION_DIM))
            actions = self.agent.act(feats, deterministic=False, noise=noise)
            self._step_all(actions)
        self.env_steps += n_steps

    # ---- one training iteration -----------------------------------------

    def _beta(self):
        frac = (self.iteration + 1) / max(self.iterations, 1)
        c = self.config
        return c.beta_start + (c.beta_end - c.beta_start) * frac

    def _allocate_budgets(self):
        c = self.config
        masses = [buf.priority_mass() for buf in self.buffers]
        if c.strategy == "taps":
            return allocate(masses, c.budget, self.bmin, self.bmax).counts
        if c.strategy == "single-per":
            exponentiated = [buf.tree.total for buf in self.buffers]
            return allocate_variant("single-per", exponentiated, c.budget,
                                    rng=self.sched_rng).counts
        if c.strategy == "random-pooled":
            sizes = [len(buf) for buf in self.buffers]
            return allocate_variant("random-pooled", masses, c.budget,
                                    sizes=sizes, rng=self.sched_rng).counts
        return allocate_variant("task-equal", masses, c.budget).counts

    def run_iteration(self):
        c = self.config
        self.collect(c.steps_per_iter)
        beta = self._beta()
        counts = self._allocate_budgets()
        self.last_budgets = [int(v) for v in counts]

        groups = []
        refs = []
        parts = {k: [] for k in ("action", "reward", "next_state", "done")}
        weights = []
        task_ids = []
        for j, n_j in enumerate(counts):
            if n_j == 0:
                continue
            batch, ref, w = self.buffers[j].sample(int(n_j), beta,
                                                   self.sample_rngs[j])
            groups.append((j, batch["state"]))
            refs.append((j, ref))
            for k in parts:
                parts[k].append(batch[k])
            weights.append(w)
            task_ids.append(np.full(int(n_j), j))

        actions = np.concatenate(parts["action"])
        rewards = np.concatenate(parts["reward"])
        dones = np.concatenate(parts["done"])
        weights = np.concatenate(weights)
        task_ids = np.concatenate(task_ids)

        tape = Tape()
        bundle = self.extractor.extract_grouped(
            tape, [(j, Tensor(states)) for j, states in groups])
        next_feats = np.concatenate([
            self.extractor.features_np(states, j)
            for (j, _), states in zip(groups, parts["next_state"])])

        aux = None
        tri_value = 0.0
        if c.triplet_active:
            tri = self.extractor.triplet_loss(tape, bundle.unique, task_ids,
                                              self.triplet_rng)
            tri_value = float(tri.data)
            aux = tape.scale(tri, c.lambda_tri) if c.lambda_tri != 1.0 else tri

        result = self.agent.update(
            bundle.combined, actions, rewards, next_feats, dones, weights,
            self.update_rng, tape=tape, aux_loss=aux)
        # tasks absent from the batch got no gradient this round; their
        # moments still decay, matching sparse Adam usage
        for p in self.extractor_adam.params:
            if p.grad is None:
                p.zero_grad()
        self.extractor_adam.step()

        offset = 0
        self.last_sampled = []
        for j, ref in refs:
            n_j = len(ref.slots)
            deltas = result.abs_td_errors[offset:offset + n_j]
            self.buffers[j].update_priorities(ref, deltas)
            self.last_sampled.append((j, ref, deltas))
            offset += n_j

        self.last_losses = (result.critic_loss, result.actor_loss,
                            result.alpha_loss, tri_value)
        self.iteration += 1

    # ---- evaluation and metrics ------------------------------------------

    def policy_fn(self, task_id, deterministic=True):
        def policy(states):
            feats = self.extractor.features_np(states, task_id)
            return self.agent.act(feats, deterministic=deterministic)
        return policy

    def evaluate(self):
        seed = self.config.seed * 1_000_003 + self._eval_idx
        self._eval_idx += 1
        return [evaluate_success(self.policy_fn(j), task,
                                 self.config.eval_episodes, seed=seed)
                for j, task in enumerate(self.tasks)]

    def record_metrics(self):
        success = self.evaluate()
        arr = np.asarray(success)
        self.metrics.append(MetricsRow(
            step=self.env_steps,
            success=list(arr),
            sr_mean=float(arr.mean()),
            sr_std=float(arr.std()),
            budgets=list(self.last_budgets),
            masses=[buf.priority_mass() for buf in self.buffers],
            loss_critic=self.last_losses[0],
            loss_actor=self.last_losses[1],
            loss_alpha=self.last_losses[2],
            loss_triplet=self.last_losses[3],
        ))

    # ---- full run ---------------------------------------------------------

    def train(self):
        c = self.config
        if c.total_steps == 0:
            return TrainResult(self.metrics, self.checkpoint_arrays(), self)
        self.warmup()
        next_eval = c.eval_interval
        while self.env_steps < c.total_steps:
            self.run_iteration()
            while next_eval <= self.env_steps:
                self.record_metrics()
                next_eval += c.eval_interval
        return TrainResult(self.metrics, self.checkpoint_arrays(), self)

    def checkpoint_arrays(self):
        c = self.config
        out = {}
        meta = {
            "meta.n_tasks": self.n_tasks,
            "meta.horizon": c.horizon,
            "meta.hidden": c.hidden,
            "meta.k": c.k,
            "meta.shared_dim": c.shared_dim,
            "meta.unique_dim": c.unique_dim,
            "meta.unique_enabled": int(c.unique_enabled),
            "meta.margin": c.margin,
            "meta.pairs": c.pairs,
            "meta.gamma": c.gamma,
        }
        for k, v in meta.items():
            out[k] = np.array([[float(v)]])
        for name, p in self.extractor.named_params().items():
            out[name] = p.data.copy()
        for name, p in self.agent.named_params().items():
            out[name] = p.data.copy()
        for name, arr in self.agent.critics.named_target_arrays().items():
            out[name] = arr.copy()
        return out


@dataclass
class TrainResult:
    metrics: list
    checkpoint: dict
    trainer: Trainer


def train(config: RunConfig):
    """Run one training job; returns metrics history plus checkpoint arrays."""
    return Trainer(config).train()


def write_metrics_file(result, out_dir, seed=None):
    seed = result.trainer.config.seed if seed is None else seed
    path = os.path.join(out_dir, f"metrics_{seed}.csv")
    with open(path, "w") as fh:
        metrics_to_csv(result.metrics, result.trainer.n_tasks, fh)
    return path


def write_checkpoint_file(result, out_dir, seed=None):
    seed = result.trainer.config.seed if seed is None else seed
    path = os.path.join(out_dir, f"checkpoint_{seed}.ckpt")
    save_checkpoint(path, result.checkpoint)
    return path


# ---- checkpoint-backed evaluation and export -------------------------------


def build_policy_from_checkpoint(arrays):
    """Reconstruct (tasks, extractor, agent) from checkpoint arrays."""
    meta = {k.split(".", 1)[1]: float(v[0, 0])
            for k, v in arrays.items() if k.startswith("meta.")}
    n_tasks = int(meta["n_tasks"])
    suite = {4: "mt4", 8: "mt8"}.get(n_tasks)
    if suite is None:
        raise ValueError(f"checkpoint has unsupported task count {n_tasks}")
    tasks = make_suite(suite, horizon=int(meta["horizon"]))
    rng = np.random.default_rng(0)
    extractor = FeatureExtractor(
        state_dim=tasks[0].state_dim, n_tasks=n_tasks, hidden=int(meta["hidden"]),
        shared_dim=int(meta["shared_dim"]), unique_dim=int(meta["unique_dim"]),
        k=int(meta["k"]), margin=meta["margin"], pairs=int(meta["pairs"]),
        unique_enabled=bool(meta["unique_enabled"]), rng=rng)
    agent = SACAgent(extractor.feature_dim, ACTION_DIM, hidden=int(meta["hidden"]),
                     gamma=meta.get("gamma", 0.99), rng=rng)
    named = {}
    named.update(extractor.named_params())
    named.update(agent.named_params())
    for name, p in named.items():
        if name not in arrays:
            raise ValueError(f"checkpoint missing parameter {name!r}")
        if arrays[name].shape != p.data.shape:
            raise ValueError(
                f"checkpoint parameter {name!r} has shape {arrays[name].shape}, "
                f"expected {p.data.shape}")
        p.data[:] = arrays[name]
    for name, arr in agent.critics.named_target_arrays().items():
        if name in arrays:
            arr[:] = arrays[name]
    return tasks, extractor, agent


def evaluate_checkpoint(path, episodes=20, seed=0):
    """Per-task deterministic success rates for a saved checkpoint."""
    tasks, extractor, agent = build_policy_from_checkpoint(load_checkpoint(path))
    rates = []
    for j, task in enumerate(tasks):
        def policy(states, _j=j):
            return agent.act(extractor.features_np(states, _j))
        rates.append(evaluate_success(policy, task, episodes, seed=seed))
    return rates


def export_embeddings(arrays, n_per_task, fh, seed=12345):
    """Unique features of states visited by the deterministic policy.

    Writes CSV rows `task_id,u0..u{dim-1}`, n_per_task rows per task.
    """
    tasks, extractor, agent = build_policy_from_checkpoint(arrays)
    if not extractor.unique_enabled:
        raise ValueError("checkpoint has no unique head to export")
    u_dim = extractor.unique.dims[-1]
    fh.write("task_id," + ",".join(f"u{i}" for i in range(u_dim)) + "\n")
    for j, task in enumerate(tasks):
        collected = []
        episode = 0
        while len(collected) < n_per_task:
            env = PointMassEnv(task)
            state = env.reset(seed + 7919 * episode)
            episode += 1
            done = False
            while not done and len(collected) < n_per_task:
                collected.append(state.copy())
                feats = extractor.features_np(state[None, :], j)
                action = agent.act(feats)[0]
                state, _, done = env.step(action)
        if collected:
            f_u = extractor.unique.forward_np(np.stack(collected))
            for row in f_u:
                fh.write(f"{j}," + ",".join(f"{v:.10g}" for v in row) + "\n")


# ---- ablation comparisons ---------------------------------------------------


def best_mean_success(metrics):
    return max((r.sr_mean for r in metrics), default=0.0)


def _ablation_worker(config):
    result = train(config)
    return (config.variant_label, config.seed, result.metrics)


def run_ablation(configs, max_workers=1):
    """Train each config and summarize per variant.

    Configs should differ only in variant switches and seed. Returns one row
    per variant: mean and population std (across seeds) of the best
    mean-success over time, plus the mean final cross-task std.
    """
    if max_workers > 1:
        with ProcessPoolExecutor(max_workers=max_workers) as pool:
            outputs = list(pool.map(_ablation_worker, configs))
    else:
        outputs = [_ablation_worker(c) for c in configs]
    by_variant = {}
    for label, seed, metrics in outputs:
        by_variant.setdefault(label, []).append((seed, metrics))
    rows = []
    for label, runs in by_variant.items():
        best = np.array([best_mean_success(m) for _, m in runs])
        finals = np.array([m[-1].sr_std if m else 0.0 for _, m in runs])
        rows.append({
            "variant": label,
            "n_seeds": len(runs),
            "best_sr_mean": float(best.mean()),
            "best_sr_std": float(best.std()),
            "final_std_mean": float(finals.mean()),
        })
    return rows, outputs


def ablation_to_csv(rows, fh):
    fh.write("variant,n_seeds,best_sr_mean,best_sr_std,final_std_mean\n")
    for r in rows:
        fh.write(f"{r['variant']},{r['n_seeds']},{r['best_sr_mean']:.10g},"
                 f"{r['best_sr_std']:.10g},{r['final_std_mean']:.10g}\n")
