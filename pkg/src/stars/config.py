"""Run configuration: flat `key = value` text files, typed and validated.

Every module's knobs live under its prefix; unknown keys are rejected so a
typo cannot silently fall back to a default. `sched.bmin`/`sched.bmax`
accept `auto`, which resolves to budget/(4N) and budget/2 once the task
count is known.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .envs import MODES  # noqa: F401  (re-exported for config docs)
from .scheduler import STRATEGIES

_SUITES = ("mt4", "mt8")


def _bool(s):
    if isinstance(s, bool):
        return s
    if s.lower() in ("true", "1", "yes", "on"):
        return True
    if s.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _auto_int(s):
    if s is None or (isinstance(s, str) and s.lower() == "auto"):
        return None
    return int(s)


# key -> (attribute, parser, default)
SCHEMA = {
    "env.suite": ("suite", str, "mt4"),
    "env.horizon": ("horizon", int, 100),
    "extractor.k": ("k", int, 5),
    "extractor.shared_dim": ("shared_dim", int, 32),
    "extractor.unique_dim": ("unique_dim", int, 16),
    "extractor.margin": ("margin", float, 1.0),
    "extractor.pairs": ("pairs", int, 32),
    "extractor.unique_enabled": ("unique_enabled", _bool, True),
    "sac.lr": ("lr", float, 3e-4),
    "sac.tau": ("tau", float, 0.005),
    "sac.gamma": ("gamma", float, 0.99),
    "sac.hidden": ("hidden", int, 64),
    "sac.eps_priority": ("eps_priority", float, 1e-4),
    "replay.capacity": ("capacity", int, 65536),
    "replay.alpha": ("alpha", float, 0.6),
    "replay.beta_start": ("beta_start", float, 0.4),
    "replay.beta_end": ("beta_end", float, 1.0),
    "sched.strategy": ("strategy", str, "taps"),
    "sched.budget": ("budget", int, 512),
    "sched.bmin": ("bmin", _auto_int, None),
    "sched.bmax": ("bmax", _auto_int, None),
    "trainer.seed": ("seed", int, 0),
    "trainer.total_steps": ("total_steps", int, 150_000),
    "trainer.steps_per_iter": ("steps_per_iter", int, 10),
    "trainer.warmup": ("warmup", int, 1000),
    "trainer.eval_interval": ("eval_interval", int, 10_000),
    "trainer.eval_episodes": ("eval_episodes", int, 20),
    "trainer.lambda_tri": ("lambda_tri", float, 1.0),
    "trainer.triplet_enabled": ("triplet_enabled", _bool, True),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _, _) in SCHEMA.items()}


@dataclass
class RunConfig:
    suite: str = "mt4"
    horizon: int = 100
    k: int = 5
    shared_dim: int = 32
    unique_dim: int = 16
    margin: float = 1.0
    pairs: int = 32
    unique_enabled: bool = True
    lr: float = 3e-4
    tau: float = 0.005
    gamma: float = 0.99
    hidden: int = 64
    eps_priority: float = 1e-4
    capacity: int = 65536
    alpha: float = 0.6
    beta_start: float = 0.4
    beta_end: float = 1.0
    strategy: str = "taps"
    budget: int = 512
    bmin: int | None = None
    bmax: int | None = None
    seed: int = 0
    total_steps: int = 150_000
    steps_per_iter: int = 10
    warmup: int = 1000
    eval_interval: int = 10_000
    eval_episodes: int = 20
    lambda_tri: float = 1.0
    triplet_enabled: bool = True

    def validate(self):
        if self.suite not in _SUITES:
            raise ValueError(f"env.suite must be one of {_SUITES}, got {self.suite!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(
                f"sched.strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        for attr in ("horizon", "k", "shared_dim", "unique_dim", "pairs", "hidden",
                     "capacity", "budget", "steps_per_iter", "eval_interval",
                     "eval_episodes"):
            if getattr(self, attr) < 1:
                raise ValueError(f"{_ATTR_TO_KEY[attr]} must be positive")
        for attr in ("total_steps", "warmup", "seed"):
            if getattr(self, attr) < 0:
                raise ValueError(f"{_ATTR_TO_KEY[attr]} must be nonnegative")
        if self.margin <= 0:
            raise ValueError("extractor.margin must be positive")
        if self.warmup > self.total_steps:
            raise ValueError("trainer.warmup cannot exceed trainer.total_steps")
        if (self.total_steps - self.warmup) % self.steps_per_iter:
            raise ValueError(
                "trainer.steps_per_iter must divide total_steps - warmup")
        if self.total_steps % self.eval_interval:
            raise ValueError("trainer.eval_interval must divide trainer.total_steps")
        if self.eval_interval % self.steps_per_iter:
            raise ValueError(
                "trainer.steps_per_iter must divide trainer.eval_interval")
        return self

    def resolved_bounds(self, n_tasks):
        bmin = self.bmin if self.bmin is not None else self.budget // (4 * n_tasks)
        bmax = self.bmax if self.bmax is not None else self.budget // 2
        return bmin, bmax

    @property
    def triplet_active(self):
        return self.triplet_enabled and self.unique_enabled and self.lambda_tri != 0.0

    @property
    def variant_label(self):
        unique = "unique" if self.unique_enabled else "nounique"
        tri = "tri" if self.triplet_active else "notri"
        return f"{self.strategy}+{unique}+{tri}"

    def replace(self, **kw):
        cfg = RunConfig(**{f.name: getattr(self, f.name) for f in fields(self)})
        for attr, value in kw.items():
            if not hasattr(cfg, attr):
                raise AttributeError(attr)
            setattr(cfg, attr, value)
        return cfg


def parse_config(text, overrides=None):
    """Parse flat key = value text into a validated RunConfig."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in SCHEMA:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        attr, parser, _ = SCHEMA[key]
        try:
            values[attr] = parser(value)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key}: {exc}") from exc
    if overrides:
        values.update(overrides)
    return RunConfig(**values).validate()


def load_config(path, overrides=None):
    with open(path) as fh:
        return parse_config(fh.read(), overrides=overrides)
