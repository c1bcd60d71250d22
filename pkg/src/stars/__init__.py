"""Multi-task RL at desk scale: shared-unique features + task-aware sampling."""

import os as _os

# the arrays here are tiny: BLAS threading only adds synchronization cost
# (and nondeterminism risk); honored only if numpy is not yet imported
_os.environ.setdefault("OMP_NUM_THREADS", "1")
_os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
_os.environ.setdefault("MKL_NUM_THREADS", "1")

from .config import RunConfig, load_config, parse_config
from .envs import TaskSpec, Transition, evaluate_success, make_suite
from .extractor import FeatureExtractor
from .replay import PrioritizedBuffer, SumTree
from .sac import SACAgent
from .scheduler import TaskBudget, allocate, allocate_variant
from .stats import imbalance_summary, welch_ttest
from .trainer import Trainer, run_ablation, train

__version__ = "0.1.0"

__all__ = [
    "FeatureExtractor",
    "PrioritizedBuffer",
    "RunConfig",
    "SACAgent",
    "SumTree",
    "TaskBudget",
    "TaskSpec",
    "Trainer",
    "Transition",
    "allocate",
    "allocate_variant",
    "evaluate_success",
    "imbalance_summary",
    "load_config",
    "make_suite",
    "parse_config",
    "run_ablation",
    "train",
    "welch_ttest",
]
