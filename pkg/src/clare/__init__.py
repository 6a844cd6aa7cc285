"""Class-incremental learning with generative replay.

A single network learns to classify and to generate at once: a shared
encoder feeds a softmax classifier and, through a reparameterized latent, a
class-conditional decoder. When new classes arrive, the frozen decoder
replays the old ones, so the model can retrain on a balanced mix without
storing past data.
"""

from .config import ExperimentConfig
from .dataio import LabeledDataset, load_mnist, make_toy_dataset, parse_idx, write_idx
from .kernels import backend_name
from .metrics import average_over_tasks, evaluate
from .model import (
    ClareModel,
    LatentGaussian,
    classification_loss,
    expand_classes,
    kl_divergence,
    load_model,
    one_hot,
    reconstruction_loss,
    reparameterize,
    save_model,
    total_loss,
)
from .protocol import (
    IncrementState,
    MetricsRecord,
    Schedule,
    build_schedule,
    run_experiment,
    run_finetune_baseline,
    run_increment,
    run_joint_baseline,
)
from .replay import (
    DecoderSnapshot,
    ReplayBuffer,
    balance_counts,
    generate_replay,
    take_snapshot,
)
from .report import ResultsReport, read_report, write_report

__version__ = "0.1.0"

__all__ = [
    "ClareModel",
    "DecoderSnapshot",
    "ExperimentConfig",
    "IncrementState",
    "LabeledDataset",
    "LatentGaussian",
    "MetricsRecord",
    "ReplayBuffer",
    "ResultsReport",
    "Schedule",
    "average_over_tasks",
    "backend_name",
    "balance_counts",
    "build_schedule",
    "classification_loss",
    "evaluate",
    "expand_classes",
    "generate_replay",
    "kl_divergence",
    "load_mnist",
    "load_model",
    "make_toy_dataset",
    "one_hot",
    "parse_idx",
    "read_report",
    "reconstruction_loss",
    "reparameterize",
    "run_experiment",
    "run_finetune_baseline",
    "run_increment",
    "run_joint_baseline",
    "save_model",
    "take_snapshot",
    "total_loss",
    "write_idx",
    "write_report",
]
