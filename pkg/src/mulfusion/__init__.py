"""Multiplicative multimodal fusion on a small numpy reverse-mode autodiff engine."""

from .candidates import MixtureCandidate, enumerate_candidates
from .data import Dataset, DatasetSpec, MultimodalBatch, SyntheticSpec, bayes_rate, generate_synthetic, load_dataset
from .errors import ConfigError, DataError, DivergenceError, NonFiniteError, UndefinedMetricError
from .evaluation import MetricsReport, SweepResult, evaluate
from .experiment import ExperimentConfig, load_config, run_experiment
from .fusion import FusionConfig, mul_class_losses, predict, q_factor, training_loss
from .metrics import auc, error_rate, over_learn_error
from .models import ModelBundle, ModelSpec, init_bundle, load_checkpoint, save_checkpoint
from .sweep import sweep, sweep_beta
from .tensor import ComputationTape, Tensor, backward
from .training import OptimizerConfig, train

__version__ = "0.1.0"
