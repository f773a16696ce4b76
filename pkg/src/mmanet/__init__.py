"""Incomplete multimodal learning with margin-aware distillation and
modality-aware regularization."""

from .config import TrainConfig, config_from_dict, load_config
from .data import (
    DatasetSpec,
    DropoutPattern,
    ModalityBatch,
    ModalityDataset,
    apply_dropout,
    bayes_error,
    enumerate_patterns,
    generate_dataset,
    sample_dropout_pattern,
)
from .errors import ConfigError, MiningStateError, NumericalError
from .evaluation import acer, emit_report, evaluate_combinations, format_table, weak_average
from .mad import classification_uncertainty, mad_loss, relation_discrepancy, relation_matrix
from .mar import (
    MiningState,
    class_histogram,
    finalize_mining,
    format_mining_report,
    mar_loss,
    mining_report,
    pattern_divergence,
    weak_mask,
)
from .models import DeploymentNet, TeacherNet, forward_deployment, forward_teacher
from .train import load_data, pretrain_teacher, run_experiment, total_loss, train_deployment

__version__ = "0.1.0"
