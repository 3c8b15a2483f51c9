"""Missing-modality multi-modal segmentation lab.

One weight-shared encoder per modality feeds a fusing decoder; per-task
teacher modalities are elected on a validation schedule; available student
features are distilled toward teacher features; missing feature slots are
filled with the mean of the available ones. Evaluation covers every
non-empty availability combination.
"""

from .availability import AvailabilityMask, all_combinations, generate_missing, sample_mask
from .backbone import (
    FeatureBundle,
    ModelConfig,
    ModelParams,
    decode,
    encode,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .dataset import DatasetSpec, InformativenessPlan, Sample, generate, load_case, split
from .election import ElectionRecord, TeacherSet, elect, election_due, validate_single_modality
from .errors import DataError, NumericalError
from .evaluator import EvalReport, dice, evaluate, paired_ttest_one_tailed, teacher_percentages
from .losses import LossConfig, ckd_loss, task_loss, total_loss
from .trainer import TrainConfig, TrainState, lr_at, run, train_step

__all__ = [
    "AvailabilityMask",
    "DataError",
    "DatasetSpec",
    "ElectionRecord",
    "EvalReport",
    "FeatureBundle",
    "InformativenessPlan",
    "LossConfig",
    "ModelConfig",
    "ModelParams",
    "NumericalError",
    "Sample",
    "TeacherSet",
    "TrainConfig",
    "TrainState",
    "all_combinations",
    "ckd_loss",
    "decode",
    "dice",
    "elect",
    "election_due",
    "encode",
    "evaluate",
    "forward",
    "generate",
    "generate_missing",
    "init_params",
    "load_case",
    "load_checkpoint",
    "lr_at",
    "paired_ttest_one_tailed",
    "run",
    "sample_mask",
    "save_checkpoint",
    "split",
    "task_loss",
    "teacher_percentages",
    "total_loss",
    "train_step",
    "validate_single_modality",
]

__version__ = "0.1.0"
