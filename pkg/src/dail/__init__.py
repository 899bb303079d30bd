"""Dataset-aware and invariant multi-dataset training on synthetic corpora."""

from .datagen import GenConfig, SyntheticCorpus, generate_corpus, make_verification_pairs
from .losses import MarginSpec, angular_logits, dataset_aware_loss, domain_loss, linear_logits
from .registry import ClassTable, build_class_table, crossing_dropout_mask, dataset_mask
from .trainer import LOSS_MODES, TrainConfig, lr_at, train

__version__ = "0.1.0"
