"""
Training: batching, objectives, negative sampling, parameter budgets and checkpoints.

The pretraining and tuning loops live in ``training.pretrainer`` and
``training.tuner`` and are imported from there.
"""

from .batching import (
    SequenceBatch, TuneCase, UserFeatureStore, build_pretrain_examples, build_tune_cases,
    collate_histories, evaluation_cases, validation_cases,
)
from .losses import prediction_loss, pretrain_loss, tune_loss
from .sampling import sample_negative_behavior, sample_negative_item, sample_negative_items
from .budget import ParamBudget, param_budget, set_trainable
from .checkpoint import (
    BACKBONE_KIND, PROMPTS_KIND, Checkpoint, capture_rng_state, load_checkpoint, restore_rng,
    save_checkpoint,
)

__all__ = [
    'SequenceBatch', 'TuneCase', 'UserFeatureStore', 'build_pretrain_examples', 'build_tune_cases',
    'collate_histories', 'evaluation_cases', 'validation_cases',
    'prediction_loss', 'pretrain_loss', 'tune_loss',
    'sample_negative_behavior', 'sample_negative_item', 'sample_negative_items',
    'ParamBudget', 'param_budget', 'set_trainable',
    'BACKBONE_KIND', 'PROMPTS_KIND', 'Checkpoint', 'capture_rng_state', 'load_checkpoint',
    'restore_rng', 'save_checkpoint',
]
