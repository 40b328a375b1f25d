"""
Models: behavior-aware embeddings, the frequency-domain backbone and the prompt path.
"""

from .embedding import EmbeddingTables, SequenceMatrix, behavior_views, embed_sequence, inject_prompts, strip_prompts
from .filter_layer import ChunkedComplexMLP, EfficientFilterLayer, efl_census, efl_param_count
from .behavior_miner import BehaviorMiner, BehaviorMinerLayer, encode_user
from .coding_rate import coding_rate, compactness_loss
from .prompt_gate import PromptFactorizedGate, pfg_factors, pfg_prompt
from .prompt_learner import CustomizedPromptLearner, PromptFeatures, PromptOutput, StaticPromptBank
from .model_manager import ModelManager

__all__ = [
    'EmbeddingTables', 'SequenceMatrix', 'behavior_views', 'embed_sequence', 'inject_prompts', 'strip_prompts',
    'ChunkedComplexMLP', 'EfficientFilterLayer', 'efl_census', 'efl_param_count',
    'BehaviorMiner', 'BehaviorMinerLayer', 'encode_user',
    'coding_rate', 'compactness_loss',
    'PromptFactorizedGate', 'pfg_factors', 'pfg_prompt',
    'CustomizedPromptLearner', 'PromptFeatures', 'PromptOutput', 'StaticPromptBank',
    'ModelManager',
]
