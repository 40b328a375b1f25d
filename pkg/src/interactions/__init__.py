"""
Interaction data: loading, filtering, splitting, statistics and synthetic corpora.
"""

from .records import (
    IdMap, InteractionLog, InteractionRecord, SplitSpec, UserSplit, UserStatistics,
)
from .loader import load_attributes, load_interactions, save_attributes
from .preprocessing import (
    SplitReport, filter_min_interactions, make_split_spec, temporal_split, temporal_split_with_report,
)
from .statistics import compute_user_statistics, fit_standardizer, statistics_matrix
from .synthetic import SynthConfig, SyntheticCorpus, generate_synthetic, generate_synthetic_corpus

__all__ = [
    'IdMap', 'InteractionLog', 'InteractionRecord', 'SplitSpec', 'UserSplit', 'UserStatistics',
    'load_attributes', 'load_interactions', 'save_attributes',
    'SplitReport', 'filter_min_interactions', 'make_split_spec', 'temporal_split',
    'temporal_split_with_report', 'compute_user_statistics', 'fit_standardizer',
    'statistics_matrix', 'SynthConfig', 'SyntheticCorpus', 'generate_synthetic',
    'generate_synthetic_corpus',
]
