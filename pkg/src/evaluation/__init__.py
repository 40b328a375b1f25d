"""
Ranking evaluation: HR@K / NDCG@K under leave-one-out with sampled negatives.
"""

from .metrics import hr_ndcg_at_k, mean_metrics, rank_candidates, target_rank, target_ranks
from .report import EvalReport, render_report
from .evaluator import CandidateScorer, ModelScorer, cold_start_subset, evaluate, rank_cases

__all__ = [
    'hr_ndcg_at_k', 'mean_metrics', 'rank_candidates', 'target_rank', 'target_ranks',
    'EvalReport', 'render_report',
    'CandidateScorer', 'ModelScorer', 'cold_start_subset', 'evaluate', 'rank_cases',
]
