"""
Multi-behavior sequential recommender

A frequency-domain backbone pretrained on multi-behavior sequences, with
per-user prompts tuned on a frozen backbone for a target behavior.
"""

__version__ = "1.0.0"
__description__ = "Multi-behavior sequential recommendation with customized prompt tuning"
