"""
Pipeline Module

Configuration resolution, run orchestration, benchmarks, experiments and exports.
"""

from .config import resolve_config, save_config
from .pipeline_manager import PipelineManager
from .stages import PreparedData, prepare_data

__all__ = ['PipelineManager', 'PreparedData', 'prepare_data', 'resolve_config', 'save_config']
