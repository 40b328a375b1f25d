"""
Core utilities shared by every stage: exceptions, seeding and hashing.
"""

from .exceptions import RecommenderError
from .seeding import SeedStreams, stable_hash

__all__ = ['RecommenderError', 'SeedStreams', 'stable_hash']
