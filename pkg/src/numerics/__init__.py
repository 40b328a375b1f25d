"""
Numerical primitives: column-wise FFTs and finite-difference gradient checks.
"""

from .spectral import ComplexSpectrum, irfft_cols, rfft_cols, spectrum_bins
from .gradcheck import GradCheckReport, ParameterCheck, autograd_gradients, grad_check, relative_error

__all__ = [
    'ComplexSpectrum', 'irfft_cols', 'rfft_cols', 'spectrum_bins',
    'GradCheckReport', 'ParameterCheck', 'autograd_gradients', 'grad_check', 'relative_error',
]
