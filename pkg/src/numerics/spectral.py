"""
Column-wise FFT primitives along the sequence axis.

Convention: unnormalized forward transform, 1/L-normalized inverse. Real input
keeps only the L // 2 + 1 non-negative frequency bins unless ``full`` is set,
in which case all L bins of the complex transform are kept and the inverse
returns the real part.
"""

from dataclasses import dataclass

import torch

SEQUENCE_AXIS = -2


@dataclass
class ComplexSpectrum:
    values: torch.Tensor
    source_length: int
    full: bool = False

    @property
    def n_bins(self) -> int:
        return self.values.shape[SEQUENCE_AXIS]


def spectrum_bins(length: int, full: bool = False) -> int:
    return length if full else length // 2 + 1


def rfft_cols(S: torch.Tensor, full: bool = False) -> ComplexSpectrum:
    """FFT of each column of ``S`` (..., L, d) along the sequence axis"""
    length = S.shape[SEQUENCE_AXIS]
    if length < 1:
        raise ValueError("sequence length must be >= 1")
    if full:
        values = torch.fft.fft(S, dim=SEQUENCE_AXIS, norm="backward")
    else:
        values = torch.fft.rfft(S, dim=SEQUENCE_AXIS, norm="backward")
    return ComplexSpectrum(values=values, source_length=length, full=full)


def irfft_cols(X: ComplexSpectrum) -> torch.Tensor:
    """Inverse of ``rfft_cols``: (..., L, d) real"""
    expected = spectrum_bins(X.source_length, X.full)
    if X.n_bins != expected:
        raise ValueError(f"spectrum has {X.n_bins} bins, expected {expected} for length {X.source_length}")
    if X.full:
        return torch.fft.ifft(X.values, n=X.source_length, dim=SEQUENCE_AXIS, norm="backward").real
    return torch.fft.irfft(X.values, n=X.source_length, dim=SEQUENCE_AXIS, norm="backward")
