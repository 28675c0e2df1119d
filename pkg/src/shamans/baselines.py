"""Wideband MUSIC and SRP-PHAT angular spectra over the DOA grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .signal import Spectrogram
from .steering import DoaGrid, SteeringVectorSet, match_freq_bins


@dataclass
class AngularSpectrum:
    """Per-direction score curve, max-normalized so peaks sit at 1."""

    values: np.ndarray
    grid: DoaGrid
    method_tag: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("angular spectrum contains non-finite values")
        if self.values.size != len(self.grid):
            raise ShapeError("spectrum length must match the grid")


def _max_normalize(values: np.ndarray) -> np.ndarray:
    peak = values.max()
    return values / peak if peak > 0 else values


def music_spectrum(spec: Spectrogram, svs: SteeringVectorSet,
                   subspace_rank: int = 1) -> AngularSpectrum:
    """Frequency-averaged MUSIC pseudospectrum.

    Per retained bin: empirical spatial covariance, Hermitian
    eigendecomposition (regularized by 1e-12 I), noise projector from the
    M - k smallest eigenvectors, pseudospectrum ||a||^2 / (a^H En En^H a)
    capped at 1e12. Bins are max-normalized before averaging so loud bins
    do not dominate, and the averaged spectrum is max-normalized again.
    """
    m = spec.num_channels
    if not 1 <= subspace_rank < m:
        raise ParameterError(f"subspace rank must lie in [1, {m - 1}]")
    spec_idx, sv_idx = match_freq_bins(spec.freqs_hz, svs.freqs_hz, exclude_dc=True)

    num_dirs = len(svs.grid)
    acc = np.zeros(num_dirs)
    t = spec.num_frames
    for i_spec, i_sv in zip(spec_idx, sv_idx):
        x = spec.bins[:, i_spec, :]  # [M, T]
        cov = (x @ x.conj().T) / t + 1e-12 * np.eye(m)
        _vals, vecs = np.linalg.eigh(cov)
        noise_basis = vecs[:, : m - subspace_rank]  # smallest eigenvalues first
        a = svs.values[:, :, i_sv]  # [L, M]
        proj = a.conj() @ noise_basis  # [L, M-k]
        denom = np.sum(np.abs(proj) ** 2, axis=1) / np.sum(np.abs(a) ** 2, axis=1)
        acc += _max_normalize(1.0 / np.maximum(denom, 1e-12))
    spectrum = _max_normalize(acc / spec_idx.size)
    return AngularSpectrum(values=spectrum, grid=svs.grid,
                           method_tag=f"music-{subspace_rank}")


def srp_phat_spectrum(spec: Spectrogram, svs: SteeringVectorSet) -> AngularSpectrum:
    """Steered response power with per-bin phase-transform whitening.

    Both the observations and the steering vectors are reduced to pure
    phase (zero-magnitude entries stay zero), so the spectrum is invariant
    to any per-channel or global rescaling of the input.
    """
    if spec.num_channels < 2:
        raise ParameterError("SRP-PHAT needs at least two channels")
    spec_idx, sv_idx = match_freq_bins(spec.freqs_hz, svs.freqs_hz, exclude_dc=True)

    x = spec.bins[:, spec_idx, :]
    mag = np.abs(x)
    white = np.where(mag > 0, x / np.where(mag > 0, mag, 1.0), 0.0)

    a = svs.values[:, :, sv_idx]
    a_mag = np.abs(a)
    a_phase = np.where(a_mag > 0, a / np.where(a_mag > 0, a_mag, 1.0), 0.0)

    steered = np.einsum("lmf,mft->lft", a_phase.conj(), white)
    power = np.sum(np.abs(steered) ** 2, axis=(1, 2))
    return AngularSpectrum(values=_max_normalize(power), grid=svs.grid,
                           method_tag="srp-phat")
