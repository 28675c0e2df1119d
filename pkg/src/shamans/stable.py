"""Alpha-stable spatial measure estimation.

The chain: estimate the characteristic exponent from the mixture, p-norm
normalize the TF observations, sketch nonnegative Lévy-exponent estimates
against normalized steering vectors, build the SV cross-coherence matrix,
and invert the linear relation between the sketch and the spatial measure
with sparse multiplicative updates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError, ParameterError, ShapeError
from .signal import Spectrogram
from .steering import (
    DoaGrid,
    NormalizedSVSet,
    SteeringVectorSet,
    match_freq_bins,
    normalize_svs,
)

# fixed evaluation points of the empirical characteristic function; the
# projection directions are part of the estimator definition, hence seeded
_ECF_THETAS = np.array([0.1, 0.5, 1.0, 2.0])
_NUM_PROJECTIONS = 8
_PROJECTION_SEED = 0x5EED
_ALPHA_MIN, _ALPHA_MAX = 0.4, 2.0


@dataclass
class AlphaParam:
    """Characteristic exponent in (0, 2]; 2 is the Gaussian edge case."""

    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha <= 2.0:
            raise ParameterError(f"alpha must lie in (0, 2], got {self.alpha}")


@dataclass
class NoiseModel:
    """Isotropic elliptic stable noise scale for the simulator."""

    epsilon: float
    alpha: float = 2.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ParameterError("epsilon must be nonnegative")

    @property
    def c_alpha(self) -> float:
        return (self.epsilon / 2.0) ** (self.alpha / 2.0)


@dataclass
class SolverConfig:
    """Multiplicative-update settings."""

    beta: float = 1.0
    sparsity_lambda: float = 1e-3
    iterations: int = 500
    p_norm: float = 1.0

    def __post_init__(self):
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if self.sparsity_lambda < 0:
            raise ParameterError("sparsity_lambda must be nonnegative")
        if self.p_norm <= 0:
            raise ParameterError("p_norm must be positive")


@dataclass
class LevySketch:
    """Stacked Lévy-exponent estimates and SV coherence blocks.

    Row f * L + l of both arrays refers to direction l probed at retained
    frequency bin f (direction index moves fastest).
    """

    i_hat: np.ndarray  # [F' * L]
    psi: np.ndarray  # [F' * L, L]
    alpha: AlphaParam
    num_freqs: int

    def __post_init__(self):
        self.i_hat = np.asarray(self.i_hat, dtype=np.float64)
        self.psi = np.asarray(self.psi, dtype=np.float64)
        if self.psi.ndim != 2 or self.i_hat.ndim != 1:
            raise ShapeError("i_hat must be a vector and psi a matrix")
        if self.psi.shape[0] != self.i_hat.size:
            raise ShapeError("psi row count must match i_hat length")
        if self.psi.shape[0] != self.num_freqs * self.psi.shape[1]:
            raise ShapeError("psi must stack num_freqs blocks of L rows")
        if np.any(self.i_hat < 0) or np.any(self.psi < 0):
            raise ParameterError("Lévy sketch entries must be nonnegative")


@dataclass
class SpatialMeasure:
    """Nonnegative mass per grid direction; peaks mark active sources."""

    upsilon: np.ndarray
    grid: DoaGrid | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.upsilon = np.asarray(self.upsilon, dtype=np.float64)
        if np.any(~np.isfinite(self.upsilon)) or np.any(self.upsilon < 0):
            raise ParameterError("spatial measure must be finite and nonnegative")
        if self.grid is not None and len(self.grid) != self.upsilon.size:
            raise ShapeError("measure length must match the grid")


def sample_sas(alpha: float, scale: float, count: int, seed) -> np.ndarray:
    """Isotropic complex SaS samples via the sub-Gaussian CMS construction.

    The scale follows the Lévy-exponent convention I(theta) = scale *
    |theta|^alpha for the scalar case: samples are sqrt(A) * g with A a
    totally skewed positive (alpha/2)-stable variable (Laplace transform
    exp(-u^(alpha/2))) and g circular Gaussian with component variance
    2 * scale^(2/alpha).
    """
    if not 0.0 < alpha <= 2.0:
        raise ParameterError("alpha must lie in (0, 2]")
    if scale < 0:
        raise ParameterError("scale must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if scale == 0.0:
        return np.zeros(count, dtype=np.complex128)
    sigma_g = math.sqrt(2.0) * scale ** (1.0 / alpha)
    if alpha == 2.0:
        g = rng.standard_normal(count) + 1j * rng.standard_normal(count)
        return sigma_g * g
    a_pos = _positive_stable(alpha / 2.0, count, rng)
    g = rng.standard_normal(count) + 1j * rng.standard_normal(count)
    return np.sqrt(a_pos) * sigma_g * g


def _positive_stable(gamma: float, count: int, rng) -> np.ndarray:
    """Totally skewed positive stable draws with E[exp(-u A)] = exp(-u^gamma)."""
    v = rng.uniform(-np.pi / 2.0, np.pi / 2.0, count)
    w = rng.exponential(1.0, count)
    b = np.pi / 2.0
    return (np.sin(gamma * (v + b)) / np.cos(v) ** (1.0 / gamma)
            * (np.cos(v - gamma * (v + b)) / w) ** ((1.0 - gamma) / gamma))


def sample_elliptic(alpha: float, epsilon: float, num_channels: int, count: int,
                    seed) -> np.ndarray:
    """Isotropic elliptic stable noise vectors [num_channels, count].

    One positive stable factor is shared across channels per draw, which is
    what distinguishes the elliptic family from independent SaS components;
    alpha = 2 degenerates to circular Gaussian with per-channel variance
    epsilon.
    """
    if not 0.0 < alpha <= 2.0:
        raise ParameterError("alpha must lie in (0, 2]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    g = math.sqrt(epsilon / 2.0) * (rng.standard_normal((num_channels, count))
                                    + 1j * rng.standard_normal((num_channels, count)))
    if alpha == 2.0:
        return g
    a_pos = _positive_stable(alpha / 2.0, count, rng)
    return np.sqrt(a_pos)[None, :] * g


def estimate_alpha(spec: Spectrogram) -> AlphaParam:
    """Characteristic exponent from log-log characteristic-function slopes.

    Projects TF observation vectors onto 8 fixed random complex unit
    directions, evaluates the empirical characteristic function of each
    real 1-D projection on a small theta grid, and averages the slopes of
    log(-log |phi|) against log theta. A degenerate projection (no decay of
    |phi|, e.g. a constant signal) carries no tail information; if all
    projections degenerate the Gaussian edge 2.0 is returned.
    """
    flat = spec.bins.reshape(spec.num_channels, -1)
    if spec.valid_mask is not None:
        flat = flat[:, spec.valid_mask.reshape(-1)]
    if flat.shape[1] < 100:
        raise EstimationError("need at least 100 TF samples to estimate alpha")
    if not np.any(flat):
        raise EstimationError("cannot estimate alpha from an all-zero spectrogram")

    rng = np.random.default_rng(_PROJECTION_SEED)
    proj = rng.standard_normal((_NUM_PROJECTIONS, spec.num_channels)) \
        + 1j * rng.standard_normal((_NUM_PROJECTIONS, spec.num_channels))
    proj /= np.linalg.norm(proj, axis=1, keepdims=True)

    y = np.real(proj.conj() @ flat)  # [D, n]
    med = np.median(np.abs(y), axis=1)
    log_thetas = np.log(_ECF_THETAS)
    slopes = []
    for d in range(_NUM_PROJECTIONS):
        if med[d] == 0:
            continue
        yd = y[d] / med[d]
        phi = np.abs(np.exp(1j * np.outer(_ECF_THETAS, yd)).mean(axis=1))
        neg_log = -np.log(np.minimum(phi, 1.0))
        if neg_log.max() < 1e-9:
            continue  # no decay: no resolvable tail along this projection
        slope = np.polyfit(log_thetas, np.log(np.maximum(neg_log, 1e-12)), 1)[0]
        slopes.append(slope)
    if not slopes:
        return AlphaParam(_ALPHA_MAX)
    return AlphaParam(float(np.clip(np.mean(slopes), _ALPHA_MIN, _ALPHA_MAX)))


def normalize_observations(spec: Spectrogram, p: float) -> Spectrogram:
    """Divide each TF vector by the p-th power of its p-norm.

    All-zero TF vectors cannot be normalized; they are zeroed out and
    excluded from downstream time averages through ``valid_mask``.
    """
    if p <= 0:
        raise ParameterError("p must be positive")
    norms_p = np.sum(np.abs(spec.bins) ** p, axis=0)  # [F, T]
    mask = norms_p > 0
    if spec.valid_mask is not None:
        mask &= spec.valid_mask
    safe = np.where(norms_p > 0, norms_p, 1.0)
    bins = np.where(mask[None, :, :], spec.bins / safe[None, :, :], 0.0)
    return Spectrogram(bins=bins, sample_rate=spec.sample_rate,
                       frame_size=spec.frame_size, hop=spec.hop, valid_mask=mask,
                       first_bin=spec.first_bin)


def levy_estimator(spec: Spectrogram, svs: NormalizedSVSet,
                   alpha: AlphaParam) -> np.ndarray:
    """Nonnegative Lévy-exponent estimates, one per (bin, direction).

    For each probe vector the estimate is -2 ln |mean_t exp(i Re(a~^H x_t)
    / 2^(1/alpha))| over the valid frames of that bin. The time average of
    unit-modulus terms never exceeds 1, so estimates are nonnegative; an
    exactly-zero average is floored at 1e-300 before the log.
    """
    if spec.num_freqs != svs.num_freqs or not np.allclose(spec.freqs_hz, svs.freqs_hz):
        raise ShapeError("spectrogram and SV set must share the frequency axis")
    if spec.num_channels != svs.num_mics:
        raise ShapeError("spectrogram and SV set must share the channel count")

    # Re(a~^H x): [L, F, T]
    inner = np.einsum("lmf,mft->lft", svs.values.conj(), spec.bins).real
    z = np.exp(1j * inner / 2.0 ** (1.0 / alpha.alpha))
    if spec.valid_mask is not None:
        counts = np.maximum(spec.valid_mask.sum(axis=1), 1)  # [F]
        z = z * spec.valid_mask[None, :, :]
        mean = z.sum(axis=2) / counts[None, :]
    else:
        mean = z.mean(axis=2)
    mag = np.abs(mean)
    if np.any(mag < 1e-300):
        warnings.warn("Lévy estimator hit an exactly-zero empirical average; "
                      "clamping before the log", RuntimeWarning)
    mag = np.clip(mag, 1e-300, 1.0)
    i_hat = -2.0 * np.log(mag)  # [L, F]
    return np.ascontiguousarray(i_hat.T).reshape(-1)  # f-blocks, l fastest


def build_psi(svs: NormalizedSVSet, alpha: AlphaParam) -> np.ndarray:
    """Stacked |a~_l^H a~_l'|^alpha coherence blocks, [F' * L, L]."""
    gram = np.einsum("lmf,kmf->flk", svs.values.conj(), svs.values)
    psi = np.abs(gram) ** alpha.alpha
    f, l, _ = psi.shape
    return psi.reshape(f * l, l)


def multiplicative_update(sketch: LevySketch, config: SolverConfig,
                          upsilon0: np.ndarray | None = None,
                          grid: DoaGrid | None = None) -> SpatialMeasure:
    """Sparse beta-divergence multiplicative updates for the spatial measure.

    Starts from the all-ones vector (unless ``upsilon0`` is given) and
    applies exactly ``iterations`` updates

        ups <- ups * Psi^T((Psi ups)^(beta-2) * i_hat)
                   / (Psi^T((Psi ups)^(beta-1)) + lambda)

    flooring Psi ups at 1e-12 before negative powers. Nonnegativity is
    preserved at every iterate.
    """
    psi = sketch.psi
    i_hat = sketch.i_hat
    num_dirs = psi.shape[1]
    ups = np.ones(num_dirs) if upsilon0 is None else np.asarray(upsilon0, dtype=np.float64).copy()
    if ups.size != num_dirs:
        raise ShapeError("upsilon0 length must match psi columns")
    beta, lam = config.beta, config.sparsity_lambda

    col_sums = psi.sum(axis=0)  # denominator is constant when beta = 1
    for _ in range(config.iterations):
        pv = np.maximum(psi @ ups, 1e-12)
        if beta == 1.0:
            num = psi.T @ (i_hat / pv)
            den = col_sums + lam
        else:
            num = psi.T @ (pv ** (beta - 2.0) * i_hat)
            den = psi.T @ (pv ** (beta - 1.0)) + lam
        ups = ups * num / np.maximum(den, 1e-300)
    return SpatialMeasure(upsilon=ups, grid=grid)


def kl_sparse_objective(sketch: LevySketch, upsilon: np.ndarray,
                        sparsity_lambda: float) -> float:
    """Generalized KL divergence D(i_hat || Psi ups) plus the L1 penalty."""
    pv = np.maximum(sketch.psi @ upsilon, 1e-12)
    i = sketch.i_hat
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(i > 0, i * np.log(np.where(i > 0, i, 1.0) / pv) - i + pv, pv)
    return float(term.sum() + sparsity_lambda * np.sum(upsilon))


def shamans_localize(spec: Spectrogram, svs: SteeringVectorSet,
                     config: SolverConfig | None = None) -> SpatialMeasure:
    """End-to-end alpha-stable localization over the SV grid.

    Estimates alpha from the raw mixture, p-normalizes observations,
    normalizes the steering vectors, sketches the Lévy exponents, and runs
    the multiplicative updates. The DC bin and any bin missing from the SV
    set's frequency axis never enter the sketch.
    """
    config = config or SolverConfig()
    alpha = estimate_alpha(spec)
    if config.p_norm >= alpha.alpha:
        raise ParameterError(
            f"p = {config.p_norm} must be below the estimated alpha = {alpha.alpha:.3f}")

    spec_idx, sv_idx = match_freq_bins(spec.freqs_hz, svs.freqs_hz, exclude_dc=True)
    normalized = normalize_observations(spec, config.p_norm)
    sub_spec = Spectrogram(bins=normalized.bins[:, spec_idx, :],
                           sample_rate=spec.sample_rate, frame_size=spec.frame_size,
                           hop=spec.hop, valid_mask=normalized.valid_mask[spec_idx, :],
                           first_bin=spec.first_bin + int(spec_idx[0]))
    sub_svs = SteeringVectorSet(values=svs.values[:, :, sv_idx], grid=svs.grid,
                                freqs_hz=svs.freqs_hz[sv_idx], source_tag=svs.source_tag)
    tilde = normalize_svs(sub_svs)

    i_hat = levy_estimator(sub_spec, tilde, alpha)
    psi = build_psi(tilde, alpha)
    sketch = LevySketch(i_hat=i_hat, psi=psi, alpha=alpha, num_freqs=spec_idx.size)
    measure = multiplicative_update(sketch, config, grid=svs.grid)
    measure.info = {
        "alpha": alpha.alpha,
        "beta": config.beta,
        "sparsity_lambda": config.sparsity_lambda,
        "iterations": config.iterations,
        "p_norm": config.p_norm,
        "num_freqs": int(spec_idx.size),
        "num_frames": spec.num_frames,
    }
    return measure
