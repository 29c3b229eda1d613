"""Complex-matrix kernels: pseudoinverse, cross covariance, conditioning.

All functions accept either a single (rows, cols) matrix or a stack with
leading batch axes (typically one matrix per frequency bin).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalFailureError
from .signal_core import Spectrogram

HERMITIAN_RTOL = 1e-10
PSD_EIGENVALUE_RTOL = 1e-10


@dataclass(frozen=True)
class CovariancePair:
    """Per-bin covariance matrices averaged over a frame range.

    ``p_aa`` has shape (bins, Q_A, Q_A) and is Hermitian positive
    semidefinite; ``p_ba`` has shape (bins, Q_B, Q_A).
    """

    p_aa: np.ndarray
    p_ba: np.ndarray
    frame_count: int

    def __post_init__(self):
        p_aa = np.asarray(self.p_aa, dtype=np.complex128)
        p_ba = np.asarray(self.p_ba, dtype=np.complex128)
        if p_aa.ndim != 3 or p_aa.shape[1] != p_aa.shape[2]:
            raise InvalidInputError(f"p_aa must be (bins, Q_A, Q_A), got {p_aa.shape}")
        if p_ba.ndim != 3 or p_ba.shape[0] != p_aa.shape[0] or p_ba.shape[2] != p_aa.shape[1]:
            raise InvalidInputError(
                f"p_ba shape {p_ba.shape} inconsistent with p_aa shape {p_aa.shape}"
            )
        if self.frame_count < 1:
            raise InvalidInputError(f"frame_count must be >= 1, got {self.frame_count}")
        scale = np.abs(p_aa).max(axis=(1, 2), keepdims=True)
        asym = np.abs(p_aa - p_aa.conj().transpose(0, 2, 1)).max(axis=(1, 2), keepdims=True)
        if np.any(asym > HERMITIAN_RTOL * np.maximum(scale, np.finfo(float).tiny)):
            raise InvalidInputError("p_aa is not Hermitian within tolerance")
        object.__setattr__(self, "p_aa", p_aa)
        object.__setattr__(self, "p_ba", p_ba)

    def check_positive_semidefinite(self) -> None:
        """Raise if any p_aa eigenvalue falls below -rtol * trace."""
        eigvals = np.linalg.eigvalsh(0.5 * (self.p_aa + self.p_aa.conj().transpose(0, 2, 1)))
        traces = np.einsum("fii->f", self.p_aa).real
        bad = eigvals.min(axis=1) < -PSD_EIGENVALUE_RTOL * np.maximum(traces, 0.0)
        if np.any(bad):
            raise InvalidInputError(
                f"p_aa is not positive semidefinite at bins {np.flatnonzero(bad)[:8]}"
            )


def pseudoinverse(m: np.ndarray, rcond: float = 1e-10) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD with relative truncation.

    Singular values below ``rcond * sigma_max`` are treated as zero.  Accepts
    stacked matrices; returns the (..., cols, rows) pseudoinverse.
    """
    m = np.asarray(m)
    if m.size == 0:
        raise InvalidInputError("cannot pseudoinvert an empty matrix")
    if not (0.0 < rcond < 1.0):
        raise InvalidInputError(f"rcond must lie in (0, 1), got {rcond}")
    try:
        return np.linalg.pinv(m, rcond=rcond)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"SVD did not converge: {exc}") from exc


def condition_number(m: np.ndarray) -> float | np.ndarray:
    """sigma_max / sigma_min, with +inf where sigma_min is zero.

    Returns a scalar for a single matrix, an array for a stack.
    """
    m = np.asarray(m)
    if m.size == 0:
        raise InvalidInputError("cannot compute the condition number of an empty matrix")
    s = np.linalg.svd(m, compute_uv=False)
    smax = s[..., 0]
    smin = s[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(smin > 0.0, smax / np.where(smin > 0.0, smin, 1.0), np.inf)
    if cond.ndim == 0:
        return float(cond)
    return cond


def truncated_condition_number(m: np.ndarray, rcond: float) -> float | np.ndarray:
    """sigma_max over the smallest singular value retained at the rcond cutoff.

    This measures the conditioning of the system the truncated pseudoinverse
    actually inverts; rank-deficient matrices with a clean spectral gap are
    well conditioned by this measure even though sigma_min is zero.
    """
    m = np.asarray(m)
    s = np.linalg.svd(m, compute_uv=False)
    smax = s[..., 0:1]
    retained = np.where(s > rcond * smax, s, np.nan)
    with np.errstate(invalid="ignore"):
        smin_kept = np.nanmin(retained, axis=-1)
    smax = smax[..., 0]
    cond = np.where(smax > 0.0, smax / smin_kept, np.inf)
    cond = np.where(np.isnan(cond), np.inf, cond)
    if cond.ndim == 0:
        return float(cond)
    return cond


def cross_covariance(spec_a: Spectrogram, spec_b: Spectrogram,
                     frame_range: tuple[int, int]) -> CovariancePair:
    """Average outer products over a frame range, per frequency bin.

    P_AA(f) = mean_t a(f,t) a(f,t)^H and P_BA(f) = mean_t b(f,t) a(f,t)^H,
    where a and b are the channel vectors of the two spectrograms and ^H is
    the conjugate transpose.
    """
    if spec_a.params != spec_b.params:
        raise InvalidInputError("spectrograms have different STFT parameters")
    if spec_a.num_frames != spec_b.num_frames:
        raise InvalidInputError(
            f"frame counts differ: {spec_a.num_frames} vs {spec_b.num_frames}"
        )
    start, end = frame_range
    if not (0 <= start < end <= spec_a.num_frames):
        raise InvalidInputError(
            f"frame_range [{start}, {end}) invalid for {spec_a.num_frames} frames"
        )
    a = spec_a.data[:, start:end, :]
    b = spec_b.data[:, start:end, :]
    count = end - start
    p_aa = np.einsum("ftp,ftq->fpq", a, a.conj()) / count
    p_ba = np.einsum("ftp,ftq->fpq", b, a.conj()) / count
    # Outer-product sums are Hermitian up to rounding; symmetrize so the
    # invariant holds bit-for-bit.
    p_aa = 0.5 * (p_aa + p_aa.conj().transpose(0, 2, 1))
    return CovariancePair(p_aa=p_aa, p_ba=p_ba, frame_count=count)
