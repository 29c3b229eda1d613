"""Blind relative-transfer-matrix estimation and subtraction separation.

For two disjoint microphone groups A and B observing the same set of active
sources, the per-bin relative transfer matrix R(f) maps group-B spectra to
the corresponding group-A spectra regardless of what the sources emit.  R is
estimated blindly from a segment where only the undesired sources are active,
via the covariance identity R = P_AA * pinv(P_BA); applying M_A - R * M_B to
a later mixture then cancels everything that was active during training and
leaves the (filtered) remaining source.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalFailureError
from .numerics import (
    condition_number,
    cross_covariance,
    pseudoinverse,
    truncated_condition_number,
)
from .signal_core import AudioBuffer, Spectrogram, StftParams, istft, stft

DEFAULT_RCOND = 1e-10
# Bins whose retained singular values still span more than this ratio produce
# wild pseudoinverses that inject more energy than they remove; those bins
# fall back to R = 0 (pass-through).
CONDITION_FALLBACK_LIMIT = 1e8
RECOMMENDED_TRAINING_S = 60.0
FRAME_COUNT_WARN_FACTOR = 5

_RETM_MAGIC = b"RETM"
_RETM_VERSION = 1
_RETM_HEADER = struct.Struct("<4sIIIIqQd")


class ShortTrainingWarning(UserWarning):
    """Training material is shorter than the recommended 60 seconds."""


class InsufficientFramesWarning(UserWarning):
    """Too few STFT frames for statistically stable covariance estimates."""


class ValidityConditionWarning(UserWarning):
    """Group B has fewer microphones than there are active sources."""


@dataclass(frozen=True)
class GroupAssignment:
    """Disjoint microphone index sets for groups A and B."""

    group_a: tuple[int, ...]
    group_b: tuple[int, ...]

    def __post_init__(self):
        a = tuple(int(i) for i in self.group_a)
        b = tuple(int(i) for i in self.group_b)
        if not a or not b:
            raise InvalidInputError("both groups need at least one channel")
        if len(set(a)) != len(a) or len(set(b)) != len(b):
            raise InvalidInputError("duplicate channel index within a group")
        if set(a) & set(b):
            raise InvalidInputError(f"groups overlap on channels {sorted(set(a) & set(b))}")
        if min(a + b) < 0:
            raise InvalidInputError("channel indices must be non-negative")
        object.__setattr__(self, "group_a", a)
        object.__setattr__(self, "group_b", b)

    @property
    def q_a(self) -> int:
        return len(self.group_a)

    @property
    def q_b(self) -> int:
        return len(self.group_b)

    def validate_channel_count(self, num_channels: int) -> None:
        top = max(self.group_a + self.group_b)
        if top >= num_channels:
            raise InvalidInputError(
                f"group assignment references channel {top} but the recording has "
                f"{num_channels} channels"
            )


@dataclass(frozen=True)
class SegmentSpec:
    """Training (undesired-only) and mixture intervals in seconds."""

    t1: tuple[float, float]
    t2: tuple[float, float]

    def __post_init__(self):
        t1 = (float(self.t1[0]), float(self.t1[1]))
        t2 = (float(self.t2[0]), float(self.t2[1]))
        for name, (s, e) in (("t1", t1), ("t2", t2)):
            if not (0.0 <= s < e):
                raise InvalidInputError(f"{name} = [{s}, {e}) is not a valid interval")
        if max(t1[0], t2[0]) < min(t1[1], t2[1]):
            raise InvalidInputError(f"t1 {t1} and t2 {t2} overlap")
        object.__setattr__(self, "t1", t1)
        object.__setattr__(self, "t2", t2)

    def validate_for(self, duration_s: float, params: StftParams, sample_rate_hz: int) -> None:
        if self.t1[1] > duration_s or self.t2[1] > duration_s:
            raise InvalidInputError(
                f"segments extend past the {duration_s:.2f} s recording"
            )
        if (self.t1[1] - self.t1[0]) * sample_rate_hz < params.window_len:
            raise InvalidInputError("t1 must cover at least one STFT window")


@dataclass(frozen=True)
class ReTMStack:
    """Per-bin Q_A x Q_B relative transfer matrices plus diagnostics.

    ``condition_numbers`` holds the raw sigma_max/sigma_min of each bin's
    P_BA; ``fallback_bins`` marks bins forced to R = 0 because the retained
    spectrum after rcond truncation was still ill conditioned.
    """

    matrices: np.ndarray
    target_id: int
    frame_count: int
    rcond_used: float
    condition_numbers: np.ndarray
    fallback_bins: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=np.complex128)
        if m.ndim != 3:
            raise InvalidInputError(f"matrices must be (bins, Q_A, Q_B), got {m.shape}")
        if not np.isfinite(m).all():
            raise InvalidInputError("matrices contain non-finite entries")
        object.__setattr__(self, "matrices", m)
        object.__setattr__(self, "condition_numbers",
                           np.asarray(self.condition_numbers, dtype=np.float64))
        object.__setattr__(self, "fallback_bins",
                           np.asarray(self.fallback_bins, dtype=bool))

    @property
    def num_bins(self) -> int:
        return self.matrices.shape[0]

    @property
    def q_a(self) -> int:
        return self.matrices.shape[1]

    @property
    def q_b(self) -> int:
        return self.matrices.shape[2]

    def diagnostics_dict(self) -> dict:
        conds = [None if not math.isfinite(c) else float(c) for c in self.condition_numbers]
        return {
            "target_id": self.target_id,
            "bins": self.num_bins,
            "q_a": self.q_a,
            "q_b": self.q_b,
            "frame_count": self.frame_count,
            "rcond": self.rcond_used,
            "fallback_bins": [int(i) for i in np.flatnonzero(self.fallback_bins)],
            "condition_numbers": conds,
        }

    def save(self, path) -> None:
        """Binary container (little-endian header + complex64 matrices) plus
        a JSON diagnostics sidecar at ``<path>.json``."""
        header = _RETM_HEADER.pack(
            _RETM_MAGIC, _RETM_VERSION, self.num_bins, self.q_a, self.q_b,
            self.target_id, self.frame_count, self.rcond_used,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.matrices).astype("<c8").tobytes())
        with open(f"{path}.json", "w") as fh:
            json.dump(self.diagnostics_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ReTMStack":
        with open(path, "rb") as fh:
            raw = fh.read(_RETM_HEADER.size)
            magic, version, bins, q_a, q_b, target_id, frame_count, rcond = (
                _RETM_HEADER.unpack(raw)
            )
            if magic != _RETM_MAGIC or version != _RETM_VERSION:
                raise InvalidInputError(f"{path} is not a version-{_RETM_VERSION} ReTM container")
            body = np.frombuffer(fh.read(bins * q_a * q_b * 8), dtype="<c8")
        matrices = body.reshape(bins, q_a, q_b).astype(np.complex128)
        conds = np.full(bins, np.nan)
        fallback = np.zeros(bins, dtype=bool)
        try:
            with open(f"{path}.json") as fh:
                diag = json.load(fh)
            conds = np.array([np.inf if c is None else c
                              for c in diag.get("condition_numbers", [])] or conds)
            fb = diag.get("fallback_bins", [])
            fallback = np.zeros(bins, dtype=bool)
            fallback[list(fb)] = True
        except FileNotFoundError:
            pass
        return cls(matrices=matrices, target_id=int(target_id),
                   frame_count=int(frame_count), rcond_used=float(rcond),
                   condition_numbers=conds, fallback_bins=fallback)


@dataclass(frozen=True)
class TransferMatrixSet:
    """Ground-truth per-bin acoustic transfer matrices (test oracle)."""

    h_a: np.ndarray  # (bins, Q_A, L)
    h_b: np.ndarray  # (bins, Q_B, L)

    def __post_init__(self):
        h_a = np.asarray(self.h_a, dtype=np.complex128)
        h_b = np.asarray(self.h_b, dtype=np.complex128)
        if h_a.ndim != 3 or h_b.ndim != 3 or h_a.shape[0] != h_b.shape[0] \
                or h_a.shape[2] != h_b.shape[2]:
            raise InvalidInputError(
                f"inconsistent transfer matrix shapes {h_a.shape} / {h_b.shape}"
            )
        object.__setattr__(self, "h_a", h_a)
        object.__setattr__(self, "h_b", h_b)

    @property
    def num_sources(self) -> int:
        return self.h_a.shape[2]


def estimate_retm(spec_a: Spectrogram, spec_b: Spectrogram,
                  t1_frames: tuple[int, int], rcond: float = DEFAULT_RCOND,
                  target_id: int = -1,
                  condition_limit: float = CONDITION_FALLBACK_LIMIT) -> ReTMStack:
    """Blind per-bin estimate R = P_AA * pinv(P_BA) over the training frames.

    ``t1_frames`` is a half-open frame range during which the target is
    inactive.  Requires at least Q_A frames; fewer than 5*max(Q_A, Q_B)
    triggers a warning because the covariance averages get noisy.
    """
    start, end = t1_frames
    count = end - start
    q_a = spec_a.num_channels
    q_b = spec_b.num_channels
    if count < q_a:
        raise InvalidInputError(
            f"need at least Q_A = {q_a} training frames, got {count}"
        )
    if count < FRAME_COUNT_WARN_FACTOR * max(q_a, q_b):
        warnings.warn(
            f"{count} training frames for group sizes ({q_a}, {q_b}); expect noisy "
            f"covariance averages below {FRAME_COUNT_WARN_FACTOR * max(q_a, q_b)}",
            InsufficientFramesWarning,
            stacklevel=2,
        )
    cov = cross_covariance(spec_a, spec_b, t1_frames)
    raw_cond = np.atleast_1d(condition_number(cov.p_ba))
    eff_cond = np.atleast_1d(truncated_condition_number(cov.p_ba, rcond))
    try:
        pinv_ba = pseudoinverse(cov.p_ba, rcond)
    except NumericalFailureError:
        pinv_ba = _pseudoinverse_per_bin(cov.p_ba, rcond)
    matrices = cov.p_aa @ pinv_ba
    fallback = ~np.isfinite(eff_cond) | (eff_cond > condition_limit)
    if fallback.any():
        matrices = matrices.copy()
        matrices[fallback] = 0.0
    return ReTMStack(matrices=matrices, target_id=target_id, frame_count=count,
                     rcond_used=rcond, condition_numbers=raw_cond,
                     fallback_bins=fallback)


def _pseudoinverse_per_bin(stack: np.ndarray, rcond: float) -> np.ndarray:
    """Bin-by-bin fallback that reports which bin broke the batched SVD."""
    out = np.empty((stack.shape[0], stack.shape[2], stack.shape[1]), dtype=np.complex128)
    for f in range(stack.shape[0]):
        try:
            out[f] = pseudoinverse(stack[f], rcond)
        except NumericalFailureError as exc:
            raise NumericalFailureError(
                f"SVD failed for P_BA at frequency bin {f}: {exc}"
            ) from exc
    return out


def apply_separation(spec_a: Spectrogram, spec_b: Spectrogram, retm: ReTMStack,
                     t2_frames: tuple[int, int] | None = None) -> Spectrogram:
    """Per bin and frame, output = M_A - R * M_B over the mixture frames.

    The result has Q_A channels.  When ``t2_frames`` spans all frames the
    output keeps the input's original length for exact resynthesis; a
    sub-range reconstructs hop*frames samples of the segment interior.
    """
    if spec_a.params != spec_b.params or spec_a.num_frames != spec_b.num_frames:
        raise InvalidInputError("mixture spectrograms do not share STFT layout")
    if retm.num_bins != spec_a.num_bins:
        raise InvalidInputError(
            f"ReTM has {retm.num_bins} bins, spectrogram has {spec_a.num_bins}"
        )
    if retm.q_a != spec_a.num_channels or retm.q_b != spec_b.num_channels:
        raise InvalidInputError(
            f"ReTM is {retm.q_a}x{retm.q_b} but groups have "
            f"({spec_a.num_channels}, {spec_b.num_channels}) channels"
        )
    if t2_frames is None:
        t2_frames = (0, spec_a.num_frames)
    start, end = t2_frames
    if not (0 <= start < end <= spec_a.num_frames):
        raise InvalidInputError(
            f"t2_frames [{start}, {end}) invalid for {spec_a.num_frames} frames"
        )
    a = spec_a.data[:, start:end, :]
    b = spec_b.data[:, start:end, :]
    out = a - np.einsum("fab,ftb->fta", retm.matrices, b)
    if (start, end) == (0, spec_a.num_frames):
        origin_len = spec_a.origin_len
    else:
        origin_len = (end - start) * spec_a.params.hop
    return Spectrogram(out, spec_a.params, spec_a.sample_rate_hz, origin_len)


def separate_speaker(mixture: AudioBuffer, training: AudioBuffer,
                     groups: GroupAssignment, params: StftParams,
                     rcond: float = DEFAULT_RCOND, output_channel: int = 0,
                     target_id: int = -1) -> AudioBuffer:
    """Full pipeline for one target: train on its silence, subtract, resynthesize.

    ``training`` is a recording in which every source except the target is
    active; ``mixture`` contains all sources.  Returns the separated target
    at one group-A microphone (``output_channel`` indexes into group A).
    """
    audio, _ = separate_with_diagnostics(mixture, training, groups, params,
                                         rcond=rcond, output_channel=output_channel,
                                         target_id=target_id)
    return audio


def separate_with_diagnostics(mixture: AudioBuffer, training: AudioBuffer,
                              groups: GroupAssignment, params: StftParams,
                              rcond: float = DEFAULT_RCOND, output_channel: int = 0,
                              target_id: int = -1) -> tuple[AudioBuffer, ReTMStack]:
    """Like :func:`separate_speaker` but also returns the estimated stack."""
    if mixture.num_channels != training.num_channels:
        raise InvalidInputError(
            f"mixture has {mixture.num_channels} channels, training has "
            f"{training.num_channels}"
        )
    if mixture.sample_rate_hz != training.sample_rate_hz:
        raise InvalidInputError("mixture and training sample rates differ")
    groups.validate_channel_count(mixture.num_channels)
    if not (0 <= output_channel < groups.q_a):
        raise InvalidInputError(
            f"output_channel {output_channel} out of range for Q_A = {groups.q_a}"
        )
    if training.duration_s < RECOMMENDED_TRAINING_S:
        warnings.warn(
            f"training segment is {training.duration_s:.1f} s; at least "
            f"{RECOMMENDED_TRAINING_S:.0f} s is recommended",
            ShortTrainingWarning,
            stacklevel=2,
        )
    spec_train = stft(training, params)
    retm = estimate_retm(
        spec_train.select_channels(groups.group_a),
        spec_train.select_channels(groups.group_b),
        (0, spec_train.num_frames),
        rcond=rcond,
        target_id=target_id,
    )
    spec_mix = stft(mixture, params)
    separated = apply_separation(
        spec_mix.select_channels(groups.group_a),
        spec_mix.select_channels(groups.group_b),
        retm,
    )
    out = istft(separated)
    mono = AudioBuffer(out.samples[output_channel : output_channel + 1],
                       out.sample_rate_hz)
    return mono, retm


def separate_all(mixture: AudioBuffer, per_target_training, groups: GroupAssignment,
                 params: StftParams, rcond: float = DEFAULT_RCOND,
                 output_channel: int = 0) -> list[AudioBuffer]:
    """Extract every speaker given one training recording per target."""
    trainings = list(per_target_training)
    if not trainings:
        raise InvalidInputError("per_target_training is empty")
    return [
        separate_speaker(mixture, training, groups, params, rcond=rcond,
                         output_channel=output_channel, target_id=i)
        for i, training in enumerate(trainings)
    ]


def draw_source_spectra(num_sources: int, bins: int, frames: int,
                        seed) -> np.ndarray:
    """Generic complex source spectra (bins, frames, L) from a seeded draw."""
    rng = np.random.default_rng(seed)
    shape = (bins, frames, num_sources)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def render_multiplicative(tmset: TransferMatrixSet, spectra: np.ndarray,
                          sample_rate_hz: int = 16000) -> tuple[Spectrogram, Spectrogram]:
    """Noise-free multiplicative mixing: M = H * S exactly, per bin and frame."""
    bins = tmset.h_a.shape[0]
    if spectra.ndim != 3 or spectra.shape[0] != bins or spectra.shape[2] != tmset.num_sources:
        raise InvalidInputError(
            f"spectra shape {spectra.shape} inconsistent with {bins} bins and "
            f"{tmset.num_sources} sources"
        )
    if bins < 2:
        raise InvalidInputError("need at least 2 bins to define STFT parameters")
    params = StftParams(window_len=2 * (bins - 1))
    frames = spectra.shape[1]
    origin_len = max(params.window_len, (frames + 1) * params.hop - params.window_len)
    m_a = np.einsum("fal,ftl->fta", tmset.h_a, spectra)
    m_b = np.einsum("fbl,ftl->ftb", tmset.h_b, spectra)
    return (
        Spectrogram(m_a, params, sample_rate_hz, origin_len),
        Spectrogram(m_b, params, sample_rate_hz, origin_len),
    )


def synth_multiplicative_scene(num_sources: int, q_a: int, q_b: int, bins: int,
                               frames: int, seed):
    """Seeded random multiplicative-mixing scene for exactness testing.

    Returns (transfer matrices, source spectra, spec_a, spec_b) with
    M_A = H_A S and M_B = H_B S holding exactly per bin and frame.  Requires
    Q_B >= L (the regime where the relative transfer matrix exists) and at
    least L frames.
    """
    if num_sources < 1 or q_a < 1 or q_b < 1 or bins < 2 or frames < 1:
        raise InvalidInputError("all scene dimensions must be positive (bins >= 2)")
    if q_b < num_sources:
        raise InvalidInputError(
            f"Q_B = {q_b} < L = {num_sources}: relative transfer matrix undefined"
        )
    if frames < num_sources:
        raise InvalidInputError(f"need at least L = {num_sources} frames, got {frames}")
    rng = np.random.default_rng(seed)
    h_a = (rng.standard_normal((bins, q_a, num_sources))
           + 1j * rng.standard_normal((bins, q_a, num_sources))) / math.sqrt(2.0)
    h_b = (rng.standard_normal((bins, q_b, num_sources))
           + 1j * rng.standard_normal((bins, q_b, num_sources))) / math.sqrt(2.0)
    tmset = TransferMatrixSet(h_a=h_a, h_b=h_b)
    spectra = draw_source_spectra(num_sources, bins, frames, rng)
    spec_a, spec_b = render_multiplicative(tmset, spectra)
    return tmset, spectra, spec_a, spec_b
