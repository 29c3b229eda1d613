"""Time-frequency analysis/synthesis and basic signal conditioning.

The STFT here is the plain windowed one-sided DFT: frame ``t`` of the
internally padded signal covers samples ``[t*hop, t*hop + window_len)`` and
holds ``rfft(window * segment)`` with no extra scaling, so bin 0 of an
all-ones input equals the window coefficient sum.  The signal is padded with
``window_len - hop`` zeros at the head and enough zeros at the tail that
every original sample is covered by a full set of overlapping windows; the
inverse transform divides the overlap-add sum by the squared-window envelope
and truncates back to the original length, which makes the round trip exact
to machine precision.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .errors import InvalidInputError, UnsupportedRateError

_COLA_TOLERANCE = 1e-12


@dataclass(frozen=True)
class AudioBuffer:
    """Multichannel time-domain samples with a sample rate.

    ``samples`` has shape (channels, length); all channels share one length
    and all values must be finite.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if samples.ndim != 2:
            raise InvalidInputError(
                f"samples must be a (channels, length) matrix, got ndim={samples.ndim}"
            )
        if int(self.sample_rate_hz) <= 0:
            raise InvalidInputError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        if not np.isfinite(samples).all():
            raise InvalidInputError("samples contain non-finite values")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def num_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate_hz

    def channel(self, index: int) -> np.ndarray:
        """One channel as a 1-D array (a view, do not mutate)."""
        return self.samples[index]

    def select_channels(self, indices) -> "AudioBuffer":
        return AudioBuffer(self.samples[list(indices)], self.sample_rate_hz)

    def slice_time(self, start_s: float, end_s: float) -> "AudioBuffer":
        """Samples in [start_s, end_s), clipped to the buffer bounds."""
        i0 = max(0, int(round(start_s * self.sample_rate_hz)))
        i1 = min(self.num_samples, int(round(end_s * self.sample_rate_hz)))
        if i1 <= i0:
            raise InvalidInputError(f"empty time slice [{start_s}, {end_s}) s")
        return AudioBuffer(self.samples[:, i0:i1], self.sample_rate_hz)

    @classmethod
    def from_mono(cls, samples, sample_rate_hz: int) -> "AudioBuffer":
        return cls(np.asarray(samples, dtype=np.float64)[np.newaxis, :], sample_rate_hz)


@functools.lru_cache(maxsize=8)
def _sqrt_hann(window_len: int) -> np.ndarray:
    # Periodic Hann; its square root is the half-cycle sine window, whose
    # squared overlap-add envelope is exactly constant at hop = N/k.
    w = scipy.signal.windows.hann(window_len, sym=False)
    w = np.sqrt(w)
    w.flags.writeable = False
    return w


_WINDOW_BUILDERS = {"sqrt-hann": _sqrt_hann}


@dataclass(frozen=True)
class StftParams:
    """Analysis/synthesis settings: window length, hop, window kind, FFT size.

    The (window, hop) pair must satisfy constant overlap-add of the squared
    window to within 1e-12, which the constructor verifies.
    """

    window_len: int = 8192
    hop: int = 0  # 0 means window_len // 2
    window_kind: str = "sqrt-hann"
    fft_len: int = 0  # 0 means window_len

    def __post_init__(self):
        if self.window_len <= 0:
            raise InvalidInputError(f"window_len must be positive, got {self.window_len}")
        if self.hop == 0:
            object.__setattr__(self, "hop", self.window_len // 2)
        if self.fft_len == 0:
            object.__setattr__(self, "fft_len", self.window_len)
        if not (0 < self.hop <= self.window_len):
            raise InvalidInputError(f"hop must be in (0, window_len], got {self.hop}")
        if self.fft_len < self.window_len:
            raise InvalidInputError(
                f"fft_len {self.fft_len} must be >= window_len {self.window_len}"
            )
        if self.window_kind not in _WINDOW_BUILDERS:
            raise InvalidInputError(
                f"unsupported window_kind {self.window_kind!r}; choose from "
                f"{sorted(_WINDOW_BUILDERS)}"
            )
        dev = _cola_deviation(self.window(), self.hop)
        if dev > _COLA_TOLERANCE:
            raise InvalidInputError(
                f"(window_len={self.window_len}, hop={self.hop}) violates constant "
                f"overlap-add: relative deviation {dev:.3e} > {_COLA_TOLERANCE:g}"
            )

    def window(self) -> np.ndarray:
        return _WINDOW_BUILDERS[self.window_kind](self.window_len)

    @property
    def num_bins(self) -> int:
        return self.fft_len // 2 + 1

    def num_frames(self, signal_len: int) -> int:
        """Frame count produced by :func:`stft` for a signal of this length."""
        pad_front = self.window_len - self.hop
        return math.ceil((pad_front + signal_len - self.hop) / self.hop) + 1

    def frame_range_for_seconds(self, start_s: float, end_s: float, sample_rate_hz: int,
                                signal_len: int) -> tuple[int, int]:
        """Frames whose window lies fully inside [start_s, end_s) of the signal.

        Frame t covers original samples [t*hop - pad_front, t*hop - pad_front
        + window_len); the returned half-open range keeps the frames contained
        in the interval, clipped to the actual frame count.
        """
        pad_front = self.window_len - self.hop
        i0 = start_s * sample_rate_hz
        i1 = end_s * sample_rate_hz
        first = math.ceil((i0 + pad_front) / self.hop)
        last = math.floor((i1 + pad_front - self.window_len) / self.hop) + 1
        total = self.num_frames(signal_len)
        first = max(0, min(first, total))
        last = max(first, min(last, total))
        if last <= first:
            raise InvalidInputError(
                f"interval [{start_s}, {end_s}) s holds no complete STFT frame"
            )
        return first, last


def _cola_deviation(window: np.ndarray, hop: int) -> float:
    n = len(window)
    frames = 3 * n // hop + 1
    env = np.zeros((frames - 1) * hop + n)
    ww = window * window
    for t in range(frames):
        env[t * hop : t * hop + n] += ww
    interior = env[n - hop : (frames - 1) * hop]
    if interior.size == 0:
        return np.inf
    mean = interior.mean()
    if mean <= 0:
        return np.inf
    return float(np.max(np.abs(interior - mean)) / mean)


@dataclass(frozen=True)
class Spectrogram:
    """Complex one-sided STFT tensor with shape (bins, frames, channels)."""

    data: np.ndarray
    params: StftParams
    sample_rate_hz: int
    origin_len: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 3:
            raise InvalidInputError(f"data must be (bins, frames, channels), got ndim={data.ndim}")
        bins, frames, channels = data.shape
        if bins != self.params.num_bins:
            raise InvalidInputError(
                f"data has {bins} bins but params imply {self.params.num_bins}"
            )
        if frames < 1 or channels < 1:
            raise InvalidInputError(f"need frames >= 1 and channels >= 1, got {data.shape}")
        object.__setattr__(self, "data", data)

    @property
    def num_bins(self) -> int:
        return self.data.shape[0]

    @property
    def num_frames(self) -> int:
        return self.data.shape[1]

    @property
    def num_channels(self) -> int:
        return self.data.shape[2]

    def select_channels(self, indices) -> "Spectrogram":
        return Spectrogram(self.data[:, :, list(indices)], self.params,
                           self.sample_rate_hz, self.origin_len)


def stft(buffer: AudioBuffer, params: StftParams) -> Spectrogram:
    """Short-time Fourier transform of every channel.

    Parameters
    ----------
    buffer : AudioBuffer
        Input signal, at least one window long.
    params : StftParams
        Analysis settings.

    Returns
    -------
    Spectrogram
        One-sided complex spectra, shape (bins, frames, channels).  The
        original length is recorded so :func:`istft` reconstructs exactly.
    """
    n, hop = params.window_len, params.hop
    length = buffer.num_samples
    if length < n:
        raise InvalidInputError(
            f"buffer of {length} samples is shorter than one window ({n})"
        )
    window = params.window()
    pad_front = n - hop
    num_frames = params.num_frames(length)
    padded_len = (num_frames - 1) * hop + n
    out = np.empty((params.num_bins, num_frames, buffer.num_channels), dtype=np.complex128)
    starts = np.arange(num_frames) * hop
    for ch in range(buffer.num_channels):
        x = np.zeros(padded_len)
        x[pad_front : pad_front + length] = buffer.samples[ch]
        frames = np.lib.stride_tricks.sliding_window_view(x, n)[starts]
        out[:, :, ch] = np.fft.rfft(frames * window, n=params.fft_len, axis=1).T
    return Spectrogram(out, params, buffer.sample_rate_hz, length)


def istft(spec: Spectrogram) -> AudioBuffer:
    """Overlap-add synthesis with squared-window normalization.

    Inverts :func:`stft` exactly (to ~1e-15 relative) for spectrograms it
    produced; for modified spectrograms this is the standard weighted
    least-squares synthesis.
    """
    n, hop = spec.params.window_len, spec.params.hop
    window = spec.params.window()
    num_frames = spec.num_frames
    pad_front = n - hop
    padded_len = (num_frames - 1) * hop + n
    if spec.origin_len < 0 or pad_front + spec.origin_len > padded_len:
        raise InvalidInputError(
            f"origin_len {spec.origin_len} cannot be reconstructed from "
            f"{num_frames} frames"
        )
    envelope = np.zeros(padded_len)
    ww = window * window
    starts = np.arange(num_frames) * hop
    for t0 in starts:
        envelope[t0 : t0 + n] += ww
    # Envelope is the COLA constant over the reconstructed region; guard the
    # (discarded) edge samples where it tapers toward zero.
    envelope = np.maximum(envelope, np.finfo(np.float64).tiny)

    samples = np.empty((spec.num_channels, spec.origin_len))
    for ch in range(spec.num_channels):
        frames = np.fft.irfft(spec.data[:, :, ch].T, n=spec.params.fft_len, axis=1)
        frames = frames[:, :n] * window
        acc = np.zeros(padded_len)
        for t, t0 in enumerate(starts):
            acc[t0 : t0 + n] += frames[t]
        acc /= envelope
        samples[ch] = acc[pad_front : pad_front + spec.origin_len]
    return AudioBuffer(samples, spec.sample_rate_hz)


def decimate(buffer: AudioBuffer, factor: int) -> AudioBuffer:
    """Anti-alias low-pass then keep every ``factor``-th sample.

    Only integer rate ratios are supported; the source rate must be divisible
    by ``factor``.
    """
    if factor < 1 or int(factor) != factor:
        raise InvalidInputError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return buffer
    if buffer.sample_rate_hz % factor != 0:
        raise UnsupportedRateError(
            f"rate {buffer.sample_rate_hz} Hz is not divisible by factor {factor}; "
            "rational resampling is not supported"
        )
    out = scipy.signal.decimate(buffer.samples, factor, axis=1, zero_phase=True)
    return AudioBuffer(out, buffer.sample_rate_hz // factor)


def magnitude_db(spec: Spectrogram, floor_db: float) -> np.ndarray:
    """20*log10(|X|) clamped below at ``floor_db``; shape (bins, frames, channels)."""
    if not np.isfinite(floor_db):
        raise InvalidInputError(f"floor_db must be finite, got {floor_db}")
    mag = np.abs(spec.data)
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag)
    return np.maximum(db, floor_db)
