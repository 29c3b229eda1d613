"""Synthetic stand-in source material for self-contained experiments.

Real speech corpora and appliance recordings are not redistributable, so the
shipped configs use these deterministic generators instead: speech-shaped
modulated noise for talkers, and low-frequency rumble / motor whine /
harmonic-plus-bed signals standing in for air-conditioner, vacuum, and music
background sources.  Every generator is seeded and returns a unit-RMS mono
buffer.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError
from .signal_core import AudioBuffer


def _colored_noise(rng: np.random.Generator, n: int, sample_rate_hz: int,
                   shape_fn) -> np.ndarray:
    """White noise colored by a magnitude response given as shape_fn(f_hz)."""
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
    spectrum *= shape_fn(freqs)
    return np.fft.irfft(spectrum, n=n)


def _slow_envelope(rng: np.random.Generator, n: int, sample_rate_hz: int,
                   rate_hz: float, depth: float) -> np.ndarray:
    """Smooth positive modulation envelope with ~rate_hz fluctuations."""
    n_slow = max(4, int(np.ceil(n * rate_hz / sample_rate_hz)) + 2)
    slow = rng.standard_normal(n_slow)
    t = np.linspace(0.0, n_slow - 1.0, n)
    idx = t.astype(int)
    frac = t - idx
    idx1 = np.minimum(idx + 1, n_slow - 1)
    z = (1.0 - frac) * slow[idx] + frac * slow[idx1]
    return np.exp(depth * z)


def _normalized(x: np.ndarray, sample_rate_hz: int) -> AudioBuffer:
    rms = np.sqrt(np.mean(x**2))
    if rms == 0:
        raise InvalidInputError("generated signal is identically zero")
    return AudioBuffer.from_mono(x / rms, sample_rate_hz)


def speech_like(duration_s: float, sample_rate_hz: int, seed: int) -> AudioBuffer:
    """Speech-shaped noise: band-peaked spectrum with syllabic-rate modulation."""
    rng = np.random.default_rng([seed, 11])
    n = int(round(duration_s * sample_rate_hz))
    f_peak = 400.0

    def shape(f):
        # Rises into ~400 Hz, then falls ~6 dB/octave like long-term speech.
        return (f / f_peak) / (1.0 + (f / f_peak) ** 2)

    x = _colored_noise(rng, n, sample_rate_hz, shape)
    x *= _slow_envelope(rng, n, sample_rate_hz, rate_hz=4.0, depth=0.6)
    return _normalized(x, sample_rate_hz)


def air_conditioner_like(duration_s: float, sample_rate_hz: int, seed: int) -> AudioBuffer:
    """Low-frequency rumble with faint line-frequency harmonics."""
    rng = np.random.default_rng([seed, 23])
    n = int(round(duration_s * sample_rate_hz))

    def shape(f):
        return 1.0 / (1.0 + (f / 250.0) ** 2) + 0.02

    x = _colored_noise(rng, n, sample_rate_hz, shape)
    t = np.arange(n) / sample_rate_hz
    for k, level in ((1, 0.15), (2, 0.08), (3, 0.04)):
        phase = rng.uniform(0, 2 * np.pi)
        x += level * np.std(x) * np.sin(2 * np.pi * 120.0 * k * t + phase)
    return _normalized(x, sample_rate_hz)


def vacuum_like(duration_s: float, sample_rate_hz: int, seed: int) -> AudioBuffer:
    """Broadband mid-emphasis noise plus a decaying motor harmonic stack."""
    rng = np.random.default_rng([seed, 37])
    n = int(round(duration_s * sample_rate_hz))

    def shape(f):
        return f / 1500.0 / (1.0 + (f / 1500.0) ** 2) + 0.05

    x = _colored_noise(rng, n, sample_rate_hz, shape)
    t = np.arange(n) / sample_rate_hz
    f0 = 230.0
    for k in range(1, 9):
        if f0 * k >= sample_rate_hz / 2:
            break
        phase = rng.uniform(0, 2 * np.pi)
        x += (0.4 / k) * np.std(x) * np.sin(2 * np.pi * f0 * k * t + phase)
    return _normalized(x, sample_rate_hz)


def music_like(duration_s: float, sample_rate_hz: int, seed: int) -> AudioBuffer:
    """Slow chord sequence of harmonic tones over a quiet pink-noise bed."""
    rng = np.random.default_rng([seed, 53])
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    scale_hz = 220.0 * 2.0 ** (np.array([0, 2, 4, 7, 9, 12]) / 12.0)
    note_len = int(0.5 * sample_rate_hz)
    x = np.zeros(n)
    for start in range(0, n, note_len):
        stop = min(n, start + note_len)
        root = rng.choice(scale_hz)
        seg_t = t[start:stop]
        seg = np.zeros(stop - start)
        for ratio, level in ((1.0, 1.0), (1.5, 0.5), (2.0, 0.4), (3.0, 0.2)):
            seg += level * np.sin(2 * np.pi * root * ratio * seg_t + rng.uniform(0, 2 * np.pi))
        fade = min(256, (stop - start) // 4)
        if fade > 0:
            ramp = np.linspace(0.0, 1.0, fade)
            seg[:fade] *= ramp
            seg[-fade:] *= ramp[::-1]
        x[start:stop] = seg

    def pink(f):
        return 1.0 / np.sqrt(np.maximum(f, 20.0))

    bed = _colored_noise(rng, n, sample_rate_hz, pink)
    x = x / np.std(x) + 0.1 * bed / np.std(bed)
    return _normalized(x, sample_rate_hz)


SYNTHETIC_KINDS = {
    "speech": speech_like,
    "air_conditioner": air_conditioner_like,
    "vacuum": vacuum_like,
    "music": music_like,
}


def synthetic_signal(kind: str, duration_s: float, sample_rate_hz: int, seed: int) -> AudioBuffer:
    if kind not in SYNTHETIC_KINDS:
        raise InvalidInputError(
            f"unknown synthetic signal kind {kind!r}; choose from {sorted(SYNTHETIC_KINDS)}"
        )
    return SYNTHETIC_KINDS[kind](duration_s, sample_rate_hz, seed)
