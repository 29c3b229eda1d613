"""Shoebox room simulation: image-source RIRs, scene rendering, SNR calibration.

The mixing model is strictly additive: a rendered scene is the sum of
per-source reverberant images (noise-role images jointly scaled to hit the
configured background SNR) plus per-microphone white Gaussian sensor noise.
Every random draw is derived from the scene seed, so renders are
byte-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.signal

from .errors import DegenerateInputError, InfeasibleConfigError, InvalidInputError
from .signal_core import AudioBuffer

SPEED_OF_SOUND_M_S = 343.0
SABINE_CONSTANT = 0.161
FRACTIONAL_DELAY_HALF_WIDTH = 40  # 81-tap Hann-windowed sinc
WALL_MARGIN_M = 0.1
MIN_SOURCE_MIC_DISTANCE_M = 0.05
RIR_LENGTH_T60_FACTOR = 1.25
RIR_HIGHPASS_HZ = 50.0

SOURCE_ROLES = ("speech", "noise")

_THERMAL_STREAM = 0x7E41  # keeps thermal draws disjoint from other seed uses


@dataclass(frozen=True)
class SourcePlacement:
    """One sound source: position in meters, role, and its signal key."""

    position: tuple[float, float, float]
    role: str
    signal_id: str

    def __post_init__(self):
        if self.role not in SOURCE_ROLES:
            raise InvalidInputError(f"role must be one of {SOURCE_ROLES}, got {self.role!r}")
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))


@dataclass(frozen=True)
class SceneConfig:
    """Room geometry, reverberation, source/microphone layout, SNR targets."""

    room_dims: tuple[float, float, float]
    t60_s: float
    sources: tuple[SourcePlacement, ...]
    microphones: tuple[tuple[float, float, float], ...]
    sample_rate_hz: int
    background_snr_db: float
    thermal_snr_db: float = 60.0
    seed: int = 0

    def __post_init__(self):
        dims = tuple(float(v) for v in self.room_dims)
        if len(dims) != 3 or any(v <= 0 for v in dims):
            raise InvalidInputError(f"room_dims must be 3 positive lengths, got {self.room_dims}")
        if self.t60_s <= 0:
            raise InvalidInputError(f"t60_s must be positive, got {self.t60_s}")
        sources = tuple(
            s if isinstance(s, SourcePlacement) else SourcePlacement(**s) for s in self.sources
        )
        mics = tuple(tuple(float(v) for v in m) for m in self.microphones)
        if not mics:
            raise InvalidInputError("at least one microphone is required")
        if sum(1 for s in sources if s.role == "speech") < 1:
            raise InvalidInputError("at least one speech source is required")
        for label, pos in [(f"sources[{i}]", s.position) for i, s in enumerate(sources)] + [
            (f"microphones[{i}]", m) for i, m in enumerate(mics)
        ]:
            if len(pos) != 3:
                raise InvalidInputError(f"{label} position must have 3 coordinates")
            for axis in range(3):
                if not (WALL_MARGIN_M <= pos[axis] <= dims[axis] - WALL_MARGIN_M):
                    raise InvalidInputError(
                        f"{label} at {pos} is closer than {WALL_MARGIN_M} m to a wall "
                        f"of the {dims} room"
                    )
        for i, s in enumerate(sources):
            for j, m in enumerate(mics):
                if math.dist(s.position, m) < MIN_SOURCE_MIC_DISTANCE_M:
                    raise InvalidInputError(
                        f"sources[{i}] and microphones[{j}] are closer than "
                        f"{MIN_SOURCE_MIC_DISTANCE_M} m"
                    )
        if int(self.sample_rate_hz) <= 0:
            raise InvalidInputError("sample_rate_hz must be positive")
        object.__setattr__(self, "room_dims", dims)
        object.__setattr__(self, "sources", sources)
        object.__setattr__(self, "microphones", mics)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def num_microphones(self) -> int:
        return len(self.microphones)

    @property
    def speech_indices(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.sources) if s.role == "speech")

    @property
    def noise_indices(self) -> tuple[int, ...]:
        return tuple(i for i, s in enumerate(self.sources) if s.role == "noise")

    def to_dict(self) -> dict:
        return {
            "room_dims": list(self.room_dims),
            "t60_s": self.t60_s,
            "sources": [
                {"position": list(s.position), "role": s.role, "signal_id": s.signal_id}
                for s in self.sources
            ],
            "microphones": [list(m) for m in self.microphones],
            "sample_rate_hz": self.sample_rate_hz,
            "background_snr_db": _db_to_json(self.background_snr_db),
            "thermal_snr_db": _db_to_json(self.thermal_snr_db),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(
            room_dims=tuple(d["room_dims"]),
            t60_s=float(d["t60_s"]),
            sources=tuple(SourcePlacement(**s) for s in d["sources"]),
            microphones=tuple(tuple(m) for m in d["microphones"]),
            sample_rate_hz=int(d["sample_rate_hz"]),
            background_snr_db=_db_from_json(d["background_snr_db"]),
            thermal_snr_db=_db_from_json(d.get("thermal_snr_db", 60.0)),
            seed=int(d.get("seed", 0)),
        )


def _db_to_json(value: float):
    return None if math.isinf(value) else float(value)


def _db_from_json(value) -> float:
    if value is None or value == "inf":
        return math.inf
    return float(value)


@dataclass(frozen=True)
class RoomImpulseResponse:
    taps: np.ndarray
    sample_rate_hz: int
    source_index: int
    mic_index: int

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size == 0:
            raise InvalidInputError("taps must be a non-empty vector")
        if not np.isfinite(taps).all():
            raise InvalidInputError("taps contain non-finite values")
        object.__setattr__(self, "taps", taps)

    def to_raw(self, path) -> None:
        """Write taps as raw 64-bit little-endian floats."""
        with open(path, "wb") as fh:
            fh.write(self.taps.astype("<f8").tobytes())


@dataclass(frozen=True)
class RenderedScene:
    """Mixture plus the per-source images and noise it was summed from.

    mixture == sum(per_source_images) + thermal_noise holds by construction;
    ``additivity_residual`` measures it for verification.
    """

    mixture: AudioBuffer
    per_source_images: tuple[AudioBuffer, ...]
    gains: tuple[float, ...]
    roles: tuple[str, ...]
    thermal_noise: AudioBuffer

    def additivity_residual(self) -> float:
        total = sum(img.samples for img in self.per_source_images) + self.thermal_noise.samples
        scale = np.abs(self.mixture.samples).max()
        if scale == 0:
            return 0.0
        return float(np.abs(self.mixture.samples - total).max() / scale)

    @property
    def speech_indices(self) -> tuple[int, ...]:
        return tuple(i for i, r in enumerate(self.roles) if r == "speech")


def reflection_coefficient(room_dims, t60_s: float) -> float:
    """Uniform wall reflection coefficient from the Sabine inversion.

    alpha = 0.161 * V / (S * T60); beta = sqrt(1 - alpha).  Raises when the
    requested T60 is too short for the room (alpha >= 1).
    """
    lx, ly, lz = (float(v) for v in room_dims)
    if min(lx, ly, lz) <= 0 or t60_s <= 0:
        raise InvalidInputError("room dimensions and t60_s must be positive")
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    alpha = SABINE_CONSTANT * volume / (surface * t60_s)
    if alpha >= 1.0:
        raise InfeasibleConfigError(
            f"T60 = {t60_s} s requires average absorption {alpha:.3f} >= 1 "
            f"in a {room_dims} room"
        )
    return math.sqrt(1.0 - alpha)


@numba.njit(cache=True, nogil=True)
def _ism_accumulate(h, lx, ly, lz, beta, sx, sy, sz, mx, my, mz, fs, c, max_delay_s, half_width):
    max_dist = max_delay_s * c
    n_taps = h.shape[0]
    pi = math.pi
    # Per-axis image coordinates and reflection counts.
    nx_max = int(math.ceil(max_dist / (2.0 * lx))) + 1
    ny_max = int(math.ceil(max_dist / (2.0 * ly))) + 1
    nz_max = int(math.ceil(max_dist / (2.0 * lz))) + 1
    for nx in range(-nx_max, nx_max + 1):
        for px in range(2):
            ix = (1.0 - 2.0 * px) * sx + 2.0 * nx * lx
            dx = ix - mx
            if abs(dx) > max_dist:
                continue
            cx = abs(nx - px) + abs(nx)
            dx2 = dx * dx
            for ny in range(-ny_max, ny_max + 1):
                for py in range(2):
                    iy = (1.0 - 2.0 * py) * sy + 2.0 * ny * ly
                    dy = iy - my
                    dxy2 = dx2 + dy * dy
                    if dxy2 > max_dist * max_dist:
                        continue
                    cxy = cx + abs(ny - py) + abs(ny)
                    for nz in range(-nz_max, nz_max + 1):
                        for pz in range(2):
                            iz = (1.0 - 2.0 * pz) * sz + 2.0 * nz * lz
                            dz = iz - mz
                            d = math.sqrt(dxy2 + dz * dz)
                            if d > max_dist or d < 1e-9:
                                continue
                            count = cxy + abs(nz - pz) + abs(nz)
                            amp = beta**count / (4.0 * pi * d)
                            if amp == 0.0:
                                continue
                            tau = d * fs / c
                            n0 = int(math.ceil(tau - half_width))
                            n1 = int(math.floor(tau + half_width))
                            if n0 < 0:
                                n0 = 0
                            if n1 > n_taps - 1:
                                n1 = n_taps - 1
                            if n1 < n0:
                                continue
                            # sin(pi*(n - tau)) alternates sign with n, so one
                            # sine evaluation serves the whole sinc kernel; the
                            # Hann taper uses a rotation recurrence.
                            x0 = n0 - tau
                            sin_pi_x = math.sin(pi * x0)
                            ang = pi * x0 / half_width
                            cos_t = math.cos(ang)
                            sin_t = math.sin(ang)
                            step_c = math.cos(pi / half_width)
                            step_s = math.sin(pi / half_width)
                            for n in range(n0, n1 + 1):
                                x = n - tau
                                if -1e-12 < x < 1e-12:
                                    sinc = 1.0
                                else:
                                    sinc = sin_pi_x / (pi * x)
                                h[n] += amp * 0.5 * (1.0 + cos_t) * sinc
                                sin_pi_x = -sin_pi_x
                                new_c = cos_t * step_c - sin_t * step_s
                                sin_t = sin_t * step_c + cos_t * step_s
                                cos_t = new_c


def simulate_rir(room_dims, beta: float, source_pos, mic_pos, sample_rate_hz: int,
                 max_time_s: float, source_index: int = -1, mic_index: int = -1,
                 highpass_hz: float = RIR_HIGHPASS_HZ) -> RoomImpulseResponse:
    """Image-source room impulse response with uniform wall reflection beta.

    Each image contributes beta**(reflection count) / (4 pi d) at delay d/c
    through an 81-tap Hann-windowed sinc fractional-delay kernel; images
    arriving later than ``max_time_s`` are excluded.

    With a uniform positive reflection coefficient the dense late images sum
    coherently at DC, which inflates the measured late decay; a gentle causal
    high-pass (second-order Butterworth at ``highpass_hz``) removes that
    artifact.  Pass ``highpass_hz=0`` for the raw image sum.
    """
    dims = tuple(float(v) for v in room_dims)
    src = tuple(float(v) for v in source_pos)
    mic = tuple(float(v) for v in mic_pos)
    if not (0.0 <= beta < 1.0):
        raise InvalidInputError(f"beta must lie in [0, 1), got {beta}")
    for label, pos in (("source", src), ("microphone", mic)):
        if len(pos) != 3 or any(not (0.0 < pos[i] < dims[i]) for i in range(3)):
            raise InvalidInputError(f"{label} position {pos} is not inside the {dims} room")
    direct_delay = math.dist(src, mic) / SPEED_OF_SOUND_M_S
    if max_time_s <= direct_delay:
        raise InvalidInputError(
            f"max_time_s = {max_time_s} s does not reach the direct path "
            f"({direct_delay:.4f} s)"
        )
    fs = int(sample_rate_hz)
    n_taps = int(math.ceil(max_time_s * fs)) + FRACTIONAL_DELAY_HALF_WIDTH + 1
    h = np.zeros(n_taps)
    _ism_accumulate(
        h, dims[0], dims[1], dims[2], float(beta), src[0], src[1], src[2],
        mic[0], mic[1], mic[2], float(fs), SPEED_OF_SOUND_M_S, float(max_time_s),
        float(FRACTIONAL_DELAY_HALF_WIDTH),
    )
    if highpass_hz > 0.0:
        sos = scipy.signal.butter(2, highpass_hz / (fs / 2.0), "highpass", output="sos")
        h = scipy.signal.sosfilt(sos, h)
    return RoomImpulseResponse(h, fs, source_index, mic_index)


def default_rir_length_s(t60_s: float) -> float:
    return RIR_LENGTH_T60_FACTOR * t60_s


def simulate_scene_rirs(scene: SceneConfig, max_time_s: float | None = None) -> list[list[RoomImpulseResponse]]:
    """RIRs for every (source, microphone) pair; outer index is the source."""
    beta = reflection_coefficient(scene.room_dims, scene.t60_s)
    horizon = default_rir_length_s(scene.t60_s) if max_time_s is None else max_time_s
    return [
        [
            simulate_rir(scene.room_dims, beta, src.position, mic, scene.sample_rate_hz,
                         horizon, source_index=si, mic_index=mi)
            for mi, mic in enumerate(scene.microphones)
        ]
        for si, src in enumerate(scene.sources)
    ]


def convolve(signal: np.ndarray, rir: RoomImpulseResponse) -> np.ndarray:
    """Full linear convolution of a 1-D signal with the RIR taps."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1 or signal.size == 0:
        raise InvalidInputError("signal must be a non-empty 1-D array")
    return scipy.signal.fftconvolve(signal, rir.taps, mode="full")


def scale_to_snr(speech_sum: AudioBuffer, noise_sum: AudioBuffer,
                 target_snr_db: float) -> float:
    """Gain g for the noise images so the receiver-averaged SNR hits target.

    The SNR is mean over microphones q of 10 log10(P_speech,q / (g^2 *
    P_noise,q)) with per-channel mean-square powers over the full duration.
    """
    if speech_sum.samples.shape != noise_sum.samples.shape:
        raise InvalidInputError(
            f"shape mismatch: speech {speech_sum.samples.shape} vs noise "
            f"{noise_sum.samples.shape}"
        )
    p_speech = np.mean(speech_sum.samples**2, axis=1)
    p_noise = np.mean(noise_sum.samples**2, axis=1)
    if np.any(p_noise == 0.0):
        raise DegenerateInputError("noise has zero power on at least one channel")
    if np.any(p_speech == 0.0):
        raise DegenerateInputError("speech has zero power on at least one channel")
    mean_snr_db = float(np.mean(10.0 * np.log10(p_speech / p_noise)))
    return 10.0 ** ((mean_snr_db - target_snr_db) / 20.0)


def add_thermal_noise(buffer: AudioBuffer, snr_db: float, seed: int) -> AudioBuffer:
    """Add per-channel white Gaussian noise at snr_db below the channel power.

    ``snr_db = inf`` disables the noise.  Each channel uses its own seeded
    stream, so the result is independent of any parallel schedule.
    """
    if math.isinf(snr_db):
        return buffer
    out = buffer.samples.copy()
    for ch in range(buffer.num_channels):
        power = float(np.mean(out[ch] ** 2))
        if power == 0.0:
            continue
        sigma = math.sqrt(power / 10.0 ** (snr_db / 10.0))
        rng = np.random.default_rng([seed, _THERMAL_STREAM, ch])
        out[ch] += rng.normal(0.0, sigma, out.shape[1])
    return AudioBuffer(out, buffer.sample_rate_hz)


def render_images(scene: SceneConfig, signals: dict[str, AudioBuffer],
                  rirs: list[list[RoomImpulseResponse]] | None = None) -> list[AudioBuffer]:
    """Unit-gain reverberant image of each source at every microphone.

    ``signals`` maps signal_id to a mono buffer at the scene rate; all
    signals must share one length.  Images have length len + rir_len - 1.
    """
    sigs = []
    for i, src in enumerate(scene.sources):
        if src.signal_id not in signals:
            raise InvalidInputError(f"sources[{i}]: no signal with id {src.signal_id!r}")
        buf = signals[src.signal_id]
        if buf.sample_rate_hz != scene.sample_rate_hz:
            raise InvalidInputError(
                f"signal {src.signal_id!r} rate {buf.sample_rate_hz} != scene rate "
                f"{scene.sample_rate_hz}"
            )
        if buf.num_channels != 1:
            raise InvalidInputError(f"signal {src.signal_id!r} must be mono")
        sigs.append(buf.channel(0))
    lengths = {len(s) for s in sigs}
    if len(lengths) > 1:
        raise InvalidInputError(f"signals must share one duration, got lengths {sorted(lengths)}")
    for i, src in enumerate(scene.sources):
        if src.role == "speech" and not np.any(sigs[i]):
            raise DegenerateInputError(f"speech source {src.signal_id!r} has zero power")
    if rirs is None:
        rirs = simulate_scene_rirs(scene)
    images = []
    for si in range(len(scene.sources)):
        rows = [convolve(sigs[si], rirs[si][mi]) for mi in range(scene.num_microphones)]
        images.append(AudioBuffer(np.stack(rows), scene.sample_rate_hz))
    return images


def mix_images(scene: SceneConfig, images: list[AudioBuffer]) -> RenderedScene:
    """Scale noise images to the background SNR, sum, and add sensor noise."""
    if len(images) != len(scene.sources):
        raise InvalidInputError(
            f"{len(images)} images for {len(scene.sources)} sources"
        )
    roles = tuple(s.role for s in scene.sources)
    speech = [img for img, r in zip(images, roles) if r == "speech"]
    noise = [img for img, r in zip(images, roles) if r == "noise"]
    speech_sum = AudioBuffer(sum(b.samples for b in speech), scene.sample_rate_hz)
    gain = 1.0
    if noise and math.isfinite(scene.background_snr_db):
        noise_sum = AudioBuffer(sum(b.samples for b in noise), scene.sample_rate_hz)
        gain = scale_to_snr(speech_sum, noise_sum, scene.background_snr_db)
    gains = tuple(1.0 if r == "speech" else gain for r in roles)
    scaled = tuple(
        img if g == 1.0 else AudioBuffer(g * img.samples, scene.sample_rate_hz)
        for img, g in zip(images, gains)
    )
    pre_noise = AudioBuffer(sum(b.samples for b in scaled), scene.sample_rate_hz)
    mixture = add_thermal_noise(pre_noise, scene.thermal_snr_db, scene.seed)
    thermal = AudioBuffer(mixture.samples - pre_noise.samples, scene.sample_rate_hz)
    return RenderedScene(mixture=mixture, per_source_images=scaled, gains=gains,
                         roles=roles, thermal_noise=thermal)


def render_scene(scene: SceneConfig, signals: dict[str, AudioBuffer]) -> RenderedScene:
    """Full forward model: RIR convolution, SNR calibration, sensor noise."""
    return mix_images(scene, render_images(scene, signals))
