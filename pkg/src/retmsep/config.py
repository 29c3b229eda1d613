"""Experiment configuration: JSON schema, validation with field-path errors."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, RetmSepError
from .retm import GroupAssignment, SegmentSpec
from .roomsim import SceneConfig
from .signal_core import StftParams
from .sources import SYNTHETIC_KINDS

DEFAULT_TRAIN_S = 60.0
DEFAULT_MIXTURE_S = 20.0


@dataclass(frozen=True)
class SignalRef:
    """One entry of the signal manifest: a WAV file or a synthetic generator."""

    wav_path: Path | None = None
    synthetic_kind: str | None = None
    seed: int = 0


@dataclass(frozen=True)
class SweepAxes:
    snr_db: tuple[float, ...] = ()
    q_a: tuple[int, ...] = ()

    @property
    def empty(self) -> bool:
        return not self.snr_db and not self.q_a


@dataclass
class ExperimentConfig:
    scene: SceneConfig
    signals: dict[str, SignalRef]
    groups: GroupAssignment
    stft: StftParams
    out_dir: Path
    seed: int
    rcond: float = 1e-10
    eval_channel: int = 0
    train_duration_s: float = DEFAULT_TRAIN_S
    mixture_duration_s: float = DEFAULT_MIXTURE_S
    sweep: SweepAxes = field(default_factory=SweepAxes)
    segments: dict[str, SegmentSpec] | None = None  # None means synthesized mode
    recording: Path | None = None  # multichannel recording for segment mode


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _get(d: dict, key: str, path: str, required: bool = True, default=None):
    if key not in d:
        if required:
            _fail(f"{path}.{key}" if path else key, "missing required field")
        return default
    return d[key]


def _as_number(value, path: str) -> float:
    if value is None or value == "inf":
        return math.inf
    if value == "-inf":
        return -math.inf
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        _fail(path, f"expected a number, got {value!r}")
    return float(value)


def load_config(path) -> ExperimentConfig:
    """Load and validate an experiment configuration JSON file.

    Relative paths inside the file resolve against the file's directory.
    Referenced files (scene, WAVs, recording) must exist at load time.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(raw, base_dir=path.parent)


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object")

    scene_raw = _get(raw, "scene", "")
    if isinstance(scene_raw, str):
        scene_path = _resolve(base, scene_raw)
        if not scene_path.is_file():
            _fail("scene", f"scene file not found: {scene_path}")
        with open(scene_path) as fh:
            scene_raw = json.load(fh)
    if not isinstance(scene_raw, dict):
        _fail("scene", "must be an object or a path to a scene JSON file")
    try:
        scene = SceneConfig.from_dict(scene_raw)
    except (RetmSepError, KeyError, TypeError, ValueError) as exc:
        _fail("scene", str(exc))

    signals_raw = _get(raw, "signals", "")
    if not isinstance(signals_raw, dict) or not signals_raw:
        _fail("signals", "must be a non-empty object mapping signal_id to a source")
    signals: dict[str, SignalRef] = {}
    for sid, entry in signals_raw.items():
        signals[sid] = _parse_signal(entry, f"signals.{sid}", base)
    for i, src in enumerate(scene.sources):
        if src.signal_id not in signals:
            _fail(f"scene.sources[{i}].signal_id",
                  f"{src.signal_id!r} has no entry in the signal manifest")

    groups_raw = _get(raw, "groups", "")
    try:
        groups = GroupAssignment(
            group_a=tuple(_get(groups_raw, "group_a", "groups")),
            group_b=tuple(_get(groups_raw, "group_b", "groups")),
        )
        groups.validate_channel_count(scene.num_microphones)
    except RetmSepError as exc:
        if isinstance(exc, ConfigError):
            raise
        _fail("groups", str(exc))

    stft_raw = raw.get("stft", {})
    try:
        stft = StftParams(
            window_len=int(stft_raw.get("window_len", 8192)),
            hop=int(stft_raw.get("hop", 0)),
            window_kind=stft_raw.get("window_kind", "sqrt-hann"),
            fft_len=int(stft_raw.get("fft_len", 0)),
        )
    except RetmSepError as exc:
        _fail("stft", str(exc))

    out_dir = _resolve(base, str(_get(raw, "out_dir", "", required=False, default="out")))
    seed = raw.get("seed", scene.seed)
    if not isinstance(seed, int) or isinstance(seed, bool):
        _fail("seed", f"expected an integer, got {seed!r}")

    rcond = _as_number(raw.get("rcond", 1e-10), "rcond")
    if not (0.0 < rcond < 1.0):
        _fail("rcond", f"must lie in (0, 1), got {rcond}")

    eval_channel = raw.get("eval_channel", 0)
    if not isinstance(eval_channel, int) or not (0 <= eval_channel < groups.q_a):
        _fail("eval_channel", f"must index into group_a (size {groups.q_a})")

    durations = raw.get("durations", {})
    train_s = _as_number(durations.get("train_s", DEFAULT_TRAIN_S), "durations.train_s")
    mixture_s = _as_number(durations.get("mixture_s", DEFAULT_MIXTURE_S),
                           "durations.mixture_s")
    if not (train_s > 0 and math.isfinite(train_s)):
        _fail("durations.train_s", f"must be positive and finite, got {train_s}")
    if not (mixture_s > 0 and math.isfinite(mixture_s)):
        _fail("durations.mixture_s", f"must be positive and finite, got {mixture_s}")

    sweep_raw = raw.get("sweep", {})
    snr_axis = sweep_raw.get("snr_db", [])
    qa_axis = sweep_raw.get("q_a", [])
    if not isinstance(snr_axis, list) or not isinstance(qa_axis, list):
        _fail("sweep", "axes must be lists")
    for i, v in enumerate(qa_axis):
        if not isinstance(v, int) or not (1 <= v <= groups.q_a):
            _fail(f"sweep.q_a[{i}]",
                  f"must be an integer in [1, {groups.q_a}] (group_a size), got {v!r}")
    sweep = SweepAxes(
        snr_db=tuple(_as_number(v, f"sweep.snr_db[{i}]") for i, v in enumerate(snr_axis)),
        q_a=tuple(qa_axis),
    )

    segments = None
    recording = None
    segments_raw = raw.get("segments", "synthesized")
    if segments_raw != "synthesized":
        if not isinstance(segments_raw, dict):
            _fail("segments", 'must be "synthesized" or a per-target object')
        segments = {}
        for sid, seg in segments_raw.items():
            spath = f"segments.{sid}"
            if sid not in signals:
                _fail(spath, f"{sid!r} is not a declared signal_id")
            try:
                segments[sid] = SegmentSpec(t1=tuple(_get(seg, "t1", spath)),
                                            t2=tuple(_get(seg, "t2", spath)))
            except RetmSepError as exc:
                if isinstance(exc, ConfigError):
                    raise
                _fail(spath, str(exc))
        rec_raw = _get(raw, "recording", "")
        recording = _resolve(base, str(rec_raw))
        if not recording.is_file():
            _fail("recording", f"recording file not found: {recording}")

    return ExperimentConfig(
        scene=scene, signals=signals, groups=groups, stft=stft, out_dir=out_dir,
        seed=seed, rcond=rcond, eval_channel=eval_channel,
        train_duration_s=train_s, mixture_duration_s=mixture_s, sweep=sweep,
        segments=segments, recording=recording,
    )


def _parse_signal(entry, path: str, base: Path) -> SignalRef:
    if isinstance(entry, str):
        wav = _resolve(base, entry)
        if not wav.is_file():
            _fail(path, f"WAV file not found: {wav}")
        return SignalRef(wav_path=wav)
    if isinstance(entry, dict):
        if "wav" in entry:
            wav = _resolve(base, str(entry["wav"]))
            if not wav.is_file():
                _fail(path, f"WAV file not found: {wav}")
            return SignalRef(wav_path=wav)
        kind = entry.get("synthetic")
        if kind not in SYNTHETIC_KINDS:
            _fail(path, f"synthetic kind must be one of {sorted(SYNTHETIC_KINDS)}, "
                        f"got {kind!r}")
        seed = entry.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            _fail(f"{path}.seed", f"expected an integer, got {seed!r}")
        return SignalRef(synthetic_kind=kind, seed=seed)
    _fail(path, "must be a WAV path string or an object")


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p
