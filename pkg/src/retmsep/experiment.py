"""Experiment runner: simulate, separate, evaluate, and sweep commands.

The simulated timeline is one continuous scene of ``train + mixture``
seconds.  Sources keep playing throughout; the training recording for each
target is the scene with that target's image removed (identical, by
linearity, to re-rendering with the target muted), sliced to the first
``train`` seconds, while the separation input is the full mixture over the
final ``mixture`` seconds.  The background-noise gain is calibrated on the
mixture segment, where all sources are active.

Sweeps reuse the rendered per-source images across every (SNR, Q_A) point;
only the noise gain, sensor noise, and group assignment change per point.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, SignalRef
from .errors import InvalidInputError
from .metrics import SeparationReport, evaluate_scenario
from .retm import GroupAssignment, ReTMStack, ValidityConditionWarning, separate_with_diagnostics
from .roomsim import (
    RenderedScene,
    SceneConfig,
    add_thermal_noise,
    convolve,
    scale_to_snr,
    simulate_scene_rirs,
)
from .signal_core import AudioBuffer
from .sources import synthetic_signal
from .wavio import read_wav, write_wav

logger = logging.getLogger("retmsep")

MANIFEST_NAME = "manifest.json"
SWEEP_STATE_NAME = "state.json"
SWEEP_SUMMARY_NAME = "summary.csv"


def resolve_signal(ref: SignalRef, signal_id: str, duration_s: float,
                   sample_rate_hz: int) -> AudioBuffer:
    """Materialize one manifest entry as a mono buffer of exactly duration_s."""
    if ref.synthetic_kind is not None:
        return synthetic_signal(ref.synthetic_kind, duration_s, sample_rate_hz, ref.seed)
    buf = read_wav(ref.wav_path)
    if buf.num_channels != 1:
        raise InvalidInputError(f"signal {signal_id!r}: {ref.wav_path} is not mono")
    if buf.sample_rate_hz != sample_rate_hz:
        if buf.sample_rate_hz % sample_rate_hz == 0:
            from .signal_core import decimate

            factor = buf.sample_rate_hz // sample_rate_hz
            logger.info("decimating %s by %d to %d Hz", ref.wav_path, factor, sample_rate_hz)
            buf = decimate(buf, factor)
        else:
            raise InvalidInputError(
                f"signal {signal_id!r}: rate {buf.sample_rate_hz} Hz is not an "
                f"integer multiple of the scene rate {sample_rate_hz} Hz"
            )
    needed = int(round(duration_s * sample_rate_hz))
    if buf.num_samples < needed:
        raise InvalidInputError(
            f"signal {signal_id!r}: {buf.duration_s:.1f} s is shorter than the "
            f"required {duration_s:.1f} s"
        )
    return AudioBuffer(buf.samples[:, :needed], sample_rate_hz)


@dataclass
class RenderCache:
    """Unit-gain per-source images, reusable across SNR/Q_A sweep points.

    Individual images are stored float32 (they only feed float32 WAV output
    and training subtraction); the speech/noise sums stay float64.
    """

    scene: SceneConfig
    speech_ids: tuple[str, ...]
    noise_ids: tuple[str, ...]
    speech_images: dict[str, np.ndarray]
    noise_images: dict[str, np.ndarray] | None
    speech_sum: np.ndarray
    noise_sum: np.ndarray | None
    image_len: int


def build_render_cache(scene: SceneConfig, signals: dict[str, AudioBuffer],
                       keep_noise_images: bool = False) -> RenderCache:
    rirs = simulate_scene_rirs(scene)
    speech_ids, noise_ids = [], []
    speech_images: dict[str, np.ndarray] = {}
    noise_images: dict[str, np.ndarray] | None = {} if keep_noise_images else None
    speech_sum = noise_sum = None
    image_len = 0
    for si, src in enumerate(scene.sources):
        sig = signals[src.signal_id].channel(0)
        rows = [convolve(sig, rirs[si][mi]) for mi in range(scene.num_microphones)]
        image = np.stack(rows)
        image_len = image.shape[1]
        logger.info("rendered image for %s (%s)", src.signal_id, src.role)
        if src.role == "speech":
            speech_ids.append(src.signal_id)
            speech_images[src.signal_id] = image.astype(np.float32)
            speech_sum = image if speech_sum is None else speech_sum + image
        else:
            noise_ids.append(src.signal_id)
            if noise_images is not None:
                noise_images[src.signal_id] = image.astype(np.float32)
            noise_sum = image if noise_sum is None else noise_sum + image
        del image, rows
    return RenderCache(
        scene=scene, speech_ids=tuple(speech_ids), noise_ids=tuple(noise_ids),
        speech_images=speech_images, noise_images=noise_images,
        speech_sum=speech_sum, noise_sum=noise_sum, image_len=image_len,
    )


def assemble_mixture(cache: RenderCache, background_snr_db: float,
                     thermal_snr_db: float, seed: int,
                     calibration: tuple[int, int] | None = None
                     ) -> tuple[np.ndarray, float]:
    """Scale noise to the target SNR, add sensor noise; returns (mixture, gain).

    ``calibration`` restricts the SNR powers to a sample window (the mixture
    segment); the whole timeline is still mixed.
    """
    gain = 1.0
    rate = cache.scene.sample_rate_hz
    if cache.noise_sum is not None and math.isfinite(background_snr_db):
        lo, hi = calibration if calibration is not None else (0, cache.image_len)
        gain = scale_to_snr(
            AudioBuffer(cache.speech_sum[:, lo:hi], rate),
            AudioBuffer(cache.noise_sum[:, lo:hi], rate),
            background_snr_db,
        )
    pre = cache.speech_sum if cache.noise_sum is None \
        else cache.speech_sum + gain * cache.noise_sum
    mixture = add_thermal_noise(AudioBuffer(pre, rate), thermal_snr_db, seed)
    return mixture.samples, gain


def _segment_samples(cfg: ExperimentConfig, rate: int) -> tuple[tuple[int, int], tuple[int, int]]:
    t1_end = int(round(cfg.train_duration_s * rate))
    t2_end = t1_end + int(round(cfg.mixture_duration_s * rate))
    return (0, t1_end), (t1_end, t2_end)


def run_simulate(cfg: ExperimentConfig) -> Path:
    """Render the scene; write mixture, per-source image, and training WAVs.

    Returns the manifest path.  Byte-identical for identical config and seed.
    """
    if cfg.segments is not None:
        raise InvalidInputError(
            "simulate requires synthesized segments; this config imports a recording"
        )
    out = Path(cfg.out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "training").mkdir(exist_ok=True)
    scene = cfg.scene
    rate = scene.sample_rate_hz
    duration = cfg.train_duration_s + cfg.mixture_duration_s
    signals = {
        src.signal_id: resolve_signal(cfg.signals[src.signal_id], src.signal_id,
                                      duration, rate)
        for src in scene.sources
    }
    cache = build_render_cache(scene, signals, keep_noise_images=True)
    (i1_lo, i1_hi), (i2_lo, i2_hi) = _segment_samples(cfg, rate)
    if i2_hi > cache.image_len:
        raise InvalidInputError("rendered images shorter than train + mixture duration")
    mixture_full, gain = assemble_mixture(
        cache, scene.background_snr_db, scene.thermal_snr_db, cfg.seed,
        calibration=(i2_lo, i2_hi),
    )

    files: dict = {"mixture": "mixture.wav", "images": {}, "training": {}}
    write_wav(out / "mixture.wav", AudioBuffer(mixture_full[:, i2_lo:i2_hi], rate))
    source_order, roles, gains = [], {}, {}
    for src in scene.sources:
        sid = src.signal_id
        source_order.append(sid)
        roles[sid] = src.role
        g = 1.0 if src.role == "speech" else gain
        gains[sid] = g
        image = cache.speech_images[sid] if src.role == "speech" else cache.noise_images[sid]
        rel = f"images/{sid}.wav"
        write_wav(out / rel, AudioBuffer(g * image[:, i2_lo:i2_hi].astype(np.float64), rate))
        files["images"][sid] = rel
    for sid in cache.speech_ids:
        training = mixture_full[:, i1_lo:i1_hi] - cache.speech_images[sid][:, i1_lo:i1_hi]
        rel = f"training/{sid}.wav"
        write_wav(out / rel, AudioBuffer(training, rate))
        files["training"][sid] = rel

    manifest = {
        "sample_rate_hz": rate,
        "snr_db": _num_to_json(scene.background_snr_db),
        "thermal_snr_db": _num_to_json(scene.thermal_snr_db),
        "seed": cfg.seed,
        "noise_gain": gain,
        "durations": {"train_s": cfg.train_duration_s, "mixture_s": cfg.mixture_duration_s},
        "source_order": source_order,
        "roles": roles,
        "gains": gains,
        "files": files,
        "scene": scene.to_dict(),
    }
    manifest_path = out / MANIFEST_NAME
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, allow_nan=False)
        fh.write("\n")
    logger.info("wrote %s (noise gain %.4g)", manifest_path, gain)
    return manifest_path


def _load_manifest(out: Path) -> dict:
    manifest_path = out / MANIFEST_NAME
    if not manifest_path.is_file():
        raise InvalidInputError(
            f"{manifest_path} not found; run the simulate command first"
        )
    with open(manifest_path) as fh:
        return json.load(fh)


def _speech_ids(manifest: dict) -> list[str]:
    return [sid for sid in manifest["source_order"] if manifest["roles"][sid] == "speech"]


def run_separate(cfg: ExperimentConfig) -> list[Path]:
    """Separate every target; writes mono WAVs plus serialized stacks."""
    out = Path(cfg.out_dir)
    (out / "separated").mkdir(parents=True, exist_ok=True)
    (out / "retm").mkdir(exist_ok=True)
    if cfg.segments is not None:
        pairs = _segment_mode_pairs(cfg)
        total_sources = len(cfg.scene.sources)
    else:
        manifest = _load_manifest(out)
        mixture = read_wav(out / manifest["files"]["mixture"])
        pairs = []
        for sid in _speech_ids(manifest):
            rel = manifest["files"]["training"].get(sid)
            if rel is None or not (out / rel).is_file():
                raise InvalidInputError(f"missing training recording for target {sid!r}")
            pairs.append((sid, mixture, read_wav(out / rel)))
        total_sources = len(manifest["source_order"])

    if cfg.groups.q_b < total_sources:
        warnings.warn(
            f"Q_B = {cfg.groups.q_b} is below the {total_sources} active sources; "
            "the relative transfer matrix is underdetermined and separation will "
            "degrade",
            ValidityConditionWarning,
            stacklevel=2,
        )
    written = []
    for target_index, (sid, mixture, training) in enumerate(pairs):
        if mixture.num_channels != training.num_channels:
            raise InvalidInputError(
                f"target {sid!r}: mixture has {mixture.num_channels} channels but "
                f"training has {training.num_channels}"
            )
        cfg.groups.validate_channel_count(mixture.num_channels)
        audio, stack = separate_with_diagnostics(
            mixture, training, cfg.groups, cfg.stft, rcond=cfg.rcond,
            output_channel=cfg.eval_channel, target_id=target_index,
        )
        _log_condition_histogram(stack, sid)
        wav_path = out / "separated" / f"{sid}.wav"
        write_wav(wav_path, audio)
        stack.save(out / "retm" / f"{sid}.retm")
        written.append(wav_path)
        logger.info("separated %s -> %s", sid, wav_path)
    return written


def _segment_mode_pairs(cfg: ExperimentConfig):
    recording = read_wav(cfg.recording)
    pairs = []
    for sid, seg in cfg.segments.items():
        seg.validate_for(recording.duration_s, cfg.stft, recording.sample_rate_hz)
        pairs.append((sid, recording.slice_time(*seg.t2), recording.slice_time(*seg.t1)))
    return pairs


def run_evaluate(cfg: ExperimentConfig) -> SeparationReport:
    """Score the separated outputs against the rendered reference images."""
    out = Path(cfg.out_dir)
    if cfg.segments is not None:
        raise InvalidInputError(
            "evaluate needs simulated reference images; segment-mode recordings "
            "have no ground truth"
        )
    manifest = _load_manifest(out)
    mixture = read_wav(out / manifest["files"]["mixture"])
    images, roles, gains = [], [], []
    for sid in manifest["source_order"]:
        rel = manifest["files"]["images"].get(sid)
        if rel is None or not (out / rel).is_file():
            raise InvalidInputError(f"missing image WAV for source {sid!r}")
        images.append(read_wav(out / rel))
        roles.append(manifest["roles"][sid])
        gains.append(manifest["gains"][sid])
    speech_ids = _speech_ids(manifest)
    estimates = []
    for sid in speech_ids:
        est_path = out / "separated" / f"{sid}.wav"
        if not est_path.is_file():
            raise InvalidInputError(f"missing separated output for target {sid!r}")
        estimates.append(read_wav(est_path))
    rendered = RenderedScene(
        mixture=mixture, per_source_images=tuple(images), gains=tuple(gains),
        roles=tuple(roles),
        thermal_noise=AudioBuffer(np.zeros_like(mixture.samples), mixture.sample_rate_hz),
    )
    report = evaluate_scenario(
        rendered, estimates, cfg.groups, eval_channel=cfg.eval_channel,
        search_window=cfg.stft.window_len,
        snr_db=_num_from_json(manifest.get("snr_db")), labels=speech_ids,
        scene_meta={"room_dims": manifest["scene"]["room_dims"],
                    "t60_s": manifest["scene"]["t60_s"],
                    "seed": manifest["seed"]},
    )
    with open(out / "report.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, allow_nan=False)
        fh.write("\n")
    from . import plotting

    plotting.save_report_figure(report, out / "report_sir.png")
    return report


def run_sweep(cfg: ExperimentConfig, jobs: int = 1) -> Path:
    """Run the cartesian product of SNR and Q_A axes; aggregate CSV + figure.

    Completed points are recorded in a state file and skipped on re-run, so a
    failed sweep resumes where it stopped.
    """
    if cfg.sweep.empty:
        raise InvalidInputError("sweep requires at least one non-empty axis")
    if cfg.segments is not None:
        raise InvalidInputError("sweep operates on synthesized scenes only")
    out = Path(cfg.out_dir) / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    scene = cfg.scene
    rate = scene.sample_rate_hz
    snr_axis = cfg.sweep.snr_db or (scene.background_snr_db,)
    qa_axis = cfg.sweep.q_a or (cfg.groups.q_a,)
    points = [(snr, qa) for snr in snr_axis for qa in qa_axis]

    state_path = out / SWEEP_STATE_NAME
    state = {"completed": {}}
    if state_path.is_file():
        with open(state_path) as fh:
            state = json.load(fh)
        logger.info("resuming sweep: %d points already done", len(state["completed"]))

    duration = cfg.train_duration_s + cfg.mixture_duration_s
    signals = {
        src.signal_id: resolve_signal(cfg.signals[src.signal_id], src.signal_id,
                                      duration, rate)
        for src in scene.sources
    }
    cache = build_render_cache(scene, signals)
    seg1, seg2 = _segment_samples(cfg, rate)
    if seg2[1] > cache.image_len:
        raise InvalidInputError("rendered images shorter than train + mixture duration")

    def run_point(item):
        index, (snr_db, q_a) = item
        key = _point_key(snr_db, q_a)
        point_dir = out / key
        point_dir.mkdir(exist_ok=True)
        point_seed = int(np.random.SeedSequence((cfg.seed, index)).generate_state(1)[0])
        report = _evaluate_point(cfg, cache, snr_db, q_a, point_seed, seg1, seg2)
        with open(point_dir / "report.json", "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, allow_nan=False)
            fh.write("\n")
        logger.info("sweep point %s done", key)
        return key, report

    pending = [(i, p) for i, p in enumerate(points)
               if _point_key(*p) not in state["completed"]]
    reports: dict[str, SeparationReport] = {}
    for key, rel in state["completed"].items():
        with open(out / rel) as fh:
            reports[key] = SeparationReport.from_dict(json.load(fh))
    try:
        if jobs > 1 and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                for key, report in pool.map(run_point, pending):
                    reports[key] = report
                    state["completed"][key] = f"{key}/report.json"
        else:
            for item in pending:
                key, report = run_point(item)
                reports[key] = report
                state["completed"][key] = f"{key}/report.json"
    finally:
        with open(state_path, "w") as fh:
            json.dump(state, fh, indent=2)
            fh.write("\n")

    labels = [f"{sid}" for sid in cache.speech_ids]
    rows = []
    for snr_db, q_a in points:
        report = reports[_point_key(snr_db, q_a)]
        rows.append({
            "snr_db": snr_db,
            "q_a": q_a,
            "unprocessed_sir_db": [s.unprocessed_sir_db for s in report.speakers],
            "output_sir_db": [s.output_sir_db for s in report.speakers],
            "output_sdr_db": [s.output_sdr_db for s in report.speakers],
        })
    summary = out / SWEEP_SUMMARY_NAME
    _write_summary_csv(summary, rows, labels, cfg.seed)
    from . import plotting

    plotting.save_sweep_figure(rows, labels, out / "sweep_sir.png")
    logger.info("wrote %s", summary)
    return summary


def _evaluate_point(cfg: ExperimentConfig, cache: RenderCache, snr_db: float,
                    q_a: int, point_seed: int, seg1: tuple[int, int],
                    seg2: tuple[int, int]) -> SeparationReport:
    rate = cache.scene.sample_rate_hz
    groups = GroupAssignment(group_a=cfg.groups.group_a[:q_a], group_b=cfg.groups.group_b)
    mixture_full, gain = assemble_mixture(
        cache, snr_db, cache.scene.thermal_snr_db, point_seed, calibration=seg2,
    )
    mixture = AudioBuffer(mixture_full[:, seg2[0]:seg2[1]], rate)
    estimates = []
    for target_index, sid in enumerate(cache.speech_ids):
        training = AudioBuffer(
            mixture_full[:, seg1[0]:seg1[1]]
            - cache.speech_images[sid][:, seg1[0]:seg1[1]],
            rate,
        )
        audio, stack = separate_with_diagnostics(
            mixture, training, groups, cfg.stft, rcond=cfg.rcond,
            output_channel=cfg.eval_channel, target_id=target_index,
        )
        _log_condition_histogram(stack, f"{sid}@{_point_key(snr_db, q_a)}")
        estimates.append(audio)
    images = tuple(
        AudioBuffer(cache.speech_images[sid][:, seg2[0]:seg2[1]].astype(np.float64), rate)
        for sid in cache.speech_ids
    )
    roles: tuple[str, ...] = ("speech",) * len(images)
    gains: tuple[float, ...] = (1.0,) * len(images)
    if cache.noise_sum is not None:
        images = images + (AudioBuffer(gain * cache.noise_sum[:, seg2[0]:seg2[1]], rate),)
        roles = roles + ("noise",)
        gains = gains + (gain,)
    rendered = RenderedScene(
        mixture=mixture, per_source_images=images, gains=gains, roles=roles,
        thermal_noise=AudioBuffer(np.zeros_like(mixture.samples), rate),
    )
    return evaluate_scenario(
        rendered, estimates, groups, eval_channel=cfg.eval_channel,
        search_window=cfg.stft.window_len, snr_db=snr_db,
        labels=list(cache.speech_ids),
        scene_meta={"room_dims": list(cache.scene.room_dims),
                    "t60_s": cache.scene.t60_s, "seed": point_seed},
    )


def _point_key(snr_db: float, q_a: int) -> str:
    return f"snr_{snr_db:g}_qa_{q_a}"


def _write_summary_csv(path: Path, rows: list[dict], labels: list[str], seed: int) -> None:
    columns = ["snr_db", "q_a"]
    for label in labels:
        columns += [f"{label}_unprocessed_sir_db", f"{label}_output_sir_db",
                    f"{label}_output_sdr_db"]
    with open(path, "w") as fh:
        fh.write("# separation sweep summary; one row per (snr_db, q_a) point\n")
        fh.write(f"# seed={seed}\n")
        fh.write("# " + ",".join(columns) + "\n")
        for row in rows:
            cells = [f"{row['snr_db']:g}", str(row["q_a"])]
            for k in range(len(labels)):
                cells += [
                    _fmt_csv(row["unprocessed_sir_db"][k]),
                    _fmt_csv(row["output_sir_db"][k]),
                    _fmt_csv(row["output_sdr_db"][k]),
                ]
            fh.write(",".join(cells) + "\n")


def _fmt_csv(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.6f}"


def _num_to_json(v: float):
    return None if (v is None or math.isinf(v)) else float(v)


def _num_from_json(v):
    return math.inf if v is None else float(v)


def _log_condition_histogram(stack: ReTMStack, label: str) -> None:
    if not logger.isEnabledFor(logging.INFO):
        return
    conds = stack.condition_numbers
    finite = conds[np.isfinite(conds)]
    edges = [1e2, 1e4, 1e6, 1e8]
    counts = np.histogram(finite, bins=[0] + edges + [np.inf])[0]
    n_inf = int(np.sum(~np.isfinite(conds)))
    bands = ["<1e2", "1e2-1e4", "1e4-1e6", "1e6-1e8", ">1e8"]
    text = " ".join(f"{b}:{c}" for b, c in zip(bands, counts))
    logger.info(
        "P_BA condition histogram [%s]: %s inf:%d fallback:%d",
        label, text, n_inf, int(stack.fallback_bins.sum()),
    )
