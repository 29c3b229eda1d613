"""Projection-based SIR/SDR evaluation and report/figure generation.

An estimate is decomposed against the reverberant per-source images at one
evaluation microphone: the part collinear with the target image, the rest of
its projection onto the span of all speech images (interference), and the
remainder (artifacts, which absorbs background noise).  This is the
scalar-projection decomposition: no distortion filter is allowed, so SDR
reads stricter than filter-based conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .errors import DegenerateReferenceError, InvalidInputError
from .retm import GroupAssignment
from .roomsim import RenderedScene
from .signal_core import AudioBuffer, Spectrogram, magnitude_db

GRAM_CONDITION_LIMIT = 1e10
DEFAULT_ALIGN_SEARCH = 8192


@dataclass(frozen=True)
class BssDecomposition:
    """estimate = s_target + e_interf + e_artif with pairwise orthogonality."""

    s_target: np.ndarray
    e_interf: np.ndarray
    e_artif: np.ndarray


def bss_decompose(estimate: np.ndarray, references, target_index: int) -> BssDecomposition:
    """Orthogonal-projection decomposition of an estimate against references.

    s_target is the projection onto the target reference; e_interf is the
    projection onto span(references) minus s_target; e_artif is what remains.
    The estimate is trimmed or zero-padded to the reference length first.
    """
    refs = [np.asarray(r, dtype=np.float64) for r in references]
    if not refs:
        raise InvalidInputError("at least one reference is required")
    length = len(refs[0])
    if any(len(r) != length for r in refs):
        raise InvalidInputError("references must share one length")
    if not (0 <= target_index < len(refs)):
        raise InvalidInputError(f"target_index {target_index} out of range")
    norms = [float(np.dot(r, r)) for r in refs]
    if any(n == 0.0 for n in norms):
        raise DegenerateReferenceError("a reference has zero norm")
    estimate = np.asarray(estimate, dtype=np.float64)
    if len(estimate) < length:
        estimate = np.concatenate([estimate, np.zeros(length - len(estimate))])
    elif len(estimate) > length:
        estimate = estimate[:length]

    ref_matrix = np.stack(refs)
    gram = ref_matrix @ ref_matrix.T
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > GRAM_CONDITION_LIMIT:
        raise DegenerateReferenceError(
            f"references are numerically linearly dependent (Gram condition {cond:.2e})"
        )
    target = refs[target_index]
    s_target = (np.dot(estimate, target) / norms[target_index]) * target
    coeffs = np.linalg.solve(gram, ref_matrix @ estimate)
    proj_span = coeffs @ ref_matrix
    return BssDecomposition(
        s_target=s_target,
        e_interf=proj_span - s_target,
        e_artif=estimate - proj_span,
    )


def sir_sdr(decomp: BssDecomposition) -> tuple[float, float]:
    """(SIR, SDR) in dB with +/-inf sentinels for zero numerator/denominator."""
    e_target = float(np.dot(decomp.s_target, decomp.s_target))
    e_interf = float(np.dot(decomp.e_interf, decomp.e_interf))
    distortion = decomp.e_interf + decomp.e_artif
    e_dist = float(np.dot(distortion, distortion))
    if e_target == 0.0:
        return -math.inf, -math.inf
    sir = math.inf if e_interf == 0.0 else 10.0 * math.log10(e_target / e_interf)
    sdr = math.inf if e_dist == 0.0 else 10.0 * math.log10(e_target / e_dist)
    return sir, sdr


def align_to_reference(estimate: np.ndarray, reference: np.ndarray,
                       max_lag: int) -> tuple[np.ndarray, int]:
    """Shift the estimate by the cross-correlation peak within +/-max_lag.

    Returns the aligned estimate (same length as the reference) and the lag
    in samples by which the estimate led (+) or trailed (-) the reference.
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    corr = scipy.signal.correlate(estimate, reference, mode="full")
    lags = np.arange(-(len(reference) - 1), len(estimate))
    window = np.abs(lags) <= max_lag
    best = int(lags[window][np.argmax(np.abs(corr[window]))])
    if best >= 0:
        shifted = estimate[best:]
    else:
        shifted = np.concatenate([np.zeros(-best), estimate])
    if len(shifted) < len(reference):
        shifted = np.concatenate([shifted, np.zeros(len(reference) - len(shifted))])
    return shifted[: len(reference)], best


@dataclass
class SpeakerMetrics:
    label: str
    unprocessed_sir_db: float
    output_sir_db: float
    output_sdr_db: float
    unprocessed_sdr_note: str = "-"


@dataclass
class SeparationReport:
    """Per-speaker unprocessed/output metrics plus scene context."""

    speakers: list[SpeakerMetrics]
    q_a: int
    q_b: int
    snr_db: float | None = None
    scene: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "speakers": [
                {
                    "label": s.label,
                    "unprocessed_sir_db": _num_to_json(s.unprocessed_sir_db),
                    "unprocessed_sdr_note": s.unprocessed_sdr_note,
                    "output_sir_db": _num_to_json(s.output_sir_db),
                    "output_sdr_db": _num_to_json(s.output_sdr_db),
                }
                for s in self.speakers
            ],
            "group_sizes": {"q_a": self.q_a, "q_b": self.q_b},
            "snr_db": _num_to_json(self.snr_db),
            "scene": self.scene,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SeparationReport":
        speakers = [
            SpeakerMetrics(
                label=s["label"],
                unprocessed_sir_db=_num_from_json(s["unprocessed_sir_db"]),
                output_sir_db=_num_from_json(s["output_sir_db"]),
                output_sdr_db=_num_from_json(s["output_sdr_db"]),
                unprocessed_sdr_note=s.get("unprocessed_sdr_note", "-"),
            )
            for s in d["speakers"]
        ]
        sizes = d.get("group_sizes", {})
        return cls(speakers=speakers, q_a=sizes.get("q_a", 0), q_b=sizes.get("q_b", 0),
                   snr_db=_num_from_json(d.get("snr_db")), scene=d.get("scene", {}))

    def format_table(self) -> str:
        lines = [
            f"group sizes Q_A={self.q_a} Q_B={self.q_b}"
            + (f"  background SNR {self.snr_db:g} dB" if self.snr_db is not None else ""),
            f"{'speaker':<14}{'':<12}{'SIR (dB)':>10}{'SDR (dB)':>10}",
        ]
        for s in self.speakers:
            lines.append(f"{s.label:<14}{'unprocessed':<12}{_fmt_db(s.unprocessed_sir_db):>10}"
                         f"{s.unprocessed_sdr_note:>10}")
            lines.append(f"{'':<14}{'output':<12}{_fmt_db(s.output_sir_db):>10}"
                         f"{_fmt_db(s.output_sdr_db):>10}")
        return "\n".join(lines)


def _fmt_db(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.2f}"


def _num_to_json(v):
    if v is None:
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def _num_from_json(v):
    if v is None:
        return None
    if v == "inf":
        return math.inf
    if v == "-inf":
        return -math.inf
    return float(v)


def evaluate_scenario(rendered: RenderedScene, estimates, groups: GroupAssignment,
                      eval_channel: int = 0,
                      search_window: int = DEFAULT_ALIGN_SEARCH,
                      snr_db: float | None = None,
                      labels=None, scene_meta: dict | None = None) -> SeparationReport:
    """Score separation outputs against the rendered per-source images.

    References are the speech-source images at one group-A microphone (the
    reverberant target image is the ideal output).  Unprocessed metrics come
    from the raw mixture channel; each estimate is delay-aligned to its
    target reference by cross-correlation before decomposition.
    """
    speech = rendered.speech_indices
    estimates = list(estimates)
    if len(estimates) != len(speech):
        raise InvalidInputError(
            f"{len(estimates)} estimates for {len(speech)} speech sources"
        )
    if not (0 <= eval_channel < groups.q_a):
        raise InvalidInputError(f"eval_channel {eval_channel} out of range for group A")
    channel = groups.group_a[eval_channel]
    refs = [rendered.per_source_images[i].channel(channel) for i in speech]
    if labels is None:
        labels = [f"speaker_{k + 1}" for k in range(len(speech))]
    mixture = rendered.mixture.channel(channel)

    rows = []
    for k, estimate in enumerate(estimates):
        est = estimate.channel(0) if isinstance(estimate, AudioBuffer) else np.asarray(estimate)
        aligned, _ = align_to_reference(est, refs[k], search_window)
        out_sir, out_sdr = sir_sdr(bss_decompose(aligned, refs, k))
        unp_sir, _ = sir_sdr(bss_decompose(mixture, refs, k))
        rows.append(SpeakerMetrics(label=labels[k], unprocessed_sir_db=unp_sir,
                                   output_sir_db=out_sir, output_sdr_db=out_sdr))
    return SeparationReport(speakers=rows, q_a=groups.q_a, q_b=groups.q_b,
                            snr_db=snr_db, scene=scene_meta or {})


def export_spectrogram(spec: Spectrogram, channel: int, path, fmt: str = "png",
                       floor_db: float = -120.0) -> None:
    """Write one channel's magnitude (dB) grid as CSV or a rendered PNG.

    The CSV carries ``#``-prefixed header lines with the axis scales and one
    row per frequency bin (bins x frames values, comma separated).
    """
    if not (0 <= channel < spec.num_channels):
        raise InvalidInputError(f"channel {channel} out of range")
    grid = magnitude_db(spec, floor_db)[:, :, channel]
    bin_hz = spec.sample_rate_hz / spec.params.fft_len
    frame_s = spec.params.hop / spec.sample_rate_hz
    if fmt == "csv":
        with open(path, "w") as fh:
            fh.write("# spectrogram magnitude in dB; rows = frequency bins, "
                     "columns = time frames\n")
            fh.write(f"# sample_rate_hz={spec.sample_rate_hz} "
                     f"window_len={spec.params.window_len} hop={spec.params.hop} "
                     f"fft_len={spec.params.fft_len}\n")
            fh.write(f"# bin_spacing_hz={bin_hz:.9g} frame_spacing_s={frame_s:.9g} "
                     f"floor_db={floor_db:g}\n")
            for row in grid:
                fh.write(",".join(f"{v:.8e}" for v in row))
                fh.write("\n")
    elif fmt == "png":
        from . import plotting

        plotting.save_spectrogram_png(
            grid, duration_s=spec.num_frames * frame_s,
            max_freq_hz=spec.sample_rate_hz / 2.0, path=path,
        )
    else:
        raise InvalidInputError(f"format must be 'csv' or 'png', got {fmt!r}")
