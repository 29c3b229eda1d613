"""Blind multichannel speaker separation via relative transfer matrices.

Microphones are split into two groups; the per-frequency matrix relating the
groups' responses to the undesired sources is estimated blindly from
covariances of a target-free segment and used to subtract those sources from
the mixture.  The package also ships an image-source room simulator,
projection-based SIR/SDR metrics, and a config-driven experiment CLI.
"""

from .errors import (
    ConfigError,
    DegenerateInputError,
    DegenerateReferenceError,
    InfeasibleConfigError,
    InvalidInputError,
    NumericalFailureError,
    RetmSepError,
    UnsupportedRateError,
)
from .metrics import (
    BssDecomposition,
    SeparationReport,
    bss_decompose,
    evaluate_scenario,
    export_spectrogram,
    sir_sdr,
)
from .numerics import CovariancePair, condition_number, cross_covariance, pseudoinverse
from .retm import (
    GroupAssignment,
    ReTMStack,
    SegmentSpec,
    TransferMatrixSet,
    apply_separation,
    estimate_retm,
    separate_all,
    separate_speaker,
    synth_multiplicative_scene,
)
from .roomsim import (
    RenderedScene,
    RoomImpulseResponse,
    SceneConfig,
    SourcePlacement,
    add_thermal_noise,
    convolve,
    reflection_coefficient,
    render_scene,
    scale_to_snr,
    simulate_rir,
)
from .signal_core import AudioBuffer, Spectrogram, StftParams, decimate, istft, magnitude_db, stft
from .wavio import read_wav, write_wav

__version__ = "0.1.0"
