"""WAV reading/writing.

Outputs are always 32-bit float little-endian WAV (headroom for low-SNR
mixtures); 16/24/32-bit integer and 8-bit unsigned files are accepted on read
and normalized to [-1, 1].
"""

from __future__ import annotations

import numpy as np
import scipy.io.wavfile

from .errors import InvalidInputError
from .signal_core import AudioBuffer


def write_wav(path, buffer: AudioBuffer) -> None:
    data = buffer.samples.T.astype(np.float32)
    if data.shape[1] == 1:
        data = data[:, 0]
    scipy.io.wavfile.write(path, buffer.sample_rate_hz, data)


def read_wav(path) -> AudioBuffer:
    rate, data = scipy.io.wavfile.read(path)
    if data.ndim == 1:
        data = data[:, np.newaxis]
    if data.dtype == np.int16:
        samples = data / 32768.0
    elif data.dtype == np.int32:
        samples = data / 2147483648.0
    elif data.dtype == np.uint8:
        samples = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise InvalidInputError(f"unsupported WAV sample format {data.dtype} in {path}")
    return AudioBuffer(samples.T, int(rate))
