"""WAV loading, resampling to 16 kHz, and waveform-level length normalization."""

from __future__ import annotations

import math

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

TARGET_RATE = 16_000

_INT_SCALES = {
    np.dtype(np.int16): 32768.0,
    np.dtype(np.int32): 2147483648.0,
}


def load_wav(path, target_rate: int = TARGET_RATE) -> np.ndarray:
    """Mono float64 waveform in [-1, 1] at target_rate."""
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if data.dtype in _INT_SCALES:
        data = data.astype(np.float64) / _INT_SCALES[data.dtype]
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if rate != target_rate:
        g = math.gcd(int(rate), target_rate)
        data = resample_poly(data, target_rate // g, rate // g)
    return data


def fix_duration(wave: np.ndarray, seconds: float, rate: int = TARGET_RATE) -> np.ndarray:
    """Truncate or repeat the waveform cyclically to exactly `seconds`."""
    target = int(round(seconds * rate))
    if len(wave) == target:
        return wave
    if len(wave) > target:
        return wave[:target].copy()
    reps = math.ceil(target / len(wave))
    return np.tile(wave, reps)[:target]


def normalize(wave: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance scaling, the convention the frontend expects."""
    centered = wave - wave.mean()
    return centered / np.sqrt(centered.var() + 1e-7)
