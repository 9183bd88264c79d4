"""Framing, STFT, mel filterbank, log-mel spectrograms, resampling, segmentation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .core import ParameterError, SignalBuffer
from .texture import frame_signal

log = logging.getLogger(__name__)

KAISER_BETA = 8.6
TAPS_PER_PHASE = 64


@dataclass(frozen=True)
class SpectrogramConfig:
    window_len: int = 1024
    hop: int = 320
    n_mels: int = 1024
    sample_rate_hz: int = 32000
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.window_len < 2 or self.hop < 1:
            raise ParameterError("window_len must be >= 2 and hop >= 1")
        if self.hop > self.window_len:
            raise ParameterError(f"hop ({self.hop}) must not exceed window_len ({self.window_len})")
        if self.n_mels < 1:
            raise ParameterError("n_mels must be >= 1")
        if self.sample_rate_hz <= 0 or not self.log_floor > 0:
            raise ParameterError("sample_rate_hz and log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.window_len // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return 0 if n_samples < self.window_len else (n_samples - self.window_len) // self.hop + 1


@dataclass
class MelSpectrogram:
    values: np.ndarray  # (frames, n_mels), natural-log power
    frame_times_s: np.ndarray


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return sps.get_window("hann", n, fftbins=True)


def stft_magnitude(signal: SignalBuffer, cfg: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """|rFFT| of Hann-windowed, non-padded frames; shape (frames, window_len // 2 + 1)."""
    if len(signal) < cfg.window_len:
        raise ParameterError(f"signal of {len(signal)} samples is shorter than the window ({cfg.window_len})")
    frames = frame_signal(signal.samples, cfg.window_len, cfg.hop)
    return np.abs(np.fft.rfft(frames * hann(cfg.window_len), axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """Filter centers (Hz), equally spaced in mel between 0 Hz and Nyquist."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate_hz / 2.0), cfg.n_mels + 2))
    return edges[1:-1]


def mel_filterbank(cfg: SpectrogramConfig = SpectrogramConfig()) -> np.ndarray:
    """Triangular (HTK-scale) filters, shape (n_mels, window_len // 2 + 1).

    Each filter rises from the previous center to its own and falls to the
    next, evaluated at the FFT bin frequencies. With more filters than bins
    some narrow low-frequency filters catch no bin and stay all-zero.
    """
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate_hz / 2.0), cfg.n_mels + 2))
    bins_hz = np.fft.rfftfreq(cfg.window_len, d=1.0 / cfg.sample_rate_hz)
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins_hz[None, :] - lower) / (center - lower)
    falling = (upper - bins_hz[None, :]) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    n_empty = empty_filter_count(fb)
    if n_empty:
        log.debug("%d of %d mel filters cover no FFT bin", n_empty, cfg.n_mels)
    return fb


def empty_filter_count(fb: np.ndarray) -> int:
    return int(np.count_nonzero(~np.any(fb > 0, axis=1)))


def log_mel(signal: SignalBuffer, cfg: SpectrogramConfig = SpectrogramConfig()) -> MelSpectrogram:
    """Natural-log mel power, floored at ``log(cfg.log_floor)``."""
    power = stft_magnitude(signal, cfg) ** 2
    mel = power @ mel_filterbank(cfg).T
    values = np.log(np.maximum(mel, cfg.log_floor))
    times = (np.arange(values.shape[0]) * cfg.hop + cfg.window_len / 2.0) / signal.sample_rate_hz
    return MelSpectrogram(values=values, frame_times_s=times)


def resample(signal: SignalBuffer, target_hz: int) -> SignalBuffer:
    """Polyphase resampling with a Kaiser-windowed sinc low-pass.

    The prototype filter has ``64 * max(up, down)`` taps (64 per phase,
    beta 8.6, about 80 dB stopband) with its cutoff at the lower of the two
    Nyquist rates. Equal rates return the input unchanged.
    """
    target_hz = int(target_hz)
    if target_hz <= 0:
        raise ParameterError(f"target_hz must be positive, got {target_hz}")
    if target_hz == signal.sample_rate_hz:
        return signal
    g = math.gcd(target_hz, signal.sample_rate_hz)
    up, down = target_hz // g, signal.sample_rate_hz // g
    factor = max(up, down)
    # resample_poly applies the interpolation gain of `up` to custom taps itself.
    taps = sps.firwin(TAPS_PER_PHASE * factor + 1, 1.0 / factor, window=("kaiser", KAISER_BETA))
    y = sps.resample_poly(signal.samples, up, down, window=taps)
    return SignalBuffer(y, target_hz)


def segment(signal: SignalBuffer, seg_len_s: float) -> list:
    """Consecutive non-overlapping pieces of ``seg_len_s``; a short tail is dropped."""
    if not seg_len_s > 0:
        raise ParameterError(f"seg_len_s must be > 0, got {seg_len_s}")
    n = int(round(seg_len_s * signal.sample_rate_hz))
    if n < 1:
        raise ParameterError(f"seg_len_s={seg_len_s} is shorter than one sample")
    count = len(signal) // n
    return [SignalBuffer(signal.samples[i * n:(i + 1) * n], signal.sample_rate_hz) for i in range(count)]
