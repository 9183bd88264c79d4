import math

import numpy as np
import pytest

from sonartex.core import SignalBuffer

FS = 32000


def brute_autocorr(x, tau_max):
    """O(N^2) direct biased autocorrelation of the zero-meaned signal."""
    x = np.asarray(x, dtype=np.float64)
    x = x - x.mean()
    energy = sum(float(v) * float(v) for v in x)
    n = x.size
    return np.array([np.dot(x[: n - tau], x[tau:]) / energy for tau in range(tau_max + 1)])


def brute_entropy(frame, n_bins, lo, hi):
    """Pure-python histogram entropy with clamping into [lo, hi]."""
    counts = [0] * n_bins
    for v in frame:
        k = int(math.floor((float(v) - lo) / (hi - lo) * n_bins))
        counts[min(max(k, 0), n_bins - 1)] += 1
    total = len(frame)
    return -sum((c / total) * math.log2(c / total) for c in counts if c)


def sine(freq_hz, duration_s=5.0, fs=FS, amp=1.0, phase=0.0):
    t = np.arange(int(round(duration_s * fs))) / fs
    return SignalBuffer(amp * np.sin(2 * np.pi * freq_hz * t + phase), fs)


def white(seed, duration_s=5.0, fs=FS):
    return SignalBuffer(np.random.default_rng(seed).standard_normal(int(round(duration_s * fs))), fs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
