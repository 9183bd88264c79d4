"""Statistical (StaTS) and structural (StrTS) texture scores, self-similarity.

Both scores live on a 0-5 scale. StaTS combines how close per-frame
histogram entropy gets to its ceiling with how symmetric the entropy
build-up is when the clip is played forwards versus backwards. StrTS is
five times the normalized autocorrelation at the strongest periodic lag.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import DegenerateSignalError, ParameterError, SignalBuffer

log = logging.getLogger(__name__)

SCORE_MAX = 5.0


@dataclass(frozen=True)
class StaTSParams:
    """Framing and histogram settings for the statistical texture score.

    ``edge_quantile`` picks the shared histogram range: 0 uses the global
    [min, max]; q > 0 uses the [q, 1 - q] quantiles of the whole clip with
    out-of-range samples clamped into the edge bins.
    """

    frame_len: int = 2048
    hop: int = 512
    n_bins: int = 64
    convergence_eps: float = 0.02
    edge_quantile: float = 0.005

    def __post_init__(self):
        if self.frame_len < 1 or self.hop < 1 or self.n_bins < 1:
            raise ParameterError("frame_len, hop and n_bins must be positive")
        if self.frame_len < 2 * self.n_bins:
            raise ParameterError(f"frame_len ({self.frame_len}) must be >= 2 * n_bins ({self.n_bins})")
        if self.hop > self.frame_len:
            raise ParameterError(f"hop ({self.hop}) must not exceed frame_len ({self.frame_len})")
        if not self.convergence_eps > 0:
            raise ParameterError("convergence_eps must be > 0")
        if not 0.0 <= self.edge_quantile < 0.5:
            raise ParameterError("edge_quantile must lie in [0, 0.5)")


@dataclass
class StaTSResult:
    score: float
    p_rel: float
    p_t: float
    area_s: float
    s_max: float
    h_final: float
    forward_curve: np.ndarray = field(repr=False)
    reverse_curve: np.ndarray = field(repr=False)
    degenerate: bool = False


@dataclass
class StrTSResult:
    score: float
    tau_star: int
    r_at_tau: float
    tau_max: int
    autocorr: np.ndarray = field(repr=False)
    zero_crossing: bool = True


@dataclass
class SelfSimilarityMatrix:
    values: np.ndarray
    frame_len: int
    hop: int
    silent_frames: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def frame_signal(x: np.ndarray, frame_len: int, hop: int) -> np.ndarray:
    """Non-padded frames of ``x`` as a read-only (n_frames, frame_len) view."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < frame_len:
        raise ParameterError(f"signal of {x.size} samples is shorter than one frame ({frame_len})")
    n_frames = 1 + (x.size - frame_len) // hop
    view = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop]
    return view[:n_frames]


def _bin_index(values: np.ndarray, n_bins: int, lo: float, hi: float) -> np.ndarray:
    scaled = (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)
    idx = np.floor(scaled * n_bins)
    return np.clip(idx, 0, n_bins - 1).astype(np.int64)


def _entropy_from_counts(counts: np.ndarray) -> np.ndarray:
    """Shannon entropy (bits) along the last axis, with 0 log 0 = 0."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum(axis=-1, keepdims=True)
    p = counts / total
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    # Tiny negative values from rounding are clamped to 0.
    return np.maximum(-terms.sum(axis=-1), 0.0)


def frame_entropy(frame: Sequence[float], n_bins: int, bin_lo: float, bin_hi: float) -> float:
    """Entropy in bits of ``frame`` histogrammed into ``n_bins`` equal bins.

    Values outside ``[bin_lo, bin_hi]`` are clamped into the edge bins.
    """
    frame = np.asarray(frame, dtype=np.float64).reshape(-1)
    if frame.size == 0:
        raise ParameterError("frame is empty")
    if not bin_lo < bin_hi:
        raise ParameterError(f"bin_lo ({bin_lo}) must be < bin_hi ({bin_hi})")
    counts = np.bincount(_bin_index(frame, n_bins, bin_lo, bin_hi), minlength=n_bins)
    return float(_entropy_from_counts(counts))


def _frames_entropy(frames: np.ndarray, n_bins: int, lo: float, hi: float) -> np.ndarray:
    n_frames = frames.shape[0]
    idx = _bin_index(frames, n_bins, lo, hi) + (np.arange(n_frames)[:, None] * n_bins)
    counts = np.bincount(idx.ravel(), minlength=n_frames * n_bins).reshape(n_frames, n_bins)
    return _entropy_from_counts(counts)


def histogram_edges(x: np.ndarray, edge_quantile: float = 0.0) -> tuple[float, float]:
    """Shared histogram range for a whole clip.

    Falls back to [min, max] when the quantile range collapses (e.g. a
    mostly constant clip with rare excursions).
    """
    x = np.asarray(x, dtype=np.float64)
    lo, hi = float(x.min()), float(x.max())
    if edge_quantile > 0:
        q_lo, q_hi = np.quantile(x, [edge_quantile, 1.0 - edge_quantile])
        if q_hi > q_lo:
            lo, hi = float(q_lo), float(q_hi)
    return lo, hi


def entropy_curves(signal: SignalBuffer, params: StaTSParams = StaTSParams()) -> tuple[np.ndarray, np.ndarray]:
    """Running mean of per-frame entropy, forwards and on the reversed clip.

    Both passes histogram against the same clip-wide range so the curves are
    comparable. A constant clip yields all-zero curves.
    """
    x = signal.samples
    if x.size < params.frame_len:
        raise ParameterError(f"signal of {x.size} samples is shorter than one frame ({params.frame_len})")
    lo, hi = histogram_edges(x, params.edge_quantile)
    n_frames = 1 + (x.size - params.frame_len) // params.hop
    if not hi > lo:
        zeros = np.zeros(n_frames)
        return zeros, zeros.copy()
    counts = np.arange(1, n_frames + 1, dtype=np.float64)
    fwd = _frames_entropy(frame_signal(x, params.frame_len, params.hop), params.n_bins, lo, hi)
    rev = _frames_entropy(frame_signal(x[::-1], params.frame_len, params.hop), params.n_bins, lo, hi)
    return np.cumsum(fwd) / counts, np.cumsum(rev) / counts


def curve_area(forward: np.ndarray, reverse: np.ndarray, dt: float) -> float:
    """Trapezoidal area of ``|forward - reverse|`` on a uniform grid of spacing ``dt``."""
    gap = np.abs(np.asarray(forward, dtype=np.float64) - np.asarray(reverse, dtype=np.float64))
    if gap.size < 2:
        return 0.0
    return float(dt * (gap.sum() - 0.5 * (gap[0] + gap[-1])))


def convergence_proportion(curve: np.ndarray, eps: float) -> float:
    """Fraction of frames before ``curve`` stays within ``eps * final`` of its final value."""
    curve = np.asarray(curve, dtype=np.float64)
    final = curve[-1]
    outside = np.flatnonzero(np.abs(curve - final) > eps * final)
    first_settled = 0 if outside.size == 0 else int(outside[-1]) + 1
    return first_settled / curve.size


def stats_score(signal: SignalBuffer, params: StaTSParams = StaTSParams()) -> StaTSResult:
    """Statistical texture score of ``signal``.

    ``score = 5 * p_rel * (1 - p_t * area / s_max)``, clamped to [0, 5],
    where ``p_rel`` is the final running-mean entropy over ``log2(n_bins)``,
    ``area`` the forward/reverse gap integrated over time (bit-seconds),
    ``s_max = duration * log2(n_bins)`` and ``p_t`` the convergence
    proportion of the forward curve.
    """
    if len(signal) < 2 * params.frame_len:
        raise ParameterError(
            f"signal of {len(signal)} samples is shorter than two frames ({2 * params.frame_len})")
    h_max = math.log2(params.n_bins) if params.n_bins > 1 else 1.0
    fwd, rev = entropy_curves(signal, params)
    s_max = signal.duration_s * h_max
    if np.ptp(signal.samples) == 0:
        log.debug("constant signal, StaTS defined as 0")
        return StaTSResult(0.0, 0.0, 0.0, 0.0, s_max, 0.0, fwd, rev, degenerate=True)

    h_final = float(fwd[-1])
    p_rel = h_final / h_max if params.n_bins > 1 else 0.0
    area = curve_area(fwd, rev, params.hop / signal.sample_rate_hz)
    p_t = convergence_proportion(fwd, params.convergence_eps) if h_final > 0 else 0.0
    score = SCORE_MAX * p_rel * (1.0 - p_t * area / s_max)
    return StaTSResult(
        score=float(min(max(score, 0.0), SCORE_MAX)),
        p_rel=p_rel,
        p_t=p_t,
        area_s=area,
        s_max=s_max,
        h_final=h_final,
        forward_curve=fwd,
        reverse_curve=rev,
    )


def autocorr_normalized(signal: SignalBuffer, tau_max: int) -> np.ndarray:
    """Biased normalized autocorrelation ``R(0..tau_max)`` of the zero-meaned signal.

    ``R(tau) = sum_t x(t) x(t + tau) / sum_t x(t)**2``, computed via FFT.
    """
    x = signal.samples
    n = x.size
    if not 1 <= tau_max < n:
        raise ParameterError(f"tau_max must satisfy 1 <= tau_max < {n}, got {tau_max}")
    if np.ptp(x) == 0:
        raise DegenerateSignalError("zero-variance signal has no normalized autocorrelation")
    xc = x - x.mean()
    energy = float(np.dot(xc, xc))
    if energy <= 0.0:
        raise DegenerateSignalError("zero-variance signal has no normalized autocorrelation")
    nfft = 1 << (2 * n - 1).bit_length()
    spec = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(spec.real**2 + spec.imag**2, nfft)[: tau_max + 1]
    r = acov / energy
    r[0] = 1.0
    return r


def strts_score(signal: SignalBuffer) -> StrTSResult:
    """Structural texture score: ``5 * max(0, R(tau*))``.

    ``tau*`` is the argmax of ``R`` over lags up to a quarter of the clip,
    searched only after the autocorrelation first drops to zero or below, so
    the lag-0 main lobe never counts as a period. When ``R`` never reaches
    zero the whole range ``[1, tau_max]`` is searched and ``zero_crossing``
    is False.
    """
    n = len(signal)
    tau_max = min(max(int(round(0.25 * n)), 1), n - 1)
    r = autocorr_normalized(signal, tau_max)
    below = np.flatnonzero(r[1:] <= 0.0)
    crossed = below.size > 0
    start = int(below[0]) + 1 if crossed else 1
    tau_star = start + int(np.argmax(r[start:]))
    r_star = float(r[tau_star])
    return StrTSResult(
        score=SCORE_MAX * max(0.0, min(r_star, 1.0)),
        tau_star=tau_star,
        r_at_tau=r_star,
        tau_max=tau_max,
        autocorr=r,
        zero_crossing=crossed,
    )


def self_similarity(signal: SignalBuffer, frame_len: int = 2048, hop: int = 512) -> SelfSimilarityMatrix:
    """Cosine similarity between every pair of zero-meaned frames.

    Frames with no energy after zero-meaning get a zero row/column and a
    unit diagonal; their indices are listed in ``silent_frames``.
    """
    if frame_len < 1 or hop < 1:
        raise ParameterError("frame_len and hop must be positive")
    frames = frame_signal(signal.samples, frame_len, hop)
    frames = frames - frames.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", frames, frames))
    silent = norms <= 0.0
    if silent.any():
        log.warning("%d silent frame(s) in self-similarity input", int(silent.sum()))
    unit = frames / np.where(silent, 1.0, norms)[:, None]
    sim = unit @ unit.T
    sim = 0.5 * (sim + sim.T)
    np.clip(sim, -1.0, 1.0, out=sim)
    np.fill_diagonal(sim, 1.0)
    return SelfSimilarityMatrix(values=sim, frame_len=frame_len, hop=hop,
                                silent_frames=np.flatnonzero(silent))


@dataclass
class FileScore:
    dataset: str
    class_name: str
    file: str
    stats: float = float("nan")
    strts: float = float("nan")
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass
class GroupSummary:
    dataset: str
    class_name: str  # "" for the whole-dataset row
    n: int
    stats_mean: float
    stats_std: float
    strts_mean: float
    strts_std: float


def _mean_std(values: list) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.sum() / arr.size)
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return mean, std


@dataclass
class ScoreReport:
    """Per-file scores plus per-dataset and per-class mean and sample std."""

    files: list

    def failures(self) -> list:
        return [f for f in self.files if not f.ok]

    def summaries(self) -> list:
        groups: dict = {}
        for f in self.files:
            if not f.ok:
                continue
            groups.setdefault((f.dataset, ""), []).append(f)
            groups.setdefault((f.dataset, f.class_name), []).append(f)
        out = []
        for (dataset, cls), members in groups.items():
            s_mean, s_std = _mean_std([m.stats for m in members])
            t_mean, t_std = _mean_std([m.strts for m in members])
            out.append(GroupSummary(dataset, cls, len(members), s_mean, s_std, t_mean, t_std))
        # Dataset rows first, then classes, all in first-seen order.
        order = {key: i for i, key in enumerate(groups)}
        out.sort(key=lambda g: (g.class_name != "", order[(g.dataset, g.class_name)]))
        return out


def score_signal(signal: SignalBuffer, params: StaTSParams = StaTSParams()) -> tuple[StaTSResult, StrTSResult]:
    return stats_score(signal, params), strts_score(signal)


def _score_path(job):
    from .dsp import resample
    from .store import read_wav

    path, dataset, class_name, label, params, target_hz = job
    try:
        sig = read_wav(path)
        if target_hz and sig.sample_rate_hz != target_hz:
            sig = resample(sig, target_hz)
        sta, strt = score_signal(sig, params)
        return FileScore(dataset, class_name, label, sta.score, strt.score)
    except Exception as exc:  # per-file failures are reported, not raised
        return FileScore(dataset, class_name, label, error=f"{type(exc).__name__}: {exc}")


def batch_score(manifest, params: StaTSParams = StaTSParams(), *, dataset: Optional[str] = None,
                workers: int = 1, target_hz: Optional[int] = 32000) -> ScoreReport:
    """Score every file in ``manifest``; unreadable files become error rows.

    Results keep manifest order regardless of ``workers``. Inputs at other
    rates are resampled to ``target_hz`` first (``None`` disables this).
    """
    jobs = []
    for row in manifest.rows:
        name = dataset if dataset is not None else row.kind
        jobs.append((str(manifest.resolve(row)), name, row.class_name, row.path, params, target_hz))
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            files = list(pool.map(_score_path, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        files = [_score_path(j) for j in jobs]
    return ScoreReport(files)
