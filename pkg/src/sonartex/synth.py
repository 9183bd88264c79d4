"""Synthetic vessel-like signals with controlled statistical / structural texture.

Three dataset kinds are produced:

* ``statistical`` - three tones whose envelopes are redrawn every short
  segment from a Rayleigh/K mixture, joined by raised-cosine cross-fades,
  plus colored noise with impulsive bursts.
* ``structural`` - three jittered harmonics of a class base frequency under a
  deterministic class envelope, plus faint white noise.
* ``mixed`` - four tones whose envelope drifts between Rayleigh and K
  statistics through a Gaussian transition, times a slow sinusoidal
  modulation.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    AmplitudeModel,
    BlendPlan,
    ConfigError,
    HarmonicPlan,
    ModulationPlan,
    NoiseModel,
    RngHandle,
    SignalBuffer,
    blend_weight,
    derive_seed,
    sample_amplitude,
    sample_k,
    sample_rayleigh,
)

log = logging.getLogger(__name__)

PEAK_TARGET = 0.99
MOD_DEPTH_RANGE = (0.1, 0.3)
MOD_RATE_RANGES = {"slow": (1.0, 1.7), "fast": (2.3, 3.0)}
BLEND_WIDTH_RANGE_S = (0.5, 1.0)
# Envelope knot spacing. Short enough that the envelope decorrelates within
# the 2-10 ms lags at which the class tone sets realign.
STATISTICAL_SEGMENT_S = 0.001
MIXED_SEGMENT_S = 0.003
STRUCTURAL_NOISE = NoiseModel(level=0.005, impulse_rate_per_s=0.0, spectral_slope=0.0)


class DatasetKind(str, enum.Enum):
    statistical = "statistical"
    structural = "structural"
    mixed = "mixed"


class Transition(str, enum.Enum):
    KtoRayleigh = "KtoRayleigh"
    RayleighToK = "RayleighToK"
    none = "none"


class EnvelopeShape(str, enum.Enum):
    triangular = "triangular"
    exp_decay = "exp_decay"
    plateau = "plateau"
    ramp = "ramp"


@dataclass(frozen=True)
class ClassConfig:
    """Synthesis parameters of one vessel class.

    ``modulation`` and ``blend`` left as None are drawn per sample
    (depth from [0.1, 0.3], rate from the ``modulation_speed`` band, blend
    center in the middle 60 % of the clip, width in [0.5, 1.0] s). For the
    structural kind ``frequencies_hz[0]`` is the harmonic base frequency.
    """

    class_name: str
    frequencies_hz: tuple
    amplitude_transition: Transition = Transition.none
    modulation: Optional[ModulationPlan] = None
    modulation_speed: str = "slow"
    envelope_shape: EnvelopeShape = EnvelopeShape.triangular
    noise: NoiseModel = field(default_factory=NoiseModel)
    amplitude_model: AmplitudeModel = field(default_factory=AmplitudeModel)
    blend: Optional[BlendPlan] = None
    segment_s: float = 0.05
    jitter_hz: float = 50.0
    n_harmonics: int = 3

    def __post_init__(self):
        object.__setattr__(self, "frequencies_hz", tuple(float(f) for f in self.frequencies_hz))
        object.__setattr__(self, "amplitude_transition", Transition(self.amplitude_transition))
        object.__setattr__(self, "envelope_shape", EnvelopeShape(self.envelope_shape))
        if not self.frequencies_hz or any(f <= 0 for f in self.frequencies_hz):
            raise ConfigError(f"class {self.class_name!r}: frequencies must be positive and non-empty")
        if self.modulation_speed not in MOD_RATE_RANGES:
            raise ConfigError(f"class {self.class_name!r}: modulation_speed must be one of {sorted(MOD_RATE_RANGES)}")
        if not self.segment_s > 0:
            raise ConfigError(f"class {self.class_name!r}: segment_s must be > 0")

    def max_frequency(self, kind: "DatasetKind") -> float:
        if DatasetKind(kind) is DatasetKind.structural:
            return HarmonicPlan(self.frequencies_hz[0], self.jitter_hz, self.n_harmonics).max_frequency()
        return max(self.frequencies_hz)


@dataclass(frozen=True)
class DatasetSpec:
    kind: DatasetKind
    classes: tuple
    samples_per_class: int = 10000
    duration_s: float = 5.0
    sample_rate_hz: int = 32000
    master_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", DatasetKind(self.kind))
        object.__setattr__(self, "classes", tuple(self.classes))
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be >= 1")
        if not self.duration_s > 0:
            raise ConfigError("duration_s must be > 0")
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample_rate_hz must be > 0")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        for cfg in self.classes:
            validate_class(cfg, self)

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sample_rate_hz))

    @property
    def total_samples(self) -> int:
        return len(self.classes) * self.samples_per_class

    def sample_seed(self, class_index: int, sample_index: int) -> int:
        return derive_seed(self.master_seed, class_index, sample_index)


def validate_class(cfg: ClassConfig, spec: DatasetSpec) -> None:
    nyquist = spec.sample_rate_hz / 2.0
    top = cfg.max_frequency(spec.kind)
    if top >= nyquist:
        raise ConfigError(
            f"class {cfg.class_name!r}: highest frequency {top:g} Hz is not below Nyquist ({nyquist:g} Hz)")
    if spec.kind is DatasetKind.mixed and cfg.amplitude_transition is Transition.none:
        raise ConfigError(f"class {cfg.class_name!r}: mixed datasets need a KtoRayleigh or RayleighToK transition")


def _time_axis(spec: DatasetSpec) -> np.ndarray:
    return np.arange(spec.n_samples, dtype=np.float64) / spec.sample_rate_hz


def _tones(freqs, amps, t: np.ndarray, rng: RngHandle) -> np.ndarray:
    """Rows of ``amp_k(t) * sin(2 pi f_k t + phase_k)`` with random phases."""
    phases = rng.generator.uniform(0.0, 2.0 * np.pi, size=len(freqs))
    out = np.empty((len(freqs), t.size))
    for k, (f, a) in enumerate(zip(freqs, amps)):
        out[k] = a * np.sin(2.0 * np.pi * f * t + phases[k])
    return out


def _peak_normalize(x: np.ndarray) -> np.ndarray:
    peak = np.max(np.abs(x))
    if peak == 0:
        return x
    return x * (PEAK_TARGET / peak)


def crossfade_envelope(knots: np.ndarray, n_samples: int, segment_len: int) -> np.ndarray:
    """Join per-segment values with raised-cosine cross-fades.

    Knot ``j`` sits at sample ``j * segment_len``; the envelope equals the
    knot value there and follows a half-cosine to the next knot.
    """
    knots = np.asarray(knots, dtype=np.float64)
    pos = np.arange(n_samples) / segment_len
    j = np.minimum(pos.astype(np.int64), knots.size - 2)
    u = pos - j
    w = 0.5 * (1.0 - np.cos(np.pi * u))
    return knots[j] + (knots[j + 1] - knots[j]) * w


def _n_knots(n_samples: int, segment_len: int) -> int:
    return int(math.ceil(n_samples / segment_len)) + 1


def _segment_len(cfg: ClassConfig, spec: DatasetSpec) -> int:
    return max(1, int(round(cfg.segment_s * spec.sample_rate_hz)))


def resolve_modulation(cfg: ClassConfig, rng: RngHandle) -> ModulationPlan:
    if cfg.modulation is not None:
        return cfg.modulation
    lo, hi = MOD_RATE_RANGES[cfg.modulation_speed]
    depth = rng.generator.uniform(*MOD_DEPTH_RANGE)
    rate = rng.generator.uniform(lo, hi)
    return ModulationPlan(depth=float(depth), rate_hz=float(rate))


def resolve_blend(cfg: ClassConfig, spec: DatasetSpec, rng: RngHandle) -> BlendPlan:
    if cfg.blend is not None:
        return cfg.blend
    center = rng.generator.uniform(0.2 * spec.duration_s, 0.8 * spec.duration_s)
    width = rng.generator.uniform(*BLEND_WIDTH_RANGE_S)
    return BlendPlan(center_s=float(center), width_s=float(width))


def modulation_factor(t: np.ndarray, plan: ModulationPlan) -> np.ndarray:
    return 1.0 + plan.depth * np.sin(2.0 * np.pi * plan.rate_hz * t)


def gen_background_noise(model: NoiseModel, n_samples: int, sample_rate_hz: int, rng: RngHandle) -> SignalBuffer:
    """Colored Gaussian noise at RMS ``model.level`` plus Poisson-timed bursts.

    Coloring scales the spectrum of white noise by ``f**(-slope / 2)`` so the
    power density falls as ``1 / f**slope``; the DC bin is removed whenever
    ``slope != 0``.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be positive")
    gen = rng.generator
    white = gen.standard_normal(n_samples)
    if model.spectral_slope != 0 and n_samples > 2:
        spec = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n_samples, d=1.0 / sample_rate_hz)
        gain = np.zeros_like(freqs)
        gain[1:] = freqs[1:] ** (-model.spectral_slope / 2.0)
        colored = np.fft.irfft(spec * gain, n_samples)
    else:
        colored = white
    rms = math.sqrt(float(np.mean(colored * colored)))
    out = colored * (model.level / rms) if rms > 0 else np.zeros(n_samples)

    n_impulses = int(gen.poisson(model.impulse_rate_per_s * n_samples / sample_rate_hz)) \
        if model.impulse_rate_per_s > 0 else 0
    if n_impulses:
        starts = gen.integers(0, n_samples, size=n_impulses)
        amps = gen.uniform(*model.impulse_amp_range, size=n_impulses)
        signs = np.where(gen.random(n_impulses) < 0.5, -1.0, 1.0)
        widths = gen.integers(model.impulse_width[0], model.impulse_width[1] + 1, size=n_impulses)
        for s, a, sg, w in zip(starts, amps, signs, widths):
            out[s:s + w] += sg * a
    return SignalBuffer(out, sample_rate_hz)


def statistical_envelopes(cfg: ClassConfig, spec: DatasetSpec, rng: RngHandle):
    """Per-tone envelopes ``(knots, envelopes)`` for the statistical kind.

    Every knot is an independent Rayleigh/K mixture draw; ``envelopes`` are
    the cross-faded curves before sinusoidal modulation.
    """
    seg = _segment_len(cfg, spec)
    n_knots = _n_knots(spec.n_samples, seg)
    knots = np.stack([sample_amplitude(cfg.amplitude_model, rng, n_knots) for _ in cfg.frequencies_hz])
    env = np.stack([crossfade_envelope(k, spec.n_samples, seg) for k in knots])
    return knots, env


def gen_statistical_sample(cfg: ClassConfig, spec: DatasetSpec, rng: RngHandle) -> SignalBuffer:
    if spec.kind is not DatasetKind.statistical:
        raise ConfigError(f"gen_statistical_sample needs a statistical spec, got {spec.kind.value}")
    if len(cfg.frequencies_hz) != 3:
        raise ConfigError(f"class {cfg.class_name!r}: statistical classes carry 3 frequencies")
    validate_class(cfg, spec)
    t = _time_axis(spec)
    _, env = statistical_envelopes(cfg, spec, rng)
    mod = resolve_modulation(cfg, rng)
    env = env * modulation_factor(t, mod)
    x = _tones(cfg.frequencies_hz, env, t, rng).sum(axis=0)
    x += gen_background_noise(cfg.noise, spec.n_samples, spec.sample_rate_hz, rng).samples
    return SignalBuffer(_peak_normalize(x), spec.sample_rate_hz)


def envelope_template(shape: EnvelopeShape, n_samples: int) -> np.ndarray:
    """Deterministic class envelope over normalized time ``u`` in [0, 1)."""
    u = np.arange(n_samples, dtype=np.float64) / n_samples
    shape = EnvelopeShape(shape)
    if shape is EnvelopeShape.triangular:
        return 1.0 - np.abs(2.0 * u - 1.0)
    if shape is EnvelopeShape.exp_decay:
        return np.exp(-3.0 * u)
    if shape is EnvelopeShape.plateau:
        taper = 0.15
        env = np.ones_like(u)
        rise = u < taper
        fall = u > 1.0 - taper
        env[rise] = 0.5 * (1.0 - np.cos(np.pi * u[rise] / taper))
        env[fall] = 0.5 * (1.0 - np.cos(np.pi * (1.0 - u[fall]) / taper))
        return env
    return 0.1 + 0.9 * u


def gen_structural_sample(cfg: ClassConfig, spec: DatasetSpec, rng: RngHandle,
                          return_frequencies: bool = False):
    if spec.kind is not DatasetKind.structural:
        raise ConfigError(f"gen_structural_sample needs a structural spec, got {spec.kind.value}")
    validate_class(cfg, spec)
    plan = HarmonicPlan(cfg.frequencies_hz[0], cfg.jitter_hz, cfg.n_harmonics)
    freqs = plan.realize(rng)
    t = _time_axis(spec)
    env = envelope_template(cfg.envelope_shape, spec.n_samples)
    weights = 1.0 / np.arange(1, plan.n_harmonics + 1)  # harmonic k weighted 1/k
    x = _tones(freqs, weights, t, rng).sum(axis=0) * env
    x += gen_background_noise(cfg.noise, spec.n_samples, spec.sample_rate_hz, rng).samples
    out = SignalBuffer(_peak_normalize(x), spec.sample_rate_hz)
    return (out, freqs) if return_frequencies else out


def transition_weight(t: np.ndarray, plan: BlendPlan, transition: Transition) -> np.ndarray:
    """Weight of the Rayleigh envelope over time.

    The Gaussian weight is held at 1 on the Rayleigh side of the center, so
    ``KtoRayleigh`` starts K-dominated and ends Rayleigh, and vice versa.
    """
    w = np.asarray(blend_weight(t, plan), dtype=np.float64)
    transition = Transition(transition)
    if transition is Transition.KtoRayleigh:
        return np.where(t >= plan.center_s, 1.0, w)
    if transition is Transition.RayleighToK:
        return np.where(t <= plan.center_s, 1.0, w)
    raise ConfigError("a Rayleigh/K transition direction is required")


def mixed_envelopes(cfg: ClassConfig, spec: DatasetSpec, rng: RngHandle):
    """``(alpha, envelope, modulation)`` for every tone of a mixed sample.

    ``alpha`` blends smooth Rayleigh and K envelopes; ``envelope`` is
    ``alpha * (1 + depth * sin(2 pi rate t))``.
    """
    t = _time_axis(spec)
    seg = _segment_len(cfg, spec)
    n_knots = _n_knots(spec.n_samples, seg)
    am = cfg.amplitude_model
    n_tones = len(cfg.frequencies_hz)
    ray = np.stack([crossfade_envelope(sample_rayleigh(am.rayleigh_sigma, rng, n_knots), spec.n_samples, seg)
                    for _ in range(n_tones)])
    kd = np.stack([crossfade_envelope(sample_k(am.k_shape, am.k_scale, rng, n_knots), spec.n_samples, seg)
                   for _ in range(n_tones)])
    blend = resolve_blend(cfg, spec, rng)
    w = transition_weight(t, blend, cfg.amplitude_transition)
    alpha = w * ray + (1.0 - w) * kd
    mod = resolve_modulation(cfg, rng)
    return alpha, alpha * modulation_factor(t, mod), mod


def gen_mixed_sample(cfg: ClassConfig, spec: DatasetSpec, rng: RngHandle) -> SignalBuffer:
    if spec.kind is not DatasetKind.mixed:
        raise ConfigError(f"gen_mixed_sample needs a mixed spec, got {spec.kind.value}")
    if len(cfg.frequencies_hz) != 4:
        raise ConfigError(f"class {cfg.class_name!r}: mixed classes carry 4 frequencies")
    validate_class(cfg, spec)
    t = _time_axis(spec)
    _, env, _ = mixed_envelopes(cfg, spec, rng)
    x = _tones(cfg.frequencies_hz, env, t, rng).sum(axis=0)
    x += gen_background_noise(cfg.noise, spec.n_samples, spec.sample_rate_hz, rng).samples
    return SignalBuffer(_peak_normalize(x), spec.sample_rate_hz)


GENERATORS = {
    DatasetKind.statistical: gen_statistical_sample,
    DatasetKind.structural: gen_structural_sample,
    DatasetKind.mixed: gen_mixed_sample,
}


def generate_sample(spec: DatasetSpec, class_index: int, sample_index: int) -> SignalBuffer:
    """The deterministic sample ``(class_index, sample_index)`` of ``spec``."""
    rng = RngHandle(spec.sample_seed(class_index, sample_index))
    return GENERATORS[spec.kind](spec.classes[class_index], spec, rng)


# Default class tables -------------------------------------------------------

def _khz(*values):
    return tuple(v * 1000.0 for v in values)


def default_classes(kind) -> tuple:
    kind = DatasetKind(kind)
    if kind is DatasetKind.statistical:
        freq_sets = [_khz(2.2, 3.5, 5.0), _khz(3.5, 5.0, 6.5), _khz(5.0, 6.5, 9.0), _khz(6.5, 9.0, 10.5)]
        speeds = ["slow", "slow", "fast", "fast"]
        return tuple(
            ClassConfig(f"Class {i + 1}", f, modulation_speed=s, segment_s=STATISTICAL_SEGMENT_S)
            for i, (f, s) in enumerate(zip(freq_sets, speeds)))
    if kind is DatasetKind.structural:
        bases = [2200.0, 3000.0, 4500.0, 5000.0]
        shapes = list(EnvelopeShape)
        return tuple(
            ClassConfig(f"Class {i + 1}", (b,), envelope_shape=s, noise=STRUCTURAL_NOISE)
            for i, (b, s) in enumerate(zip(bases, shapes)))
    rows = [
        ("Vessel 1", _khz(2.2, 3.5, 5.0, 6.5), Transition.KtoRayleigh, "slow"),
        ("Vessel 2", _khz(3.0, 4.5, 6.0, 7.0), Transition.RayleighToK, "slow"),
        ("Vessel 3", _khz(9.0, 10.5, 12.0, 13.0), Transition.RayleighToK, "fast"),
        ("Vessel 4", _khz(10.0, 11.5, 13.0, 14.0), Transition.KtoRayleigh, "fast"),
    ]
    return tuple(
        ClassConfig(name, f, amplitude_transition=tr, modulation_speed=sp, segment_s=MIXED_SEGMENT_S)
        for name, f, tr, sp in rows)


def default_spec(kind, samples_per_class: int = 10000, master_seed: int = 0, **overrides) -> DatasetSpec:
    return DatasetSpec(kind=DatasetKind(kind), classes=default_classes(kind),
                       samples_per_class=samples_per_class, master_seed=master_seed, **overrides)


# Dataset generation ---------------------------------------------------------

class DatasetWriteError(OSError):
    """Generation stopped on an I/O failure; ``written`` lists finished files."""

    def __init__(self, message: str, written: list):
        super().__init__(f"{message}; {len(written)} file(s) were written before the failure")
        self.written = written


def sample_relpath(spec: DatasetSpec, class_index: int, sample_index: int) -> str:
    slug = spec.classes[class_index].class_name.strip().lower().replace(" ", "_") or f"class_{class_index}"
    return f"{slug}/{slug}_{sample_index:05d}.wav"


def _write_one(job):
    from .store import write_wav

    spec, out_dir, c, i, wav_format = job
    rel = sample_relpath(spec, c, i)
    dest = Path(out_dir) / rel
    try:
        write_wav(generate_sample(spec, c, i), dest, wav_format)
    except OSError as exc:
        return rel, f"{type(exc).__name__}: {exc}"
    return rel, None


def generate_dataset(spec: DatasetSpec, out_dir, workers: int = 1, wav_format: str = "float32",
                     manifest_name: str = "manifest.csv", progress=None):
    """Write every sample of ``spec`` under ``out_dir`` plus a manifest CSV.

    Files go to ``<class_slug>/<class_slug>_<index>.wav``. Each sample is a
    pure function of ``(master_seed, class index, sample index)``, so output
    bytes do not depend on ``workers``. Manifest rows are class-major and
    use paths relative to ``out_dir``.
    """
    from .store import Manifest, ManifestRow, write_manifest

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for c in range(len(spec.classes)):
        (out_dir / sample_relpath(spec, c, 0)).parent.mkdir(parents=True, exist_ok=True)
    jobs = [(spec, str(out_dir), c, i, wav_format)
            for c in range(len(spec.classes)) for i in range(spec.samples_per_class)]

    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_write_one, jobs, chunksize=max(1, len(jobs) // (8 * workers)))
            results = list(results if progress is None else progress(results, len(jobs)))
    else:
        results = map(_write_one, jobs)
        results = list(results if progress is None else progress(results, len(jobs)))

    written = [rel for rel, err in results if err is None]
    failed = [(rel, err) for rel, err in results if err is not None]
    if failed:
        rel, err = failed[0]
        raise DatasetWriteError(f"could not write {rel}: {err} ({len(failed)} failure(s) in total)",
                                [str(out_dir / r) for r in written])

    rows = [
        ManifestRow(path=sample_relpath(spec, c, i), class_name=spec.classes[c].class_name,
                    seed=spec.sample_seed(c, i), kind=spec.kind.value, duration_s=spec.n_samples / spec.sample_rate_hz,
                    sample_rate_hz=spec.sample_rate_hz)
        for c in range(len(spec.classes)) for i in range(spec.samples_per_class)
    ]
    manifest = Manifest(rows, root=out_dir)
    write_manifest(manifest, out_dir / manifest_name)
    return manifest
