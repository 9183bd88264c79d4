"""Domain types, seeded sampling of the amplitude distributions, and blend weights."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

ArrayLike = Union[float, np.ndarray]

UINT64_MAX = 2**64 - 1


class ParameterError(ValueError):
    """A distribution or plan parameter is outside its valid domain."""


class ConfigError(ValueError):
    """A synthesis configuration cannot produce a valid signal."""


class DegenerateSignalError(ValueError):
    """The signal has zero variance and a score is undefined."""


@dataclass(frozen=True)
class SignalBuffer:
    """Mono samples plus sample rate.

    ``samples`` is stored as a read-only float64 array.
    """

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        data = np.array(self.samples, dtype=np.float64).reshape(-1)
        if int(self.sample_rate_hz) != self.sample_rate_hz or self.sample_rate_hz <= 0:
            raise ParameterError(f"sample_rate_hz must be a positive integer, got {self.sample_rate_hz!r}")
        if not np.all(np.isfinite(data)):
            raise ParameterError("samples contain NaN or Inf")
        data.flags.writeable = False
        object.__setattr__(self, "samples", data)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class AmplitudeModel:
    rayleigh_sigma: float = 0.5
    k_shape: float = 1.5
    k_scale: float = 0.4
    p_rayleigh: float = 0.5

    def __post_init__(self):
        for name in ("rayleigh_sigma", "k_shape", "k_scale"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if not 0.0 <= self.p_rayleigh <= 1.0:
            raise ParameterError(f"p_rayleigh must lie in [0, 1], got {self.p_rayleigh!r}")


@dataclass(frozen=True)
class BlendPlan:
    """Center and width (seconds) of the Gaussian transition weight."""

    center_s: float = 2.5
    width_s: float = 0.75

    def __post_init__(self):
        if not self.width_s > 0:
            raise ParameterError(f"width_s must be > 0, got {self.width_s!r}")


@dataclass(frozen=True)
class ModulationPlan:
    depth: float = 0.2
    rate_hz: float = 2.0

    def __post_init__(self):
        if self.depth < 0:
            raise ParameterError(f"modulation depth must be >= 0, got {self.depth!r}")
        if not self.rate_hz > 0:
            raise ParameterError(f"modulation rate_hz must be > 0, got {self.rate_hz!r}")


@dataclass(frozen=True)
class HarmonicPlan:
    base_hz: float
    jitter_hz: float = 50.0
    n_harmonics: int = 3

    def __post_init__(self):
        if not self.base_hz > 0:
            raise ParameterError(f"base_hz must be > 0, got {self.base_hz!r}")
        if self.jitter_hz < 0:
            raise ParameterError(f"jitter_hz must be >= 0, got {self.jitter_hz!r}")
        if self.n_harmonics < 1:
            raise ParameterError(f"n_harmonics must be >= 1, got {self.n_harmonics!r}")

    def max_frequency(self) -> float:
        return self.n_harmonics * self.base_hz + self.jitter_hz

    def realize(self, rng: "RngHandle") -> np.ndarray:
        """Draw ``f_k = k * base_hz + delta_k`` with ``delta_k ~ U[-jitter, jitter]``."""
        k = np.arange(1, self.n_harmonics + 1, dtype=np.float64)
        delta = rng.generator.uniform(-self.jitter_hz, self.jitter_hz, size=self.n_harmonics)
        return k * self.base_hz + delta


@dataclass(frozen=True)
class NoiseModel:
    """Colored background noise plus sparse impulsive bursts.

    ``level`` is the RMS of the colored component; impulses arrive as a
    Poisson process with ``impulse_rate_per_s`` and amplitudes drawn
    uniformly from ``impulse_amp_range`` with a random sign.
    """

    level: float = 0.008
    impulse_rate_per_s: float = 2.0
    impulse_amp_range: tuple = (0.02, 0.06)
    spectral_slope: float = 1.0
    impulse_width: tuple = (1, 3)

    def __post_init__(self):
        if self.level < 0:
            raise ParameterError(f"noise level must be >= 0, got {self.level!r}")
        if self.impulse_rate_per_s < 0:
            raise ParameterError(f"impulse_rate_per_s must be >= 0, got {self.impulse_rate_per_s!r}")
        lo, hi = self.impulse_amp_range
        if lo < 0 or hi < lo:
            raise ParameterError(f"impulse_amp_range must satisfy 0 <= lo <= hi, got {self.impulse_amp_range!r}")
        w_lo, w_hi = self.impulse_width
        if w_lo < 1 or w_hi < w_lo:
            raise ParameterError(f"impulse_width must satisfy 1 <= lo <= hi, got {self.impulse_width!r}")
        object.__setattr__(self, "impulse_amp_range", (float(lo), float(hi)))
        object.__setattr__(self, "impulse_width", (int(w_lo), int(w_hi)))


@dataclass
class RngHandle:
    """Seeded generator built on the counter-based Philox4x64 bit generator.

    Philox output is defined by (key, counter) alone, so a given seed yields
    the same stream on every platform. Not safe to share between threads.
    """

    seed: int
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) <= UINT64_MAX:
            raise ParameterError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        self.seed = int(self.seed)
        bitgen = np.random.Philox(np.random.SeedSequence(self.seed))
        self.generator = np.random.Generator(bitgen)


def derive_seed(master_seed: int, *path: int) -> int:
    """Mix ``master_seed`` with integer indices into a child 64-bit seed."""
    ss = np.random.SeedSequence([int(master_seed), *(int(p) for p in path)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_rayleigh(sigma: float, rng: RngHandle, size: Optional[Union[int, Sequence[int]]] = None) -> ArrayLike:
    """Draw Rayleigh amplitudes with scale ``sigma``.

    Density is ``(x / sigma**2) * exp(-x**2 / (2 sigma**2))``. Draws are
    strictly positive: a zero from the underlying exponential is replaced by
    the smallest positive float.
    """
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma!r}")
    x = sigma * np.sqrt(2.0 * rng.generator.standard_exponential(size))
    return np.maximum(x, np.finfo(np.float64).tiny) if size is not None else float(max(x, np.finfo(np.float64).tiny))


def sample_k(k_shape: float, k_scale: float, rng: RngHandle,
             size: Optional[Union[int, Sequence[int]]] = None) -> ArrayLike:
    """Draw K-distributed amplitudes as Gamma texture times Rayleigh speckle.

    ``z ~ Gamma(k_shape, k_scale)`` then ``x ~ Rayleigh(sqrt(z / 2))``, so that
    ``E[x**2] = E[z] = k_shape * k_scale``.
    """
    if not k_shape > 0 or not k_scale > 0:
        raise ParameterError(f"k_shape and k_scale must be > 0, got {k_shape!r}, {k_scale!r}")
    z = rng.generator.gamma(k_shape, k_scale, size)
    speckle = np.sqrt(2.0 * rng.generator.standard_exponential(size))
    x = np.sqrt(z / 2.0) * speckle
    tiny = np.finfo(np.float64).tiny
    return np.maximum(x, tiny) if size is not None else float(max(x, tiny))


def sample_amplitude(model: AmplitudeModel, rng: RngHandle, size: int) -> np.ndarray:
    """Per-draw mixture: Rayleigh with probability ``p_rayleigh``, else K."""
    use_rayleigh = rng.generator.random(size) < model.p_rayleigh
    ray = sample_rayleigh(model.rayleigh_sigma, rng, size)
    kd = sample_k(model.k_shape, model.k_scale, rng, size)
    return np.where(use_rayleigh, ray, kd)


def blend_weight(t_s: ArrayLike, plan: BlendPlan) -> ArrayLike:
    """Gaussian transition weight ``exp(-(t - center)**2 / (2 width**2))``."""
    d = np.asarray(t_s, dtype=np.float64) - plan.center_s
    w = np.exp(-(d * d) / (2.0 * plan.width_s * plan.width_s))
    return float(w) if np.ndim(w) == 0 else w
