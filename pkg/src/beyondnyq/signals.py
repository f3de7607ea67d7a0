"""Time-series containers, excitation signals, and spectral evaluation.

The identification problem pairs a fast-rate input (period ``T_h``) with a
slow-rate output (period ``T_l = F * T_h``), so two container types carry the
sampling metadata around: :class:`FastSignal` and :class:`SlowSignal`.  All
values are immutable after construction and safe to share across threads.

Frequencies are angular (rad/s) throughout.  The DFT follows the unnormalized
convention ``X(k) = sum_t x(t) exp(-j 2 pi k t / N)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "FastSignal",
    "SlowSignal",
    "FirModel",
    "FrfSample",
    "downsample",
    "random_multisine",
    "random_noise",
    "fir_frf",
    "dft",
    "snr_variance_ratio",
    "full_band",
    "read_signal_csv",
    "write_signal_csv",
]


def _frozen_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FastSignal:
    """Uniformly sampled real signal at the fast period ``T_h``.

    Attributes:
        samples: signal values, length ``N >= 1``, all finite.
        period: sampling period in seconds, strictly positive.
    """

    samples: np.ndarray
    period: float

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen_array(self.samples, "samples"))
        if not (self.period > 0):
            raise ValueError(f"period must be positive, got {self.period}")

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class SlowSignal:
    """Uniformly sampled real signal at the slow period ``T_l = factor * T_h``.

    Attributes:
        samples: signal values, length ``M >= 1``, all finite.
        period: slow sampling period ``T_l`` in seconds.
        factor: integer downsampling factor ``F >= 1`` relative to the fast rate.
    """

    samples: np.ndarray
    period: float
    factor: int

    def __post_init__(self):
        object.__setattr__(self, "samples", _frozen_array(self.samples, "samples"))
        if not (self.period > 0):
            raise ValueError(f"period must be positive, got {self.period}")
        if int(self.factor) != self.factor or self.factor < 1:
            raise ValueError(f"factor must be a positive integer, got {self.factor}")
        object.__setattr__(self, "factor", int(self.factor))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def fast_period(self) -> float:
        """The underlying fast-rate period ``T_l / F``."""
        return self.period / self.factor


@dataclass(frozen=True)
class FirModel:
    """Finite impulse response model: ``P`` coefficients at the fast period."""

    theta: np.ndarray
    period: float

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen_array(self.theta, "theta"))
        if not (self.period > 0):
            raise ValueError(f"period must be positive, got {self.period}")

    @property
    def order(self) -> int:
        return self.theta.size


@dataclass(frozen=True)
class FrfSample:
    """One frequency-response value at angular frequency ``omega`` (rad/s)."""

    omega: float
    value: complex

    def __post_init__(self):
        if not (self.omega >= 0):
            raise ValueError(f"omega must be nonnegative, got {self.omega}")


def downsample(x: FastSignal | SlowSignal, factor: int) -> SlowSignal:
    """Keep every ``factor``-th sample of ``x`` (an ideal decimator).

    Sample ``m`` of the output equals sample ``m * factor`` of the input, so the
    output has ``floor((N - 1) / factor) + 1`` samples and sample 0 is always
    retained.  Downsampling a :class:`SlowSignal` compounds the factors.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"downsampling factor must be a positive integer, got {factor}")
    factor = int(factor)
    base_factor = x.factor if isinstance(x, SlowSignal) else 1
    return SlowSignal(
        samples=x.samples[::factor],
        period=x.period * factor,
        factor=base_factor * factor,
    )


def full_band(n_samples: int) -> tuple[int, int]:
    """Default excitation band: every DFT bin strictly below Nyquist.

    For even ``N`` the Nyquist bin ``N/2`` is excluded because a random-phase
    cosine there does not keep a flat amplitude spectrum.
    """
    hi = (n_samples - 1) // 2
    if hi < 1:
        raise ValueError(f"need at least 3 samples for a non-empty band, got {n_samples}")
    return (1, hi)


def random_multisine(
    n_samples: int,
    period: float,
    band: tuple[int, int] | None = None,
    rms: float = 1.0,
    seed: int = 0,
) -> FastSignal:
    """Random-phase multisine with a flat amplitude spectrum on ``band``.

    The signal is a sum of equal-amplitude cosines on the DFT bins
    ``band[0] .. band[1]`` (inclusive), each with an independent uniform phase
    in ``[0, 2 pi)``, rescaled so the sample RMS equals ``rms`` exactly.
    Bin ``k`` sits at angular frequency ``2 pi k / (N * period)``.

    If the band includes the Nyquist bin ``N/2`` (even ``N``), that component
    gets a random sign instead of a continuous phase, since only the cosine
    part survives sampling there.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if not (rms > 0):
        raise ValueError(f"rms must be positive, got {rms}")
    if band is None:
        band = full_band(n_samples)
    lo, hi = int(band[0]), int(band[1])
    if lo > hi:
        raise ValueError(f"empty excitation band {band}")
    if lo < 1 or hi > n_samples // 2:
        raise ValueError(f"band {band} outside the admissible range [1, {n_samples // 2}]")

    rng = np.random.Generator(np.random.PCG64(seed))
    bins = np.arange(lo, hi + 1)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=bins.size)
    at_nyquist = (n_samples % 2 == 0) & (bins == n_samples // 2)
    phases[at_nyquist] = np.where(rng.random(np.count_nonzero(at_nyquist)) < 0.5, 0.0, np.pi)

    t = np.arange(n_samples)
    x = np.cos(2.0 * np.pi * np.outer(bins, t) / n_samples + phases[:, None]).sum(axis=0)
    x *= rms / np.sqrt(np.mean(x**2))
    return FastSignal(samples=x, period=period)


def random_noise(n_samples: int, period: float, rms: float, seed: int = 0) -> FastSignal:
    """I.i.d. zero-mean Gaussian samples with standard deviation ``rms``."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if not (rms > 0):
        raise ValueError(f"rms must be positive, got {rms}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return FastSignal(samples=rng.normal(0.0, rms, size=n_samples), period=period)


def fir_frf(model: FirModel, omegas: Sequence[float]) -> list[FrfSample]:
    """Frequency response ``sum_i theta_i exp(-j w T_h i)`` at each ``w``.

    Valid at any frequency, including above the Nyquist frequency of a
    slow-rate output sampler; the response is ``2 pi / T_h``-periodic.
    """
    w = np.asarray(omegas, dtype=float)
    i = np.arange(model.order)
    values = np.exp(-1j * np.outer(w, i) * model.period) @ model.theta
    return [FrfSample(float(wk), complex(vk)) for wk, vk in zip(w, values)]


def dft(x: FastSignal | SlowSignal | Sequence[float]) -> np.ndarray:
    """Unnormalized DFT ``X(k) = sum_t x(t) exp(-j 2 pi k t / N)``, k = 0..N-1."""
    samples = x.samples if isinstance(x, (FastSignal, SlowSignal)) else np.asarray(x, dtype=float)
    if samples.size < 1:
        raise ValueError("dft needs at least one sample")
    return np.fft.fft(samples)


def snr_variance_ratio(y: FastSignal, e: FastSignal) -> float:
    """Signal-to-noise ratio as the population-variance ratio var(y) / var(e)."""
    if len(y) != len(e):
        raise ValueError(f"signals must have equal length, got {len(y)} and {len(e)}")
    if len(y) < 2:
        raise ValueError("need at least 2 samples to estimate variances")
    var_e = float(np.var(e.samples))
    if var_e == 0.0:
        raise ValueError("noise variance is zero; the ratio is undefined")
    return float(np.var(y.samples)) / var_e


def write_signal_csv(x: FastSignal | SlowSignal, path: str | Path) -> None:
    """Write samples as ``index,value`` rows; the period travels in the config."""
    lines = ["index,value"]
    lines += [f"{i},{v:.17g}" for i, v in enumerate(x.samples)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_signal_csv(path: str | Path) -> np.ndarray:
    """Read a ``index,value`` CSV written by :func:`write_signal_csv`."""
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0].strip() != "index,value":
        raise ValueError(f"{path}: expected header 'index,value'")
    values = []
    for lineno, line in enumerate(text[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected two columns, got {line!r}")
        values.append(float(parts[1]))
    if not values:
        raise ValueError(f"{path}: no samples")
    return np.asarray(values)
