"""Inlet mass-flow waveforms: sampling, derivatives, CSV I/O.

A waveform is one cardiac cycle of inlet mass flow g(t) (mL/s) sampled at
T uniform timesteps t_k = k * period / T. Derivatives use central
differences with periodic wraparound; waveforms built from an analytic
template keep a reference to it so downstream code can evaluate exact
derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

__all__ = [
    "Waveform",
    "TwoGaussianWaveform",
    "waveform_derivatives",
    "load_waveform_csv",
    "save_waveform_csv",
]


@dataclass(frozen=True)
class TwoGaussianWaveform:
    """Systole/diastole template: baseline plus two periodic Gaussian pulses.

    Times are in seconds, amplitudes in mL/s. Evaluation wraps each pulse
    periodically so value/derivative are smooth across the cycle seam.
    """

    period: float = 1.0
    base: float = 1.0
    sys_amp: float = 5.0
    sys_time: float = 0.18
    sys_width: float = 0.06
    dia_amp: float = 1.6
    dia_time: float = 0.55
    dia_width: float = 0.12

    def _wrap(self, t: np.ndarray, center: float) -> np.ndarray:
        return (t - center + 0.5 * self.period) % self.period - 0.5 * self.period

    def value(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        ds = self._wrap(t, self.sys_time)
        dd = self._wrap(t, self.dia_time)
        return (
            self.base
            + self.sys_amp * np.exp(-0.5 * (ds / self.sys_width) ** 2)
            + self.dia_amp * np.exp(-0.5 * (dd / self.dia_width) ** 2)
        )

    def derivative(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        ds = self._wrap(t, self.sys_time)
        dd = self._wrap(t, self.dia_time)
        gs = self.sys_amp * np.exp(-0.5 * (ds / self.sys_width) ** 2)
        gd = self.dia_amp * np.exp(-0.5 * (dd / self.dia_width) ** 2)
        return -ds / self.sys_width**2 * gs - dd / self.dia_width**2 * gd

    def peak(self, n_grid: int = 4096) -> float:
        """Peak |g| over one cycle, from a dense grid."""
        t = np.arange(n_grid) * (self.period / n_grid)
        return float(np.abs(self.value(t)).max())

    def cycle_mean(self, n_grid: int = 4096) -> float:
        t = np.arange(n_grid) * (self.period / n_grid)
        return float(self.value(t).mean())

    def sample(self, n_samples: int) -> "Waveform":
        t = np.arange(n_samples) * (self.period / n_samples)
        return Waveform(self.value(t), self.period, template=self)


@dataclass(frozen=True)
class Waveform:
    """Sampled inlet mass flow over one cycle."""

    samples: np.ndarray  # (T,) mL/s at t_k = k * period / T
    period: float  # s
    template: TwoGaussianWaveform | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "samples", np.ascontiguousarray(self.samples, dtype=np.float64)
        )
        if self.samples.ndim != 1 or len(self.samples) < 8:
            raise ValidationError(
                f"waveform needs >= 8 uniform samples, got shape {self.samples.shape}"
            )
        if not np.isfinite(self.samples).all():
            raise ValidationError("waveform samples must be finite")
        if not (self.period > 0 and math.isfinite(self.period)):
            raise ValidationError(f"period must be positive and finite, got {self.period}")

    @property
    def n_samples(self) -> int:
        return len(self.samples)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * (self.period / self.n_samples)

    @classmethod
    def constant(cls, value: float, n_samples: int = 8, period: float = 1.0) -> "Waveform":
        return cls(np.full(n_samples, float(value)), period)


def waveform_derivatives(w: Waveform, k: int) -> np.ndarray:
    """Stack [g, g', ..., g^(k)] of shape (k+1, T), periodic central differences."""
    if k < 0:
        raise ValidationError(f"derivative order must be >= 0, got {k}")
    dt = w.period / w.n_samples
    rows = [w.samples]
    for _ in range(k):
        g = rows[-1]
        rows.append((np.roll(g, -1) - np.roll(g, 1)) / (2.0 * dt))
    return np.stack(rows)


def save_waveform_csv(path, w: Waveform) -> None:
    lines = ["t,g"]
    for t, g in zip(w.times, w.samples):
        lines.append(f"{t:.12g},{g:.12g}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_waveform_csv(path) -> Waveform:
    """Read `t,g` rows; T from the row count, period from the time grid.

    Rows hold one uniform cycle t_k = k * P / T, so the period is
    max(t) plus one sample spacing.
    """
    text = Path(path).read_text().strip().splitlines()
    if not text or text[0].strip().lower() != "t,g":
        raise ValidationError(f"{path}: expected header 't,g'")
    ts, gs = [], []
    for lineno, line in enumerate(text[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2:
            raise ValidationError(f"{path}:{lineno}: expected two comma-separated values")
        try:
            ts.append(float(parts[0]))
            gs.append(float(parts[1]))
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: bad number") from exc
    t = np.asarray(ts)
    if len(t) < 2:
        raise ValidationError(f"{path}: need at least 2 samples")
    spacing = np.diff(t)
    if not np.allclose(spacing, spacing[0], rtol=1e-6, atol=1e-12):
        raise ValidationError(f"{path}: time grid is not uniform")
    return Waveform(np.asarray(gs), float(t.max() + spacing[0]))
