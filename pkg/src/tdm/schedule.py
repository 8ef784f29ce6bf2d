"""Cosine noise schedule giving signal/noise coefficients per timestep."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

GAMMA_SQ_FLOOR = 1e-5


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step ``(gamma_t, sigma_t)`` for ``t = 0..T`` with ``gamma^2 + sigma^2 = 1``."""

    T: int
    gamma: np.ndarray
    sigma: np.ndarray
    s: float = 0.008

    def lookup(self, t: int) -> Tuple[float, float]:
        return lookup(self, t)


def cosine_schedule(T: int = 1000, s: float = 0.008) -> NoiseSchedule:
    """Squared-cosine cumulative schedule.

    ``gamma_t^2 = f(t) / f(0)`` with ``f(t) = cos^2((t/T + s) / (1 + s) * pi/2)``,
    floored at ``1e-5`` so the last step keeps a sliver of signal.
    """
    if not isinstance(T, (int, np.integer)) or isinstance(T, bool) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not s > 0:
        raise ValueError(f"offset s must be positive, got {s!r}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos((t / T + s) / (1.0 + s) * (math.pi / 2.0)) ** 2
    gamma_sq = np.clip(f / f[0], GAMMA_SQ_FLOOR, 1.0)
    gamma_sq = np.minimum.accumulate(gamma_sq)
    gamma = np.sqrt(gamma_sq)
    sigma = np.sqrt(1.0 - gamma * gamma)
    gamma.setflags(write=False)
    sigma.setflags(write=False)
    return NoiseSchedule(int(T), gamma, sigma, float(s))


def lookup(sched: NoiseSchedule, t: int) -> Tuple[float, float]:
    if isinstance(t, bool) or int(t) != t or not 0 <= t <= sched.T:
        raise IndexError(f"timestep {t!r} outside [0, {sched.T}]")
    t = int(t)
    return float(sched.gamma[t]), float(sched.sigma[t])
