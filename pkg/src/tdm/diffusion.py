"""Forward noising and the predict-clean / re-noise sampling loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Sequence

import numpy as np

from .schedule import NoiseSchedule, lookup
from .skeleton import PoseSequence

logger = logging.getLogger(__name__)

FRESH = "fresh"
DETERMINISTIC = "deterministic"
NOISE_MODES = (FRESH, DETERMINISTIC)

# (p_t, t, condition, mask) -> predicted clean pose, frames x joints x 3
Denoiser = Callable[[np.ndarray, int, Any, np.ndarray], np.ndarray]


class SamplingError(RuntimeError):
    pass


def forward_noise(p0: PoseSequence, t: int, eps: np.ndarray, sched: NoiseSchedule) -> PoseSequence:
    """``p_t = gamma_t * p0 + sigma_t * eps`` on valid frames; masked frames pass through."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != p0.coords.shape:
        raise ValueError(f"noise shape {eps.shape} does not match pose shape {p0.coords.shape}")
    gamma, sigma = lookup(sched, t)
    noisy = gamma * p0.coords + sigma * eps
    if not p0.mask.all():
        noisy[~p0.mask] = p0.coords[~p0.mask]
    return PoseSequence(noisy, p0.mask.copy())


def recover_clean(p_t: PoseSequence, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Algebraic inverse of :func:`forward_noise` given the noise that was used."""
    gamma, sigma = lookup(sched, t)
    out = (p_t.coords - sigma * np.asarray(eps)) / gamma
    out[~p_t.mask] = p_t.coords[~p_t.mask]
    return out


def make_timestep_subsequence(T: int, i: int) -> List[int]:
    """``i`` uniformly strided timesteps ``round(T * (i - k) / i)`` for ``k = 0..i-1``."""
    if not 1 <= i <= T:
        raise ValueError(f"inference iterations must lie in [1, {T}], got {i}")
    # round half up in exact integer arithmetic
    return [(2 * T * (i - k) + i) // (2 * i) for k in range(i)]


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 5
    noise_mode: str = FRESH
    timesteps: Optional[Sequence[int]] = None

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be positive, got {self.iterations}")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}, got {self.noise_mode!r}")
        if self.timesteps is not None:
            object.__setattr__(self, "timesteps", tuple(int(t) for t in self.timesteps))

    def resolve(self, T: int) -> List[int]:
        if self.timesteps is None:
            return make_timestep_subsequence(T, self.iterations)
        steps = list(self.timesteps)
        if len(steps) != self.iterations:
            raise ValueError(f"{len(steps)} timesteps given for {self.iterations} iterations")
        if steps[0] != T:
            raise ValueError(f"timestep subsequence must start at T={T}, got {steps[0]}")
        if any(b >= a for a, b in zip(steps, steps[1:])) or steps[-1] <= 0:
            raise ValueError(f"timestep subsequence must strictly decrease and stay positive: {steps}")
        return steps


def sample(
    denoiser: Denoiser,
    condition: Any,
    frame_count: int,
    num_joints: int,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    mask: Optional[np.ndarray] = None,
) -> PoseSequence:
    """Generate a pose sequence by repeated clean prediction and re-noising.

    Starts from standard Gaussian noise at ``t = T``. At each scheduled step the
    denoiser predicts the clean sequence, which is re-noised to the next
    timestep with fresh Gaussian noise (or none in deterministic mode). The last
    clean prediction is returned. Frames with ``mask == False`` stay zero.
    """
    if frame_count < 1:
        raise ValueError(f"frame_count must be >= 1, got {frame_count}")
    mask = np.ones(frame_count, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != (frame_count,):
        raise ValueError(f"mask shape {mask.shape} does not match {frame_count} frames")
    steps = cfg.resolve(sched.T)
    shape = (frame_count, num_joints, 3)

    p_t = rng.standard_normal(shape)
    p_t[~mask] = 0.0
    p0_hat = None
    for k, t in enumerate(steps):
        p0_hat = np.array(denoiser(p_t, t, condition, mask), dtype=np.float64)
        if p0_hat.shape != shape:
            raise SamplingError(f"denoiser returned shape {p0_hat.shape}, expected {shape}")
        if not np.all(np.isfinite(p0_hat)):
            raise SamplingError(f"denoiser produced non-finite output at step {k} (t={t})")
        p0_hat[~mask] = 0.0
        if k + 1 < len(steps):
            gamma, sigma = lookup(sched, steps[k + 1])
            if cfg.noise_mode == FRESH:
                p_t = gamma * p0_hat + sigma * rng.standard_normal(shape)
            else:
                p_t = gamma * p0_hat
            p_t[~mask] = 0.0
    return PoseSequence(p0_hat, mask)
