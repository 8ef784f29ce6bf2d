"""Adam training loop for the text-conditioned denoiser."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from . import tensor as tn
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data_io import SamplePair
from .denoiser import TextPoseDenoiser
from .diffusion import forward_noise
from .losses import DEFAULT_LAMBDA, total_loss
from .schedule import NoiseSchedule
from .skeleton import SkeletonTopology

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    max_steps: int = 2000
    seed: int = 0
    checkpoint_interval: int = 500
    log_interval: int = 50
    grad_clip: Optional[float] = 1.0
    lambda_bone: float = DEFAULT_LAMBDA

    def __post_init__(self):
        for name in ("learning_rate", "adam_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        for name in ("batch_size", "checkpoint_interval", "log_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive or null")
        if self.lambda_bone < 0:
            raise ValueError("lambda_bone must be non-negative")


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Dict[str, tn.Tensor]) -> "AdamState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()}, 0)


def adam_update(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, step: int,
                cfg: TrainConfig) -> np.ndarray:
    """One bias-corrected Adam step, updating ``m`` and ``v`` in place; ``step`` is 1-based."""
    if param.shape != grad.shape or m.shape != param.shape or v.shape != param.shape:
        raise ValueError(f"adam_update: shape mismatch param {param.shape}, grad {grad.shape}")
    m *= cfg.beta1
    m += (1.0 - cfg.beta1) * grad
    v *= cfg.beta2
    v += (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1 ** step)
    v_hat = v / (1.0 - cfg.beta2 ** step)
    return param - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: Optional[float]) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


class StepResult(NamedTuple):
    joint: float
    bone: float
    total: float
    grad_norm: float


def train_step(batch: Sequence[SamplePair], model: TextPoseDenoiser, adam: AdamState,
               sched: NoiseSchedule, topo: SkeletonTopology, cfg: TrainConfig,
               rng: np.random.Generator) -> StepResult:
    """Noise, denoise, score and update once; parameters and ``adam`` change in place."""
    if not batch:
        raise TrainingError("empty batch")
    params = model.params
    tn.zero_grad(params.values())
    terms = []
    for pair in batch:
        pair.pose.check_topology(topo)
        t = int(rng.integers(1, sched.T + 1))
        eps = rng.standard_normal(pair.pose.coords.shape)
        p_t = forward_noise(pair.pose, t, eps, sched)
        pred = model.forward(p_t.coords, t, pair.tokens, pair.pose.mask, rng)
        terms.append(total_loss(pred, pair.pose, topo, cfg.lambda_bone))
    inv = 1.0 / len(batch)
    loss = tn.scale(sum((lt.total for lt in terms[1:]), terms[0].total), inv)
    joint = sum(lt.joint.item() for lt in terms) * inv
    bone = sum(lt.bone.item() for lt in terms) * inv
    if not math.isfinite(loss.item()):
        raise TrainingError(f"non-finite loss at optimizer step {adam.step + 1}: {loss.item()}")
    loss.backward()

    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    grad_norm = clip_by_global_norm(grads, cfg.grad_clip)
    adam.step += 1
    for k, p in params.items():
        p.data = adam_update(p.data, grads[k], adam.m[k], adam.v[k], adam.step, cfg)
        if not np.all(np.isfinite(p.data)):
            raise TrainingError(f"parameter {k} became non-finite at step {adam.step}")
    return StepResult(joint, bone, loss.item(), grad_norm)


def select_batch(dataset: Sequence[SamplePair], batch_size: int, rng: np.random.Generator):
    if batch_size >= len(dataset):
        return list(dataset)
    idx = rng.choice(len(dataset), size=batch_size, replace=False)
    return [dataset[i] for i in sorted(idx)]


# ---------------------------------------------------------------------------
# full runs


def checkpoint_name(step: int) -> str:
    return f"ckpt_{step:06d}.tdm"


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def write_training_checkpoint(path, model, adam: AdamState, rng, sched: NoiseSchedule,
                              topo: SkeletonTopology, cfg: TrainConfig) -> Path:
    meta = {
        "schedule": {"kind": "cosine", "T": sched.T, "s": sched.s},
        "skeleton": topo.to_dict(),
        "train": {"config": asdict(cfg), "step": adam.step, "rng_state": _rng_state(rng)},
    }
    extra = {f"adam.m/{k}": v for k, v in adam.m.items()}
    extra.update({f"adam.v/{k}": v for k, v in adam.v.items()})
    return save_checkpoint(path, model, meta, extra)


def restore_training_state(ckpt: Checkpoint):
    """Model, Adam state and RNG exactly as saved."""
    model = ckpt.model()
    train = ckpt.meta.get("train")
    if train is None:
        raise TrainingError("checkpoint carries no training state")
    adam = AdamState(step=int(train["step"]))
    for k in model.params:
        try:
            adam.m[k] = ckpt.extra[f"adam.m/{k}"].copy()
            adam.v[k] = ckpt.extra[f"adam.v/{k}"].copy()
        except KeyError as exc:
            raise TrainingError(f"checkpoint lacks optimizer moment {exc}") from exc
    return model, adam, _restore_rng(train["rng_state"])


class TrainingRun(NamedTuple):
    model: TextPoseDenoiser
    history: List[StepResult]
    checkpoints: List[Path]


def run_training(dataset: Sequence[SamplePair], model: TextPoseDenoiser, sched: NoiseSchedule,
                 topo: SkeletonTopology, cfg: TrainConfig, out_dir, resume_from=None,
                 on_step=None) -> TrainingRun:
    """Train to ``cfg.max_steps``, writing checkpoints and a ``metrics.log`` into ``out_dir``.

    A fresh run writes ``ckpt_000000.tdm`` before the first step. Checkpoints are
    written every ``checkpoint_interval`` steps and at the final step; log lines
    every ``log_interval`` steps as ``key=value`` pairs.
    """
    if not dataset:
        raise TrainingError("dataset is empty")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    log_path = out_dir / "metrics.log"

    if resume_from is not None:
        model, adam, rng = restore_training_state(load_checkpoint(resume_from))
    else:
        adam = AdamState.zeros_like(model.params)
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(2)[1])
    written: List[Path] = []
    if adam.step == 0:
        written.append(write_training_checkpoint(out_dir / checkpoint_name(0), model, adam, rng,
                                                 sched, topo, cfg))

    history: List[StepResult] = []
    start = time.perf_counter()
    try:
        log = open(log_path, "a", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot open metrics log {log_path}: {exc}") from exc
    with log:
        while adam.step < cfg.max_steps:
            batch = select_batch(dataset, cfg.batch_size, rng)
            res = train_step(batch, model, adam, sched, topo, cfg, rng)
            history.append(res)
            step = adam.step
            if on_step is not None:
                on_step(step, res)
            if step % cfg.log_interval == 0:
                log.write(
                    f"step={step} joint={res.joint:.6g} bone={res.bone:.6g} total={res.total:.6g} "
                    f"grad_norm={res.grad_norm:.6g} wall={time.perf_counter() - start:.3f}\n"
                )
                log.flush()
            if step % cfg.checkpoint_interval == 0 or step == cfg.max_steps:
                written.append(write_training_checkpoint(out_dir / checkpoint_name(step), model, adam,
                                                         rng, sched, topo, cfg))
    return TrainingRun(model, history, written)


def init_seed_rng(seed: int) -> np.random.Generator:
    """Generator for parameter initialization; training draws from a sibling stream."""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[0])
