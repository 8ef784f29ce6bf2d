"""Finite-difference verification of every gradient rule and of the full model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np

from . import tensor as tn
from .denoiser import DenoiserConfig, Vocabulary, TextPoseDenoiser
from .losses import total_loss
from .skeleton import SkeletonTopology
from .tensor import Tensor

STEP = 1e-6
TOLERANCE = 1e-4
# gradients smaller than this are compared absolutely; central differences at
# h=1e-6 carry roundoff of order 1e-10 times the loss scale
REL_FLOOR = 1e-6


def relative_error(analytic, numeric, floor: float = REL_FLOOR) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_grad(f: Callable[[], float], arr: np.ndarray, index, h: float = STEP) -> float:
    """Central difference of ``f`` with respect to ``arr[index]`` (perturbed in place)."""
    orig = arr[index]
    arr[index] = orig + h
    up = f()
    arr[index] = orig - h
    down = f()
    arr[index] = orig
    return (up - down) / (2 * h)


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    checked: int
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)


@dataclass
class GradcheckReport:
    results: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def format(self) -> str:
        lines = []
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            lines.append(f"{status}  {r.name:<18} max_rel_err={r.max_rel_error:.3e}  n={r.checked}")
        lines.append("gradcheck: " + ("passed" if self.passed else "FAILED"))
        return "\n".join(lines)


def check_function(name: str, fn: Callable[..., Tensor], inputs: Sequence[np.ndarray],
                   rng: np.random.Generator, tolerance: float = TOLERANCE) -> CheckResult:
    """Compare all analytic input gradients of ``sum(fn(*inputs) * W)`` with central differences.

    ``W`` is a fixed random weighting so that ops with constant sums (softmax,
    normalization) still receive informative gradients.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    weights = rng.uniform(-1.0, 1.0, size=out.shape)
    tn.sum(out * Tensor(weights)).backward()

    def objective():
        with tn.no_grad():
            return float(np.sum(fn(*[Tensor(a) for a in arrays]).data * weights))

    worst, count = 0.0, 0
    for arr, t in zip(arrays, tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(arr)
        for index in np.ndindex(arr.shape):
            num = numeric_grad(objective, arr, index)
            worst = max(worst, float(relative_error(analytic[index], num)))
            count += 1
    return CheckResult(name, worst, count, tolerance)


def op_suite(rng: np.random.Generator) -> List[tuple]:
    """(name, fn, inputs) cases with inputs drawn from [-2, 2]."""
    u = lambda *shape: rng.uniform(-2.0, 2.0, size=shape)  # noqa: E731
    # keep |x| away from the abs/relu kinks so central differences never straddle one
    away = lambda *shape: np.where(rng.random(shape) < 0.5, -1, 1) * rng.uniform(0.1, 2.0, size=shape)  # noqa: E731
    ids = np.array([0, 2, 2, 1])
    return [
        ("add", lambda a, b: a + b, [u(3, 4), u(3, 4)]),
        ("add_row", lambda a, b: a + b, [u(3, 4), u(4)]),
        ("sub", lambda a, b: a - b, [u(3, 4), u(3, 4)]),
        ("mul", lambda a, b: a * b, [u(3, 4), u(3, 4)]),
        ("scale", lambda a: tn.scale(a, -1.7), [u(3, 4)]),
        ("matmul", lambda a, b: a @ b, [u(3, 4), u(4, 2)]),
        ("matmul_batched", lambda a, b: a @ b, [u(2, 3, 4), u(2, 4, 2)]),
        ("transpose", lambda a: tn.transpose(a, (2, 0, 1)), [u(2, 3, 4)]),
        ("reshape", lambda a: tn.reshape(a, (4, 6)), [u(2, 3, 4)]),
        ("concat", lambda a, b: tn.concat([a, b], axis=1), [u(3, 2), u(3, 4)]),
        ("getitem", lambda a: a[np.array([0, 2, 2]), 1:], [u(3, 4)]),
        ("sum", lambda a: tn.sum(a, axis=1), [u(3, 4)]),
        ("mean", lambda a: tn.mean(a, axis=0, keepdims=True), [u(3, 4)]),
        ("abs", tn.abs, [away(3, 4)]),
        ("square", tn.square, [u(3, 4)]),
        ("relu", tn.relu, [away(3, 4)]),
        ("gelu", tn.gelu, [u(3, 4)]),
        ("softmax", lambda a: tn.softmax(a, axis=-1), [u(3, 5)]),
        ("layer_norm", lambda x, g, b: tn.layer_norm(x, g, b), [u(3, 5), u(5), u(5)]),
        ("embedding_lookup", lambda t: tn.embedding_lookup(t, ids), [u(3, 4)]),
        ("normalize", lambda v: tn.normalize(v, axis=-1), [u(4, 3)]),
    ]


def tiny_setup(seed: int = 0, frames: int = 3, text_len: int = 3):
    """The tiny gradient-check model: d=16, one layer, two heads, 4 joints, 3 frames, 3 tokens."""
    rng = np.random.default_rng(seed)
    topo = SkeletonTopology(("neck", "shoulder", "elbow", "nose"), ((0, 1), (1, 2), (0, 3)),
                            frozenset({3}), name="tiny")
    vocab = Vocabulary(["a", "b", "c", "d"])
    cfg = DenoiserConfig(num_layers=1, num_heads=2, model_dim=16, ffn_dim=32, max_positions=8,
                         num_joints=topo.num_joints, vocab_size=len(vocab))
    model = TextPoseDenoiser.create(cfg, vocab, 1000, rng)
    tokens = list(rng.integers(3, len(vocab), size=text_len))
    p_t = rng.standard_normal((frames, topo.num_joints, 3))
    target = rng.uniform(-1.0, 1.0, size=(frames, topo.num_joints, 3))
    return model, topo, tokens, p_t, target, rng


def check_model(seed: int = 0, n_params: int = 24, t: int = 400,
                tolerance: float = TOLERANCE) -> CheckResult:
    """Total-loss gradients w.r.t. randomly chosen model parameters versus central differences."""
    model, topo, tokens, p_t, target, rng = tiny_setup(seed)

    def loss():
        out = model.forward(p_t, t, tokens)
        return total_loss(out, target, topo).total

    tn.zero_grad(model.parameters())
    loss().backward()

    def objective():
        with tn.no_grad():
            return loss().item()

    names = list(model.params)
    worst = 0.0
    for k in range(n_params):
        # cycle through parameter tensors so every kind is sampled
        name = names[int(rng.integers(len(names)))] if k >= len(names) else names[k * len(names) // n_params]
        p = model.params[name]
        index = tuple(int(rng.integers(s)) for s in p.shape)
        num = numeric_grad(objective, p.data, index)
        worst = max(worst, float(relative_error(p.grad[index], num)))
    return CheckResult("model_total_loss", worst, n_params, tolerance)


def run_gradcheck(seed: int = 0, n_params: int = 24) -> GradcheckReport:
    rng = np.random.default_rng(seed)
    report = GradcheckReport()
    for name, fn, inputs in op_suite(rng):
        report.results.append(check_function(name, fn, inputs, rng))
    report.results.append(check_model(seed, n_params))
    return report
