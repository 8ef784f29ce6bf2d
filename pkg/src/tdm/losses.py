"""Joint-position L1 and bone-orientation losses."""

from __future__ import annotations

from typing import NamedTuple, Optional, Union

import numpy as np

from . import tensor as tn
from .skeleton import PoseSequence, SkeletonTopology, body_bones
from .tensor import Tensor

DEFAULT_LAMBDA = 0.1

PoseLike = Union[PoseSequence, Tensor, np.ndarray]


class LossTerms(NamedTuple):
    total: Tensor
    joint: Tensor
    bone: Tensor


def _unpack(pred: PoseLike, target: PoseLike):
    mask = None
    for p in (target, pred):
        if isinstance(p, PoseSequence):
            if mask is not None and not np.array_equal(mask, p.mask):
                raise ValueError("prediction and target masks differ")
            mask = p.mask
    pred_t = pred if isinstance(pred, Tensor) else Tensor(getattr(pred, "coords", pred))
    target_arr = target.data if isinstance(target, Tensor) else np.asarray(getattr(target, "coords", target))
    if pred_t.shape != target_arr.shape or pred_t.ndim != 3 or pred_t.shape[2] != 3:
        raise ValueError(f"pose shapes disagree or are not F x J x 3: {pred_t.shape} vs {target_arr.shape}")
    if mask is None:
        mask = np.ones(pred_t.shape[0], dtype=bool)
    valid = np.flatnonzero(mask)
    if valid.size == 0:
        raise ValueError("no valid frames")
    return pred_t, target_arr, valid


def joint_loss(pred: PoseLike, target: PoseLike) -> Tensor:
    """Mean over valid frames of ``(1/J) * sum_j ||pred_j - target_j||_1``."""
    pred_t, target_arr, valid = _unpack(pred, target)
    n_joints = pred_t.shape[1]
    diff = tn.abs(pred_t[valid] - Tensor(target_arr[valid]))
    return tn.scale(tn.sum(diff), 1.0 / (n_joints * valid.size))


def orientations(coords: Tensor, topo: SkeletonTopology, bones) -> Tensor:
    """Differentiable unit parent-to-child vectors for the given bone indices (F x B x 3)."""
    bones = np.asarray(bones, dtype=np.int64)
    parents, children = topo.parents[bones], topo.children[bones]
    return tn.normalize(coords[:, children, :] - coords[:, parents, :], axis=-1)


def bone_loss(pred: PoseLike, target: PoseLike, topo: SkeletonTopology) -> Tensor:
    """Mean over valid frames and body bones of ``||q_b - q'_b||^2``; 0 when there are no body bones."""
    pred_t, target_arr, valid = _unpack(pred, target)
    if pred_t.shape[1] != topo.num_joints:
        raise ValueError(f"pose has {pred_t.shape[1]} joints, topology {topo.name!r} has {topo.num_joints}")
    bones = body_bones(topo)
    if not bones:
        return Tensor(0.0)
    q_pred = orientations(pred_t[valid], topo, bones)
    with tn.no_grad():
        q_true = orientations(Tensor(target_arr[valid]), topo, bones)
    sq = tn.square(q_pred - q_true)
    return tn.scale(tn.sum(sq), 1.0 / (len(bones) * valid.size))


def total_loss(pred: PoseLike, target: PoseLike, topo: SkeletonTopology,
               lam: float = DEFAULT_LAMBDA) -> LossTerms:
    if lam < 0:
        raise ValueError(f"bone loss weight must be non-negative, got {lam}")
    lj = joint_loss(pred, target)
    lb = bone_loss(pred, target, topo)
    return LossTerms(lj + tn.scale(lb, lam), lj, lb)
