"""Normalized DTW between pose sequences and model evaluation reports."""

from __future__ import annotations

import json
import logging
import statistics
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .data_io import SamplePair
from .diffusion import SamplerConfig
from .schedule import NoiseSchedule

logger = logging.getLogger(__name__)

REPORT_FORMAT = "tdm-eval-report"
REPORT_VERSION = 1
SAMPLE_FIELDS = ("id", "frames", "dtw", "status", "error")
SUMMARY_FIELDS = ("count", "evaluated", "failed", "mean_dtw", "median_dtw", "worst_dtw", "worst_id")


class EvaluationError(ValueError):
    pass


def _valid_frames(seq) -> np.ndarray:
    coords = getattr(seq, "coords", seq)
    coords = np.asarray(coords, dtype=np.float64)
    mask = getattr(seq, "mask", None)
    if mask is not None:
        coords = coords[np.asarray(mask, dtype=bool)]
    if coords.ndim == 2:
        coords = coords[:, :, None]
    return coords


def frame_costs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise frame cost: mean over joints of the Euclidean joint distance."""
    diff = a[:, None, :, :] - b[None, :, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1)).mean(axis=-1)


def dtw_distance(a, b) -> Tuple[float, List[Tuple[int, int]]]:
    """Minimum mean frame cost over all monotone warping paths, and that path.

    The score is ``sum of frame costs along the path / path length``, minimized
    exactly by tracking the best cost for every (cell, path length). Accepts
    :class:`PoseSequence` (masked frames dropped) or arrays of shape F x J x 3
    (or F x J for one-dimensional joints).
    """
    x, y = _valid_frames(a), _valid_frames(b)
    if len(x) == 0 or len(y) == 0:
        raise EvaluationError("DTW needs two non-empty sequences")
    if x.shape[1:] != y.shape[1:]:
        raise EvaluationError(f"frame shapes differ: {x.shape[1:]} vs {y.shape[1:]}")
    n, m = len(x), len(y)
    cost = frame_costs(x, y)
    max_len = n + m - 1
    # acc[i, j, k]: cheapest summed cost of a path from (0, 0) to (i, j) visiting k + 1 cells
    acc = np.full((n, m, max_len), np.inf)
    back = np.zeros((n, m, max_len), dtype=np.int8)
    acc[0, 0, 0] = cost[0, 0]
    steps = ((1, 1), (1, 0), (0, 1))
    cols = np.arange(max_len)
    for i in range(n):
        for j in range(m):
            if i == 0 and j == 0:
                continue
            cands = np.full((3, max_len), np.inf)
            for d, (di, dj) in enumerate(steps):
                if i >= di and j >= dj:
                    cands[d, 1:] = acc[i - di, j - dj, :-1]
            choice = np.argmin(cands, axis=0)
            back[i, j] = choice
            acc[i, j] = cands[choice, cols] + cost[i, j]
    normalized = acc[n - 1, m - 1] / np.arange(1, max_len + 1)
    k = int(np.argmin(normalized))
    i, j = n - 1, m - 1
    path = [(i, j)]
    while k > 0:
        di, dj = steps[back[i, j, k]]
        i, j, k = i - di, j - dj, k - 1
        path.append((i, j))
    path.reverse()
    return float(normalized.min()), path


def is_warping_path(path: Sequence[Tuple[int, int]], n: int, m: int) -> bool:
    if not path or tuple(path[0]) != (0, 0) or tuple(path[-1]) != (n - 1, m - 1):
        return False
    return all((i2 - i1, j2 - j1) in ((1, 0), (0, 1), (1, 1)) for (i1, j1), (i2, j2) in zip(path, path[1:]))


def evaluate_model(model, dataset: Sequence[SamplePair], sched: NoiseSchedule,
                   sampler_cfg: SamplerConfig, seed: int = 0,
                   out_path: Optional[Union[str, Path]] = None) -> dict:
    """Generate for each pair at its ground-truth length and score with DTW.

    ``model`` needs ``cfg.num_joints`` and ``generate(tokens, frames, sched,
    sampler_cfg, rng, mask)``. Per-sample failures become ``status: "failed"``
    rows; the summary covers the successful rows.
    """
    if not dataset:
        raise EvaluationError("evaluation dataset is empty")
    n_joints = model.cfg.num_joints
    for pair in dataset:
        if pair.pose.num_joints != n_joints:
            raise EvaluationError(
                f"sample {pair.id!r} has {pair.pose.num_joints} joints, model expects {n_joints}"
            )
    rows = []
    for idx, pair in enumerate(dataset):
        rng = np.random.default_rng([seed, idx])
        row = {"id": pair.id, "frames": pair.pose.num_frames, "dtw": None, "status": "ok", "error": None}
        try:
            generated = model.generate(pair.tokens, pair.pose.num_frames, sched, sampler_cfg, rng,
                                       pair.pose.mask)
            row["dtw"], _ = dtw_distance(generated, pair.pose)
        except Exception as exc:  # failures are reported per row
            logger.warning("sample %s failed: %s", pair.id, exc)
            row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        rows.append(row)

    scores = [r["dtw"] for r in rows if r["status"] == "ok"]
    summary = {"count": len(rows), "evaluated": len(scores), "failed": len(rows) - len(scores),
               "mean_dtw": None, "median_dtw": None, "worst_dtw": None, "worst_id": None}
    if scores:
        worst = max((r for r in rows if r["status"] == "ok"), key=lambda r: r["dtw"])
        summary.update(mean_dtw=float(np.mean(scores)), median_dtw=float(statistics.median(scores)),
                       worst_dtw=worst["dtw"], worst_id=worst["id"])
    report = {"format": REPORT_FORMAT, "version": REPORT_VERSION, "samples": rows, "summary": summary}
    if out_path is not None:
        write_report(report, out_path)
    return report


def write_report(report: dict, path) -> None:
    path = Path(path)
    try:
        path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc}") from exc
