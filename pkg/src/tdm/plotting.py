"""Orthographic SVG frames and coordinate CSV for pose sequences."""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .data_io import SamplePair
from .skeleton import SkeletonTopology, body_bones

logger = logging.getLogger(__name__)

CANVAS = 400
MARGIN = 20


def _project(xy: np.ndarray) -> np.ndarray:
    # x to the right, y up; coordinates assumed in [-1, 1]
    half = (CANVAS - 2 * MARGIN) / 2
    px = MARGIN + half * (1.0 + xy[:, 0])
    py = MARGIN + half * (1.0 - xy[:, 1])
    return np.stack([px, py], axis=1)


def frame_svg(coords: np.ndarray, topo: SkeletonTopology, title: str = "") -> str:
    """One frame, z dropped. Body bones solid, bones touching the face dashed."""
    pts = _project(coords[:, :2])
    body = set(body_bones(topo))
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" height="{CANVAS}" '
        f'viewBox="0 0 {CANVAS} {CANVAS}">',
        f"<title>{title}</title>",
        f'<rect width="{CANVAS}" height="{CANVAS}" fill="white"/>',
    ]
    for b, (p, c) in enumerate(topo.bones):
        dash = "" if b in body else ' stroke-dasharray="4 3"'
        out.append(
            f'<line x1="{pts[p, 0]:.2f}" y1="{pts[p, 1]:.2f}" x2="{pts[c, 0]:.2f}" y2="{pts[c, 1]:.2f}" '
            f'stroke="black" stroke-width="2"{dash}/>'
        )
    for j, name in enumerate(topo.joint_names):
        colour = "tomato" if j in topo.face_joints else "steelblue"
        out.append(f'<circle cx="{pts[j, 0]:.2f}" cy="{pts[j, 1]:.2f}" r="4" fill="{colour}">'
                   f"<title>{name}</title></circle>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_pairs(pairs: Sequence[SamplePair], topo: SkeletonTopology, out_dir) -> List[Path]:
    """Write ``<id>_frameNNNN.svg`` per valid frame plus ``coords.csv``; returns the SVG paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with open(out_dir / "coords.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "frame", "joint", "name", "x", "y", "z"])
        for pair in pairs:
            pose = pair.pose
            pose.check_topology(topo)
            for n in range(pose.num_frames):
                if not pose.mask[n]:
                    logger.warning("%s frame %d is masked; skipped", pair.id, n)
                    continue
                path = out_dir / f"{pair.id}_frame{n:04d}.svg"
                path.write_text(frame_svg(pose.coords[n], topo, f"{pair.id} frame {n}"), encoding="utf-8")
                written.append(path)
                for j, name in enumerate(topo.joint_names):
                    x, y, z = pose.coords[n, j]
                    writer.writerow([pair.id, n, j, name, repr(float(x)), repr(float(y)), repr(float(z))])
    return written
