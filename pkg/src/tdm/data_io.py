"""Dataset files and a synthetic text-to-pose corpus.

A dataset file holds one JSON object per line::

    {"id": "s0", "tokens": ["w1", "w4"], "frames": 8, "joints": 11,
     "coords": [x, y, z, ...], "mask": [true, ...]}

``coords`` is the row-major flattening of frames x joints x 3; ``mask`` is
optional and defaults to all frames valid. Blank lines are ignored.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .denoiser import UnknownTokenError, Vocabulary
from .skeleton import PoseSequence, SkeletonTopology

logger = logging.getLogger(__name__)

RECORD_FIELDS = ("id", "tokens", "frames", "joints", "coords")
OPTIONAL_FIELDS = ("mask",)


class DatasetError(ValueError):
    category = "dataset"

    def __init__(self, message: str, line: Optional[int] = None, record_id: Optional[str] = None):
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if record_id is not None:
            prefix.append(f"record {record_id!r}")
        super().__init__(f"{', '.join(prefix)}: {message}" if prefix else message)
        self.line = line
        self.record_id = record_id


class RecordParseError(DatasetError):
    category = "parse"


class SchemaError(DatasetError):
    category = "schema"


class UnknownTokenRecordError(DatasetError):
    category = "unknown_token"


class EmptyTokensError(DatasetError):
    category = "empty_tokens"


class JointCountError(DatasetError):
    category = "joint_count"


class FrameCountError(DatasetError):
    category = "frame_count"


class NonFiniteError(DatasetError):
    category = "non_finite"


class DuplicateIdError(DatasetError):
    category = "duplicate_id"


@dataclass
class SamplePair:
    id: str
    tokens: List[int]
    pose: PoseSequence

    def __post_init__(self):
        if not self.tokens:
            raise ValueError(f"sample {self.id!r} has no tokens")


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def parse_record(line: str, lineno: int, vocab: Vocabulary, topo: SkeletonTopology) -> SamplePair:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordParseError(f"invalid JSON: {exc.msg}", lineno) from exc
    if not isinstance(rec, dict):
        raise RecordParseError("record must be a JSON object", lineno)

    rid = rec.get("id")
    if not isinstance(rid, str) or not rid:
        raise SchemaError("'id' must be a non-empty string", lineno)
    missing = [k for k in RECORD_FIELDS if k not in rec]
    if missing:
        raise SchemaError(f"missing field(s) {missing}", lineno, rid)
    unknown = sorted(set(rec) - set(RECORD_FIELDS) - set(OPTIONAL_FIELDS))
    if unknown:
        raise SchemaError(f"unknown field(s) {unknown}", lineno, rid)

    tokens = rec["tokens"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise SchemaError("'tokens' must be a list of strings", lineno, rid)
    if not tokens:
        raise EmptyTokensError("token list is empty", lineno, rid)
    try:
        ids = vocab.encode(tokens)
    except UnknownTokenError as exc:
        raise UnknownTokenRecordError(str(exc), lineno, rid) from exc

    frames, joints, coords = rec["frames"], rec["joints"], rec["coords"]
    if not _is_int(frames) or not _is_int(joints):
        raise SchemaError("'frames' and 'joints' must be integers", lineno, rid)
    if joints != topo.num_joints:
        raise JointCountError(f"{joints} joints, topology {topo.name!r} has {topo.num_joints}", lineno, rid)
    if frames < 1:
        raise FrameCountError(f"frame count {frames} < 1", lineno, rid)
    if not isinstance(coords, list) or not all(
        isinstance(c, (int, float)) and not isinstance(c, bool) for c in coords
    ):
        raise SchemaError("'coords' must be a flat list of numbers", lineno, rid)
    if len(coords) != frames * joints * 3:
        raise FrameCountError(
            f"{len(coords)} coordinates, expected frames*joints*3 = {frames * joints * 3}", lineno, rid
        )

    mask = rec.get("mask")
    if mask is None:
        mask = [True] * frames
    elif not isinstance(mask, list) or not all(isinstance(m, bool) for m in mask):
        raise SchemaError("'mask' must be a list of booleans", lineno, rid)
    elif len(mask) != frames:
        raise FrameCountError(f"mask has {len(mask)} entries for {frames} frames", lineno, rid)
    if not any(mask):
        raise FrameCountError("no valid frames", lineno, rid)

    arr = np.asarray(coords, dtype=np.float64).reshape(frames, joints, 3)
    mask = np.asarray(mask, dtype=bool)
    if not np.all(np.isfinite(arr[mask])):
        raise NonFiniteError("non-finite coordinate in a valid frame", lineno, rid)
    arr[~mask] = np.where(np.isfinite(arr[~mask]), arr[~mask], 0.0)
    return SamplePair(rid, ids, PoseSequence(arr, mask))


def load_dataset(path, vocab: Vocabulary, topo: SkeletonTopology) -> List[SamplePair]:
    """Load and validate every record; the first bad record raises a :class:`DatasetError` subclass."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc}") from exc
    pairs, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        pair = parse_record(line, lineno, vocab, topo)
        if pair.id in seen:
            raise DuplicateIdError("duplicate record id", lineno, pair.id)
        seen.add(pair.id)
        pairs.append(pair)
    if not pairs:
        logger.warning("dataset %s is empty", path)
    return pairs


def format_record(pair: SamplePair, vocab: Vocabulary) -> str:
    pose = pair.pose
    rec = {
        "id": pair.id,
        "tokens": vocab.decode(pair.tokens),
        "frames": pose.num_frames,
        "joints": pose.num_joints,
        "coords": [float(c) for c in pose.coords.reshape(-1)],
    }
    if not pose.mask.all():
        rec["mask"] = [bool(m) for m in pose.mask]
    return json.dumps(rec)


def save_dataset(path, pairs: Sequence[SamplePair], vocab: Vocabulary) -> None:
    lines = [format_record(p, vocab) for p in pairs]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# ---------------------------------------------------------------------------
# synthetic corpus


def rest_pose(topo: SkeletonTopology, rng: np.random.Generator, radius: float = 0.6) -> np.ndarray:
    """A random tree-shaped rest pose inside ``[-radius, radius]^3``."""
    n = topo.num_joints
    pos = np.full((n, 3), np.nan)
    parent = {}
    for p, c in topo.bones:
        parent.setdefault(c, p)

    def place(j, depth=0):
        if not np.isnan(pos[j, 0]):
            return pos[j]
        p = parent.get(j)
        if p is None or depth > n:
            pos[j] = rng.uniform(-0.2, 0.2, size=3)
        else:
            d = rng.standard_normal(3)
            pos[j] = place(p, depth + 1) + 0.35 * d / np.linalg.norm(d)
        return pos[j]

    for j in range(n):
        place(j)
    pos -= pos.mean(axis=0)
    extent = np.abs(pos).max()
    if extent > radius:
        pos *= radius / extent
    return pos


def generate_synthetic(seed: int, n_samples: int, topo: SkeletonTopology, vocab_size: int,
                       max_len: int, min_len: int = 1, frames_per_token: int = 4,
                       amplitude: float = 0.3, unique: bool = True) -> Tuple[List[SamplePair], Vocabulary]:
    """Random token sequences paired with a deterministic pose for each sequence.

    Every token ``k`` owns a frequency and a per-joint, per-axis phase. A token
    at position ``m`` drives frames ``m*fpt .. (m+1)*fpt - 1`` as
    ``rest + amplitude * sin(freq_k * (u + 1) + phase_k)`` with ``u`` the frame
    offset inside its segment, so identical texts always give identical poses.
    """
    if min(n_samples, vocab_size, max_len, min_len, frames_per_token) < 1 or min_len > max_len:
        raise ValueError("synthetic corpus sizes must be positive with min_len <= max_len")
    table_rng, rest_rng, seq_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    vocab = Vocabulary([f"w{i}" for i in range(vocab_size)])
    freqs = table_rng.uniform(0.5, 1.5, size=vocab_size)
    phases = table_rng.uniform(0.0, 2 * math.pi, size=(vocab_size, topo.num_joints, 3))
    rest = rest_pose(topo, rest_rng)

    capacity = sum(vocab_size ** n for n in range(min_len, max_len + 1))
    if unique and n_samples > capacity:
        raise ValueError(f"cannot draw {n_samples} distinct sequences from {capacity} possibilities")

    pairs, seen = [], set()
    while len(pairs) < n_samples:
        length = int(seq_rng.integers(min_len, max_len + 1))
        words = tuple(int(w) for w in seq_rng.integers(0, vocab_size, size=length))
        if unique and words in seen:
            continue
        seen.add(words)
        u = np.arange(frames_per_token, dtype=np.float64) + 1.0
        segments = [
            rest + amplitude * np.sin(freqs[w] * u[:, None, None] + phases[w][None]) for w in words
        ]
        coords = np.concatenate(segments, axis=0)
        ids = vocab.encode([f"w{w}" for w in words])
        pairs.append(SamplePair(f"syn{len(pairs):05d}", ids, PoseSequence(coords)))
    return pairs, vocab


def scan_vocabulary(path) -> Vocabulary:
    """Vocabulary of every token string appearing in a dataset file, in first-seen order.

    Lines that are not JSON objects with a token list are skipped here and
    reported by :func:`load_dataset`.
    """
    vocab = Vocabulary()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        try:
            rec = json.loads(line) if line.strip() else None
        except json.JSONDecodeError:
            continue
        if isinstance(rec, dict) and isinstance(rec.get("tokens"), list):
            for tok in rec["tokens"]:
                if isinstance(tok, str) and tok and not any(c.isspace() for c in tok):
                    vocab.add(tok)
    return vocab
