"""Skeleton topology, pose containers and bone orientations."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
import yaml

logger = logging.getLogger(__name__)


class SkeletonConfigError(ValueError):
    """Invalid skeleton config; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.path = path


class PoseError(ValueError):
    """Pose does not fit its topology or violates a pose invariant."""


@dataclass(frozen=True)
class SkeletonTopology:
    joint_names: Tuple[str, ...]
    bones: Tuple[Tuple[int, int], ...]
    face_joints: FrozenSet[int] = field(default_factory=frozenset)
    name: str = "skeleton"

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "bones", tuple((int(p), int(c)) for p, c in self.bones))
        object.__setattr__(self, "face_joints", frozenset(int(j) for j in self.face_joints))
        n = len(self.joint_names)
        if n == 0:
            raise SkeletonConfigError("skeleton has no joints")
        if len(set(self.joint_names)) != n:
            raise SkeletonConfigError("duplicate joint names")
        seen = set()
        for parent, child in self.bones:
            if not (0 <= parent < n and 0 <= child < n):
                raise SkeletonConfigError(f"bone ({parent}, {child}) indexes outside {n} joints")
            if parent == child:
                raise SkeletonConfigError(f"bone ({parent}, {child}) connects a joint to itself")
            if (parent, child) in seen:
                raise SkeletonConfigError(f"duplicate bone ({parent}, {child})")
            seen.add((parent, child))
        bad = [j for j in self.face_joints if not 0 <= j < n]
        if bad:
            raise SkeletonConfigError(f"face joints {sorted(bad)} outside {n} joints")

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    @property
    def num_bones(self) -> int:
        return len(self.bones)

    def index(self, joint: str) -> int:
        return self.joint_names.index(joint)

    @property
    def parents(self) -> np.ndarray:
        return np.array([p for p, _ in self.bones], dtype=np.int64)

    @property
    def children(self) -> np.ndarray:
        return np.array([c for _, c in self.bones], dtype=np.int64)

    def to_dict(self) -> dict:
        names = self.joint_names
        return {
            "name": self.name,
            "joints": list(names),
            "bones": [[names[p], names[c]] for p, c in self.bones],
            "face": [names[j] for j in sorted(self.face_joints)],
        }


def body_bones(topo: SkeletonTopology) -> List[int]:
    """Indices of bones with neither endpoint in the face set."""
    face = topo.face_joints
    return [b for b, (p, c) in enumerate(topo.bones) if p not in face and c not in face]


@dataclass
class PoseSequence:
    """``coords`` is frames x joints x 3; ``mask`` flags valid frames."""

    coords: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 3 or self.coords.shape[2] != 3 or self.coords.shape[0] < 1:
            raise PoseError(f"pose coords must be F x J x 3 with F >= 1, got {self.coords.shape}")
        if self.mask is None:
            self.mask = np.ones(self.coords.shape[0], dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (self.coords.shape[0],):
            raise PoseError(f"mask shape {self.mask.shape} does not match {self.coords.shape[0]} frames")
        if not np.all(np.isfinite(self.coords[self.mask])):
            raise PoseError("pose has non-finite coordinates in valid frames")

    @property
    def num_frames(self) -> int:
        return self.coords.shape[0]

    @property
    def num_joints(self) -> int:
        return self.coords.shape[1]

    def check_topology(self, topo: SkeletonTopology) -> None:
        if self.num_joints != topo.num_joints:
            raise PoseError(
                f"pose has {self.num_joints} joints but topology {topo.name!r} has {topo.num_joints}"
            )


def bone_orientations(pose: PoseSequence, topo: SkeletonTopology) -> Tuple[np.ndarray, np.ndarray]:
    """Unit parent-to-child direction per frame and bone.

    Returns ``(q, degenerate)`` with ``q`` of shape F x B x 3. Zero-length
    bones give a zero vector and a ``True`` entry in ``degenerate``.
    """
    pose.check_topology(topo)
    coords = pose.coords
    vec = coords[:, topo.children, :] - coords[:, topo.parents, :]
    # rescale by the largest component first so tiny bones do not underflow when squared
    peak = np.max(np.abs(vec), axis=-1, keepdims=True)
    degenerate = peak[..., 0] == 0.0
    vec = np.divide(vec, peak, out=np.zeros_like(vec), where=peak > 0)
    norm = np.linalg.norm(vec, axis=-1, keepdims=True)
    q = np.divide(vec, norm, out=np.zeros_like(vec), where=norm > 0)
    if degenerate.any():
        logger.debug("%d zero-length bone(s) in pose", int(degenerate.sum()))
    return q, degenerate


# ---------------------------------------------------------------------------
# config file


def _line(node) -> int:
    return node.start_mark.line + 1


def _scalar_list(node, what: str, path) -> List[Tuple[str, int]]:
    if not isinstance(node, yaml.SequenceNode):
        raise SkeletonConfigError(f"{what} must be a list", _line(node), path)
    out = []
    for item in node.value:
        if not isinstance(item, yaml.ScalarNode) or item.value == "":
            raise SkeletonConfigError(f"{what} entries must be names", _line(item), path)
        out.append((item.value, _line(item)))
    return out


def parse_skeleton(text: str, path: Optional[str] = None) -> SkeletonTopology:
    """Parse a skeleton YAML document, reporting the offending line on error.

    Expected keys: ``joints`` (list of names), ``bones`` (list of
    ``[parent, child]`` name pairs), optional ``face`` (list of names) and
    ``name``.
    """
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise SkeletonConfigError(f"malformed YAML: {exc}", mark.line + 1 if mark else None, path)
    if root is None or not isinstance(root, yaml.MappingNode):
        raise SkeletonConfigError("skeleton config must be a mapping", 1, path)

    sections = {}
    for key, value in root.value:
        if key.value in sections:
            raise SkeletonConfigError(f"duplicate key {key.value!r}", _line(key), path)
        if key.value not in ("name", "joints", "bones", "face"):
            raise SkeletonConfigError(f"unknown key {key.value!r}", _line(key), path)
        sections[key.value] = value
    if "joints" not in sections:
        raise SkeletonConfigError("missing 'joints'", 1, path)

    joints = _scalar_list(sections["joints"], "joints", path)
    index = {}
    for name, line in joints:
        if name in index:
            raise SkeletonConfigError(f"duplicate joint {name!r}", line, path)
        index[name] = len(index)
    if not index:
        raise SkeletonConfigError("skeleton has no joints", _line(sections["joints"]), path)

    def lookup(name, line):
        if name not in index:
            raise SkeletonConfigError(f"unknown joint {name!r}", line, path)
        return index[name]

    bones = []
    bones_node = sections.get("bones")
    if bones_node is not None:
        if not isinstance(bones_node, yaml.SequenceNode):
            raise SkeletonConfigError("bones must be a list", _line(bones_node), path)
        seen = set()
        for item in bones_node.value:
            pair = _scalar_list(item, "bone", path)
            if len(pair) != 2:
                raise SkeletonConfigError("bone must be a [parent, child] pair", _line(item), path)
            p, c = (lookup(n, ln) for n, ln in pair)
            if p == c:
                raise SkeletonConfigError(f"bone connects {pair[0][0]!r} to itself", _line(item), path)
            if (p, c) in seen:
                raise SkeletonConfigError(f"duplicate bone {pair[0][0]} -> {pair[1][0]}", _line(item), path)
            seen.add((p, c))
            bones.append((p, c))

    face = set()
    if "face" in sections:
        face = {lookup(n, ln) for n, ln in _scalar_list(sections["face"], "face", path)}

    name_node = sections.get("name")
    name = name_node.value if isinstance(name_node, yaml.ScalarNode) else "skeleton"
    return SkeletonTopology(tuple(index), tuple(bones), frozenset(face), name=name)


def load_skeleton(path) -> SkeletonTopology:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SkeletonConfigError(f"cannot read skeleton config: {exc}", None, str(path)) from exc
    return parse_skeleton(text, str(path))


def dump_skeleton(topo: SkeletonTopology) -> str:
    d = topo.to_dict()
    lines = [f"name: {d['name']}", "joints: [" + ", ".join(d["joints"]) + "]", "bones:"]
    lines += [f"  - [{p}, {c}]" for p, c in d["bones"]]
    lines.append("face: [" + ", ".join(d["face"]) + "]")
    return "\n".join(lines) + "\n"


def default_topology() -> SkeletonTopology:
    """The bundled 11-joint upper body with three face landmarks."""
    text = resources.files("tdm").joinpath("skeletons/upper_body.yaml").read_text(encoding="utf-8")
    return parse_skeleton(text, "upper_body.yaml")


def chain_topology(names: Sequence[str], face: Sequence[str] = ()) -> SkeletonTopology:
    """A simple parent-to-child chain, mostly useful for tests."""
    bones = [(i, i + 1) for i in range(len(names) - 1)]
    return SkeletonTopology(tuple(names), tuple(bones), frozenset(names.index(f) for f in face))


def topology_from_dict(d: dict) -> SkeletonTopology:
    """Inverse of :meth:`SkeletonTopology.to_dict`."""
    names = list(d["joints"])
    index = {n: i for i, n in enumerate(names)}
    try:
        bones = tuple((index[p], index[c]) for p, c in d.get("bones", []))
        face = frozenset(index[n] for n in d.get("face", []))
    except KeyError as exc:
        raise SkeletonConfigError(f"unknown joint {exc.args[0]!r}") from exc
    return SkeletonTopology(tuple(names), bones, face, name=d.get("name", "skeleton"))
