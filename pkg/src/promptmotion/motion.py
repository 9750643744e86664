"""Pose representation, simplified body skeleton, and forward kinematics.

A pose is one 6D rotation per joint plus a root translation in meters.
Coordinates are Z-up: the ground plane is XY, which is what the trajectory
metrics read. The shipped default skeleton is a 22-joint body tree (no
fingers, no mesh) with approximate rest offsets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DegenerateInput, NotARotation, SchemaError, SkeletonMismatch

MOTION_SCHEMA_VERSION = 1
DEGENERATE_NORM_EPS = 1e-8
_JITTER = 1e-6


# ---------------------------------------------------------------------------
# 6D rotation representation
# ---------------------------------------------------------------------------
# A rotation is encoded by its first two matrix columns flattened to 6 numbers.
# Decoding runs Gram-Schmidt on the two 3-vectors and completes the frame with
# a cross product, which keeps the map continuous and total on valid inputs.

def sixd_to_rotmat(sixd: np.ndarray, strict: bool = True) -> np.ndarray:
    """Convert 6D rotation encodings to rotation matrices.

    Accepts any leading batch shape: (..., 6) -> (..., 3, 3). With
    ``strict=True`` near-zero or near-parallel column pairs (norm below
    1e-8) raise DegenerateInput; with ``strict=False`` the offending
    vectors are nudged by 1e-6 along a basis vector and decoded anyway,
    which is what the motion decoder uses while training.
    """
    arr = np.asarray(sixd, dtype=np.float64)
    if arr.shape[-1] != 6:
        raise DegenerateInput(f"expected trailing dimension 6, got {arr.shape}")
    lead = arr.shape[:-1]
    flat = arr.reshape(-1, 6)
    a1 = flat[:, :3].copy()
    a2 = flat[:, 3:].copy()

    norm1 = np.linalg.norm(a1, axis=-1)
    bad1 = norm1 < DEGENERATE_NORM_EPS
    if bad1.any():
        if strict:
            raise DegenerateInput(
                f"first 3-vector has norm < {DEGENERATE_NORM_EPS} in {int(bad1.sum())} entries"
            )
        a1[bad1, 0] += _JITTER
        norm1 = np.linalg.norm(a1, axis=-1)
    b1 = a1 / norm1[:, None]

    w = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    norm2 = np.linalg.norm(w, axis=-1)
    bad2 = norm2 < DEGENERATE_NORM_EPS
    if bad2.any():
        if strict:
            raise DegenerateInput(
                f"second 3-vector is near-parallel to the first in {int(bad2.sum())} entries"
            )
        # nudge along the basis vector least aligned with b1 so the
        # orthogonal component cannot vanish again
        axis = np.argmin(np.abs(b1), axis=-1)
        bump = np.zeros_like(a2)
        np.put_along_axis(bump, axis[:, None], _JITTER, axis=-1)
        a2 = np.where(bad2[:, None], a2 + bump, a2)
        w = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
        norm2 = np.linalg.norm(w, axis=-1)
    b2 = w / norm2[:, None]
    b3 = np.cross(b1, b2)
    return np.stack([b1, b2, b3], axis=-1).reshape(*lead, 3, 3)


def rotmat_to_sixd(rotmat: np.ndarray) -> np.ndarray:
    """Flatten the first two columns of rotation matrices: (..., 3, 3) -> (..., 6)."""
    arr = np.asarray(rotmat, dtype=np.float64)
    if arr.shape[-2:] != (3, 3):
        raise NotARotation(f"expected trailing shape (3, 3), got {arr.shape}")
    gram = np.einsum("...ji,...jk->...ik", arr, arr)
    eye = np.eye(3)
    if np.max(np.abs(gram - eye)) > 1e-5:
        raise NotARotation("matrix is not orthonormal within 1e-5")
    if np.any(np.linalg.det(arr) <= 0):
        raise NotARotation("matrix has non-positive determinant")
    return np.concatenate([arr[..., :, 0], arr[..., :, 1]], axis=-1)


def identity_sixd() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


# ---------------------------------------------------------------------------
# Poses and sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """One frame: per-joint 6D rotations (J, 6) plus root translation (3,)."""

    joint_rotations: np.ndarray
    root_translation: np.ndarray


@dataclass
class MotionSequence:
    """N poses stored as arrays: rotations (N, J, 6), root translation (N, 3)."""

    rotations: np.ndarray
    root_translation: np.ndarray
    frame_rate: float = 20.0

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64)
        if self.rotations.ndim != 3 or self.rotations.shape[-1] != 6:
            raise SchemaError(f"rotations must be (N, J, 6), got {self.rotations.shape}")
        if self.rotations.shape[0] < 1:
            raise SchemaError("a motion sequence needs at least one frame")
        if self.root_translation.shape != (self.rotations.shape[0], 3):
            raise SchemaError(
                f"root translation must be (N, 3), got {self.root_translation.shape}"
            )
        if not (np.isfinite(self.rotations).all() and np.isfinite(self.root_translation).all()):
            raise SchemaError("motion contains non-finite values")
        if self.frame_rate <= 0:
            raise SchemaError(f"frame rate must be positive, got {self.frame_rate}")

    @property
    def num_frames(self) -> int:
        return int(self.rotations.shape[0])

    @property
    def num_joints(self) -> int:
        return int(self.rotations.shape[1])

    def pose(self, n: int) -> Pose:
        return Pose(self.rotations[n], self.root_translation[n])

    @classmethod
    def from_poses(cls, poses: list[Pose], frame_rate: float = 20.0) -> "MotionSequence":
        return cls(
            rotations=np.stack([p.joint_rotations for p in poses]),
            root_translation=np.stack([p.root_translation for p in poses]),
            frame_rate=frame_rate,
        )


@dataclass(frozen=True)
class Skeleton:
    """Kinematic tree: joint names, parent indices (root first), rest offsets in meters."""

    joint_names: tuple[str, ...]
    parent_index: np.ndarray
    rest_offsets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(
            self, "parent_index", np.asarray(self.parent_index, dtype=np.int64)
        )
        object.__setattr__(
            self, "rest_offsets", np.asarray(self.rest_offsets, dtype=np.float64)
        )
        j = len(self.joint_names)
        if self.parent_index.shape != (j,) or self.rest_offsets.shape != (j, 3):
            raise SchemaError("skeleton arrays do not match the joint count")
        if j < 1 or self.parent_index[0] != -1:
            raise SchemaError("joint 0 must be the root (parent index -1)")
        for idx in range(1, j):
            if not (0 <= self.parent_index[idx] < idx):
                raise SchemaError(
                    f"joint {idx} has parent {self.parent_index[idx]}; parents must "
                    "precede children so the tree is rooted at joint 0"
                )
        if not np.isfinite(self.rest_offsets).all():
            raise SchemaError("rest offsets contain non-finite values")

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    def to_dict(self) -> dict:
        return {
            "schema_version": MOTION_SCHEMA_VERSION,
            "joint_names": list(self.joint_names),
            "parent_index": self.parent_index.tolist(),
            "rest_offsets": self.rest_offsets.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Skeleton":
        try:
            return cls(
                joint_names=tuple(payload["joint_names"]),
                parent_index=payload["parent_index"],
                rest_offsets=payload["rest_offsets"],
            )
        except KeyError as exc:
            raise SchemaError(f"skeleton config missing field {exc}") from exc

    @classmethod
    def load(cls, path: str | Path) -> "Skeleton":
        try:
            payload = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaError(f"cannot read skeleton config {path}: {exc}") from exc
        return cls.from_dict(payload)

    @classmethod
    def default(cls) -> "Skeleton":
        """The shipped 22-joint body skeleton."""
        payload = json.loads(
            resources.files("promptmotion.data").joinpath("smpl22.json").read_text()
        )
        return cls.from_dict(payload)


@dataclass(frozen=True)
class JointPositions:
    """FK output: world and root-relative joint positions plus the XY root path."""

    global_positions: np.ndarray  # (N, J, 3)
    local_positions: np.ndarray  # (N, J, 3), frame root subtracted
    trajectory: np.ndarray  # (N, 2), root X and Y per frame


def forward_kinematics(
    seq: MotionSequence, skeleton: Skeleton, strict: bool = False
) -> JointPositions:
    """Propagate rotations down the tree to world-space joint positions.

    Joint j sits at its parent's position plus the parent's world rotation
    applied to the rest offset; the root sits at the frame's translation.
    Local positions subtract the frame's root position (root rotation is
    kept), and the trajectory is the root's world XY path.
    """
    if seq.num_joints != skeleton.num_joints:
        raise SkeletonMismatch(
            f"sequence has {seq.num_joints} joints, skeleton has {skeleton.num_joints}"
        )
    rotmats = sixd_to_rotmat(seq.rotations, strict=strict)  # (N, J, 3, 3)
    n, j = seq.num_frames, seq.num_joints
    world_rot = np.empty((n, j, 3, 3))
    world_pos = np.empty((n, j, 3))
    world_rot[:, 0] = rotmats[:, 0]
    world_pos[:, 0] = seq.root_translation
    for joint in range(1, j):
        parent = int(skeleton.parent_index[joint])
        world_rot[:, joint] = world_rot[:, parent] @ rotmats[:, joint]
        world_pos[:, joint] = world_pos[:, parent] + np.einsum(
            "nab,b->na", world_rot[:, parent], skeleton.rest_offsets[joint]
        )
    local = world_pos - world_pos[:, :1]
    return JointPositions(
        global_positions=world_pos,
        local_positions=local,
        trajectory=world_pos[:, 0, :2].copy(),
    )


# ---------------------------------------------------------------------------
# Motion JSON format
# ---------------------------------------------------------------------------
# {frame_rate, joint_names, frames: [{root_translation: [3], rotations_6d: [[6] x J]}]}

def motion_to_dict(seq: MotionSequence, joint_names: list[str] | tuple[str, ...]) -> dict:
    if len(joint_names) != seq.num_joints:
        raise SkeletonMismatch(
            f"{len(joint_names)} joint names for a {seq.num_joints}-joint sequence"
        )
    return {
        "schema_version": MOTION_SCHEMA_VERSION,
        "frame_rate": seq.frame_rate,
        "joint_names": list(joint_names),
        "frames": [
            {
                "root_translation": seq.root_translation[n].tolist(),
                "rotations_6d": seq.rotations[n].tolist(),
            }
            for n in range(seq.num_frames)
        ],
    }


def motion_from_dict(payload: dict) -> tuple[MotionSequence, tuple[str, ...]]:
    if not isinstance(payload, dict):
        raise SchemaError("motion payload must be an object")
    for name in ("frame_rate", "joint_names", "frames"):
        if name not in payload:
            raise SchemaError(f"motion payload missing field {name!r}")
    joint_names = tuple(payload["joint_names"])
    frames = payload["frames"]
    if not isinstance(frames, list) or not frames:
        raise SchemaError("motion payload needs a nonempty 'frames' list")
    rotations = []
    translations = []
    for i, frame in enumerate(frames):
        try:
            rot = np.asarray(frame["rotations_6d"], dtype=np.float64)
            trans = np.asarray(frame["root_translation"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"frame {i} is malformed: {exc}") from exc
        if rot.shape != (len(joint_names), 6):
            raise SchemaError(
                f"frame {i} rotations have shape {rot.shape}, "
                f"expected ({len(joint_names)}, 6)"
            )
        if trans.shape != (3,):
            raise SchemaError(f"frame {i} root translation has shape {trans.shape}")
        rotations.append(rot)
        translations.append(trans)
    seq = MotionSequence(
        rotations=np.stack(rotations),
        root_translation=np.stack(translations),
        frame_rate=float(payload["frame_rate"]),
    )
    return seq, joint_names


def save_motion(
    seq: MotionSequence, path: str | Path, joint_names: list[str] | tuple[str, ...]
) -> Path:
    path = Path(path)
    path.write_text(json.dumps(motion_to_dict(seq, joint_names), indent=2))
    return path


def load_motion(path: str | Path) -> tuple[MotionSequence, tuple[str, ...]]:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read motion file {path}: {exc}") from exc
    return motion_from_dict(payload)
