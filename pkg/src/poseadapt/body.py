"""Parametric articulated body: a shape-scaled kinematic tree posed by
per-joint axis-angle rotations, plus weak-perspective projection to 2D.

Joint 0 is the root and stays at the origin. Each non-root joint j sits at
the end of one bone: its position is the parent position plus the composed
rotation from the root down to j applied to the scaled rest bone vector.
The root's own rotation acts as a global orientation. Units: body in
meters, image coordinates normalized so the frame spans 1.0.

The chain composition is batched by tree depth (all joints at one depth
share one matrix product), which keeps the traced graph small enough for
the inner adaptation loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad

_FORMAT_TAG = "poseadapt-body 1"

# below this squared angle, Rodrigues coefficients switch to their series
# expansion so first and second derivatives stay well-conditioned at 0
_SMALL_SQ_ANGLE = 1e-8


@dataclass(frozen=True)
class BodySpec:
    """Kinematic tree. Bone k-1 connects ``parents[k]`` to joint k."""

    parents: np.ndarray    # (K,) int, parents[0] == 0, parents[j] < j
    rest_dirs: np.ndarray  # (K-1, 3) unit bone directions at rest
    rest_lens: np.ndarray  # (K-1,) bone lengths in meters, > 0

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        dirs = np.asarray(self.rest_dirs, dtype=np.float64)
        lens = np.asarray(self.rest_lens, dtype=np.float64)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "rest_dirs", dirs)
        object.__setattr__(self, "rest_lens", lens)
        k = parents.shape[0]
        if k < 2:
            raise ValueError("body needs at least 2 joints")
        if parents[0] != 0:
            raise ValueError("joint 0 must be its own parent (root)")
        if np.any(parents[1:] < 0) or np.any(parents[1:] >= np.arange(1, k)):
            raise ValueError("parents must form a tree with parents[j] < j")
        if dirs.shape != (k - 1, 3):
            raise ValueError(f"rest_dirs must have shape ({k - 1}, 3)")
        if lens.shape != (k - 1,):
            raise ValueError(f"rest_lens must have shape ({k - 1},)")
        norms = np.linalg.norm(dirs, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("rest directions must be unit vectors")
        if np.any(lens <= 0.0):
            raise ValueError("rest lengths must be positive")

    @property
    def n_joints(self) -> int:
        return int(self.parents.shape[0])


@dataclass(frozen=True)
class ShapeParams:
    """Per-bone length multipliers, strictly positive."""

    scales: np.ndarray  # (K-1,)

    def __post_init__(self):
        scales = np.asarray(self.scales, dtype=np.float64)
        object.__setattr__(self, "scales", scales)
        if not np.all(np.isfinite(scales)):
            raise ValueError("shape scales must be finite")
        if np.any(scales <= 0.0):
            raise ValueError("shape scales must be positive")


@dataclass(frozen=True)
class PoseParams:
    """Per-joint axis-angle rotations (radians).

    Joint vectors with magnitude above pi are rescaled to magnitude pi at
    construction; any rotation can be expressed within that range.
    """

    rotations: np.ndarray  # (K, 3)

    def __post_init__(self):
        rot = np.asarray(self.rotations, dtype=np.float64)
        if rot.ndim != 2 or rot.shape[1] != 3:
            raise ValueError("rotations must have shape (K, 3)")
        if not np.all(np.isfinite(rot)):
            raise ValueError("rotations must be finite")
        norms = np.linalg.norm(rot, axis=1)
        over = norms > math.pi
        if np.any(over):
            rot = rot.copy()
            rot[over] *= (math.pi / norms[over])[:, None]
        object.__setattr__(self, "rotations", rot)


@dataclass(frozen=True)
class CameraParams:
    """Weak-perspective camera: image point = scale * (x, y) + offset."""

    scale: float
    offset: np.ndarray  # (2,)

    def __post_init__(self):
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=np.float64))
        if not (self.scale > 0.0 and np.isfinite(self.scale)):
            raise ValueError("camera scale must be positive and finite")
        if self.offset.shape != (2,):
            raise ValueError("camera offset must have shape (2,)")
        if not np.all(np.isfinite(self.offset)):
            raise ValueError("camera offset must be finite")


_skew_maps: dict[int, np.ndarray] = {}


def _skew_map(k: int) -> np.ndarray:
    """Constant linear map: flattened (K,3) angles -> flattened (K,3,3) skews."""
    m = _skew_maps.get(k)
    if m is None:
        m = np.zeros((9 * k, 3 * k))
        for j in range(k):
            x, y, z = 3 * j, 3 * j + 1, 3 * j + 2
            r = 9 * j
            m[r + 1, z] = -1.0
            m[r + 2, y] = 1.0
            m[r + 3, z] = 1.0
            m[r + 5, x] = -1.0
            m[r + 6, y] = -1.0
            m[r + 7, x] = 1.0
        _skew_maps[k] = m
    return m


def rodrigues(theta):
    """Rotation matrices for axis-angle vectors, shape (..., K, 3) -> (..., K, 3, 3).

    Accepts plain arrays or autodiff tensors. Near zero angle the
    sin(t)/t and (1-cos t)/t^2 coefficients use their series expansion.
    """
    shape = ad.value_of(theta).shape
    if len(shape) < 2 or shape[-1] != 3:
        raise ValueError("theta must have shape (..., K, 3)")
    k = shape[-2]
    batch = shape[:-2]
    nb = int(np.prod(batch)) if batch else 1

    sq = (theta * theta).sum(axis=-1)                       # (..., K) squared angles
    small = ad.value_of(sq) < _SMALL_SQ_ANGLE
    safe = ad.where(small, np.ones(sq.shape), sq)
    ang = ad.sqrt(safe)
    sin_c = ad.where(small, 1.0 - sq * (1.0 / 6.0) + sq * sq * (1.0 / 120.0),
                     ad.sin(ang) / ang)
    cos_c = ad.where(small, 0.5 - sq * (1.0 / 24.0) + sq * sq * (1.0 / 720.0),
                     (1.0 - ad.cos(ang)) / safe)

    flat = theta.reshape((nb, 3 * k))
    skew = (flat @ _skew_map(k).T).reshape(batch + (k, 3, 3))
    skew2 = skew @ skew
    sin_c = sin_c.reshape(batch + (k, 1, 1))
    cos_c = cos_c.reshape(batch + (k, 1, 1))
    return np.eye(3) + sin_c * skew + cos_c * skew2


@lru_cache(maxsize=32)
def _chain_plan(parents: tuple):
    """Depth-level batching plan for a parent list.

    Joints are regrouped by tree depth so each level composes with one
    batched matrix product. ``ancestors`` maps rotated bone vectors (in
    level order) to joint positions: positions = ancestors @ rotated.
    """
    k = len(parents)
    depth = [0] * k
    for j in range(1, k):
        depth[j] = depth[parents[j]] + 1
    order = [0]
    levels = []
    for d in range(1, max(depth) + 1):
        joints = [j for j in range(1, k) if depth[j] == d]
        levels.append(joints)
        order.extend(joints)
    pos_in_order = {j: i for i, j in enumerate(order)}
    level_joints = [np.array(js) for js in levels]
    level_parents = [np.array([pos_in_order[parents[j]] for j in js]) for js in levels]
    bone_order = np.array([j - 1 for j in order[1:]])
    ancestors = np.zeros((k, k - 1))
    for j in range(1, k):
        a = j
        while a != 0:
            ancestors[j, pos_in_order[a] - 1] = 1.0
            a = parents[a]
    return level_joints, level_parents, bone_order, ancestors


def forward_kinematics(spec: BodySpec, beta, theta):
    """3D joint positions, shape (..., K, 3), root at the origin.

    ``beta``: (..., K-1) positive per-bone scales; ``theta``: (..., K, 3)
    axis-angle rotations. Typed params, plain arrays and autodiff tensors
    are all accepted; with tensor inputs the result is differentiable.
    """
    if isinstance(beta, ShapeParams):
        beta = beta.scales
    if isinstance(theta, PoseParams):
        theta = theta.rotations
    k = spec.n_joints
    tshape = ad.value_of(theta).shape
    bshape = ad.value_of(beta).shape
    if tshape[-2:] != (k, 3):
        raise ValueError(f"theta must have shape (..., {k}, 3)")
    if bshape[-1:] != (k - 1,) or bshape[:-1] != tshape[:-2]:
        raise ValueError(f"beta must have shape (..., {k - 1})")
    batch = tshape[:-2]

    level_joints, level_parents, bone_order, ancestors = _chain_plan(
        tuple(int(p) for p in spec.parents)
    )
    rot = rodrigues(theta)
    bones = spec.rest_dirs * spec.rest_lens[:, None]        # (K-1, 3) at rest
    scaled = beta.reshape(bshape + (1,)) * bones            # (..., K-1, 3)

    # compose one tree depth at a time; chain holds rotations in level order
    chain = rot[..., 0:1, :, :]
    for joints, parents_pos in zip(level_joints, level_parents):
        parent_rot = chain[..., parents_pos, :, :]
        chain = ad.concat([chain, parent_rot @ rot[..., joints, :, :]], axis=-3)

    ordered_bones = scaled[..., bone_order, :]
    rotated = (chain[..., 1:, :, :] @ ordered_bones.reshape(
        batch + (k - 1, 3, 1)
    )).reshape(batch + (k - 1, 3))
    return ancestors @ rotated


def project(joints, camera):
    """Weak-perspective projection: scale * (x, y) + offset; depth is ignored.

    ``camera`` is a CameraParams or a (scale, offset) pair; ``joints`` has
    shape (..., K, 3). Returns (..., K, 2).
    """
    if isinstance(camera, CameraParams):
        s, t = camera.scale, camera.offset
    else:
        s, t = camera
    return s * joints[..., :2] + t


# default humanoid: torso chain with arms at chain joint 2 and legs at the
# root; directions/lengths chosen for roughly human proportions (total bone
# length about 3.9 m)
_HUMANOID_DIRS = {
    "torso": (0.0, 1.0, 0.0),
    "l_upper_arm": (-0.96, -0.22, 0.14),
    "l_forearm": (-0.88, -0.44, 0.13),
    "r_upper_arm": (0.96, -0.22, 0.14),
    "r_forearm": (0.88, -0.44, 0.13),
    "l_thigh": (-0.16, -0.98, 0.06),
    "l_shank": (0.0, -1.0, 0.09),
    "r_thigh": (0.16, -0.98, 0.06),
    "r_shank": (0.0, -1.0, 0.09),
}
_HUMANOID_TORSO_LENS = (0.28, 0.26, 0.13, 0.15)  # spine, chest, neck, head
_HUMANOID_LIMB_LENS = {
    "upper_arm": 0.30,
    "forearm": 0.27,
    "thigh": 0.48,
    "shank": 0.48,
}


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def default_body(n_joints: int) -> BodySpec:
    """Deterministic body spec for a given joint count.

    For ``n_joints >= 13``: a torso chain (extra joints extend the chain),
    two 2-bone arms attached at chain joint 2, and two 2-bone legs attached
    at the root -- 5 branches. Below 13 joints: a serial chain with mildly
    zig-zagging directions so the rest pose is not collinear.
    """
    if n_joints < 2:
        raise ValueError("a body needs at least 2 joints")
    if n_joints < 13:
        parents = [0] + list(range(n_joints - 1))
        dirs = [
            _unit((1.0, 0.25 * (-1.0) ** j, 0.1 * ((j % 3) - 1)))
            for j in range(n_joints - 1)
        ]
        lens = [0.3] * (n_joints - 1)
        return BodySpec(np.array(parents), np.array(dirs), np.array(lens))

    n_chain = n_joints - 9  # chain bones; 4 for the 13-joint default
    parents = [0] + [j - 1 for j in range(1, n_chain + 1)]
    dirs = [_HUMANOID_DIRS["torso"]] * n_chain
    lens = list(_HUMANOID_TORSO_LENS) + [0.2] * (n_chain - 4)

    def limb(attach, d1, d2, l1, l2):
        j1 = len(parents)
        parents.extend([attach, j1])
        dirs.extend([_HUMANOID_DIRS[d1], _HUMANOID_DIRS[d2]])
        lens.extend([_HUMANOID_LIMB_LENS[l1], _HUMANOID_LIMB_LENS[l2]])

    limb(2, "l_upper_arm", "l_forearm", "upper_arm", "forearm")
    limb(2, "r_upper_arm", "r_forearm", "upper_arm", "forearm")
    limb(0, "l_thigh", "l_shank", "thigh", "shank")
    limb(0, "r_thigh", "r_shank", "thigh", "shank")

    return BodySpec(
        np.array(parents),
        np.array([_unit(d) for d in dirs]),
        np.array(lens, dtype=np.float64),
    )


def save_body(spec: BodySpec, path) -> None:
    """Write a body spec in the documented key-value text format."""
    lines = [_FORMAT_TAG, f"joints {spec.n_joints}",
             "parents " + " ".join(str(int(p)) for p in spec.parents)]
    for j in range(1, spec.n_joints):
        d = spec.rest_dirs[j - 1]
        lines.append(
            "bone %d %r %r %r %r"
            % (j, float(d[0]), float(d[1]), float(d[2]), float(spec.rest_lens[j - 1]))
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_body(path) -> BodySpec:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != _FORMAT_TAG:
        raise ValueError(f"not a body spec file (expected '{_FORMAT_TAG}' header)")
    if not lines[1].startswith("joints "):
        raise ValueError("missing joint count")
    k = int(lines[1].split()[1])
    if not lines[2].startswith("parents "):
        raise ValueError("missing parent list")
    parents = np.array([int(v) for v in lines[2].split()[1:]])
    dirs = np.zeros((k - 1, 3))
    lens = np.zeros(k - 1)
    for ln in lines[3:]:
        tok = ln.split()
        if tok[0] != "bone" or len(tok) != 6:
            raise ValueError(f"malformed bone line: {ln!r}")
        j = int(tok[1])
        dirs[j - 1] = [float(tok[2]), float(tok[3]), float(tok[4])]
        lens[j - 1] = float(tok[5])
    return BodySpec(parents, dirs, lens)
