"""Rotation representations, rigid transforms, and 3D model-point handling.

Conventions: rotation matrices are 3x3, act on column vectors, and map
object-frame points into the camera frame (right-handed, +z along the
optical axis).  Translations are in meters.  The continuous 6D rotation
encoding is the first two columns of the rotation matrix flattened as
``r6 = [a1, a2]``; decoding runs Gram-Schmidt on (a1, a2) and completes
the basis with a cross product, so it is invariant to positive rescaling
of either half.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .exceptions import DegenerateInput, EmptyMesh, ParseError

GRAM_SCHMIDT_TOL = 1e-12
ROTATION_TOL = 1e-9


def check_rotation(m, tol=ROTATION_TOL):
    """Validate and return a proper rotation matrix as float64 (3, 3).

    Raises DegenerateInput unless ``m.T @ m`` is the identity within ``tol``
    (Frobenius norm) and ``det(m) = +1`` within ``tol``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise DegenerateInput(f"rotation must be 3x3, got {m.shape}")
    err = np.linalg.norm(m.T @ m - np.eye(3))
    if err > tol:
        raise DegenerateInput(f"matrix is not orthonormal (|R^T R - I| = {err:.3e})")
    det = np.linalg.det(m)
    if abs(det - 1.0) > tol:
        raise DegenerateInput(f"matrix determinant {det:.12f} != +1")
    return m


@dataclass(frozen=True)
class Pose:
    """Rigid transform: ``x_cam = rotation @ x_obj + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise DegenerateInput("translation has non-finite components")
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity():
        return Pose(np.eye(3), np.zeros(3))


def compose(outer: Pose, inner: Pose) -> Pose:
    """The pose applying ``inner`` first, then ``outer``."""
    return Pose(outer.rotation @ inner.rotation,
                outer.rotation @ inner.translation + outer.translation)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DegenerateInput("focal lengths must be positive")


def points_diameter(points):
    """Exact max pairwise distance, O(n^2)."""
    points = np.asarray(points, dtype=np.float64)
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())


@dataclass(frozen=True)
class ModelPoints:
    """Subsampled 3D model points (object frame, meters) with symmetry flag.

    ``diameter`` is the max pairwise distance over the stored subset; it is
    computed on construction and cached.
    """

    points: np.ndarray
    symmetric: bool = False
    diameter: float = field(default=None)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
            raise EmptyMesh(f"points must be a non-empty (n, 3) array, got {pts.shape}")
        object.__setattr__(self, "points", pts)
        if self.diameter is None:
            object.__setattr__(self, "diameter", points_diameter(pts))

    def __len__(self):
        return len(self.points)


# ---- quaternions / random rotations ----------------------------------------

def quaternion_to_matrix(q):
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_rotation(rng):
    """Uniform random rotation: a normalized 4D Gaussian sample as quaternion."""
    q = rng.normal(size=4)
    n = np.linalg.norm(q)
    while n < 1e-12:  # pragma: no cover - probability ~0
        q = rng.normal(size=4)
        n = np.linalg.norm(q)
    return quaternion_to_matrix(q / n)


# ---- 6D rotation representation ---------------------------------------------

def _cross(u, v):
    # last-axis cross product that also works on traced tensors
    ux, uy, uz = (ad.index_last(u, k) for k in range(3))
    vx, vy, vz = (ad.index_last(v, k) for k in range(3))
    return ad.stack([uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx], axis=-1)


def rot6d_to_matrix(r6):
    """Decode a 6D rotation encoding into a rotation matrix.

    ``r6`` has shape (..., 6) = [a1, a2]; the result has shape (..., 3, 3)
    with columns (b1, b2, b3) where b1 = a1/|a1|, b2 is a2 Gram-Schmidt
    orthogonalized against b1, and b3 = b1 x b2.  Works on plain arrays and
    traced tensors (the decode is differentiable in the raw 6 values).
    """
    data = ad.asdata(r6)
    if data.shape[-1] != 6:
        raise DegenerateInput(f"rot6d must have last dimension 6, got {data.shape}")
    if not ad.is_tensor(r6):
        r6 = data
    a1 = r6[..., 0:3]
    a2 = r6[..., 3:6]

    n1 = ad.l2norm(a1, axis=-1, keepdims=True)
    if np.any(ad.asdata(n1) <= GRAM_SCHMIDT_TOL):
        raise DegenerateInput("first 6D rotation axis has (near-)zero norm")
    b1 = a1 / n1
    proj = ad.sum(b1 * a2, axis=-1, keepdims=True)
    u2 = a2 - proj * b1
    n2 = ad.l2norm(u2, axis=-1, keepdims=True)
    if np.any(ad.asdata(n2) <= GRAM_SCHMIDT_TOL):
        raise DegenerateInput("second 6D rotation axis is (near-)parallel to the first")
    b2 = u2 / n2
    b3 = _cross(b1, b2)
    return ad.stack([b1, b2, b3], axis=-1)


def matrix_to_rot6d(m):
    """Encode a rotation matrix as its first two columns, shape (..., 6)."""
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


# ---- egocentric / allocentric ------------------------------------------------

def _view_rotation(t):
    """Minimal rotation taking the optical axis (0, 0, 1) to t/|t|."""
    t = np.asarray(t, dtype=np.float64)
    n = np.linalg.norm(t)
    if n <= 1e-9:
        raise DegenerateInput("object at the camera origin has no viewing ray")
    d = t / n
    c = d[2]
    if c >= 1.0 - 1e-15:
        return np.eye(3)
    if c <= -1.0 + 1e-15:
        # directly behind the camera: 180 degrees about x
        return np.diag([1.0, -1.0, -1.0])
    v = np.array([-d[1], d[0], 0.0])  # z cross d
    vx = np.array([[0.0, -v[2], v[1]],
                   [v[2], 0.0, -v[0]],
                   [-v[1], v[0], 0.0]])
    return np.eye(3) + vx + vx @ vx * (1.0 / (1.0 + c))


def egocentric_to_allocentric(pose: Pose) -> Pose:
    """Re-express the rotation relative to the viewing ray of the object."""
    rv = _view_rotation(pose.translation)
    return Pose(rv.T @ pose.rotation, pose.translation)


def allocentric_to_egocentric(pose: Pose) -> Pose:
    rv = _view_rotation(pose.translation)
    return Pose(rv @ pose.rotation, pose.translation)


# ---- model point utilities ----------------------------------------------------

def subsample_points(vertices, k, seed, symmetric=False):
    """Pick ``k`` distinct vertices uniformly without replacement.

    Deterministic for a fixed seed; if there are at most ``k`` vertices all
    of them are returned.  The diameter is computed on the returned subset.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.ndim != 2 or vertices.shape[1] != 3 or vertices.shape[0] == 0:
        raise EmptyMesh(f"vertices must be a non-empty (n, 3) array, got {vertices.shape}")
    if k < 1:
        raise EmptyMesh("k must be >= 1")
    if len(vertices) <= k:
        return ModelPoints(vertices.copy(), symmetric=symmetric)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(vertices), size=k, replace=False))
    return ModelPoints(vertices[idx], symmetric=symmetric)


def transform_points(points, pose: Pose):
    """Apply ``x -> R x + t`` to every point; accepts ModelPoints or (n, 3)."""
    pts = points.points if isinstance(points, ModelPoints) else np.asarray(points, dtype=np.float64)
    return pts @ pose.rotation.T + pose.translation


# ---- PLY mesh reading ----------------------------------------------------------

def load_ply_vertices(path, scale=1.0):
    """Read vertex positions from an ascii PLY file, ignoring everything else.

    Only ``element vertex`` with float x/y/z properties is interpreted;
    faces and any other elements are skipped.  ``scale`` multiplies the
    coordinates (pass 1e-3 for millimeter meshes).
    """
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = [ln.strip() for ln in fh]
    if not lines or lines[0] != "ply":
        raise ParseError(f"{path}: not a PLY file (missing 'ply' magic)")
    elements = []  # (name, count, n_properties, prop_names)
    i = 1
    fmt_seen = False
    while i < len(lines):
        ln = lines[i]
        i += 1
        if ln.startswith("comment") or not ln:
            continue
        if ln.startswith("format"):
            if "ascii" not in ln:
                raise ParseError(f"{path}: only ascii PLY is supported, got {ln!r}")
            fmt_seen = True
        elif ln.startswith("element"):
            parts = ln.split()
            if len(parts) != 3:
                raise ParseError(f"{path}: malformed element line {ln!r}")
            elements.append([parts[1], int(parts[2]), []])
        elif ln.startswith("property"):
            if not elements:
                raise ParseError(f"{path}: property before any element")
            elements[-1][2].append(ln.split()[-1])
        elif ln == "end_header":
            break
    else:
        raise ParseError(f"{path}: missing end_header")
    if not fmt_seen:
        raise ParseError(f"{path}: missing format line")

    verts = None
    for name, count, props in elements:
        if name == "vertex":
            try:
                cols = [props.index(c) for c in ("x", "y", "z")]
            except ValueError as exc:
                raise ParseError(f"{path}: vertex element lacks x/y/z properties") from exc
            rows = np.empty((count, 3))
            for r in range(count):
                if i + r >= len(lines):
                    raise ParseError(f"{path}: truncated vertex data at row {r}")
                fields = lines[i + r].split()
                try:
                    rows[r] = [float(fields[c]) for c in cols]
                except (ValueError, IndexError) as exc:
                    raise ParseError(f"{path}: bad vertex row {r}: {lines[i + r]!r}") from exc
            verts = rows
        i += count  # each element occupies exactly one line per item
    if verts is None:
        raise ParseError(f"{path}: no vertex element found")
    if len(verts) == 0:
        raise EmptyMesh(f"{path}: vertex element is empty")
    return verts * float(scale)
