"""Rigid motions in d dimensions and the SVD projection onto SO(d)."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import special_ortho_group

from .errors import DegenerateProjectionWarning, DimensionMismatchError, InvalidRotationError

ROTATION_TOL = 1e-9


def check_rotation(R: np.ndarray, tol: float = ROTATION_TOL) -> np.ndarray:
    """Return ``R`` as a float array, raising if it is not in SO(d)."""
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise InvalidRotationError(f"rotation must be square, got shape {R.shape}")
    d = R.shape[0]
    if not np.all(np.isfinite(R)):
        raise InvalidRotationError("rotation has non-finite entries")
    if np.max(np.abs(R.T @ R - np.eye(d))) > tol:
        raise InvalidRotationError("rotation is not orthogonal")
    det = np.linalg.det(R)
    if abs(det - 1.0) > tol:
        raise InvalidRotationError(f"rotation has determinant {det:.6g}, expected +1")
    return R


def is_rotation(R: np.ndarray, tol: float = ROTATION_TOL) -> bool:
    try:
        check_rotation(R, tol)
    except InvalidRotationError:
        return False
    return True


@dataclass
class PointSet:
    """An ordered d-dimensional point cloud, one per view/scan.

    ``points`` has shape (n, d). ``id`` is the set index in the collection.
    """

    points: np.ndarray
    id: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError(f"point set must be a nonempty (n, d) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point set has non-finite coordinates")
        self.points = pts

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class RigidTransform:
    """A rotation and translation acting as ``x -> rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray = field(default=None)

    def __post_init__(self):
        self.rotation = check_rotation(self.rotation, tol=1e-6)
        d = self.rotation.shape[0]
        if self.translation is None:
            self.translation = np.zeros(d)
        t = np.asarray(self.translation, dtype=float).reshape(-1)
        if t.shape != (d,):
            raise DimensionMismatchError(f"translation of length {t.size} for a {d}x{d} rotation")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation has non-finite entries")
        self.translation = t

    @property
    def dim(self) -> int:
        return self.rotation.shape[0]

    @classmethod
    def identity(cls, d: int) -> "RigidTransform":
        return cls(np.eye(d), np.zeros(d))

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation


def apply_transform(t: RigidTransform, p: PointSet) -> PointSet:
    if t.dim != p.dim:
        raise DimensionMismatchError(f"{t.dim}-d transform applied to {p.dim}-d point set")
    return PointSet(t.apply(p.points), id=p.id)


def project_so(A: np.ndarray) -> np.ndarray:
    """Nearest rotation to ``A`` in the Frobenius norm.

    With the SVD ``A = U diag(s) V^T`` (``s`` descending), the projection is
    ``U diag(1, ..., 1, det(U V^T)) V^T``. Accepts a single (d, d) matrix or a
    stack of shape (k, d, d).

    A zero matrix maps to the identity. Inputs whose minimizer is not unique
    (a reflection-type matrix whose two smallest singular values coincide)
    still get the formula's answer, but a ``DegenerateProjectionWarning`` is
    issued.
    """
    A = np.asarray(A, dtype=float)
    single = A.ndim == 2
    stack = A[None] if single else A
    d = stack.shape[-1]

    U, s, Vt = np.linalg.svd(stack)
    sign = np.sign(np.linalg.det(U @ Vt))
    sign[sign == 0] = 1.0
    U = U.copy()
    U[..., :, -1] *= sign[..., None]
    R = U @ Vt

    zero = s[..., 0] == 0.0
    if np.any(zero):
        warnings.warn("projection of a zero matrix onto SO(d); returning identity",
                      DegenerateProjectionWarning, stacklevel=2)
        R[zero] = np.eye(d)
    tol = 1e-12 * s[..., 0]
    tie = (sign < 0) & (s[..., -2] - s[..., -1] <= tol) & ~zero
    low_rank = (s[..., -2] <= tol) & ~zero if d > 2 else np.zeros_like(zero)
    if np.any(tie | low_rank):
        warnings.warn("projection onto SO(d) is not unique for this input",
                      DegenerateProjectionWarning, stacklevel=2)
    return R[0] if single else R


def rotation_angle(R: np.ndarray) -> float:
    """Angle of a single rotation in [0, pi]."""
    R = np.asarray(R, dtype=float)
    d = R.shape[0]
    if d == 2:
        return abs(float(np.arctan2(R[1, 0] - R[0, 1], R[0, 0] + R[1, 1])))
    if d == 3:
        # atan2(sin, cos) equals acos((tr - 1)/2) but keeps full precision near 0 and pi
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
        cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
        return float(np.arctan2(np.linalg.norm(w), cos))
    raise ValueError(f"rotation angle defined for d in (2, 3), got d={d}")


def geodesic_distance(R1: np.ndarray, R2: np.ndarray) -> float:
    """Geodesic distance on SO(d), d in {2, 3}: the angle of ``R1^T R2``."""
    R1 = np.asarray(R1, dtype=float)
    R2 = np.asarray(R2, dtype=float)
    if R1.shape != R2.shape:
        raise DimensionMismatchError(f"rotations of shape {R1.shape} and {R2.shape}")
    return rotation_angle(R1.T @ R2)


def random_rotation(seed, d: int = 3) -> np.ndarray:
    """Haar-uniform rotation in SO(d); deterministic for a given seed."""
    if d not in (2, 3):
        raise ValueError(f"unsupported dimension d={d}")
    rng = np.random.default_rng(seed)
    if d == 2:
        return rotation_2d(rng.uniform(-np.pi, np.pi))
    return special_ortho_group.rvs(3, random_state=rng)


def rotation_2d(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_x(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def axis_angle(axis, theta: float) -> np.ndarray:
    """Rodrigues formula for a rotation by ``theta`` about ``axis``."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)
