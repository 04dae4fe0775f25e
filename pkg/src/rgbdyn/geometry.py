"""SE(3) poses, pinhole camera model, projection and parallax.

Conventions used everywhere in this package:

* A ``Pose`` is camera-to-world: applying it to a camera-frame point yields
  a world-frame point.  The camera center in world coordinates is ``pose.t``.
* Quaternions are stored ``(w, x, y, z)`` and kept normalized with ``w >= 0``.
* Pixel coordinates are continuous; integer values coincide with pixel
  centers (row/column indices), so ``u`` is the column and ``v`` the row.
* Depth is the z-coordinate along the optical axis, in meters.
* Twists are 6-vectors ``(rho, phi)``: translational part first, rotational
  part (axis-angle) second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

# Below this rotation angle (radians) closed-form Rodrigues terms switch to
# their Taylor expansions to avoid 0/0.
_SMALL_ANGLE = 1e-8


class PixelObs(NamedTuple):
    """A pixel observation: sub-pixel image location plus optional depth."""

    u: float
    v: float
    depth: Optional[float] = None


def _skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to quaternion via the largest-component branch.

    Selecting the pivot from the largest of (w, x, y, z) keeps the
    conversion well conditioned for all angles, including near 180 degrees.
    """
    m00, m01, m02 = R[0]
    m10, m11, m12 = R[1]
    m20, m21, m22 = R[2]
    tr = m00 + m11 + m22
    candidates = np.array([tr, m00, m11, m22])
    pivot = int(np.argmax(candidates))
    if pivot == 0:
        s = math.sqrt(max(tr + 1.0, 0.0)) * 2.0
        q = np.array([0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s])
    elif pivot == 1:
        s = math.sqrt(max(1.0 + m00 - m11 - m22, 0.0)) * 2.0
        q = np.array([(m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s])
    elif pivot == 2:
        s = math.sqrt(max(1.0 + m11 - m00 - m22, 0.0)) * 2.0
        q = np.array([(m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s])
    else:
        s = math.sqrt(max(1.0 + m22 - m00 - m11, 0.0)) * 2.0
        q = np.array([(m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s])
    return q / np.linalg.norm(q)


def quat_slerp(qa: np.ndarray, qb: np.ndarray, s: float) -> np.ndarray:
    """Spherical interpolation between two unit quaternions, shortest arc."""
    qa = np.asarray(qa, dtype=float)
    qb = np.asarray(qb, dtype=float)
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    if dot > 1.0 - 1e-12:
        out = qa + s * (qb - qa)
        return out / np.linalg.norm(out)
    theta = math.acos(min(dot, 1.0))
    sin_theta = math.sin(theta)
    wa = math.sin((1.0 - s) * theta) / sin_theta
    wb = math.sin(s * theta) / sin_theta
    out = wa * qa + wb * qb
    return out / np.linalg.norm(out)


def _so3_exp_quat(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    if theta < _SMALL_ANGLE:
        # sin(t/2)/t ~ 1/2 - t^2/48
        k = 0.5 - theta * theta / 48.0
        q = np.concatenate(([1.0 - theta * theta / 8.0], k * phi))
    else:
        half = 0.5 * theta
        q = np.concatenate(([math.cos(half)], (math.sin(half) / theta) * phi))
    return q / np.linalg.norm(q)


def _so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    """V(phi) with exp translation: t = V(phi) @ rho."""
    theta = float(np.linalg.norm(phi))
    W = _skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + (W @ W) / 6.0
    a = (1.0 - math.cos(theta)) / (theta * theta)
    b = (theta - math.sin(theta)) / (theta * theta * theta)
    return np.eye(3) + a * W + b * (W @ W)


def _so3_left_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    W = _skew(phi)
    if theta < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + (W @ W) / 12.0
    half = 0.5 * theta
    # 1 - (t/2)·cot(t/2), stable through t = pi since sin(t/2) stays near 1.
    coef = (1.0 - half * math.cos(half) / math.sin(half)) / (theta * theta)
    return np.eye(3) - 0.5 * W + coef * (W @ W)


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform: x_world = R @ x_cam + t."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float).reshape(4)
        t = np.asarray(self.t, dtype=float).reshape(3)
        norm = np.linalg.norm(q)
        if not norm > 0.0:
            raise ValueError("zero-norm quaternion")
        q = q / norm
        if q[0] < 0.0:
            q = -q
        q.setflags(write=False)
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_rt(R: np.ndarray, t: np.ndarray) -> "Pose":
        return Pose(matrix_to_quat(np.asarray(R, dtype=float)), t)

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform camera-frame point(s) (…,3) into the world frame."""
        R = self.rotation_matrix()
        pts = np.asarray(points, dtype=float)
        return pts @ R.T + self.t

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        """Transform world-frame point(s) (…,3) into the camera frame."""
        R = self.rotation_matrix()
        pts = np.asarray(points, dtype=float)
        return (pts - self.t) @ R

    def compose(self, other: "Pose") -> "Pose":
        q = quat_mul(self.q, other.q)
        t = self.apply(other.t)
        return Pose(q, t)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        qc = np.array([self.q[0], -self.q[1], -self.q[2], -self.q[3]])
        Rt = self.rotation_matrix().T
        return Pose(qc, -(Rt @ self.t))

    @staticmethod
    def exp(twist: np.ndarray) -> "Pose":
        """Exponential map from a twist (rho, phi) to a Pose."""
        twist = np.asarray(twist, dtype=float).reshape(6)
        rho, phi = twist[:3], twist[3:]
        q = _so3_exp_quat(phi)
        t = _so3_left_jacobian(phi) @ rho
        return Pose(q, t)

    def log(self) -> np.ndarray:
        """Inverse of :meth:`exp`; rotation angle is in [0, pi]."""
        w = float(self.q[0])
        v = np.asarray(self.q[1:])
        sin_half = float(np.linalg.norm(v))
        theta = 2.0 * math.atan2(sin_half, w)
        if sin_half < _SMALL_ANGLE:
            phi = v * (2.0 / max(w, _SMALL_ANGLE))
        else:
            phi = v * (theta / sin_half)
        rho = _so3_left_jacobian_inv(phi) @ self.t
        return np.concatenate([rho, phi])

    def rotation_angle(self) -> float:
        """Rotation magnitude in radians, in [0, pi]."""
        sin_half = float(np.linalg.norm(self.q[1:]))
        return 2.0 * math.atan2(sin_half, float(self.q[0]))

    def relative_to(self, other: "Pose") -> "Pose":
        """Motion from ``other`` to ``self``: other.compose(result) == self."""
        return other.inverse().compose(self)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation_matrix()
        M[:3, 3] = self.t
        return M


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics for a rectified image."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


def project(p: np.ndarray, k: Intrinsics) -> Optional[PixelObs]:
    """Project a camera-frame point; ``None`` when behind or out of view."""
    x, y, z = np.asarray(p, dtype=float)
    if z <= 1e-6:
        return None
    u = k.fx * x / z + k.cx
    v = k.fy * y / z + k.cy
    if not (0.0 <= u < k.width and 0.0 <= v < k.height):
        return None
    return PixelObs(u, v, z)


def project_points(pts: np.ndarray, k: Intrinsics):
    """Vectorized projection of camera-frame points (N,3).

    Returns ``(uv (N,2), z (N,), valid (N,))``; ``uv`` rows are undefined
    where ``valid`` is false.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    z = pts[:, 2]
    safe_z = np.where(z > 1e-6, z, 1.0)
    u = k.fx * pts[:, 0] / safe_z + k.cx
    v = k.fy * pts[:, 1] / safe_z + k.cy
    valid = (z > 1e-6) & (u >= 0.0) & (u < k.width) & (v >= 0.0) & (v < k.height)
    return np.stack([u, v], axis=1), z, valid


def backproject(px: PixelObs, k: Intrinsics) -> np.ndarray:
    """Lift a pixel with depth to a camera-frame 3D point."""
    if px.depth is None or not px.depth > 0:
        raise ValueError("backproject requires a positive depth")
    z = float(px.depth)
    return np.array([(px.u - k.cx) / k.fx * z, (px.v - k.cy) / k.fy * z, z])


def backproject_pixels(us: np.ndarray, vs: np.ndarray, zs: np.ndarray, k: Intrinsics) -> np.ndarray:
    """Vectorized backprojection to camera-frame points (N,3)."""
    us = np.asarray(us, dtype=float)
    vs = np.asarray(vs, dtype=float)
    zs = np.asarray(zs, dtype=float)
    return np.stack([(us - k.cx) / k.fx * zs, (vs - k.cy) / k.fy * zs, zs], axis=-1)


def parallax_angle(X: np.ndarray, c1: np.ndarray, c2: np.ndarray) -> float:
    """Angle in degrees at 3D point ``X`` between the rays to two camera centers."""
    r1 = np.asarray(c1, dtype=float) - np.asarray(X, dtype=float)
    r2 = np.asarray(c2, dtype=float) - np.asarray(X, dtype=float)
    n1 = np.linalg.norm(r1)
    n2 = np.linalg.norm(r2)
    if n1 <= 0.0 or n2 <= 0.0:
        raise ValueError("degenerate ray: point coincides with a camera center")
    cross = np.linalg.norm(np.cross(r1, r2))
    dot = float(np.dot(r1, r2))
    return math.degrees(math.atan2(cross, dot))


def projection_jacobian(pose: Pose, X_w: np.ndarray, k: Intrinsics) -> np.ndarray:
    """d(pixel)/d(twist) for a left perturbation of the camera-to-world pose.

    With residual r(delta) = project(inverse(exp(delta) ∘ pose) · X_w), the
    returned (2,6) matrix is dr/ddelta at delta = 0, twist ordered (rho, phi).
    """
    R = pose.rotation_matrix()
    X_c = (np.asarray(X_w, dtype=float) - pose.t) @ R
    x, y, z = X_c
    if z <= 1e-6:
        raise ValueError("point is behind the camera")
    J_proj = np.array(
        [
            [k.fx / z, 0.0, -k.fx * x / (z * z)],
            [0.0, k.fy / z, -k.fy * y / (z * z)],
        ]
    )
    J_cam = np.hstack([-R.T, R.T @ _skew(np.asarray(X_w, dtype=float))])
    return J_proj @ J_cam
