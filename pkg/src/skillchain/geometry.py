"""
Rigid-body pose algebra on SE(3).

Poses store a unit quaternion ``q = (w, x, y, z)`` and a translation ``t``
in meters. Arithmetic is done on plain Python floats: poses are tiny and
composed millions of times inside the planner and the trial loop, where
numpy's per-call overhead dominates.

Twists are ordered ``(omega, v)``, rotational part first, matching the
serialized form ``[wx, wy, wz, vx, vy, vz]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# Below this angle exp/log switch to a Taylor expansion.
SMALL_ANGLE = 1e-8
# The logarithm refuses rotations closer than this to pi.
NEAR_PI = 1e-6

DEFAULT_SIGMA_ROT = 0.05
DEFAULT_SIGMA_TRANS = 0.01


class AngleNearPi(ValueError):
    """Rotation angle too close to pi for a well-conditioned logarithm."""


def _normalize(q):
    w, x, y, z = q
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if n == 0.0:
        raise ValueError("zero quaternion")
    return (w / n, x / n, y / n, z / n)


def _qmul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def _qrot(q, v):
    # v' = v + 2 w (u x v) + 2 u x (u x v)
    w, x, y, z = q
    vx, vy, vz = v
    cx = y * vz - z * vy
    cy = z * vx - x * vz
    cz = x * vy - y * vx
    return (
        vx + 2.0 * (w * cx + y * cz - z * cy),
        vy + 2.0 * (w * cy + z * cx - x * cz),
        vz + 2.0 * (w * cz + x * cy - y * cx),
    )


@dataclass(frozen=True)
class Pose:
    """An element of SE(3): rotation ``q`` (w, x, y, z) and translation ``t``."""

    q: tuple = (1.0, 0.0, 0.0, 0.0)
    t: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "q", _normalize(tuple(float(c) for c in self.q)))
        object.__setattr__(self, "t", tuple(float(c) for c in self.t))
        if len(self.q) != 4 or len(self.t) != 3:
            raise ValueError("pose needs a 4-quaternion and a 3-translation")

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> "Pose":
        return cls(t=(x, y, z))

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float, t=(0.0, 0.0, 0.0)) -> "Pose":
        ax = np.asarray(axis, dtype=float)
        n = np.linalg.norm(ax)
        if n == 0.0:
            return cls(t=t)
        ax = ax / n
        s = math.sin(0.5 * angle)
        return cls(q=(math.cos(0.5 * angle), *(ax * s)), t=t)

    @classmethod
    def from_yaw(cls, yaw: float, t=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(q=(math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)), t=t)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(q=_matrix_to_quat(m[:3, :3]), t=m[:3, 3])

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Pose":
        """Parse ``[qw, qx, qy, qz, tx, ty, tz]``."""
        if len(values) != 7:
            raise ValueError(f"pose needs 7 numbers, got {len(values)}")
        return cls(q=values[:4], t=values[4:])

    def to_list(self) -> list:
        return [*self.q, *self.t]

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.q)
        m[:3, 3] = self.t
        return m

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    @property
    def yaw(self) -> float:
        w, x, y, z = self.q
        return math.atan2(2.0 * (w * z + x * y), 1.0 - 2.0 * (y * y + z * z))

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)

    def transform_point(self, p: Sequence[float]) -> tuple:
        r = _qrot(self.q, p)
        return (r[0] + self.t[0], r[1] + self.t[1], r[2] + self.t[2])

    def with_translation(self, t) -> "Pose":
        return Pose(self.q, t)


@dataclass(frozen=True)
class Twist:
    """Tangent vector of SE(3): angular part ``omega`` (rad), linear part ``v`` (m)."""

    omega: tuple = (0.0, 0.0, 0.0)
    v: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple(float(c) for c in self.omega))
        object.__setattr__(self, "v", tuple(float(c) for c in self.v))

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Twist":
        if len(values) != 6:
            raise ValueError(f"twist needs 6 numbers, got {len(values)}")
        return cls(values[:3], values[3:])

    def to_list(self) -> list:
        return [*self.omega, *self.v]

    def as_array(self) -> np.ndarray:
        return np.array(self.to_list())


@dataclass(frozen=True)
class PerturbationSpec:
    """Diagonal Gaussian noise on twists: three rotational then three translational sigmas."""

    sigma: tuple = (DEFAULT_SIGMA_ROT,) * 3 + (DEFAULT_SIGMA_TRANS,) * 3

    def __post_init__(self):
        sigma = tuple(float(s) for s in self.sigma)
        if len(sigma) != 6:
            raise ValueError("sigma needs 6 entries")
        if any(s < 0 or not math.isfinite(s) for s in sigma):
            raise ValueError(f"sigma entries must be finite and >= 0, got {sigma}")
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def isotropic(cls, rot: float, trans: float) -> "PerturbationSpec":
        return cls((rot,) * 3 + (trans,) * 3)

    @classmethod
    def zero(cls) -> "PerturbationSpec":
        return cls((0.0,) * 6)

    @property
    def is_zero(self) -> bool:
        return not any(self.sigma)


IDENTITY = Pose()


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _matrix_to_quat(r: np.ndarray):
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        return (0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s)
    i = int(np.argmax(np.diag(r)))
    if i == 0:
        s = 2.0 * math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        return ((r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s)
    if i == 1:
        s = 2.0 * math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        return ((r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s)
    s = 2.0 * math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
    return ((r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s)


def compose(a: Pose, b: Pose) -> Pose:
    """Frame composition ``a * b``: apply ``b`` expressed in the frame of ``a``."""
    rt = _qrot(a.q, b.t)
    return Pose(
        _qmul(a.q, b.q),
        (a.t[0] + rt[0], a.t[1] + rt[1], a.t[2] + rt[2]),
    )


def inverse(p: Pose) -> Pose:
    w, x, y, z = p.q
    qi = (w, -x, -y, -z)
    rt = _qrot(qi, p.t)
    return Pose(qi, (-rt[0], -rt[1], -rt[2]))


def relative_pose(world_obj: Pose, world_ee: Pose) -> Pose:
    """End-effector pose expressed in the object frame.

    Left-invariant: a global shift ``G`` applied to both inputs cancels.
    """
    return compose(inverse(world_obj), world_ee)


def quat_distance(a, b) -> float:
    """Rotation angle (rad) between two unit quaternions (atan2 form, accurate near zero)."""
    aw, ax, ay, az = a
    w, x, y, z = _qmul((aw, -ax, -ay, -az), b)
    return 2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), abs(w))


def translation_distance(a: Pose, b: Pose) -> float:
    return math.dist(a.t, b.t)


def pose_error(actual: Pose, reference: Pose) -> tuple:
    """(translation error in m, rotation error in rad) between two poses."""
    return translation_distance(actual, reference), quat_distance(actual.q, reference.q)


def _skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def left_jacobian(omega: Sequence[float]) -> np.ndarray:
    """SO(3) left Jacobian, which maps ``v`` to the translation of ``exp``."""
    w = np.asarray(omega, dtype=float)
    th = float(np.linalg.norm(w))
    k = _skew(w)
    if th < SMALL_ANGLE:
        return np.eye(3) + 0.5 * k + (k @ k) / 6.0
    return (
        np.eye(3)
        + (1.0 - math.cos(th)) / th**2 * k
        + (th - math.sin(th)) / th**3 * (k @ k)
    )


def exp_map(xi: Twist) -> Pose:
    wx, wy, wz = xi.omega
    th2 = wx * wx + wy * wy + wz * wz
    th = math.sqrt(th2)
    if th < SMALL_ANGLE:
        s = 0.5 - th2 / 48.0
        q = (1.0 - th2 / 8.0, wx * s, wy * s, wz * s)
        a, b = 0.5 - th2 / 24.0, 1.0 / 6.0 - th2 / 120.0
    else:
        sh = math.sin(0.5 * th)
        s = sh / th
        q = (math.cos(0.5 * th), wx * s, wy * s, wz * s)
        a = 2.0 * sh * sh / th2
        b = (th - math.sin(th)) / (th2 * th)
    v = xi.v
    # J v = v + a (w x v) + b (w x (w x v))
    c1 = (wy * v[2] - wz * v[1], wz * v[0] - wx * v[2], wx * v[1] - wy * v[0])
    c2 = (wy * c1[2] - wz * c1[1], wz * c1[0] - wx * c1[2], wx * c1[1] - wy * c1[0])
    t = tuple(v[i] + a * c1[i] + b * c2[i] for i in range(3))
    return Pose(q, t)


def log_map(p: Pose) -> Twist:
    w, x, y, z = p.q
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    vn = math.sqrt(x * x + y * y + z * z)
    th = 2.0 * math.atan2(vn, w)
    if th > math.pi - NEAR_PI:
        raise AngleNearPi(f"rotation angle {th!r} too close to pi")
    if th < SMALL_ANGLE:
        # th / sin(th/2) ~ 2 (1 + th^2 / 24)
        k = 2.0 * (1.0 + th * th / 24.0)
        omega = (x * k, y * k, z * k)
        c = 1.0 / 12.0
    else:
        k = th / vn
        omega = (x * k, y * k, z * k)
        half = 0.5 * th
        c = (1.0 - half / math.tan(half)) / (th * th)
    # J^{-1} t = t - 1/2 (w x t) + c (w x (w x t))
    wx, wy, wz = omega
    t = p.t
    c1 = (wy * t[2] - wz * t[1], wz * t[0] - wx * t[2], wx * t[1] - wy * t[0])
    c2 = (wy * c1[2] - wz * c1[1], wz * c1[0] - wx * c1[2], wx * c1[1] - wy * c1[0])
    v = tuple(t[i] - 0.5 * c1[i] + c * c2[i] for i in range(3))
    return Twist(omega, v)


def sample_twist(spec: PerturbationSpec, rng: np.random.Generator) -> Twist:
    xi = rng.normal(0.0, 1.0, size=6) * np.asarray(spec.sigma)
    return Twist.from_list(xi.tolist())


def sample_perturbed_init(approach: Pose, spec: PerturbationSpec, rng: np.random.Generator) -> Pose:
    """Right-multiply ``approach`` by ``exp(xi)`` with ``xi ~ N(0, diag(sigma^2))``.

    Noise lives in the approach (body) frame. With all sigmas zero the
    approach pose is returned unchanged and no randomness is consumed.
    """
    if spec.is_zero:
        return approach
    return compose(approach, exp_map(sample_twist(spec, rng)))


def slerp(q0, q1, s: float):
    """Spherical interpolation between unit quaternions at fraction ``s``."""
    d = q0[0] * q1[0] + q0[1] * q1[1] + q0[2] * q1[2] + q0[3] * q1[3]
    if d < 0.0:
        q1 = tuple(-c for c in q1)
        d = -d
    if d > 0.9995:
        return _normalize(tuple(a + s * (b - a) for a, b in zip(q0, q1)))
    th = math.acos(d)
    sa = math.sin((1.0 - s) * th) / math.sin(th)
    sb = math.sin(s * th) / math.sin(th)
    return _normalize(tuple(sa * a + sb * b for a, b in zip(q0, q1)))


def pose_from_json(value) -> Pose:
    """Accept ``[qw,qx,qy,qz,tx,ty,tz]`` or ``{"axis_angle": [...], "t": [...]}``."""
    if isinstance(value, dict):
        t = value.get("t", (0.0, 0.0, 0.0))
        if "axis_angle" in value:
            aa = np.asarray(value["axis_angle"], dtype=float)
            ang = float(np.linalg.norm(aa))
            return Pose.from_axis_angle(aa if ang else (0, 0, 1), ang, t=t)
        if "q" in value:
            return Pose(value["q"], t)
        if "yaw" in value:
            return Pose.from_yaw(float(value["yaw"]), t=t)
        return Pose(t=t)
    return Pose.from_list(list(value))


def chain(poses: Iterable[Pose]) -> Pose:
    out = IDENTITY
    for p in poses:
        out = compose(out, p)
    return out
