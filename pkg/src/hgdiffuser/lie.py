"""SO(3) / SE(3) kernels on unit quaternions.

Quaternions are scalar-first ``(w, x, y, z)``. Every function accepts either a
single element or a leading batch dimension; the dataclasses at the bottom wrap
single elements for the public API, the array functions serve the samplers.

Tangent convention: twists are ``(v, omega)`` 6-vectors in the body frame and a
pose is updated by ``H o Exp(xi) = (R exp(omega), t + R v)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgument

SMALL_ANGLE = 1e-8


def _as_array(x, last: int) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.shape[-1] != last:
        raise InvalidArgument(f"expected trailing dimension {last}, got shape {a.shape}")
    return a


# ---------------------------------------------------------------------------
# quaternion algebra
# ---------------------------------------------------------------------------


def quat_normalize(q) -> np.ndarray:
    q = _as_array(q, 4)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    out = np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )
    return out


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_canonical(q) -> np.ndarray:
    """Flip sign so that ``w >= 0`` (serialization boundary only)."""
    q = np.asarray(q, dtype=np.float64)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_to_matrix(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.stack(
        [
            1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
            2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
            2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(m) -> np.ndarray:
    """Shepperd's method: branch on the largest of (trace, diagonal)."""
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    m = m.reshape(-1, 3, 3)
    out = np.empty((m.shape[0], 4))
    for i, r in enumerate(m):
        tr = r[0, 0] + r[1, 1] + r[2, 2]
        k = int(np.argmax([tr, r[0, 0], r[1, 1], r[2, 2]]))
        if k == 0:
            s = 2.0 * np.sqrt(1.0 + tr)
            q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        elif k == 1:
            s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
            q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        elif k == 2:
            s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
            q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
            q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        out[i] = q
    out /= np.linalg.norm(out, axis=-1, keepdims=True)
    return out.reshape(batch + (4,))


def quat_rotate(q, p) -> np.ndarray:
    """Rotate point(s) ``p`` by quaternion(s) ``q`` (broadcasting)."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    uv = np.cross(u, p)
    return p + 2.0 * (w * uv + np.cross(u, uv))


# ---------------------------------------------------------------------------
# exponential / logarithm
# ---------------------------------------------------------------------------


def so3_exp(omega) -> np.ndarray:
    """Axis-angle vector(s) -> unit quaternion(s)."""
    omega = _as_array(omega, 3)
    if not np.all(np.isfinite(omega)):
        raise InvalidArgument("so3_exp: non-finite rotation vector")
    theta = np.linalg.norm(omega, axis=-1, keepdims=True)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    half = 0.5 * theta
    # sin(theta/2)/theta, second-order series near zero
    k = np.where(small, 0.5 - theta * theta / 48.0, np.sin(half) / safe)
    w = np.where(small, 1.0 - theta * theta / 8.0, np.cos(half))
    q = np.concatenate([w, k * omega], axis=-1)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def so3_log(q) -> np.ndarray:
    """Unit quaternion(s) -> axis-angle vector(s) with norm in [0, pi]."""
    q = _as_array(q, 4)
    q = quat_canonical(q)
    w = q[..., :1]
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    small = s < SMALL_ANGLE
    theta = 2.0 * np.arctan2(s, w)
    safe_s = np.where(small, 1.0, s)
    safe_w = np.where(small, w, 1.0)
    k = np.where(small, 2.0 / safe_w * (1.0 - s * s / (3.0 * safe_w * safe_w)), theta / safe_s)
    return k * v


def rotation_angle(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    s = np.linalg.norm(q[..., 1:], axis=-1)
    return 2.0 * np.arctan2(s, np.abs(q[..., 0]))


def geodesic_distance_q(q1, q2) -> np.ndarray:
    """Rotation angle between unit quaternions, exactly symmetric in its arguments.

    With q2 flipped onto q1's hemisphere, the 4-D angle phi between them gives
    theta = 2 phi = 4 atan2(|q1 - q2|, |q1 + q2|), stable near 0 and pi.
    """
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    s = np.where(np.sum(q1 * q2, axis=-1, keepdims=True) < 0.0, -1.0, 1.0)
    a = q1 - s * q2
    b = q1 + s * q2
    return 4.0 * np.arctan2(np.linalg.norm(a, axis=-1), np.linalg.norm(b, axis=-1))


# ---------------------------------------------------------------------------
# SE(3) on (q, t) arrays
# ---------------------------------------------------------------------------


def se3_compose_arr(qa, ta, qb, tb):
    return quat_mul(qa, qb), np.asarray(ta) + quat_rotate(qa, tb)


def se3_inverse_arr(q, t):
    qi = quat_conj(q)
    return qi, -quat_rotate(qi, t)


def retract_arr(q, t, xi):
    """Decoupled right retraction: ``(q * exp(omega), t + R v)``."""
    xi = np.asarray(xi, dtype=np.float64)
    v, omega = xi[..., :3], xi[..., 3:]
    q_new = quat_mul(q, so3_exp(omega))
    q_new = q_new / np.linalg.norm(q_new, axis=-1, keepdims=True)
    return q_new, np.asarray(t) + quat_rotate(q, v)


def random_quat(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    shape = (4,) if size is None else (size, 4)
    q = rng.standard_normal(shape)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Rotation:
    """Unit quaternion, scalar-first."""

    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(q)):
            raise InvalidArgument("Rotation: non-finite quaternion")
        n = np.linalg.norm(q)
        if n == 0.0:
            raise InvalidArgument("Rotation: zero quaternion")
        if abs(n - 1.0) > 1e-15:  # keep already-unit input bit-exact (serialization round-trips)
            q = q / n
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_matrix(cls, m) -> "Rotation":
        return cls(matrix_to_quat(m))

    @classmethod
    def exp(cls, omega) -> "Rotation":
        return cls(so3_exp(np.asarray(omega, dtype=np.float64).reshape(3)))

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def log(self) -> np.ndarray:
        return so3_log(self.q)

    def inverse(self) -> "Rotation":
        return Rotation(quat_conj(self.q))

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return Rotation(quat_mul(self.q, other.q))

    def apply(self, p) -> np.ndarray:
        return quat_rotate(self.q, p)

    def canonical(self) -> np.ndarray:
        return quat_canonical(self.q)

    def __repr__(self) -> str:
        return f"Rotation(q={np.array2string(self.q, precision=6)})"


@dataclass(frozen=True, eq=False)
class Twist:
    """Body-frame tangent vector: translational ``v`` then rotational ``omega``."""

    v: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=np.float64).reshape(3)
        w = np.array(self.omega, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise InvalidArgument("Twist: non-finite component")
        v.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "omega", w)

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, xi) -> "Twist":
        xi = np.asarray(xi, dtype=np.float64).reshape(6)
        return cls(xi[:3], xi[3:])

    def vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.omega])

    def __neg__(self) -> "Twist":
        return Twist(-self.v, -self.omega)


@dataclass(frozen=True, eq=False)
class GraspPose:
    """Element of SE(3); ``translation`` lives in the normalized object frame."""

    rotation: Rotation
    translation: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise InvalidArgument("GraspPose: non-finite translation")
        t.setflags(write=False)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "GraspPose":
        return cls(Rotation.identity(), np.zeros(3))

    @classmethod
    def from_qt(cls, q, t) -> "GraspPose":
        return cls(Rotation(q), t)

    @classmethod
    def from_matrix(cls, m) -> "GraspPose":
        m = np.asarray(m, dtype=np.float64)
        return cls(Rotation.from_matrix(m[:3, :3]), m[:3, 3])

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation.matrix()
        out[:3, 3] = self.translation
        return out

    def to_json(self) -> dict:
        return {"q": [float(x) for x in self.rotation.canonical()], "t": [float(x) for x in self.translation]}

    @classmethod
    def from_json(cls, obj: dict) -> "GraspPose":
        return cls(Rotation(obj["q"]), obj["t"])

    def __repr__(self) -> str:
        return (
            f"GraspPose(q={np.array2string(self.rotation.q, precision=6)}, "
            f"t={np.array2string(self.translation, precision=6)})"
        )


def poses_to_arrays(poses: Sequence[GraspPose]) -> tuple[np.ndarray, np.ndarray]:
    q = np.array([p.rotation.q for p in poses]).reshape(-1, 4)
    t = np.array([p.translation for p in poses]).reshape(-1, 3)
    return q, t


def arrays_to_poses(q, t) -> list[GraspPose]:
    return [GraspPose(Rotation(qi), ti) for qi, ti in zip(np.asarray(q), np.asarray(t))]


# ---------------------------------------------------------------------------
# public operations on value types
# ---------------------------------------------------------------------------


def geodesic_distance(r1: Rotation, r2: Rotation) -> float:
    """Rotation angle of ``r1^-1 r2`` in [0, pi]."""
    return float(geodesic_distance_q(r1.q, r2.q))


def se3_compose(a: GraspPose, b: GraspPose) -> GraspPose:
    q, t = se3_compose_arr(a.rotation.q, a.translation, b.rotation.q, b.translation)
    return GraspPose(Rotation(q), t)


def se3_inverse(a: GraspPose) -> GraspPose:
    q, t = se3_inverse_arr(a.rotation.q, a.translation)
    return GraspPose(Rotation(q), t)


def se3_apply(a: GraspPose, p) -> np.ndarray:
    return a.translation + quat_rotate(a.rotation.q, p)


def retract(h: GraspPose, xi: Twist) -> GraspPose:
    q, t = retract_arr(h.rotation.q, h.translation, xi.vector())
    return GraspPose(Rotation(q), t)


def random_rotation(rng: np.random.Generator) -> Rotation:
    """Haar-uniform rotation from a normalized 4-vector of standard normals."""
    return Rotation(random_quat(rng))


def perturb(h: GraspPose, sigma: float, rng: np.random.Generator) -> tuple[GraspPose, Twist]:
    if not (np.isfinite(sigma) and sigma > 0.0):
        raise InvalidArgument(f"perturb: sigma must be positive, got {sigma}")
    eps = Twist.from_vector(sigma * rng.standard_normal(6))
    return retract(h, eps), eps
