"""Task constraints from a demonstration and the guidance loss.

The loss is ``beta * L_region + L_direct`` with hinge terms on the grasp's
translation (distance to the contact centroid) and rotation (geodesic distance
to the demonstrated wrist orientation). ``loss_gradient`` returns its gradient
as a body-frame twist, i.e. the derivative of ``L(H o Exp(xi))`` at ``xi = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgument, NoContactError
from .lie import (
    GraspPose,
    Rotation,
    Twist,
    geodesic_distance_q,
    quat_conj,
    quat_mul,
    quat_rotate,
    so3_log,
)


@dataclass(frozen=True)
class Thresholds:
    """Metric thresholds; converted to the normalized frame at extraction."""

    tau_region: float = 0.03
    tau_direct: float = 0.5
    delta_contact: float = 0.01


@dataclass(frozen=True)
class GuidanceConfig:
    alpha: float = 200.0
    beta: float = 10.0

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise InvalidArgument(f"GuidanceConfig.{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True, eq=False)
class DemoConstraint:
    p_region: np.ndarray
    d_direct: Rotation
    tau_region: float
    tau_direct: float

    def __post_init__(self):
        p = np.array(self.p_region, dtype=np.float64).reshape(3)
        p.setflags(write=False)
        object.__setattr__(self, "p_region", p)
        if not self.tau_region > 0:
            raise InvalidArgument("tau_region must be positive")
        if not 0 < self.tau_direct < np.pi:
            raise InvalidArgument("tau_direct must lie in (0, pi)")

    def to_json(self) -> dict:
        return {
            "p_region": [float(x) for x in self.p_region],
            "d_direct": {"q": [float(x) for x in self.d_direct.canonical()]},
            "tau_region": float(self.tau_region),
            "tau_direct": float(self.tau_direct),
        }

    @classmethod
    def from_json(cls, d: dict) -> "DemoConstraint":
        return cls(d["p_region"], Rotation(d["d_direct"]["q"]), float(d["tau_region"]), float(d["tau_direct"]))


def contact_points(hand_points, object_points, delta: float) -> np.ndarray:
    """Indices of object points within ``delta`` of any hand point (set semantics)."""
    tree = cKDTree(np.asarray(hand_points))
    d, _ = tree.query(np.asarray(object_points), k=1, distance_upper_bound=delta)
    return np.flatnonzero(d <= delta)


def extract_constraints(demo, cloud, delta_contact: float | None = None, thresholds: Thresholds | None = None) -> DemoConstraint:
    """Contact centroid and gripper orientation implied by ``demo``.

    ``demo`` and ``cloud`` share the normalized frame; ``delta_contact`` and the
    thresholds are metric and get divided by ``cloud.frame.scale``.
    """
    from .scenes import HAND_OFFSET

    thresholds = thresholds if thresholds is not None else Thresholds()
    delta = thresholds.delta_contact if delta_contact is None else delta_contact
    scale = cloud.frame.scale
    idx = contact_points(demo.hand_points, cloud.points, delta / scale)
    if idx.size == 0:
        raise NoContactError(f"demo {demo.object_id}/{demo.task_name}: no object point within {delta} m of the hand")
    p_region = cloud.points[idx].mean(axis=0)
    d_direct = Rotation(quat_mul(demo.wrist_frame.q, quat_conj(HAND_OFFSET.q)))
    return DemoConstraint(p_region, d_direct, thresholds.tau_region / scale, thresholds.tau_direct)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def loss_region(h: GraspPose, c: DemoConstraint) -> float:
    return max(0.0, float(np.linalg.norm(h.translation - c.p_region)) - c.tau_region)


def loss_direct(h: GraspPose, c: DemoConstraint) -> float:
    return max(0.0, float(geodesic_distance_q(h.rotation.q, c.d_direct.q)) - c.tau_direct)


def loss_total(h: GraspPose, c: DemoConstraint, g: GuidanceConfig) -> float:
    return g.beta * loss_region(h, c) + loss_direct(h, c)


def loss_total_arr(q, t, c: DemoConstraint, g: GuidanceConfig) -> np.ndarray:
    region = np.maximum(0.0, np.linalg.norm(np.asarray(t) - c.p_region, axis=-1) - c.tau_region)
    direct = np.maximum(0.0, geodesic_distance_q(q, c.d_direct.q) - c.tau_direct)
    return g.beta * region + direct


def loss_gradient_arr(q, t, c: DemoConstraint, g: GuidanceConfig) -> np.ndarray:
    """Batched body-frame gradient, shape ``(..., 6)`` ordered ``(v, omega)``."""
    q = np.asarray(q, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros(q.shape[:-1] + (6,))

    diff = t - c.p_region
    dist = np.linalg.norm(diff, axis=-1, keepdims=True)
    active = dist > c.tau_region
    u = np.where(active, diff / np.where(active, dist, 1.0), 0.0)
    out[..., :3] = g.beta * quat_rotate(quat_conj(q), u)

    r = so3_log(quat_mul(quat_conj(q), c.d_direct.q))
    theta = np.linalg.norm(r, axis=-1, keepdims=True)
    active = (theta > c.tau_direct) & (theta < np.pi)
    out[..., 3:] = np.where(active, -r / np.where(active, theta, 1.0), 0.0)
    return out


def loss_gradient(h: GraspPose, c: DemoConstraint, g: GuidanceConfig) -> Twist:
    return Twist.from_vector(loss_gradient_arr(h.rotation.q, h.translation, c, g))
