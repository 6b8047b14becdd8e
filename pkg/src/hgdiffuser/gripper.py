"""Parallel-jaw gripper control points.

Gripper frame: origin at the closing center (midpoint of the open fingertips),
``+x`` is the closing axis, ``+z`` the approach direction. The wrist sits
``finger_depth + base_offset`` behind the origin along ``-z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgument
from .lie import GraspPose, Rotation, quat_rotate

ROLES = ("wrist", "base_left", "base_right", "tip_left", "tip_right", "center")


@dataclass(frozen=True)
class GripperSpec:
    max_opening: float = 0.08
    finger_depth: float = 0.046
    base_offset: float = 0.066
    roles: tuple[str, ...] = ROLES
    canonical_points: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if min(self.max_opening, self.finger_depth, self.base_offset) <= 0:
            raise InvalidArgument("GripperSpec dimensions must be positive")
        pts = self.canonical_points
        if pts is None:
            pts = default_points(self.max_opening, self.finger_depth, self.base_offset)
        pts = np.array(pts, dtype=np.float64).reshape(-1, 3)
        if len(pts) != len(self.roles):
            raise InvalidArgument("GripperSpec: one role per canonical point")
        if len(pts) < 4:
            raise InvalidArgument("GripperSpec: need at least 4 control points")
        for role in ("wrist", "tip_left", "tip_right", "base_left", "base_right"):
            if role not in self.roles:
                raise InvalidArgument(f"GripperSpec: missing control point '{role}'")
        d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        if np.any(d[np.triu_indices(len(pts), 1)] < 1e-12):
            raise InvalidArgument("GripperSpec: control points must be distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "canonical_points", pts)

    @property
    def g(self) -> int:
        return len(self.roles)

    def index(self, role: str) -> int:
        return self.roles.index(role)

    def scaled(self, factor: float) -> "GripperSpec":
        """Same gripper expressed in a frame whose lengths are multiplied by ``factor``."""
        return replace(
            self,
            max_opening=self.max_opening * factor,
            finger_depth=self.finger_depth * factor,
            base_offset=self.base_offset * factor,
            canonical_points=self.canonical_points * factor,
        )

    def to_dict(self) -> dict:
        return {
            "max_opening": self.max_opening,
            "finger_depth": self.finger_depth,
            "base_offset": self.base_offset,
            "roles": list(self.roles),
            "canonical_points": self.canonical_points.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GripperSpec":
        return cls(
            max_opening=float(d["max_opening"]),
            finger_depth=float(d["finger_depth"]),
            base_offset=float(d["base_offset"]),
            roles=tuple(d.get("roles", ROLES)),
            canonical_points=d.get("canonical_points"),
        )


def default_points(max_opening: float, finger_depth: float, base_offset: float) -> np.ndarray:
    h = 0.5 * max_opening
    return np.array(
        [
            [0.0, 0.0, -(finger_depth + base_offset)],  # wrist
            [-h, 0.0, -finger_depth],  # base_left
            [h, 0.0, -finger_depth],  # base_right
            [-h, 0.0, 0.0],  # tip_left
            [h, 0.0, 0.0],  # tip_right
            [0.0, 0.0, 0.0],  # center
        ]
    )


def gripper_points(h: GraspPose, spec: GripperSpec) -> np.ndarray:
    """Control points of ``spec`` placed at pose ``h``; row order is token order."""
    return h.translation + quat_rotate(h.rotation.q, spec.canonical_points)


def gripper_points_arr(q: np.ndarray, t: np.ndarray, canonical: np.ndarray) -> np.ndarray:
    """Batched variant: ``q`` (B,4), ``t`` (B,3), ``canonical`` (g,3) or (B,g,3) -> (B,g,3)."""
    q = np.asarray(q)[:, None, :]
    return np.asarray(t)[:, None, :] + quat_rotate(q, canonical)


def trans(h: GraspPose) -> np.ndarray:
    return h.translation


def rot(h: GraspPose) -> Rotation:
    return h.rotation


def closing_center(h: GraspPose, spec: GripperSpec) -> np.ndarray:
    pts = gripper_points(h, spec)
    return 0.5 * (pts[spec.index("tip_left")] + pts[spec.index("tip_right")])
