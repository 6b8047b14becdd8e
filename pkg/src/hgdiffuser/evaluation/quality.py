"""Analytic grasp-quality oracle and constraint check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..gripper import GripperSpec
from ..lie import GraspPose, geodesic_distance_q, quat_to_matrix
from ..shapes import Surface

CLEARANCE_M = 0.001


@dataclass(frozen=True)
class ClosureResult:
    ok: bool
    reason: str
    width: float = float("nan")
    contacts: tuple | None = None
    normals: tuple | None = None

    def __bool__(self) -> bool:
        return self.ok


def force_closure(
    h: GraspPose,
    surface: Surface,
    spec: GripperSpec,
    mu: float = 0.5,
    clearance: float = CLEARANCE_M,
) -> ClosureResult:
    """Antipodal parallel-jaw check on an analytic surface.

    ``spec`` and ``clearance`` must be expressed in the same frame as ``surface``.
    Reason codes: ``ok``, ``no-contact``, ``friction-cone``, ``collision``.
    """
    r = quat_to_matrix(h.rotation.q)
    pts = h.translation + spec.canonical_points @ r.T
    tip_l = pts[spec.index("tip_left")]
    tip_r = pts[spec.index("tip_right")]
    center = 0.5 * (tip_l + tip_r)
    axis = tip_r - tip_l
    half = 0.5 * np.linalg.norm(axis)
    axis = axis / (2.0 * half)

    inside_jaws = [c for c in surface.crossings(center, axis) if abs(c.s) <= half]
    if len(inside_jaws) < 2:
        return ClosureResult(False, "no-contact")
    c_neg, c_pos = inside_jaws[0], inside_jaws[-1]
    width = c_pos.s - c_neg.s
    if width <= 0.0 or width > spec.max_opening:
        return ClosureResult(False, "no-contact", width)

    cos_cone = np.cos(np.arctan(mu))
    contacts = (center + c_neg.s * axis, center + c_pos.s * axis)
    normals = (c_neg.normal, c_pos.normal)
    if np.dot(c_pos.normal, axis) < cos_cone or np.dot(c_neg.normal, -axis) < cos_cone:
        return ClosureResult(False, "friction-cone", width, contacts, normals)

    check = [spec.index(k) for k in spec.roles if k != "center"]
    if np.any(surface.sdf(pts[check]) < clearance):
        return ClosureResult(False, "collision", width, contacts, normals)
    return ClosureResult(True, "ok", width, contacts, normals)


def constraint_satisfied(h: GraspPose, c) -> bool:
    """Both task constraints hold: region ball and orientation cone."""
    d_region = np.linalg.norm(h.translation - c.p_region)
    d_direct = geodesic_distance_q(h.rotation.q, c.d_direct.q)
    return bool(d_region <= c.tau_region and d_direct <= c.tau_direct)
