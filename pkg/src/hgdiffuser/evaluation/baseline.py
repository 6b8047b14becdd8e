"""Sample-then-filter baseline and the shared selection rule."""

from __future__ import annotations

import numpy as np

from ..constraints import DemoConstraint, GuidanceConfig, loss_total_arr
from ..diffusion import NoiseSchedule, run_chains
from ..lie import GraspPose, geodesic_distance_q


def satisfied_mask(q, t, c: DemoConstraint) -> np.ndarray:
    """Vectorized ``constraint_satisfied`` over rows of (q, t)."""
    region = np.linalg.norm(np.asarray(t) - c.p_region, axis=-1) <= c.tau_region
    direct = geodesic_distance_q(q, c.d_direct.q) <= c.tau_direct
    return region & direct


def select_best(q, t, c: DemoConstraint, g: GuidanceConfig) -> int | None:
    """Index of the constraint-satisfying row with the lowest loss; ties go to the lowest index."""
    ok = np.flatnonzero(satisfied_mask(q, t, c))
    if ok.size == 0:
        return None
    losses = loss_total_arr(q[ok], t[ok], c, g)
    return int(ok[np.argmin(losses)])


def two_stage_baseline(cloud, params, constraint: DemoConstraint, n_samples: int, schedule: NoiseSchedule,
                       seed: int, guidance: GuidanceConfig | None = None, gripper=None) -> GraspPose | None:
    """Draw ``n_samples`` unguided grasps, keep those meeting the constraint, return the best.

    Returns None when nothing survives the filter (a failed attempt).
    """
    if n_samples <= 0:
        return None
    guidance = guidance if guidance is not None else GuidanceConfig()
    res = run_chains(cloud, params, schedule, n_samples, seed, gripper)
    i = select_best(res.q, res.t, constraint, guidance)
    return None if i is None else GraspPose.from_qt(res.q[i], res.t[i])


def guided_best(cloud, params, constraint: DemoConstraint, n_samples: int, schedule: NoiseSchedule,
                seed: int, guidance: GuidanceConfig | None = None, gripper=None) -> GraspPose | None:
    """Guided sampling, returning the lowest-loss sample (lowest index on ties).

    Satisfying rows have zero loss, so they win whenever one exists; otherwise
    the closest miss is returned and scored as a constraint failure.
    """
    if n_samples <= 0:
        return None
    guidance = guidance if guidance is not None else GuidanceConfig()
    res = run_chains(cloud, params, schedule, n_samples, seed, gripper, constraint, guidance)
    i = int(np.argmin(loss_total_arr(res.q, res.t, constraint, guidance)))
    return GraspPose.from_qt(res.q[i], res.t[i])
