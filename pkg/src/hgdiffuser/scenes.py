"""Synthetic desk scenes: parametric objects, oracle grasps and hand-proxy demonstrations.

Everything downstream of ``make_object`` lives in the normalized object frame
(cloud centroid at the origin, max radius 1). Metric quantities such as the
gripper dimensions, jitter and contact distances are divided by the object's
``frame.scale`` before use.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidArgument, NoContactError, RegionInfeasibleError
from .evaluation.quality import CLEARANCE_M, force_closure
from .gripper import GripperSpec
from .lie import GraspPose, Rotation, quat_mul, so3_exp
from .shapes import Box, Cylinder, Surface, Union

log = logging.getLogger(__name__)

KINDS = ("box", "cylinder", "lshape")

# hand frame = gripper frame composed with this fixed offset
HAND_OFFSET = Rotation.exp([0.0, 0.0, np.pi / 2])

DEMO_JITTER_M = 0.003
DEMO_ROT_JITTER = np.deg2rad(5.0)
DEFAULT_MU = 0.5


@dataclass(frozen=True)
class TaskRegion:
    """Surface points whose coordinate along ``axis`` (metric object frame) is in ``[lo, hi]``."""

    name: str
    axis: int
    lo: float
    hi: float

    def contains(self, points_metric) -> np.ndarray:
        c = np.asarray(points_metric)[..., self.axis]
        return (c >= self.lo) & (c <= self.hi)

    def to_dict(self) -> dict:
        return {"name": self.name, "axis": self.axis, "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_dict(cls, d) -> "TaskRegion":
        return cls(str(d["name"]), int(d["axis"]), float(d["lo"]), float(d["hi"]))


@dataclass(frozen=True)
class ObjectSpec:
    kind: str
    dims: dict
    task_regions: tuple[TaskRegion, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown object kind {self.kind!r}; valid kinds: {', '.join(KINDS)}")
        if any(not (v > 0) for v in self.dims.values()):
            raise InvalidArgument(f"{self.kind}: dimensions must be positive")

    def region(self, name: str) -> TaskRegion:
        for r in self.task_regions:
            if r.name == name:
                return r
        raise InvalidArgument(f"{self.kind} has no task region {name!r}")

    def surface(self) -> Surface:
        d = self.dims
        if self.kind == "box":
            return Box(np.zeros(3), 0.5 * np.array([d["x"], d["y"], d["z"]]))
        if self.kind == "cylinder":
            return Cylinder(np.zeros(3), d["radius"], 0.5 * d["height"])
        hw, hl = 0.5 * d["handle_width"], 0.5 * d["handle_length"]
        handle = Box(np.zeros(3), [hw, hw, hl])
        hh = 0.5 * d["head_width"]
        head = Box([0.0, 0.0, hl], [0.5 * d["head_length"], hh, hh])
        return Union([handle, head])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "dims": {k: float(v) for k, v in self.dims.items()},
            "task_regions": [r.to_dict() for r in self.task_regions],
        }

    @classmethod
    def from_dict(cls, d) -> "ObjectSpec":
        return cls(d["kind"], {k: float(v) for k, v in d["dims"].items()},
                   tuple(TaskRegion.from_dict(r) for r in d.get("task_regions", [])))


def default_object_spec(kind: str, size: float = 1.0, aspect=(1.0, 1.0, 1.0)) -> ObjectSpec:
    """Desk-scale base object of ``kind``, uniformly scaled by ``size``."""
    ax, ay, az = aspect
    if kind == "box":
        dims = {"x": 0.045 * size * ax, "y": 0.035 * size * ay, "z": 0.11 * size * az}
        regions = (TaskRegion("upper", 2, dims["z"] / 6, dims["z"] / 2),)
    elif kind == "cylinder":
        dims = {"radius": 0.022 * size * ax, "height": 0.12 * size * az}
        regions = (TaskRegion("lower", 2, -dims["height"] / 2, -dims["height"] / 6),)
    elif kind == "lshape":
        dims = {
            "handle_width": 0.024 * size * ax,
            "handle_length": 0.14 * size * az,
            "head_length": 0.09 * size * ay,
            "head_width": 0.034 * size * ax,
        }
        regions = (TaskRegion("handle", 2, -dims["handle_length"] / 2, 0.0),)
    else:
        raise InvalidArgument(f"unknown object kind {kind!r}; valid kinds: {', '.join(KINDS)}")
    return ObjectSpec(kind, dims, regions)


def size_variants(kind: str, count: int, seed: int) -> list[ObjectSpec]:
    """``count`` deterministic size/aspect variants of a kind."""
    rng = np.random.default_rng([seed, KINDS.index(kind), 7])
    sizes = np.linspace(0.85, 1.15, count) if count > 1 else np.ones(1)
    out = []
    for s in sizes:
        aspect = rng.uniform(0.9, 1.1, size=3)
        out.append(default_object_spec(kind, float(s), tuple(aspect)))
    return out


@dataclass(frozen=True)
class Frame:
    centroid: np.ndarray
    scale: float

    def normalize(self, p) -> np.ndarray:
        return (np.asarray(p) - self.centroid) / self.scale

    def denormalize(self, p) -> np.ndarray:
        return np.asarray(p) * self.scale + self.centroid

    def to_dict(self) -> dict:
        return {"centroid": self.centroid.tolist(), "scale": self.scale}


@dataclass(frozen=True, eq=False)
class ObjectCloud:
    points: np.ndarray
    normals: np.ndarray
    frame: Frame


@dataclass(eq=False)
class SceneObject:
    """A generated object: spec, normalized cloud and the matching analytic surface."""

    object_id: str
    spec: ObjectSpec
    cloud: ObjectCloud
    surface: Surface = field(repr=False)

    @property
    def scale(self) -> float:
        return self.cloud.frame.scale

    def gripper(self, spec: GripperSpec) -> GripperSpec:
        return spec.scaled(1.0 / self.scale)

    def clearance(self) -> float:
        return CLEARANCE_M / self.scale


@dataclass(frozen=True, eq=False)
class GraspLabel:
    pose: GraspPose
    contact_pair: tuple[int, int]
    width: float  # normalized units


@dataclass(frozen=True, eq=False)
class DemoRecord:
    object_id: str
    hand_points: np.ndarray
    wrist_frame: Rotation
    task_name: str
    source_grasp: GraspPose | None = None


def normalize_cloud(points, normals) -> ObjectCloud:
    """Center on the centroid and scale the farthest point to radius 1."""
    points = np.asarray(points, dtype=np.float64)
    centroid = points.mean(axis=0)
    scale = float(np.linalg.norm(points - centroid, axis=1).max())
    frame = Frame(centroid, scale)
    return ObjectCloud(frame.normalize(points), np.asarray(normals, dtype=np.float64), frame)


def make_object(spec: ObjectSpec, n: int, rng: np.random.Generator, object_id: str = "obj") -> SceneObject:
    """Area-weighted surface sample of ``spec``, normalized, plus the matching analytic surface."""
    surface = spec.surface()
    pts, normals = surface.sample(n, rng)
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    cloud = normalize_cloud(pts, normals)
    f = cloud.frame
    return SceneObject(object_id, spec, cloud, surface.transformed(f.centroid, f.scale))


def _orthonormal_frame(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Rotation matrix with first column ``x`` and uniformly random approach axis."""
    a = np.array([1.0, 0.0, 0.0]) if abs(x[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(x, a)
    u /= np.linalg.norm(u)
    w = np.cross(x, u)
    phi = rng.uniform(0.0, 2 * np.pi)
    z = np.cos(phi) * u + np.sin(phi) * w
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def sample_antipodal_grasps(
    obj: SceneObject,
    spec: GripperSpec,
    count: int,
    mu: float = DEFAULT_MU,
    rng: np.random.Generator | None = None,
    max_trials: int | None = None,
) -> tuple[list[GraspLabel], bool]:
    """Oracle-labelled antipodal grasps. Returns ``(labels, complete)``.

    ``complete`` is False when fewer than ``count`` grasps were found within the
    trial budget (the partial list is still returned).
    """
    if mu <= 0:
        raise InvalidArgument("friction coefficient must be positive")
    if count < 1:
        raise InvalidArgument("count must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    gspec = obj.gripper(spec)
    clearance = obj.clearance()
    pts, nrm = obj.cloud.points, obj.cloud.normals
    tree = cKDTree(pts)
    cos_cone = np.cos(np.arctan(mu))
    max_trials = max_trials if max_trials is not None else 60 * count
    labels: list[GraspLabel] = []
    for _ in range(max_trials):
        if len(labels) >= count:
            break
        i = int(rng.integers(len(pts)))
        p1, n1 = pts[i], nrm[i]
        ahead = [c for c in obj.surface.crossings(p1, -n1) if c.s > 1e-9]
        if not ahead:
            continue
        c2 = ahead[0]
        if c2.s > gspec.max_opening or np.dot(c2.normal, -n1) < cos_cone:
            continue
        p2 = p1 - c2.s * n1
        rmat = _orthonormal_frame(n1, rng)
        pose = GraspPose.from_matrix(np.block([[rmat, (0.5 * (p1 + p2))[:, None]], [np.zeros((1, 3)), np.ones((1, 1))]]))
        if not force_closure(pose, obj.surface, gspec, mu, clearance):
            continue
        j = int(tree.query(p2)[1])
        labels.append(GraspLabel(pose, (i, j), float(c2.s)))
    complete = len(labels) >= count
    if not complete:
        log.warning("%s: found %d of %d antipodal grasps", obj.object_id, len(labels), count)
    return labels, complete


def hand_proxy_points(width: float, finger_depth: float, base_offset: float, rng: np.random.Generator) -> np.ndarray:
    """Metric hand-proxy cloud in the gripper frame: two finger pads, finger bodies, palm.

    Pads sit on the contacts; the finger bodies flare outward so that only the
    pads come within contact distance of the object.
    """
    pad = 0.004
    pts = []
    y = np.linspace(-0.008, 0.008, 3)
    for sign in (-1.0, 1.0):
        z = np.linspace(0.012, -0.012, 5)
        zz, yy = np.meshgrid(z, y)
        x = np.full(zz.size, sign * (0.5 * width + pad))
        pts.append(np.stack([x, yy.ravel(), zz.ravel()], axis=1))
        z = np.linspace(-0.02, -finger_depth, 4)
        zz, yy = np.meshgrid(z, y)
        x = sign * (0.5 * width + pad + 0.6 * (-zz.ravel()))
        pts.append(np.stack([x, yy.ravel(), zz.ravel()], axis=1))
    # palm strip around the wrist, which the oracle keeps clear of the object
    xx, zz = np.meshgrid(np.linspace(-0.012, 0.012, 4), -finger_depth - base_offset * np.array([0.7, 0.85, 1.0]))
    pts.append(np.stack([xx.ravel(), np.zeros(xx.size), zz.ravel()], axis=1))
    pts = np.concatenate(pts)
    return pts + DEMO_JITTER_M * rng.standard_normal(pts.shape)


def synthesize_demo(
    obj: SceneObject,
    spec: GripperSpec,
    region: str,
    rng: np.random.Generator,
    grasps: list[GraspLabel] | None = None,
    mu: float = DEFAULT_MU,
    delta_contact: float = 0.01,
    thresholds=None,
) -> DemoRecord:
    """Hand-proxy demonstration of an oracle grasp whose contacts lie in ``region``."""
    from .constraints import Thresholds, extract_constraints
    from .evaluation.quality import constraint_satisfied

    task = obj.spec.region(region)
    gspec = obj.gripper(spec)
    if grasps is None:
        grasps, _ = sample_antipodal_grasps(obj, spec, 200, mu, rng)
    candidates = []
    for lab in grasps:
        res = force_closure(lab.pose, obj.surface, gspec, mu, obj.clearance())
        if not res.ok:
            continue
        contacts_m = obj.cloud.frame.denormalize(np.array(res.contacts))
        if np.all(task.contains(contacts_m)):
            candidates.append((lab, res))
    if not candidates:
        raise RegionInfeasibleError(f"{obj.object_id}: no oracle grasp inside region {region!r}")
    thresholds = thresholds if thresholds is not None else Thresholds()
    for idx in rng.permutation(len(candidates)):
        lab, res = candidates[idx]
        width_m = (res.contacts[1] - res.contacts[0]) @ (res.contacts[1] - res.contacts[0])
        width_m = float(np.sqrt(width_m)) * obj.scale
        hand_m = hand_proxy_points(width_m, spec.finger_depth, spec.base_offset, rng)
        hand = lab.pose.translation + (hand_m / obj.scale) @ lab.pose.rotation.matrix().T
        jitter = so3_exp(DEMO_ROT_JITTER * rng.standard_normal(3))
        wrist = Rotation(quat_mul(quat_mul(lab.pose.rotation.q, HAND_OFFSET.q), jitter))
        demo = DemoRecord(obj.object_id, hand, wrist, region, lab.pose)
        try:
            c = extract_constraints(demo, obj.cloud, delta_contact, thresholds)
        except NoContactError:
            continue
        if constraint_satisfied(lab.pose, c):
            return demo
    raise RegionInfeasibleError(f"{obj.object_id}: no demo in region {region!r} admits its own grasp")
