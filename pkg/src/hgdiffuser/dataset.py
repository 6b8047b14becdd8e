"""Dataset generation and the on-disk layout.

Layout::

    meta.json                      {"version": 1, "seed": ..., "counts": {...}, ...}
    objects/<id>.json              spec + cloud + normals + frame
    grasps/<id>.json               list of grasp labels
    demos/<id>__<task>.json        hand-proxy demonstration

Floats are written with ``repr`` precision so a write/read round trip is exact.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, VersionError
from .gripper import GripperSpec
from .lie import GraspPose, Rotation
from .scenes import (
    DEFAULT_MU,
    KINDS,
    DemoRecord,
    Frame,
    GraspLabel,
    ObjectCloud,
    ObjectSpec,
    SceneObject,
    make_object,
    sample_antipodal_grasps,
    size_variants,
    synthesize_demo,
)

log = logging.getLogger(__name__)

VERSION = 1


@dataclass
class Dataset:
    objects: list[SceneObject]
    grasps: dict[str, list[GraspLabel]]
    demos: dict[tuple[str, str], DemoRecord] = field(default_factory=dict)
    gripper: GripperSpec = field(default_factory=GripperSpec)
    mu: float = DEFAULT_MU
    seed: int = 0

    def object(self, object_id: str) -> SceneObject:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)

    def n_grasps(self) -> int:
        return sum(len(v) for v in self.grasps.values())

    def training_arrays(self):
        """Stacked poses with object indices and per-object scaled gripper points."""
        q, t, idx = [], [], []
        for i, o in enumerate(self.objects):
            for lab in self.grasps.get(o.object_id, []):
                q.append(lab.pose.rotation.q)
                t.append(lab.pose.translation)
                idx.append(i)
        canon = np.stack([o.gripper(self.gripper).canonical_points for o in self.objects])
        return np.array(q), np.array(t), np.array(idx, dtype=np.int64), canon

    def subset(self, kinds=None, max_objects=None) -> "Dataset":
        objs = [o for o in self.objects if kinds is None or o.spec.kind in kinds]
        if max_objects is not None:
            objs = objs[:max_objects]
        ids = {o.object_id for o in objs}
        return Dataset(
            objs,
            {k: v for k, v in self.grasps.items() if k in ids},
            {k: v for k, v in self.demos.items() if k[0] in ids},
            self.gripper,
            self.mu,
            self.seed,
        )


def generate_dataset(
    seed: int = 0,
    kinds=KINDS,
    variants: int = 8,
    grasps_per_object: int = 200,
    n_points: int = 512,
    gripper: GripperSpec | None = None,
    mu: float = DEFAULT_MU,
    thresholds=None,
) -> Dataset:
    """Objects, oracle grasps and one demonstration per (object, task region)."""
    gripper = gripper if gripper is not None else GripperSpec()
    objects, grasps, demos = [], {}, {}
    for kind in kinds:
        for v, spec in enumerate(size_variants(kind, variants, seed)):
            oid = f"{kind}_{v:02d}"
            rng = np.random.default_rng([seed, KINDS.index(kind), v])
            obj = make_object(spec, n_points, rng, oid)
            labels, _ = sample_antipodal_grasps(obj, gripper, grasps_per_object, mu, rng)
            objects.append(obj)
            grasps[oid] = labels
            for region in spec.task_regions:
                demos[(oid, region.name)] = synthesize_demo(
                    obj, gripper, region.name, rng, labels, mu, thresholds=thresholds
                )
    return Dataset(objects, grasps, demos, gripper, mu, seed)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _pose_json(p: GraspPose) -> dict:
    # raw quaternion so the round trip is bitwise; canonical sign is enforced on write
    return p.to_json()


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _load(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(path, "<root>", f"invalid JSON: {exc}") from exc


def _get(d: dict, key: str, path: Path, prefix: str = ""):
    if not isinstance(d, dict) or key not in d:
        raise ParseError(path, f"{prefix}{key}", "missing")
    return d[key]


def _array(d, key, path, shape_tail, prefix=""):
    val = _get(d, key, path, prefix)
    try:
        arr = np.asarray(val, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(path, f"{prefix}{key}", "not numeric") from exc
    if arr.ndim != len(shape_tail) + 1 or arr.shape[1:] != tuple(shape_tail):
        raise ParseError(path, f"{prefix}{key}", f"expected shape (*, {shape_tail}), got {arr.shape}")
    return arr


def write_dataset(directory, ds: Dataset) -> None:
    root = Path(directory)
    for sub in ("objects", "grasps", "demos"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for o in ds.objects:
        _dump(
            root / "objects" / f"{o.object_id}.json",
            {
                "id": o.object_id,
                "spec": o.spec.to_dict(),
                "points": o.cloud.points.tolist(),
                "normals": o.cloud.normals.tolist(),
                "frame": o.cloud.frame.to_dict(),
            },
        )
        _dump(
            root / "grasps" / f"{o.object_id}.json",
            [
                {"pose": _pose_json(g.pose), "contact_pair": list(g.contact_pair), "width": g.width}
                for g in ds.grasps.get(o.object_id, [])
            ],
        )
    for (oid, task), demo in sorted(ds.demos.items()):
        rec = {
            "object_id": demo.object_id,
            "task": demo.task_name,
            "hand_points": demo.hand_points.tolist(),
            "wrist_frame": {"q": demo.wrist_frame.canonical().tolist()},
        }
        if demo.source_grasp is not None:
            rec["source_grasp"] = _pose_json(demo.source_grasp)
        _dump(root / "demos" / f"{oid}__{task}.json", rec)
    _dump(
        root / "meta.json",
        {
            "version": VERSION,
            "seed": ds.seed,
            "mu": ds.mu,
            "gripper": ds.gripper.to_dict(),
            "counts": {
                "objects": len(ds.objects),
                "grasps": ds.n_grasps(),
                "demos": len(ds.demos),
            },
            "objects": [o.object_id for o in ds.objects],
        },
    )


def read_object(path) -> SceneObject:
    path = Path(path)
    d = _load(path)
    oid = _get(d, "id", path)
    spec_d = _get(d, "spec", path)
    try:
        spec = ObjectSpec.from_dict(spec_d)
    except (KeyError, TypeError) as exc:
        raise ParseError(path, "spec", str(exc)) from exc
    points = _array(d, "points", path, (3,))
    normals = _array(d, "normals", path, (3,))
    if len(points) != len(normals):
        raise ParseError(path, "normals", "length differs from points")
    frame_d = _get(d, "frame", path)
    frame = Frame(np.asarray(_get(frame_d, "centroid", path, "frame."), dtype=np.float64),
                  float(_get(frame_d, "scale", path, "frame.")))
    cloud = ObjectCloud(points, normals, frame)
    return SceneObject(oid, spec, cloud, spec.surface().transformed(frame.centroid, frame.scale))


def read_demo(path) -> DemoRecord:
    path = Path(path)
    d = _load(path)
    hand = _array(d, "hand_points", path, (3,))
    wf = _get(d, "wrist_frame", path)
    src = d.get("source_grasp")
    return DemoRecord(
        str(_get(d, "object_id", path)),
        hand,
        Rotation(_get(wf, "q", path, "wrist_frame.")),
        str(_get(d, "task", path)),
        GraspPose.from_json(src) if src is not None else None,
    )


def read_dataset(directory) -> Dataset:
    root = Path(directory)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise ParseError(meta_path, "<file>", "missing meta.json")
    meta = _load(meta_path)
    version = _get(meta, "version", meta_path)
    if version != VERSION:
        raise VersionError(meta_path, "version", f"dataset version {version}, this reader supports {VERSION}")
    gripper = GripperSpec.from_dict(_get(meta, "gripper", meta_path))
    objects, grasps, demos = [], {}, {}
    for oid in _get(meta, "objects", meta_path):
        obj = read_object(root / "objects" / f"{oid}.json")
        objects.append(obj)
        gpath = root / "grasps" / f"{oid}.json"
        labels = []
        for i, g in enumerate(_load(gpath)):
            pose = _get(g, "pose", gpath, f"[{i}].")
            labels.append(
                GraspLabel(
                    GraspPose(Rotation(_get(pose, "q", gpath, f"[{i}].pose.")), _get(pose, "t", gpath, f"[{i}].pose.")),
                    tuple(int(x) for x in _get(g, "contact_pair", gpath, f"[{i}].")),
                    float(_get(g, "width", gpath, f"[{i}].")),
                )
            )
        grasps[oid] = labels
    for p in sorted((root / "demos").glob("*.json")):
        demo = read_demo(p)
        demos[(demo.object_id, demo.task_name)] = demo
    return Dataset(objects, grasps, demos, gripper, float(meta.get("mu", DEFAULT_MU)), int(meta.get("seed", 0)))


def write_ply(path, points, colors=None) -> None:
    """ASCII PLY point cloud for offline viewing."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(points)}",
             "property float x", "property float y", "property float z"]
    if colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    for i, p in enumerate(points):
        row = f"{p[0]!r} {p[1]!r} {p[2]!r}"
        if colors is not None:
            c = colors[i]
            row += f" {int(c[0])} {int(c[1])} {int(c[2])}"
        lines.append(row)
    Path(path).write_text("\n".join(lines) + "\n")
