import json
import logging

import numpy as np
import pytest

from hgdiffuser.constraints import extract_constraints
from hgdiffuser.dataset import generate_dataset, read_dataset, read_demo, read_object, write_dataset, write_ply
from hgdiffuser.errors import InvalidArgument, ParseError, VersionError
from hgdiffuser.evaluation.quality import force_closure
from hgdiffuser.gripper import GripperSpec
from hgdiffuser.lie import GraspPose, Rotation
from hgdiffuser.scenes import (
    KINDS,
    ObjectSpec,
    default_object_spec,
    make_object,
    normalize_cloud,
    sample_antipodal_grasps,
    synthesize_demo,
)
from hgdiffuser.shapes import Box, Cylinder

SPEC = GripperSpec()


@pytest.fixture(scope="module")
def small_ds():
    return generate_dataset(seed=3, kinds=KINDS, variants=1, grasps_per_object=40, n_points=256)


def test_box_face_share_area_weighted():
    spec = ObjectSpec("box", {"x": 0.1, "y": 0.1, "z": 0.1})
    obj = make_object(spec, 6000, np.random.default_rng(0))
    n = obj.cloud.normals
    face = np.argmax(np.abs(n), axis=1) * 2 + (n[np.arange(len(n)), np.argmax(np.abs(n), axis=1)] > 0)
    share = np.bincount(face, minlength=6) / len(n)
    assert np.all(np.abs(share - 1 / 6) <= 0.02)


def test_cylinder_side_normals_perpendicular_to_axis():
    obj = make_object(default_object_spec("cylinder"), 2000, np.random.default_rng(1))
    n = obj.cloud.normals
    side = np.abs(n[:, 2]) < 0.5
    assert side.sum() > 100
    assert np.abs(n[side, 2]).max() < 1e-9


def test_make_object_deterministic_and_normalized():
    a = make_object(default_object_spec("lshape"), 500, np.random.default_rng(2))
    b = make_object(default_object_spec("lshape"), 500, np.random.default_rng(2))
    assert np.array_equal(a.cloud.points, b.cloud.points)
    assert np.array_equal(a.cloud.normals, b.cloud.normals)
    np.testing.assert_allclose(a.cloud.points.mean(axis=0), 0, atol=1e-12)
    assert np.linalg.norm(a.cloud.points, axis=1).max() == pytest.approx(1.0)
    raw = a.cloud.frame.denormalize(a.cloud.points)
    again = normalize_cloud(raw, a.cloud.normals)
    np.testing.assert_allclose(again.frame.denormalize(again.points), raw, atol=1e-9)


def test_unknown_kind_lists_valid():
    with pytest.raises(InvalidArgument, match="box, cylinder, lshape"):
        default_object_spec("sphere")


def test_oracle_grasps_pass_force_closure_box():
    obj = make_object(default_object_spec("box"), 512, np.random.default_rng(3))
    labels, complete = sample_antipodal_grasps(obj, SPEC, 50, 0.5, np.random.default_rng(4))
    assert complete and len(labels) == 50
    g = obj.gripper(SPEC)
    assert all(force_closure(l.pose, obj.surface, g, 0.5, obj.clearance()).ok for l in labels)


def test_cylinder_side_grasps_closing_axis_perpendicular():
    obj = make_object(default_object_spec("cylinder"), 512, np.random.default_rng(5))
    labels, _ = sample_antipodal_grasps(obj, SPEC, 60, 0.5, np.random.default_rng(6))
    cone = np.arctan(0.5)
    side = 0
    for lab in labels:
        x = lab.pose.rotation.matrix()[:, 0]
        # side grasps: both contacts on the curved surface
        res = force_closure(lab.pose, obj.surface, obj.gripper(SPEC))
        if all(abs(n[2]) < 1e-9 for n in res.normals):
            side += 1
            assert np.arcsin(min(1.0, abs(x[2]))) <= cone + 1e-9
    assert side > 0


def test_too_small_gripper_gives_empty_with_warning(caplog):
    obj = make_object(default_object_spec("box"), 256, np.random.default_rng(7))
    tiny = GripperSpec(max_opening=0.005)
    with caplog.at_level(logging.WARNING):
        labels, complete = sample_antipodal_grasps(obj, tiny, 5, 0.5, np.random.default_rng(8), max_trials=300)
    assert labels == [] and not complete
    assert "0 of 5" in caplog.text


def test_lshape_handle_demo_contacts_in_handle():
    obj = make_object(default_object_spec("lshape"), 512, np.random.default_rng(9))
    labels, _ = sample_antipodal_grasps(obj, SPEC, 150, 0.5, np.random.default_rng(10))
    demo = synthesize_demo(obj, SPEC, "handle", np.random.default_rng(11), labels)
    res = force_closure(demo.source_grasp, obj.surface, obj.gripper(SPEC))
    region = obj.spec.region("handle")
    assert np.all(region.contains(obj.cloud.frame.denormalize(np.array(res.contacts))))
    again = synthesize_demo(obj, SPEC, "handle", np.random.default_rng(11), labels)
    assert np.array_equal(again.hand_points, demo.hand_points)


def test_demo_extraction_round_trip_within_2cm(small_ds):
    for (oid, _task), demo in small_ds.demos.items():
        obj = small_ds.object(oid)
        c = extract_constraints(demo, obj.cloud)
        err_m = np.linalg.norm(c.p_region - demo.source_grasp.translation) * obj.scale
        assert err_m < 0.02


def test_dataset_invariants(small_ds):
    for obj in small_ds.objects:
        g = obj.gripper(small_ds.gripper)
        for lab in small_ds.grasps[obj.object_id]:
            assert force_closure(lab.pose, obj.surface, g, small_ds.mu, obj.clearance()).ok
    # each demo admits at least one oracle grasp satisfying its constraint
    from hgdiffuser.evaluation.quality import constraint_satisfied

    for (oid, _task), demo in small_ds.demos.items():
        c = extract_constraints(demo, small_ds.object(oid).cloud)
        assert any(constraint_satisfied(l.pose, c) for l in small_ds.grasps[oid])


def test_dataset_round_trip_bitwise(tmp_path, small_ds):
    write_dataset(tmp_path / "d", small_ds)
    back = read_dataset(tmp_path / "d")
    assert [o.object_id for o in back.objects] == [o.object_id for o in small_ds.objects]
    for a, b in zip(small_ds.objects, back.objects):
        assert np.array_equal(a.cloud.points, b.cloud.points)
        assert np.array_equal(a.cloud.normals, b.cloud.normals)
        assert a.cloud.frame.scale == b.cloud.frame.scale
        for la, lb in zip(small_ds.grasps[a.object_id], back.grasps[b.object_id]):
            assert np.array_equal(la.pose.translation, lb.pose.translation)
            np.testing.assert_array_equal(np.abs(la.pose.rotation.q), np.abs(lb.pose.rotation.q))
            assert la.width == lb.width
    for key, d in small_ds.demos.items():
        assert np.array_equal(d.hand_points, back.demos[key].hand_points)
    meta = json.loads((tmp_path / "d" / "meta.json").read_text())
    assert meta["version"] == 1


def test_dataset_byte_identical_per_seed(tmp_path):
    for name in ("a", "b"):
        ds = generate_dataset(seed=5, kinds=("cylinder",), variants=1, grasps_per_object=20, n_points=128)
        write_dataset(tmp_path / name, ds)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_parse_errors(tmp_path, small_ds):
    write_dataset(tmp_path / "d", small_ds)
    path = next((tmp_path / "d" / "objects").glob("*.json"))
    data = json.loads(path.read_text())
    del data["normals"]
    path.write_text(json.dumps(data))
    with pytest.raises(ParseError, match="normals"):
        read_object(path)
    meta = tmp_path / "d" / "meta.json"
    m = json.loads(meta.read_text())
    m["version"] = 99
    meta.write_text(json.dumps(m))
    with pytest.raises(VersionError):
        read_dataset(tmp_path / "d")
    demo_path = next((tmp_path / "d" / "demos").glob("*.json"))
    assert read_demo(demo_path).hand_points.shape[1] == 3


def test_write_ply(tmp_path):
    pts = np.random.default_rng(0).normal(size=(5, 3))
    write_ply(tmp_path / "x.ply", pts, np.full((5, 3), 200))
    text = (tmp_path / "x.ply").read_text().splitlines()
    assert text[0] == "ply" and "element vertex 5" in text
    assert len(text) == text.index("end_header") + 6


def test_force_closure_rigid_invariance():
    rng = np.random.default_rng(12)
    box = Box(np.zeros(3), [0.03, 0.02, 0.05])
    shifted = box.transformed(np.array([-0.4, 0.2, 1.0]), 1.0)
    shift = np.array([0.4, -0.2, -1.0])
    hits = 0
    for _ in range(300):
        h = GraspPose(Rotation(rng.normal(size=4)), rng.uniform(-0.04, 0.04, 3))
        a = force_closure(h, box, SPEC)
        b = force_closure(GraspPose(h.rotation, h.translation + shift), shifted, SPEC)
        assert a.ok == b.ok and a.reason == b.reason
        hits += a.ok
    # quarter turn about z swaps the x/y extents of the box
    turned = Box(np.zeros(3), [0.02, 0.03, 0.05])
    rz = Rotation.exp([0, 0, np.pi / 2])
    for _ in range(300):
        h = GraspPose(Rotation(rng.normal(size=4)), rng.uniform(-0.04, 0.04, 3))
        a = force_closure(h, box, SPEC)
        b = force_closure(GraspPose(rz @ h.rotation, rz.apply(h.translation)), turned, SPEC)
        assert a.ok == b.ok


def test_cylinder_crossings_analytic():
    cyl = Cylinder(np.zeros(3), 0.5, 1.0)
    cr = cyl.crossings(np.array([-2.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    assert [c.s for c in cr] == pytest.approx([1.5, 2.5])
    np.testing.assert_allclose(cr[0].normal, [-1, 0, 0])
