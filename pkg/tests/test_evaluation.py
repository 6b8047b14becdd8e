import itertools

import numpy as np
import pytest

from hgdiffuser.constraints import DemoConstraint, GuidanceConfig, extract_constraints
from hgdiffuser.dataset import generate_dataset
from hgdiffuser.diffusion import NoiseSchedule, TrainConfig, run_chains
from hgdiffuser.evaluation.ablation import ablation_backbone, mean_rates
from hgdiffuser.evaluation.baseline import guided_best, satisfied_mask, select_best, two_stage_baseline
from hgdiffuser.evaluation.benchmark import (
    CSV_COLUMNS,
    BenchConfig,
    read_csv,
    run_benchmark,
    summarize_rows,
    summary_json,
    wilcoxon_greater,
    write_csv,
)
from hgdiffuser.evaluation.quality import constraint_satisfied, force_closure
from hgdiffuser.gripper import GripperSpec
from hgdiffuser.lie import GraspPose, Rotation
from hgdiffuser.network import NetworkConfig, init_params
from hgdiffuser.shapes import Box

SPEC = GripperSpec()
NET = NetworkConfig(d=16, g=6, D=1, heads=4, mlp_ratio=2, pointnet_widths=(8, 16))
SMALL = NoiseSchedule(L=4, sigma_min=0.05, sigma_max=1.0, eps0=0.5, n_inner=1)


@pytest.fixture(scope="module")
def ds():
    return generate_dataset(seed=2, kinds=("box", "cylinder"), variants=1, grasps_per_object=16, n_points=64)


def test_force_closure_face_pinch_and_cone():
    box = Box(np.zeros(3), [0.02, 0.05, 0.05])
    straight = force_closure(GraspPose(Rotation.identity(), np.zeros(3)), box, SPEC, 0.5)
    assert straight.ok and straight.width == pytest.approx(0.04)
    # closing axis 45 degrees off the x-face normal; the cone half-angle at mu=0.5 is 26.6 degrees
    tilted = GraspPose(Rotation.exp([0, 0, np.pi / 4]), np.zeros(3))
    res = force_closure(tilted, box, SPEC, 0.5)
    assert not res.ok and res.reason == "friction-cone"
    assert res.width == pytest.approx(0.04 * np.sqrt(2))
    # a friction coefficient above tan(45 deg) admits the same pinch
    assert force_closure(tilted, box, SPEC, 1.01).ok


def test_force_closure_far_away_and_collision():
    box = Box(np.zeros(3), [0.02, 0.05, 0.05])
    far = force_closure(GraspPose(Rotation.identity(), [1.0, 0, 0]), box, SPEC)
    assert not far.ok and far.reason == "no-contact"
    wide = Box(np.zeros(3), [0.05, 0.05, 0.05])
    assert force_closure(GraspPose(Rotation.identity(), np.zeros(3)), wide, SPEC).reason == "no-contact"
    # a box reaching back past the wrist point: the jaws close fine but the palm penetrates
    deep = Box([0, 0, -0.06], [0.02, 0.05, 0.08])
    assert force_closure(GraspPose(Rotation.identity(), np.zeros(3)), deep, SPEC).reason == "collision"


def test_satisfied_mask_matches_scalar():
    rng = np.random.default_rng(0)
    c = DemoConstraint(np.zeros(3), Rotation.identity(), 0.3, 0.8)
    q = rng.normal(size=(200, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[:, 0] += 3.0
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    t = rng.normal(size=(200, 3)) * 0.3
    mask = satisfied_mask(q, t, c)
    assert mask.any() and not mask.all()
    assert list(mask) == [constraint_satisfied(GraspPose.from_qt(a, b), c) for a, b in zip(q, t)]


def test_select_best_ties_and_none():
    c = DemoConstraint(np.zeros(3), Rotation.identity(), 0.1, 0.3)
    g = GuidanceConfig()
    q = np.tile([1.0, 0, 0, 0], (3, 1))
    assert select_best(q, np.array([[1.0, 0, 0]] * 3), c, g) is None
    assert select_best(q, np.array([[1.0, 0, 0], [0.05, 0, 0], [0.0, 0, 0]]), c, g) == 1


def test_two_stage_baseline_contract(ds):
    obj = ds.objects[0]
    params = init_params(NET, 0)
    c = extract_constraints(next(d for (o, _), d in ds.demos.items() if o == obj.object_id), obj.cloud)
    assert two_stage_baseline(obj.cloud, params, c, 0, SMALL, seed=1) is None
    loose = DemoConstraint(c.p_region, c.d_direct, 5.0, np.nextafter(np.pi, 0))
    h = two_stage_baseline(obj.cloud, params, loose, 8, SMALL, seed=1)
    assert h is not None and constraint_satisfied(h, loose)
    # the winner is the lowest-loss survivor among the same chains
    res = run_chains(obj.cloud, params, SMALL, 8, 1)
    i = select_best(res.q, res.t, loose, GuidanceConfig())
    assert np.array_equal(h.translation, res.t[i])
    assert guided_best(obj.cloud, params, c, 0, SMALL, seed=1) is None
    assert guided_best(obj.cloud, params, c, 3, SMALL, seed=1) is not None


def exact_wilcoxon_greater(a, b):
    """Signed-rank p-value by enumerating every sign assignment (no ties, no zeros)."""
    d = np.asarray(a, float) - np.asarray(b, float)
    ranks = np.argsort(np.argsort(np.abs(d))) + 1
    observed = ranks[d > 0].sum()
    hits = sum(1 for signs in itertools.product((0, 1), repeat=len(d)) if ranks[np.array(signs, bool)].sum() >= observed)
    return hits / 2 ** len(d)


def test_wilcoxon_matches_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(5):
        a = rng.normal(size=9)
        b = a - rng.normal(0.3, 1.0, size=9)
        assert wilcoxon_greater(a, b) == pytest.approx(exact_wilcoxon_greater(a, b), rel=1e-9)
    assert wilcoxon_greater([1, 2], [1, 2]) == 1.0


@pytest.fixture(scope="module")
def bench(ds):
    cfg = BenchConfig(ts_sizes=(2, 4), guided_sizes=(1,), seeds=2, timing_warmup=0)
    return run_benchmark(ds, init_params(NET, 1), SMALL, GuidanceConfig(), cfg), cfg


def test_benchmark_csv_and_aggregates(tmp_path, bench, ds):
    reports, cfg = bench
    assert [r.label for r in reports] == ["two-stage@2", "two-stage@4", "guided@1"]
    write_csv(tmp_path / "b.csv", reports)
    header = (tmp_path / "b.csv").read_text().splitlines()[0]
    assert header.split(",") == CSV_COLUMNS
    rows = read_csv(tmp_path / "b.csv")
    n_pairs = len(ds.demos)
    assert len(rows) == 3 * cfg.seeds * n_pairs
    agg = summarize_rows(rows)
    for rep in reports:
        s = agg[(rep.method, rep.n_samples)]
        assert s["count"] == len(rep.records)
        assert s["success_rate"] == pytest.approx(rep.success_rate)
        assert s["constraint_rate"] == pytest.approx(rep.constraint_rate)
        assert s["time_mean_s"] == pytest.approx(rep.time_mean)
        assert all(r.success == (r.constraint_ok and r.force_closure_ok) for r in rep.records)
    js = summary_json(reports)
    assert {m["method"] for m in js["methods"]} == {"two-stage", "guided"}


def test_benchmark_rerun_reproduces(bench, ds):
    reports, cfg = bench
    again = run_benchmark(ds, init_params(NET, 1), SMALL, GuidanceConfig(), cfg)
    for a, b in zip(reports, again):
        assert [(r.success, r.constraint_ok) for r in a.records] == [(r.success, r.constraint_ok) for r in b.records]
        assert np.array_equal([r.loss_total for r in a.records], [r.loss_total for r in b.records], equal_nan=True)


def test_ablation_deterministic(ds):
    small = ds.subset(kinds=("box",))
    cfg = TrainConfig(epochs=1, batch_size=8, learning_rate=1e-3)
    a = ablation_backbone(small, NET, SMALL, cfg, seeds=(0,), n_samples=3)
    b = ablation_backbone(small, NET, SMALL, cfg, seeds=(0,), n_samples=3)
    assert [(r.backbone, r.force_closure_rate, r.final_loss) for r in a] == [
        (r.backbone, r.force_closure_rate, r.final_loss) for r in b
    ]
    assert set(mean_rates(a)) == {"dit", "mlp"}
