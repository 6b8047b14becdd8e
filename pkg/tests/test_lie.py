import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hgdiffuser.errors import InvalidArgument
from hgdiffuser.lie import (
    GraspPose,
    Rotation,
    Twist,
    geodesic_distance,
    geodesic_distance_q,
    perturb,
    quat_canonical,
    quat_mul,
    quat_to_matrix,
    random_quat,
    random_rotation,
    retract,
    se3_apply,
    se3_compose,
    se3_inverse,
    so3_exp,
    so3_log,
)

finite = st.floats(-10, 10, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
seeds = st.integers(0, 2**32 - 1)


def rodrigues(omega):
    """Independent matrix route for exp: R = I + sin(th) K + (1 - cos(th)) K^2."""
    th = np.linalg.norm(omega)
    if th == 0:
        return np.eye(3)
    k = omega / th
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * K @ K


def trace_angle(m1, m2):
    c = (np.trace(m1.T @ m2) - 1) / 2
    return np.arccos(np.clip(c, -1, 1))


def rand_pose(rng):
    return GraspPose(random_rotation(rng), rng.normal(size=3))


def test_exp_identity_and_quarter_turn():
    assert np.array_equal(so3_exp(np.zeros(3)), [1, 0, 0, 0])
    r = Rotation.exp([0, 0, np.pi / 2])
    np.testing.assert_allclose(r.apply([1, 0, 0]), [0, 1, 0], atol=1e-15)


def test_log_identity_and_half_turn():
    assert np.array_equal(so3_log(np.array([1.0, 0, 0, 0])), np.zeros(3))
    w = Rotation.exp([0, 0, np.pi]).log()
    np.testing.assert_allclose(np.abs(w), [0, 0, np.pi], atol=1e-12)


def test_exp_log_round_trip_10k():
    rng = np.random.default_rng(0)
    d = rng.normal(size=(10_000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    omega = d * rng.uniform(0, np.pi - 1e-6, size=(10_000, 1))
    err = np.linalg.norm(so3_log(so3_exp(omega)) - omega, axis=1)
    assert err.max() < 1e-9


def test_exp_matches_rodrigues_matrix():
    rng = np.random.default_rng(1)
    for omega in rng.normal(size=(200, 3)) * 2:
        np.testing.assert_allclose(quat_to_matrix(so3_exp(omega)), rodrigues(omega), atol=1e-12)


def test_small_angle_branch_continuous():
    for th in (1e-12, 1e-9, 1e-7):
        omega = np.array([th, -2 * th, 0.5 * th])
        np.testing.assert_allclose(so3_log(so3_exp(omega)), omega, rtol=1e-9, atol=0)


def test_exp_rejects_nonfinite():
    with pytest.raises(InvalidArgument):
        so3_exp([np.nan, 0, 0])


def test_geodesic_trivial_cases():
    i = Rotation.identity()
    assert geodesic_distance(i, i) == 0.0
    for axis in np.eye(3):
        assert geodesic_distance(i, Rotation.exp(np.pi * axis)) == pytest.approx(np.pi, abs=1e-12)


def test_geodesic_matches_trace_formula():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        r = random_rotation(rng)
        r2 = r @ Rotation.exp([0, 0, 0.3])
        assert geodesic_distance(r, r2) == pytest.approx(0.3, abs=1e-9)
        q = random_rotation(rng)
        assert geodesic_distance(r, q) == pytest.approx(trace_angle(r.matrix(), q.matrix()), abs=1e-7)


def test_geodesic_metric_properties_10k():
    rng = np.random.default_rng(3)
    a, b, c = (random_quat(rng, 10_000) for _ in range(3))
    dab, dba = geodesic_distance_q(a, b), geodesic_distance_q(b, a)
    assert np.array_equal(dab, dba)
    assert np.all(dab <= geodesic_distance_q(a, c) + geodesic_distance_q(c, b) + 1e-9)
    assert np.all(geodesic_distance_q(a, a) == 0.0)
    q = random_quat(rng, 10_000)
    np.testing.assert_allclose(geodesic_distance_q(quat_mul(q, a), quat_mul(q, b)), dab, atol=1e-9)


def test_compose_apply_and_inverse():
    rng = np.random.default_rng(4)
    h = rand_pose(rng)
    ident = GraspPose.identity()
    c = se3_compose(ident, h)
    assert np.array_equal(c.translation, h.translation)
    t = GraspPose(Rotation.identity(), [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(se3_apply(t, [1.0, 1.0, 1.0]), [2.0, 3.0, 4.0])
    for _ in range(200):
        a, b, p = rand_pose(rng), rand_pose(rng), rng.normal(size=3)
        np.testing.assert_allclose(se3_apply(se3_compose(a, b), p), se3_apply(a, se3_apply(b, p)), atol=1e-10)
        # matrix route
        np.testing.assert_allclose(se3_compose(a, b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)
        np.testing.assert_allclose(se3_compose(a, se3_inverse(a)).matrix(), np.eye(4), atol=1e-12)


def test_retract_cases():
    rng = np.random.default_rng(5)
    h = rand_pose(rng)
    r0 = retract(h, Twist.zero())
    np.testing.assert_array_equal(r0.translation, h.translation)
    np.testing.assert_allclose(r0.rotation.q, h.rotation.q, atol=1e-16)
    v = np.array([0.1, -0.2, 0.3])
    r = retract(GraspPose.identity(), Twist(v, np.zeros(3)))
    np.testing.assert_array_equal(r.translation, v)
    np.testing.assert_array_equal(r.rotation.q, [1, 0, 0, 0])
    for _ in range(100):
        h = rand_pose(rng)
        w = rng.normal(size=3)
        back = retract(retract(h, Twist(np.zeros(3), w)), Twist(np.zeros(3), -w))
        np.testing.assert_allclose(back.matrix(), h.matrix(), atol=1e-10)


def test_retract_translation_is_body_frame():
    rng = np.random.default_rng(6)
    h = rand_pose(rng)
    v = rng.normal(size=3)
    np.testing.assert_allclose(retract(h, Twist(v, np.zeros(3))).translation,
                               h.translation + h.rotation.matrix() @ v, atol=1e-12)


def test_random_rotation_deterministic_and_uniform():
    a = random_rotation(np.random.default_rng(7)).q
    b = random_rotation(np.random.default_rng(7)).q
    assert np.array_equal(a, b)
    rng = np.random.default_rng(8)
    q = random_quat(rng, 100_000)
    z = quat_to_matrix(q)[:, :, 2]
    assert np.linalg.norm(z.mean(axis=0)) < 0.02


def test_haar_angle_density_tv_100k():
    rng = np.random.default_rng(9)
    q = random_quat(rng, 100_000)
    theta = geodesic_distance_q(np.array([1.0, 0, 0, 0]), q)
    edges = np.linspace(0, np.pi, 51)
    hist = np.histogram(theta, edges)[0] / len(theta)
    # integral of (1 - cos t)/pi over each bin
    cdf = (edges - np.sin(edges)) / np.pi
    tv = 0.5 * np.abs(hist - np.diff(cdf)).sum()
    assert tv < 0.05


def test_perturb_properties():
    rng = np.random.default_rng(10)
    h = rand_pose(rng)
    hp, eps = perturb(h, 0.3, np.random.default_rng(11))
    again = retract(h, eps)
    assert np.array_equal(again.rotation.q, hp.rotation.q)
    assert np.array_equal(again.translation, hp.translation)
    tiny, _ = perturb(h, 1e-12, rng)
    np.testing.assert_allclose(tiny.matrix(), h.matrix(), atol=1e-8)
    with pytest.raises(InvalidArgument):
        perturb(h, 0.0, rng)


def test_perturb_variance_moment():
    sigma = 0.7
    gen = np.random.default_rng(12)
    h = GraspPose.identity()
    eps = np.array([perturb(h, sigma, gen)[1].vector() for _ in range(100_000 // 6 + 1)])
    # every component is an independent draw; pool them
    var = eps.reshape(-1).var()
    assert sigma**2 * 0.98 <= var <= sigma**2 * 1.02


def test_pose_json_canonical():
    h = GraspPose(Rotation([-0.5, 0.5, 0.5, 0.5]), [1, 2, 3])
    js = h.to_json()
    assert js["q"][0] >= 0
    back = GraspPose.from_json(js)
    np.testing.assert_allclose(back.matrix(), h.matrix(), atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(vec3)
def test_prop_round_trip(omega):
    th = np.linalg.norm(omega)
    if th > np.pi - 1e-6:
        omega = omega / th * (np.pi - 1e-6) * 0.99
    np.testing.assert_allclose(so3_log(so3_exp(omega)), omega, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_prop_purity_and_canonical(seed):
    q = random_quat(np.random.default_rng(seed))
    assert np.array_equal(so3_log(q), so3_log(q.copy()))
    c = quat_canonical(-q)
    np.testing.assert_allclose(np.abs(c), np.abs(q))
    assert c[0] >= 0
    assert geodesic_distance_q(q, -q) == pytest.approx(0.0, abs=1e-7)
