import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from skillchain.geometry import (
    AngleNearPi,
    PerturbationSpec,
    Pose,
    Twist,
    compose,
    exp_map,
    inverse,
    left_jacobian,
    log_map,
    pose_from_json,
    quat_distance,
    relative_pose,
    sample_perturbed_init,
    slerp,
)

finite = st.floats(-1.0, 1.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite)


def hat(xi):
    w, v = xi[:3], xi[3:]
    m = np.zeros((4, 4))
    m[:3, :3] = [[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]]
    m[:3, 3] = v
    return m


@st.composite
def twists(draw, max_angle=math.pi - 0.01):
    axis = np.array(draw(vec3))
    n = np.linalg.norm(axis)
    angle = draw(st.floats(0.0, max_angle))
    omega = axis / n * angle if n > 1e-6 else np.zeros(3)
    v = draw(st.tuples(*[st.floats(-2, 2)] * 3))
    return Twist(tuple(omega), v)


@st.composite
def poses(draw):
    q = draw(st.tuples(*[st.floats(-1, 1)] * 4).filter(lambda q: sum(c * c for c in q) > 1e-3))
    t = draw(st.tuples(*[st.floats(-3, 3)] * 3))
    return Pose(q, t)


def close(a: Pose, b: Pose, tol):
    return np.allclose(a.matrix(), b.matrix(), atol=tol, rtol=0)


@given(twists())
def test_exp_matches_matrix_exponential(xi):
    got = exp_map(xi).matrix()
    want = expm(hat(xi.as_array()))
    assert np.allclose(got, want, atol=1e-10)


@given(twists())
def test_log_inverts_exp(xi):
    back = log_map(exp_map(xi)).as_array()
    assert np.max(np.abs(back - xi.as_array())) < 1e-9


@given(st.floats(0, 1e-7), vec3, vec3)
def test_small_angle_branch_continuous(scale, w, v):
    xi = Twist(tuple(scale * c for c in w), v)
    want = expm(hat(xi.as_array()))
    assert np.allclose(exp_map(xi).matrix(), want, atol=1e-12)
    assert np.allclose(log_map(exp_map(xi)).as_array(), xi.as_array(), atol=1e-12)


def test_left_jacobian_is_translation_part_of_exp():
    w = np.array([0.3, -0.5, 0.8])
    v = np.array([0.1, 0.2, -0.4])
    assert np.allclose(left_jacobian(w) @ v, exp_map(Twist(tuple(w), tuple(v))).t, atol=1e-14)


def test_log_near_pi_raises():
    with pytest.raises(AngleNearPi):
        log_map(Pose.from_axis_angle((0, 0, 1), math.pi - 1e-9))


@given(poses(), poses(), poses())
def test_compose_associative(a, b, c):
    assert close(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-12)


@given(poses(), poses())
def test_compose_matches_homogeneous_product(a, b):
    assert np.allclose(compose(a, b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)


@given(poses())
def test_inverse_matches_matrix_inverse(p):
    assert np.allclose(inverse(p).matrix(), np.linalg.inv(p.matrix()), atol=1e-12)


@given(poses(), poses(), poses())
def test_relative_pose_left_invariant(g, a, b):
    assert close(relative_pose(compose(g, a), compose(g, b)), relative_pose(a, b), 1e-12)


def test_relative_pose_examples():
    p = Pose.from_axis_angle((1, 2, 3), 0.7, (0.3, -0.1, 0.2))
    assert close(relative_pose(p, p), Pose(), 1e-15)
    rel = relative_pose(Pose(t=(1, 0, 0)), Pose(t=(1, 0, 0.2)))
    assert np.allclose(rel.t, (0, 0, 0.2)) and rel.q == (1.0, 0.0, 0.0, 0.0)


def test_chained_rotation_tracks_closed_form():
    n, step = 1_000_000, 0.3
    axis = np.array([1.0, 2.0, 3.0]) / math.sqrt(14.0)
    r = Pose.from_axis_angle(axis, step)
    acc = Pose()
    for _ in range(n):
        acc = compose(acc, r)
    assert abs(sum(c * c for c in acc.q) - 1.0) < 1e-6
    want = Pose.from_axis_angle(axis, (n * step) % (4 * math.pi))
    assert quat_distance(acc.q, want.q) < 1e-6


def test_quat_distance_accurate_near_identity():
    q = Pose.from_axis_angle((0, 1, 0), 1e-9).q
    assert abs(quat_distance((1, 0, 0, 0), q) - 1e-9) < 1e-20


def test_zero_sigma_returns_approach_exactly(rng):
    approach = Pose.from_axis_angle((0, 0, 1), 0.4, (0.1, 0.2, 0.3))
    state_before = rng.bit_generator.state
    assert sample_perturbed_init(approach, PerturbationSpec.zero(), rng) is approach
    assert rng.bit_generator.state == state_before


def test_perturbation_is_body_frame_noise(rng):
    approach = Pose.from_axis_angle((0, 0, 1), math.pi / 2, (0.5, 0.0, 0.0))
    spec = PerturbationSpec((0, 0, 0, 0.01, 0, 0))
    xs = np.array([sample_perturbed_init(approach, spec, rng).t for _ in range(2000)])
    # body x is world y after a quarter turn about z
    assert xs[:, 1].std() > 0.009 and xs[:, 0].std() < 1e-12


def test_perturbation_sigma_recovered(rng):
    sigma = (0.05, 0.03, 0.08, 0.01, 0.02, 0.005)
    approach = Pose.from_axis_angle((1, 1, 0), 0.5, (0.2, -0.1, 0.4))
    samples = np.array([
        log_map(relative_pose(approach, sample_perturbed_init(approach, PerturbationSpec(sigma), rng))).as_array()
        for _ in range(10_000)
    ])
    rel = samples.std(axis=0) / np.array(sigma)
    assert np.all(np.abs(rel - 1) < 0.05)


def test_perturbation_spec_validation():
    with pytest.raises(ValueError):
        PerturbationSpec((0.1,) * 5)
    with pytest.raises(ValueError):
        PerturbationSpec((-0.1,) + (0.0,) * 5)


def test_pose_json_forms():
    a = pose_from_json([1, 0, 0, 0, 1, 2, 3])
    b = pose_from_json({"axis_angle": [0, 0, math.pi / 2], "t": [1, 2, 3]})
    c = pose_from_json({"yaw": math.pi / 2, "t": [1, 2, 3]})
    assert a.t == (1.0, 2.0, 3.0)
    assert close(b, c, 1e-15)
    assert Pose.from_list(b.to_list()) == b
    with pytest.raises(ValueError):
        Pose.from_list([1, 0, 0])


@given(st.floats(0, 1))
def test_slerp_endpoints_and_unit_norm(s):
    q0 = Pose.from_axis_angle((1, 0, 0), 0.2).q
    q1 = Pose.from_axis_angle((0, 1, 1), 1.4).q
    q = slerp(q0, q1, s)
    assert abs(sum(c * c for c in q) - 1) < 1e-12
    assert quat_distance(slerp(q0, q1, 0.0), q0) < 1e-7
    assert quat_distance(slerp(q0, q1, 1.0), q1) < 1e-7
