"""Hand pose filtering tests.

The low-pass smoothing coefficient and the one-step outputs are frozen from
scalar evaluation of the filter laws; the Kalman filter is checked against a
from-scratch matrix-form implementation and against ground-truth motion
(stationary and constant-velocity ramps), not against itself.
"""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation, Slerp

from vmc_handover.hand_signal import (
    KalmanCvState,
    LowPassState,
    default_kalman,
    default_lowpass,
    kalman_update,
    lowpass_update,
)
from vmc_handover.kinematics import Pose

# a = dt / (dt + 1/(2 pi f_c)) for dt=0.01, f_c=5 Hz
A_5HZ_10MS = 0.01 / (0.01 + 1.0 / (2.0 * np.pi * 5.0))


def make_state(cutoff, pose):
    return LowPassState(cutoff=cutoff, last_output=pose)


# ====== low-pass ======


def test_lowpass_unit_step_frozen_coefficient():
    s = make_state(5.0, Pose.identity())
    raw = Pose(position=np.array([1.0, 0.0, 0.0]), rotation=np.eye(3))
    s, out = lowpass_update(s, raw, dt=0.01)
    assert A_5HZ_10MS == pytest.approx(0.23905722361068824, rel=1e-12)
    assert out.position[0] == pytest.approx(A_5HZ_10MS, rel=1e-12)
    assert np.allclose(out.position[1:], 0.0)
    assert np.allclose(s.last_output.position, out.position)


def test_lowpass_constant_input_converges():
    # per-step contraction is (1-a); 10/a steps at a ~ 0.5 squeeze a unit
    # initial error through (1-a)^(10/a) ~ 9e-7
    cutoff, dt = 16.0, 0.01
    a = dt / (dt + 1.0 / (2.0 * np.pi * cutoff))
    s = make_state(cutoff, Pose.identity())
    raw = Pose.from_rpy([0.3, -0.2, 0.5], [0.2, 0.1, -0.4])
    n = int(np.ceil(10.0 / a))
    for _ in range(n):
        s, out = lowpass_update(s, raw, dt=dt)
    assert np.linalg.norm(out.position - raw.position) < 1e-6
    assert np.linalg.norm(out.rotation - raw.rotation) < 1e-6


def test_lowpass_large_dt_passes_through():
    s = make_state(8.0, Pose.identity())
    raw = Pose.from_rpy([0.4, 0.1, -0.3], [0.5, -0.2, 0.9])
    s, out = lowpass_update(s, raw, dt=1e9)
    assert np.linalg.norm(out.position - raw.position) < 1e-6
    assert np.linalg.norm(out.rotation - raw.rotation) < 1e-6


def test_lowpass_position_contraction_exact():
    rng = np.random.default_rng(7)
    for _ in range(50):
        last = Pose(position=rng.normal(size=3), rotation=np.eye(3))
        raw = Pose(position=rng.normal(size=3), rotation=np.eye(3))
        dt = float(rng.uniform(1e-3, 0.1))
        cutoff = float(rng.uniform(1.0, 30.0))
        a = dt / (dt + 1.0 / (2.0 * np.pi * cutoff))
        s = make_state(cutoff, last)
        _, out = lowpass_update(s, raw, dt=dt)
        lhs = np.linalg.norm(out.position - raw.position)
        rhs = (1.0 - a) * np.linalg.norm(last.position - raw.position)
        assert lhs == pytest.approx(rhs, abs=1e-12)


def test_lowpass_orientation_is_slerp_by_a():
    # identity toward Rz(0.5) with coefficient a lands at Rz(a * 0.5)
    s = make_state(5.0, Pose.identity())
    raw = Pose.from_rpy([0, 0, 0], [0.0, 0.0, 0.5])
    s, out = lowpass_update(s, raw, dt=0.01)
    expect = Rotation.from_euler("z", A_5HZ_10MS * 0.5).as_matrix()
    assert np.allclose(out.rotation, expect, atol=1e-12)


def test_lowpass_orientation_matches_scipy_slerp():
    rng = np.random.default_rng(11)
    for _ in range(25):
        r0 = Rotation.random(random_state=rng)
        r1 = Rotation.random(random_state=rng)
        dt = float(rng.uniform(1e-3, 0.05))
        cutoff = 8.0
        a = dt / (dt + 1.0 / (2.0 * np.pi * cutoff))
        s = make_state(cutoff, Pose(position=np.zeros(3), rotation=r0.as_matrix()))
        raw = Pose(position=np.zeros(3), rotation=r1.as_matrix())
        _, out = lowpass_update(s, raw, dt=dt)
        ref = Slerp([0.0, 1.0], Rotation.concatenate([r0, r1]))(a).as_matrix()
        assert np.allclose(out.rotation, ref, atol=1e-9)


def test_lowpass_rejects_bad_dt_and_cutoff():
    s = make_state(5.0, Pose.identity())
    with pytest.raises(ValueError):
        lowpass_update(s, Pose.identity(), dt=0.0)
    with pytest.raises(ValueError):
        LowPassState(cutoff=0.0, last_output=Pose.identity())


def test_nonfinite_pose_is_unrepresentable():
    # the Pose type rejects non-finite input at construction
    with pytest.raises(ValueError):
        Pose(position=np.array([np.nan, 0.0, 0.0]), rotation=np.eye(3))


# ====== Kalman ======


def kalman_oracle_step(x, P, z, dt, q_proc, r_meas):
    """Textbook constant-velocity predict/update, written independently."""
    I3 = np.eye(3)
    Z3 = np.zeros((3, 3))
    F = np.block([[I3, dt * I3], [Z3, I3]])
    Q = q_proc * np.block(
        [[dt**3 / 3.0 * I3, dt**2 / 2.0 * I3], [dt**2 / 2.0 * I3, dt * I3]]
    )
    H = np.hstack([I3, Z3])
    x = F @ x
    P = F @ P @ F.T + Q
    S = H @ P @ H.T + r_meas * I3
    K = P @ H.T @ np.linalg.inv(S)
    x = x + K @ (z - H @ x)
    P = (np.eye(6) - K @ H) @ P
    return x, 0.5 * (P + P.T)


def test_kalman_matches_independent_implementation():
    rng = np.random.default_rng(3)
    s = default_kalman(np.zeros(3))
    x, P = s.x.copy(), s.P.copy()
    for _ in range(100):
        z = rng.normal(scale=0.02, size=3)
        s, vel = kalman_update(s, z, dt=0.01)
        x, P = kalman_oracle_step(x, P, z, 0.01, s.q_proc, s.r_meas)
        assert np.allclose(s.x, x, atol=1e-10)
        assert np.allclose(s.P, P, atol=1e-10)
        assert np.allclose(vel, x[3:], atol=1e-10)


def test_kalman_stationary_velocity_settles():
    s = default_kalman(np.array([0.2, -0.1, 0.5]))
    z = np.array([0.2, -0.1, 0.5])
    for _ in range(100):
        s, vel = kalman_update(s, z, dt=0.01)
    assert np.linalg.norm(vel) < 1e-3


def test_kalman_ramp_velocity_converges():
    v = np.array([1.0, 0.0, 0.0])
    s = default_kalman(np.zeros(3))
    for i in range(1, 201):
        s, vel = kalman_update(s, v * (i * 0.01), dt=0.01)
    assert np.linalg.norm(vel - v) < 0.01


def test_kalman_covariance_stays_symmetric_and_psd():
    rng = np.random.default_rng(9)
    s = default_kalman(np.zeros(3))
    for i in range(200):
        z = np.array([np.sin(i * 0.05), 0.3, -0.1]) + rng.normal(scale=0.005, size=3)
        s, _ = kalman_update(s, z, dt=0.01)
        assert np.max(np.abs(s.P - s.P.T)) <= 1e-12
        assert np.min(np.linalg.eigvalsh(s.P)) >= -1e-9


def test_kalman_translation_invariance_exact():
    offset = np.array([3.0, -7.0, 2.5])
    sa = default_kalman(np.zeros(3))
    sb = default_kalman(offset)
    rng = np.random.default_rng(4)
    for i in range(150):
        z = rng.normal(size=3) * 0.01 + np.array([0.1, 0.0, 0.0]) * i
        sa, va = kalman_update(sa, z, dt=0.01)
        sb, vb = kalman_update(sb, z + offset, dt=0.01)
        # covariance never sees z, so it matches bitwise; the velocity path
        # rounds (z+offset)-(pred+offset) differently, leaving ~ulp residue
        assert np.array_equal(sa.P, sb.P)
        assert np.allclose(va, vb, atol=1e-12)
        assert np.allclose(sa.x[:3] + offset, sb.x[:3], atol=1e-12)


def test_kalman_state_validation():
    with pytest.raises(ValueError):
        KalmanCvState(
            x=np.zeros(6),
            P=np.diag([1.0, 1.0, 1.0, 1.0, 1.0, -1.0]),
            q_proc=5.0,
            r_meas=2.5e-5,
        )
    with pytest.raises(ValueError):
        kalman_update(default_kalman(np.zeros(3)), np.zeros(3), dt=0.0)
    with pytest.raises(ValueError):
        kalman_update(default_kalman(np.zeros(3)), np.array([np.nan, 0, 0]), dt=0.01)


def test_defaults_match_config_values():
    lp = default_lowpass(Pose.identity())
    assert lp.cutoff == pytest.approx(8.0)
    k = default_kalman(np.zeros(3))
    assert k.q_proc == pytest.approx(5.0)
    assert k.r_meas == pytest.approx(0.005**2)
    assert np.allclose(k.x[:3], 0.0) and np.allclose(k.x[3:], 0.0)
