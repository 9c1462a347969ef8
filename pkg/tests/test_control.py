import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bitetransfer.control.admittance import (AdmittanceParams, EndEffectorState, deadband, force_params, force_step,
                                             goal_params, goal_step, integrate, outside_mouth_policy)
from bitetransfer.control.monitors import HeadImpulseMonitor, SubsideMonitor
from bitetransfer.errors import ConfigurationError
from bitetransfer.geometry import Rigid, random_rotation
from bitetransfer.headmodel import MouthPose

DT = 0.01


def _run_goal(state, goal, steps, wrench=np.zeros(6)):
    xs = []
    for _ in range(steps):
        state = EndEffectorState(state.pose, state.twist, wrench, state.time)
        state = integrate(state, goal_step(state, goal, dt=DT), DT)
        xs.append(state.pose.t.copy())
    return state, np.array(xs)


def test_equilibrium_gives_zero_command():
    goal = Rigid.from_rotvec([0.1, 0.2, 0.3], [5, 6, 7])
    assert np.all(goal_step(EndEffectorState(goal), goal) == 0)


def test_goal_converges_without_sign_reversal():
    goal = Rigid.identity()
    state = EndEffectorState(Rigid.translation([100.0, 0, 0]))
    _, xs = _run_goal(state, goal, 200)
    err = xs[:, 0]
    assert np.all(err >= -1e-9)                       # never crosses the goal
    assert np.all(np.abs(xs[:, 1:]) < 1e-9)
    assert abs(err[-1]) < 1.0


def test_goal_convergence_rotation():
    goal = Rigid.identity()
    state = EndEffectorState(Rigid.from_rotvec([0, 0, 0.5]))
    for _ in range(300):
        state = integrate(state, goal_step(state, goal, dt=DT), DT)
    assert np.linalg.norm(state.pose.rotvec()) < np.radians(0.5)


@pytest.mark.parametrize("F", [2.0, 5.0, -3.0])
def test_steady_offset_matches_spring_balance(F):
    K = goal_params().K[0]
    expect = 1000.0 * F / K          # N over N/m, in mm
    state, _ = _run_goal(EndEffectorState(Rigid.identity()), Rigid.identity(), 500, np.array([F, 0, 0, 0, 0, 0]))
    assert abs(state.pose.t[0] - expect) <= 0.02 * abs(expect)


def test_force_step_zero_wrench_decays():
    state = EndEffectorState(Rigid.identity(), np.array([50.0, 0, 0, 0, 0, 0]))
    speeds = []
    for _ in range(50):
        state = integrate(state, force_step(state, dt=DT), DT)
        speeds.append(np.linalg.norm(state.twist))
    assert np.all(np.diff(speeds) <= 1e-12) and speeds[-1] < 1e-3


def test_force_step_yields_to_spring_coupled_push():
    # a hand holds a spring (0.5 N/mm) against the utensil, initially compressed to 5 N
    k_hand = 0.5
    hand = 10.0
    state = EndEffectorState(Rigid.identity())
    t = 0.0
    force = 5.0
    while t < 1.0 - 1e-9:
        force = max(0.0, k_hand * (hand - state.pose.t[0]))
        state = EndEffectorState(state.pose, state.twist, np.array([force, 0, 0, 0, 0, 0]), state.time)
        cmd = force_step(state, dt=DT)
        assert cmd[:3] @ state.wrench[:3] >= -1e-9
        state = integrate(state, cmd, DT)
        t += DT
    force = max(0.0, k_hand * (hand - state.pose.t[0]))
    assert force < 0.5


@given(st.integers(0, 2**32 - 1))
def test_force_step_never_pushes_back(seed):
    rng = np.random.default_rng(seed)
    state = EndEffectorState(Rigid.identity(), rng.normal(0, 80, 6) * [1, 1, 1, 0.01, 0.01, 0.01],
                             rng.normal(0, 3, 6) * [1, 1, 1, 100, 100, 100])
    cmd = force_step(state, dt=DT)
    assert cmd[:3] @ state.wrench[:3] >= -1e-9
    assert cmd[3:] @ state.wrench[3:] >= -1e-9


def test_deadband():
    assert np.all(deadband([0.1, 0.1, 0.0], 0.2) == 0)
    np.testing.assert_allclose(deadband([3.0, 4.0, 0.0], 1.0), [2.4, 3.2, 0.0])
    state = EndEffectorState(Rigid.identity(), np.zeros(6), np.array([0.15, 0, 0, 0, 0, 0]))
    assert np.all(force_step(state, dt=DT) == 0)


def test_parameter_validation():
    with pytest.raises(ConfigurationError):
        force_step(EndEffectorState(Rigid.identity()), goal_params())
    with pytest.raises(ConfigurationError):
        AdmittanceParams(D=(1.0,) * 6).validate()          # under-damped
    with pytest.raises(ConfigurationError):
        goal_step(EndEffectorState(Rigid.identity()), Rigid.identity(), dt=0.5)
    goal_params().validate()
    force_params().validate()


@given(st.integers(0, 2**32 - 1))
def test_outside_policy_standoff(seed):
    rng = np.random.default_rng(seed)
    frame = Rigid(random_rotation(rng), rng.normal(0, 100, 3))
    goal = outside_mouth_policy(MouthPose(frame, 20.0, True))
    assert abs(np.linalg.norm(goal.t - frame.t) - 50.0) < 1e-6
    np.testing.assert_allclose(frame.inverse().apply(goal.t), [0, 0, 50.0], atol=1e-9)


def test_outside_policy_at_origin():
    goal = outside_mouth_policy(MouthPose(Rigid.identity(), 20.0, True))
    np.testing.assert_allclose(goal.t, [0, 0, 50.0])


def test_subside_monitor_dwell():
    m = SubsideMonitor(0.5, 0.2)
    assert not m.update([1.0, 0, 0], DT)
    fired = [m.update([0.1, 0, 0], DT) for _ in range(25)]
    assert fired.index(True) == 19          # 20 quiet ticks = 200 ms
    assert not m.update([2.0, 0, 0], DT)


def test_head_impulse_monitor():
    m = HeadImpulseMonitor(300.0, 0.02)
    assert not any(m.update(k * DT, [k * 1.0, 0, 0]) for k in range(10))      # 100 mm/s
    m.reset()
    hits = [m.update(k * DT, [k * 5.0, 0, 0]) for k in range(5)]            # 500 mm/s
    assert hits[0] is False and any(hits)
