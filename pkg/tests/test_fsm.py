import itertools

import numpy as np
import pytest

from bitetransfer.control.fsm import (Awareness, Event, EventKind, FsmConfig, State, TransferFsm, coarsen, step_fsm,
                                      transition_table)
from bitetransfer.geometry import Rigid
from bitetransfer.headmodel import MouthPose
from bitetransfer.labels import InteractionLabel

MOUTH = MouthPose(Rigid.translation([0.0, 0.0, 300.0]), 25.0, True)
TIP = MOUTH.frame.apply([12.0, 0.0, 0.0])
LABELS = {"A": ["Incidental", "InMouthManipulation", "Impulsive", "Bite"],
          "B": ["Incidental", "InsideNonBite", "Bite"],
          "C": ["NonBite", "Bite"],
          "D": ["Bite"],
          "OutsideMouth": ["Bite"]}


def expected_next(state, kind, label, aw, attempts, bite_done, tip_in):
    """Hand-written reference of the transfer behaviour, independent of the shipped table."""
    S = State
    if state is S.WaitMouthOpen:
        return S.Approach if kind == "MouthOpened" else state
    if state is S.Approach:
        if kind in ("MouthClosed", "MouthLost"):
            return S.Paused
        if kind == "HeadImpulse":
            return S.Retract
        if kind == "GoalReached":
            return S.Inside
        if kind == "Contact":
            return {"Bite": S.Retract, "Incidental": S.Paused, "Impulsive": S.ComplyImpulse,
                    "InsideNonBite": S.ComplyImpulse, "InMouthManipulation": S.ComplyManipulate}.get(label, state)
        return state
    if state is S.Inside:
        if kind == "Contact":
            return {"Bite": S.Retract, "Impulsive": S.ComplyImpulse, "InsideNonBite": S.ComplyImpulse,
                    "InMouthManipulation": S.ComplyManipulate}.get(label, state)
        if kind == "MouthLost":
            return S.Paused
        if kind == "Timeout":
            return S.Retract
        return state
    if state in (S.ComplyImpulse, S.ComplyManipulate):
        if kind == "Contact" and label == "Bite":
            return S.Retract
        if kind == "ImpulseSubsided":
            return S.Inside if tip_in else S.Approach
        if kind == "Timeout":
            return S.Retract
        return state
    if state is S.Retract:
        if kind == "GoalReached":
            return S.Done if bite_done else S.WaitMouthOpen
        return state
    if state is S.Paused:
        if kind == "Contact" and label == "Bite":
            return S.Retract
        if kind == "GoalReached":
            return S.Approach
        if kind == "MouthOpened" and attempts <= 3:
            return S.Approach
        return state
    return state          # Done absorbs everything


def _cases():
    for state, kind, aw in itertools.product(State, EventKind, LABELS):
        labels = LABELS[aw] if kind is EventKind.Contact else [None]
        for label, attempts, bite_done, tip_in in itertools.product(labels, (0, 3, 4), (False, True), (False, True)):
            yield state, kind, label, aw, attempts, bite_done, tip_in


def test_table_lists_every_state_event_awareness():
    t = transition_table()
    assert set(t["states"]) == {s.value for s in State}
    assert set(t["events"]) == {e.value for e in EventKind}
    assert set(t["awareness"]) == {a.value for a in Awareness}


def test_exhaustive_against_reference():
    n = 0
    for state, kind, label, aw, attempts, bite_done, tip_in in _cases():
        fsm = TransferFsm(Awareness(aw), state=state, attempts=attempts, bite_done=bite_done)
        new, ctrl = step_fsm(fsm, Event(kind, label, tip_in), MOUTH, TIP)
        want = expected_next(state, kind.value, label, aw, attempts, bite_done, tip_in)
        assert new is want, (state, kind, label, aw, attempts, bite_done, tip_in)
        assert ctrl.mode in ("goal", "force", "hold")
        if new in (State.ComplyImpulse, State.ComplyManipulate) and new is not state:
            assert ctrl.mode == "force"
        if new is State.Retract and new is not state:
            assert ctrl.mode == "goal" and ctrl.frozen_world is not None
        n += 1
    assert n > 1000


def test_coarsening():
    for lab in InteractionLabel:
        assert coarsen(lab.name, Awareness.A) == lab.name
        assert coarsen(lab.name, Awareness.D) == "Bite"
    assert coarsen("Impulsive", Awareness.B) == "InsideNonBite"
    assert coarsen("InMouthManipulation", Awareness.B) == "InsideNonBite"
    assert coarsen("Incidental", Awareness.C) == "NonBite"


def test_method_d_retracts_on_manipulation():
    fsm = TransferFsm(Awareness.D, state=State.Inside)
    new, ctrl = step_fsm(fsm, Event.contact("InMouthManipulation", Awareness.D), MOUTH, TIP)
    assert new is State.Retract and ctrl.name == "goal:retract"


def _manipulate_then_subside(aw):
    fsm = TransferFsm(aw)
    step_fsm(fsm, Event(EventKind.MouthOpened), MOUTH, TIP)
    step_fsm(fsm, Event(EventKind.GoalReached), MOUTH, TIP)
    step_fsm(fsm, Event.contact("InMouthManipulation", aw), MOUTH, TIP)
    step_fsm(fsm, Event(EventKind.ImpulseSubsided, tip_in_mouth=True), MOUTH, TIP)
    return fsm


def test_method_a_remembers_preferred_location():
    fsm = _manipulate_then_subside(Awareness.A)
    np.testing.assert_allclose(fsm.preferred_location, [12.0, 0.0, 0.0], atol=1e-9)
    fsm.new_feeding()
    _, ctrl = step_fsm(fsm, Event(EventKind.MouthOpened), MOUTH, TIP)
    np.testing.assert_allclose(ctrl.target, [12.0, 0.0, 0.0], atol=1e-9)
    # the approach target follows the live mouth frame
    moved = MouthPose(Rigid.from_rotvec([0, 0.3, 0], [10, 0, 280]), 25.0, True)
    np.testing.assert_allclose(ctrl.goal_point(moved), moved.frame.apply([12.0, 0, 0]))


@pytest.mark.parametrize("aw", [Awareness.B, Awareness.C, Awareness.D])
def test_other_methods_never_set_preferred(aw):
    fsm = _manipulate_then_subside(aw)
    assert fsm.preferred_location is None
    fsm.preferred_location = np.array([1.0, 2.0, 3.0])      # even if present it is not read
    np.testing.assert_allclose(fsm.approach_point(), FsmConfig().insert_point)


def test_method_c_ignores_nonbite_contact():
    fsm = TransferFsm(Awareness.C, state=State.Inside)
    before = fsm.controller
    new, ctrl = step_fsm(fsm, Event.contact("Impulsive", Awareness.C), MOUTH, TIP)
    assert new is State.Inside and ctrl is before


def test_incidental_contacts_exhaust_attempts():
    fsm = TransferFsm(Awareness.A)
    step_fsm(fsm, Event(EventKind.MouthOpened), MOUTH, TIP)
    for k in range(4):
        new, ctrl = step_fsm(fsm, Event.contact("Incidental", Awareness.A), MOUTH, TIP)
        assert new is State.Paused
        assert ctrl.name == ("goal:backoff" if k < 3 else "hold")
        step_fsm(fsm, Event(EventKind.MouthOpened), MOUTH, TIP)
    assert fsm.state is State.Paused and fsm.attempts == 4


def test_speaking_pauses_approach():
    fsm = TransferFsm(Awareness.A)
    step_fsm(fsm, Event(EventKind.MouthOpened), MOUTH, TIP)
    assert step_fsm(fsm, Event(EventKind.MouthClosed), MOUTH, TIP)[0] is State.Paused
    assert step_fsm(fsm, Event(EventKind.MouthOpened), MOUTH, TIP)[0] is State.Approach
