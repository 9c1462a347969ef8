"""Event-driven transfer state machine driven by the shipped transition table."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources

import numpy as np

from ..errors import ConfigurationError
from ..geometry import Rigid
from ..headmodel import MouthPose
from ..labels import InteractionLabel
from .admittance import OUTSIDE_STANDOFF_MM

log = logging.getLogger(__name__)


class State(str, Enum):
    WaitMouthOpen = "WaitMouthOpen"
    Approach = "Approach"
    Inside = "Inside"
    ComplyImpulse = "ComplyImpulse"
    ComplyManipulate = "ComplyManipulate"
    Retract = "Retract"
    Done = "Done"
    Paused = "Paused"


class Awareness(str, Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    OutsideMouth = "OutsideMouth"


class EventKind(str, Enum):
    MouthOpened = "MouthOpened"
    MouthClosed = "MouthClosed"
    MouthLost = "MouthLost"
    Contact = "Contact"
    GoalReached = "GoalReached"
    Timeout = "Timeout"
    ImpulseSubsided = "ImpulseSubsided"
    HeadImpulse = "HeadImpulse"


COARSE_LABELS = {
    Awareness.A: {lab.name: lab.name for lab in InteractionLabel},
    Awareness.B: {"Incidental": "Incidental", "InMouthManipulation": "InsideNonBite",
                  "Impulsive": "InsideNonBite", "Bite": "Bite"},
    Awareness.C: {"Incidental": "NonBite", "InMouthManipulation": "NonBite", "Impulsive": "NonBite",
                  "Bite": "Bite"},
    Awareness.D: {lab.name: "Bite" for lab in InteractionLabel},
    Awareness.OutsideMouth: {lab.name: "Bite" for lab in InteractionLabel},
}


def coarsen(label, awareness: Awareness) -> str:
    """Label as seen by a method with the given awareness level."""
    return COARSE_LABELS[Awareness(awareness)][InteractionLabel.parse(label).name]


@dataclass(frozen=True)
class Event:
    kind: EventKind
    label: str | None = None            # coarsened contact label
    tip_in_mouth: bool = True           # ImpulseSubsided only

    @classmethod
    def contact(cls, label, awareness: Awareness) -> "Event":
        return cls(EventKind.Contact, coarsen(label, awareness))


@dataclass(frozen=True)
class ControllerSelection:
    """Which controller runs and toward what.

    ``target`` is a point in the mouth frame; with ``frozen_world`` set the
    goal is that fixed world point instead of being re-expressed from the
    live mouth pose every tick.
    """
    mode: str                           # "goal", "force" or "hold"
    name: str = ""
    target: np.ndarray | None = None
    frozen_world: np.ndarray | None = None

    def goal_point(self, mouth: MouthPose | None) -> np.ndarray | None:
        if self.mode != "goal":
            return None
        if self.frozen_world is not None:
            return self.frozen_world
        if mouth is None:
            return None
        return mouth.frame.apply(self.target)


@dataclass(frozen=True)
class FsmConfig:
    insert_point: tuple = (0.0, 0.0, -10.0)     # mouth frame, mm (negative z is inside the lips)
    retract_offset_mm: float = 60.0
    backoff_mm: float = 20.0
    max_attempts: int = 3
    outside_standoff_mm: float = OUTSIDE_STANDOFF_MM


@dataclass
class TransferFsm:
    awareness: Awareness
    config: FsmConfig = field(default_factory=FsmConfig)
    state: State = State.WaitMouthOpen
    controller: ControllerSelection = field(default_factory=lambda: ControllerSelection("hold", "hold"))
    preferred_location: np.ndarray | None = None
    attempts: int = 0
    bite_done: bool = False
    resume: ControllerSelection | None = None
    time_in_state: float = 0.0
    log: list = field(default_factory=list)

    def __post_init__(self):
        self.awareness = Awareness(self.awareness)

    def tick(self, dt: float) -> None:
        self.time_in_state += dt

    def new_feeding(self) -> None:
        """Reset per-feeding flags; the preferred location is kept."""
        self.state = State.WaitMouthOpen
        self.controller = ControllerSelection("hold", "hold")
        self.attempts = 0
        self.bite_done = False
        self.resume = None
        self.time_in_state = 0.0

    def approach_point(self) -> np.ndarray:
        # preferred_location only exists under awareness A, and is only read there
        if self.awareness is Awareness.A and self.preferred_location is not None:
            return np.asarray(self.preferred_location, float)
        return np.asarray(self.config.insert_point, float)


@lru_cache(maxsize=None)
def _table_text() -> str:
    return resources.files("bitetransfer.data").joinpath("transition_table.json").read_text()


def transition_table() -> dict:
    return json.loads(_table_text())


def _compiled_rules():
    return transition_table()["rules"]


def _guard_ok(guard, fsm: TransferFsm, event: Event) -> bool:
    if guard is None:
        return True
    checks = {
        "attempts_left": fsm.attempts < fsm.config.max_attempts,
        "no_attempts_left": fsm.attempts >= fsm.config.max_attempts,
        "not_exhausted": fsm.attempts <= fsm.config.max_attempts,
        "bite_done": fsm.bite_done,
        "no_bite": not fsm.bite_done,
        "tip_in_mouth": event.tip_in_mouth,
        "tip_outside": not event.tip_in_mouth,
    }
    if guard not in checks:
        raise ConfigurationError(f"unknown guard {guard!r} in transition table")
    return checks[guard]


def match_rule(fsm: TransferFsm, event: Event, rules=None):
    """First table rule applying to (state, event, label, awareness, guards), or None."""
    for rule in _compiled_rules() if rules is None else rules:
        if rule["state"] not in ("*", fsm.state.value):
            continue
        if rule["event"] not in ("*", event.kind.value):
            continue
        if "label" in rule and rule["label"] != event.label:
            continue
        aw = rule.get("awareness", "*")
        if aw != "*" and fsm.awareness.value not in aw:
            continue
        if not _guard_ok(rule.get("guard"), fsm, event):
            continue
        return rule
    return None


def _mouth_point(mouth: MouthPose | None, tip_world) -> np.ndarray | None:
    if mouth is None or tip_world is None:
        return None
    return mouth.frame.inverse().apply(np.asarray(tip_world, float))


def _selection(name: str, fsm: TransferFsm, mouth: MouthPose | None, tip_world) -> ControllerSelection:
    cfg = fsm.config
    if name == "keep":
        return fsm.controller
    if name == "hold":
        return ControllerSelection("hold", "hold")
    if name == "force":
        return ControllerSelection("force", "force")
    target = name.split(":", 1)[1]
    if target == "approach":
        return ControllerSelection("goal", name, fsm.approach_point())
    if target == "outside":
        return ControllerSelection("goal", name, np.array([0.0, 0.0, cfg.outside_standoff_mm]))
    if target == "preferred":
        return ControllerSelection("goal", name, fsm.approach_point())
    if target == "resume":
        return fsm.resume if fsm.resume is not None else ControllerSelection("goal", name, fsm.approach_point())
    if target == "hold_tip":
        local = _mouth_point(mouth, tip_world)
        return ControllerSelection("goal", name, fsm.approach_point() if local is None else local)
    if target in ("retract", "backoff"):
        if mouth is None:
            # without a mouth estimate fall back to a straight pull-back along the tool axis
            base = np.asarray(tip_world, float) if tip_world is not None else np.zeros(3)
            return ControllerSelection("goal", name, None, base)
        if target == "retract":
            world = mouth.frame.apply(np.array([0.0, 0.0, cfg.retract_offset_mm]))
        else:
            world = np.asarray(tip_world, float) + cfg.backoff_mm * mouth.frame.R[:, 2]
        return ControllerSelection("goal", name, None, world)
    raise ConfigurationError(f"unknown controller {name!r} in transition table")


def _apply_action(action, fsm: TransferFsm, mouth, tip_world) -> None:
    if action is None:
        return
    if action == "mark_bite":
        fsm.bite_done = True
    elif action == "count_attempt":
        fsm.attempts += 1
    elif action == "reset_attempts":
        fsm.attempts = 0
    elif action == "save_resume":
        if fsm.controller.mode == "goal":
            fsm.resume = fsm.controller
    elif action == "record_preferred":
        if fsm.awareness is not Awareness.A:
            raise ConfigurationError("preferred location may only be recorded under awareness A")
        local = _mouth_point(mouth, tip_world)
        if local is not None:
            fsm.preferred_location = local
    else:
        raise ConfigurationError(f"unknown action {action!r} in transition table")


def step_fsm(fsm: TransferFsm, event: Event, mouth: MouthPose | None = None, tip_world=None):
    """Apply one event; returns ``(state, controller selection)``.

    Events with no matching rule are logged and ignored, so the machine is
    total over every (state, event, awareness) combination.
    """
    rule = match_rule(fsm, event)
    if rule is None:
        msg = f"ignored {event.kind.value}({event.label}) in {fsm.state.value} [{fsm.awareness.value}]"
        log.debug(msg)
        fsm.log.append(msg)
        return fsm.state, fsm.controller
    _apply_action(rule.get("action"), fsm, mouth, tip_world)
    fsm.controller = _selection(rule["controller"], fsm, mouth, tip_world)
    new_state = State(rule["next"])
    if new_state is not fsm.state:
        fsm.time_in_state = 0.0
    fsm.state = new_state
    fsm.log.append(f"{event.kind.value}({event.label}) -> {new_state.value} [{fsm.controller.name}]")
    return fsm.state, fsm.controller
