"""Compliant controllers and the event-driven transfer state machine."""
from .admittance import (AdmittanceParams, EndEffectorState, deadband, force_params, force_step, goal_params,
                         goal_step, integrate, outside_mouth_policy, pose_error)
from .fsm import (COARSE_LABELS, Awareness, ControllerSelection, Event, EventKind, FsmConfig, State,
                  TransferFsm, coarsen, match_rule, step_fsm, transition_table)
from .monitors import HeadImpulseMonitor, SubsideMonitor

__all__ = [
    "AdmittanceParams", "EndEffectorState", "deadband", "force_params", "force_step", "goal_params",
    "goal_step", "integrate", "outside_mouth_policy", "pose_error", "COARSE_LABELS", "Awareness",
    "ControllerSelection", "Event", "EventKind", "FsmConfig", "State", "TransferFsm", "coarsen",
    "match_rule", "step_fsm", "transition_table", "HeadImpulseMonitor", "SubsideMonitor",
]
