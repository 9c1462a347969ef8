"""Scripted head behaviour and user intents for closed-loop episodes.

A scenario is a list of script events. Each event fires either at an
absolute time (``at``) or ``delay`` seconds after a trigger:

``mouth_open``   the true aperture first exceeds the open threshold
``near:<mm>``    the utensil tip first comes within <mm> of the mouth centre
``inside``       the tip first passes behind the lip plane
``placed``       the tip is inside and nearly still (food placed)
``end:<name>``   the named event has finished

Event kinds and their ``params``:

``open``/``close``  jaw ramp (``jaw``, ``duration``)
``speak``           jaw oscillation (``freq``, ``duration``, ``jaw_low``, ``jaw_high``)
``turn``            head yaw about a pivot (``yaw_deg``, ``duration``, ``pivot``)
``spasm``/``impulse`` sudden head displacement along a mouth-frame direction
                    (``displacement``, ``direction``, ``rise``, ``hold``, ``back``)
``tongue``          push toward ``target`` (mouth frame); skipped when the tip
                    is already within ``skip_within`` mm of it
``bite``            bite down (``force``, ``style``)
``tap``             incidental tap (``force``, ``duration``)
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from ..errors import ScenarioError

SCENARIO_KINDS = ("S1_Turn", "S2_Speak", "S3_Spasm", "Feeding1_Manipulate", "Feeding2_Impulse", "Static")
EVENT_KINDS = ("open", "close", "speak", "turn", "spasm", "impulse", "tongue", "bite", "tap")
TRIGGERS = ("mouth_open", "inside", "placed")
SCENARIO_VERSION = "scenario-v1"

DEFAULT_PREFERRED = (12.0, 0.0, -10.0)


@dataclass(frozen=True)
class ScriptEvent:
    kind: str
    name: str = ""
    at: float | None = None
    trigger: str | None = None
    delay: float = 0.0
    params: dict = field(default_factory=dict)

    def validate(self, names) -> None:
        if self.kind not in EVENT_KINDS:
            raise ScenarioError(f"unknown event kind {self.kind!r}")
        if (self.at is None) == (self.trigger is None):
            raise ScenarioError(f"event {self.name or self.kind!r} needs exactly one of 'at' or 'trigger'")
        if self.at is not None and self.at < 0:
            raise ScenarioError("event times must be non-negative")
        if self.delay < 0:
            raise ScenarioError("event delays must be non-negative")
        if self.trigger is not None:
            t = self.trigger
            if t.startswith("near:"):
                try:
                    float(t[5:])
                except ValueError:
                    raise ScenarioError(f"bad distance in trigger {t!r}") from None
            elif t.startswith("end:"):
                if t[4:] not in names:
                    raise ScenarioError(f"trigger {t!r} refers to an unknown event")
            elif t not in TRIGGERS:
                raise ScenarioError(f"unknown trigger {t!r}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.name:
            d["name"] = self.name
        if self.at is not None:
            d["at"] = self.at
        else:
            d["trigger"] = self.trigger
            d["delay"] = self.delay
        if self.params:
            d["params"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()}
        return d


@dataclass(frozen=True)
class Scenario:
    kind: str
    duration: float
    events: tuple = ()
    start_distance: float = 120.0            # mm in front of the mouth along its normal
    head_position: tuple = (0.0, 0.0, 0.0)
    head_rotvec: tuple = (0.0, 0.0, 0.0)
    preferred_location: tuple = DEFAULT_PREFERRED   # the user's own preferred in-mouth point (mouth frame)
    insert_point: tuple = (0.0, 0.0, -10.0)
    stop_after_done: float = 0.2             # s to keep running once the FSM is Done

    def validate(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        if not self.duration > 0:
            raise ScenarioError("scenario duration must be positive")
        if self.start_distance <= 0:
            raise ScenarioError("start_distance must be positive")
        names = [e.name for e in self.events if e.name]
        if len(set(names)) != len(names):
            raise ScenarioError("event names must be unique")
        times = [e.at for e in self.events if e.at is not None]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ScenarioError("timed events must have strictly increasing timestamps")
        for e in self.events:
            e.validate(names)
        for key in ("head_position", "head_rotvec", "preferred_location", "insert_point"):
            v = np.asarray(getattr(self, key), float)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ScenarioError(f"{key} must be a finite 3-vector")

    def event(self, name: str) -> ScriptEvent:
        for e in self.events:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"version": SCENARIO_VERSION, "kind": self.kind, "duration": self.duration,
                "start_distance": self.start_distance, "head_position": list(self.head_position),
                "head_rotvec": list(self.head_rotvec), "preferred_location": list(self.preferred_location),
                "insert_point": list(self.insert_point), "stop_after_done": self.stop_after_done,
                "events": [e.to_dict() for e in self.events]}


_SCENARIO_KEYS = {"version", "kind", "duration", "start_distance", "head_position", "head_rotvec",
                  "preferred_location", "insert_point", "stop_after_done", "events"}
_EVENT_KEYS = {"kind", "name", "at", "trigger", "delay", "params"}


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ScenarioError("scenario file must contain a mapping")
    unknown = set(d) - _SCENARIO_KEYS
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {sorted(unknown)}")
    if d.get("version", SCENARIO_VERSION) != SCENARIO_VERSION:
        raise ScenarioError(f"unsupported scenario version {d.get('version')!r}")
    events = []
    for e in d.get("events", []):
        if not isinstance(e, dict) or set(e) - _EVENT_KEYS:
            raise ScenarioError(f"bad event entry {e!r}")
        try:
            events.append(ScriptEvent(e["kind"], e.get("name", ""), e.get("at"), e.get("trigger"),
                                      float(e.get("delay", 0.0)), dict(e.get("params", {}))))
        except KeyError:
            raise ScenarioError(f"event without kind: {e!r}") from None
    try:
        sc = Scenario(d["kind"], float(d["duration"]), tuple(events),
                      float(d.get("start_distance", 120.0)),
                      tuple(d.get("head_position", (0.0, 0.0, 0.0))), tuple(d.get("head_rotvec", (0.0, 0.0, 0.0))),
                      tuple(d.get("preferred_location", DEFAULT_PREFERRED)),
                      tuple(d.get("insert_point", (0.0, 0.0, -10.0))), float(d.get("stop_after_done", 0.2)))
    except KeyError as exc:
        raise ScenarioError(f"scenario is missing {exc.args[0]!r}") from None
    sc.validate()
    return sc


def load_scenario(path) -> Scenario:
    """Read a YAML (or JSON) scenario file."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"cannot parse scenario file {path}: {exc}") from None
    return scenario_from_dict(data)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(yaml.safe_dump(sc.to_dict(), sort_keys=False))


# --------------------------------------------------------------------------- builders

def _open(at=0.2):
    return ScriptEvent("open", "open", at=at, params={"duration": 0.3})


def s1_turn(yaw_deg: float = 30.0) -> Scenario:
    """Head turns toward a second person partway through the approach."""
    return Scenario("S1_Turn", 5.0, (
        _open(),
        ScriptEvent("turn", "turn", trigger="near:90", params={"yaw_deg": yaw_deg, "duration": 0.5,
                                                              "pivot": [0.0, -60.0, -10.0]}),
    ), start_distance=160.0, stop_after_done=0.0)


def s2_speak() -> Scenario:
    """User starts talking while the utensil is on its way."""
    return Scenario("S2_Speak", 2.6, (
        _open(),
        ScriptEvent("speak", "speak", at=0.8, params={"freq": 2.0, "duration": 1.0, "jaw_low": 0.02,
                                                      "jaw_high": 0.3}),
    ), start_distance=230.0)


def s3_spasm() -> Scenario:
    """Sudden forward head movement while the utensil approaches."""
    return Scenario("S3_Spasm", 2.0, (
        _open(),
        ScriptEvent("spasm", "spasm", trigger="near:100", params={"displacement": 40.0, "direction": [0, 0, 1],
                                                                 "rise": 0.15, "hold": 0.0, "back": 0.3}),
    ), start_distance=140.0)


def feeding1() -> Scenario:
    """First feeding: the user guides the utensil to where they like it, then bites."""
    return Scenario("Feeding1_Manipulate", 8.0, (
        _open(),
        ScriptEvent("tongue", "tongue", trigger="placed", delay=0.3,
                    params={"target": list(DEFAULT_PREFERRED), "force": 2.0, "max_duration": 1.5,
                            "done_mm": 1.5, "skip_within": 3.0}),
        ScriptEvent("bite", "bite", trigger="end:tongue", delay=0.5, params={"force": 6.0, "style": "teeth"}),
    ), start_distance=110.0)


def feeding2() -> Scenario:
    """Second feeding: a spasm while the food is in the mouth, repositioning only if needed, then a bite."""
    return Scenario("Feeding2_Impulse", 9.0, (
        _open(),
        ScriptEvent("impulse", "impulse", trigger="placed", delay=0.3,
                    params={"displacement": 20.0, "direction": [0.0, 0.2, 1.0], "rise": 0.3, "hold": 0.4,
                            "back": 0.4}),
        ScriptEvent("tongue", "tongue", trigger="end:impulse", delay=0.6,
                    params={"target": list(DEFAULT_PREFERRED), "force": 2.0, "max_duration": 1.5,
                            "done_mm": 1.5, "skip_within": 3.0}),
        ScriptEvent("bite", "bite", trigger="end:tongue", delay=0.5, params={"force": 6.0, "style": "teeth"}),
    ), start_distance=110.0)


def static(duration: float = 2.0) -> Scenario:
    """Mouth opens and stays still; the utensil simply goes in."""
    return Scenario("Static", duration, (_open(),), start_distance=110.0, stop_after_done=0.0)


BUILDERS = {"S1_Turn": s1_turn, "S2_Speak": s2_speak, "S3_Spasm": s3_spasm,
            "Feeding1_Manipulate": feeding1, "Feeding2_Impulse": feeding2, "Static": static}
ALIASES = {"s1": "S1_Turn", "s2": "S2_Speak", "s3": "S3_Spasm", "feeding1": "Feeding1_Manipulate",
           "feeding2": "Feeding2_Impulse", "static": "Static"}


def builtin_scenario(name: str) -> Scenario:
    kind = ALIASES.get(name.lower(), name)
    if kind not in BUILDERS:
        raise ScenarioError(f"unknown scenario {name!r}; choose from {sorted(ALIASES)} or a file path")
    sc = BUILDERS[kind]()
    sc.validate()
    return sc


def with_profile_jaw(sc: Scenario, jaw: float) -> Scenario:
    """Copy of ``sc`` whose mouth-opening events use ``jaw`` unless they set one."""
    events = tuple(replace(e, params={"jaw": jaw, **e.params}) if e.kind == "open" else e for e in sc.events)
    return replace(sc, events=events)
