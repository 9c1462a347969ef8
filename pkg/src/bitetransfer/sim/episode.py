"""Closed-loop episode runner: scripted user, perception, classifier, state machine and controllers."""
from __future__ import annotations

import csv
import io
import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..control.admittance import AdmittanceParams, EndEffectorState, force_params, force_step, goal_params, goal_step
from ..control.fsm import Awareness, Event, EventKind, FsmConfig, State, TransferFsm, coarsen, step_fsm
from ..control.monitors import HeadImpulseMonitor, SubsideMonitor
from ..errors import ConfigurationError
from ..features import FeatureConfig, InteractionWindow, VisualSnapshot, extract
from ..geometry import Rigid, min_jerk, rotation_about_axis
from ..headmodel import DEFAULT_OPEN_THRESHOLD_MM, HeadParams, HeadTemplate, MouthPose, default_template
from ..labels import InteractionLabel
from ..perception import (MouthTracker, TrackerConfig, default_rig, observe, occlusion_preset, track_mouth,
                          utensil_masks)
from .profiles import ParticipantProfile, default_profile
from .scenarios import Scenario, with_profile_jaw
from .world import PHYSICS_DT, BiteIntent, ContactParams, HeadScript, ImpulseIntent, TapIntent, TongueIntent, World

log = logging.getLogger(__name__)

PERCEPTION_MODES = ("RealTime", "OneTime")
COMPLY_STATES = (State.ComplyImpulse, State.ComplyManipulate)


@dataclass(frozen=True)
class EpisodeConfig:
    dt: float = 0.01
    occlusion: str = "low"
    perception_every: int = 1                 # ticks between tracker updates in RealTime mode
    goal_slew_mm_s: float = 40.0              # how fast the goal reference may follow the mouth estimate
    goal_slew_rad_s: float = 0.6
    goal_tol_mm: float = 2.0
    goal_speed_tol: float = 10.0
    inside_timeout: float = 6.0
    comply_timeout: float = 3.0
    onset_threshold: float = 0.3
    rearm_s: float = 0.05
    subside_n: float = 0.5
    subside_s: float = 0.2
    head_impulse_mm_s: float = 300.0
    impulse_stiffness: float = 0.6
    fsm: FsmConfig = field(default_factory=FsmConfig)
    goal_gains: AdmittanceParams = field(default_factory=goal_params)
    force_gains: AdmittanceParams = field(default_factory=force_params)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    contact: ContactParams = field(default_factory=ContactParams)

    def validate(self) -> None:
        if not (0 < self.dt <= 0.02) or abs(round(self.dt / PHYSICS_DT) * PHYSICS_DT - self.dt) > 1e-12:
            raise ConfigurationError("dt must be a multiple of 1 ms in (0, 20] ms")
        if self.perception_every < 1:
            raise ConfigurationError("perception_every must be >= 1")
        if self.goal_slew_mm_s <= 0 or self.goal_slew_rad_s <= 0:
            raise ConfigurationError("goal slew limits must be positive")
        self.goal_gains.validate()
        self.force_gains.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fsm"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["fsm"].items()}
        d["tracker"]["registration"] = dict(d["tracker"]["registration"])
        return json.loads(json.dumps(d, default=list))


# --------------------------------------------------------------------------- classifiers

class GroundTruthOracle:
    """Returns the true contact type: the label of the user intent active at onset."""
    name = "oracle"

    def classify(self, window: InteractionWindow, truth: InteractionLabel) -> InteractionLabel:
        return truth


class ModelClassifier:
    """Wraps a trained SVM/MLP so it can label contact windows inside an episode."""

    def __init__(self, model, feature_cfg: FeatureConfig | None = None):
        self.model = model
        self.feature_cfg = feature_cfg or FeatureConfig()
        self.name = type(model).__name__

    def classify(self, window: InteractionWindow, truth: InteractionLabel) -> InteractionLabel:
        label, _ = self.model.predict(extract(window, self.feature_cfg))
        return InteractionLabel(int(label))


def as_classifier(model):
    if model is None or model == "oracle":
        return GroundTruthOracle()
    if hasattr(model, "classify"):
        return model
    return ModelClassifier(model)


# --------------------------------------------------------------------------- scripted user

class ScriptRunner:
    """Fires scenario events and owns the head pose and jaw trajectories."""

    def __init__(self, scenario: Scenario, world: World, profile: ParticipantProfile, cfg: EpisodeConfig):
        self.sc = scenario
        self.world = world
        self.profile = profile
        self.cfg = cfg
        self.base = Rigid.from_rotvec(scenario.head_rotvec, scenario.head_position)
        self.turns: list = []
        self.jaw_segments: list = [(0.0, lambda t: 0.0)]
        self.started: dict = {}
        self.ended: dict = {}
        self.trigger_time: dict = {}
        self.intents: dict = {}
        self.skipped: set = set()
        self._done_since = None
        self._bite_inside = False
        world.script = HeadScript(self.base, self.pose, self.jaw)

    # trajectories -----------------------------------------------------------
    def pose(self, t) -> Rigid:
        pose = self.base
        for t0, dur, yaw, pivot in self.turns:
            if t <= t0:
                continue
            a = yaw * float(min_jerk((t - t0) / dur))
            R = rotation_about_axis(np.array([0.0, 1.0, 0.0]), a)
            pose = pose @ Rigid(R, pivot - R @ pivot)
        return pose

    def jaw(self, t) -> float:
        fn = self.jaw_segments[0][1]
        for t0, f in self.jaw_segments:
            if t0 <= t:
                fn = f
        return fn(t)

    def _ramp(self, t0, dur, j_to):
        j_from = self.jaw(t0)
        self.jaw_segments.append((t0, lambda t: j_from + (j_to - j_from) * float(min_jerk((t - t0) / dur))))

    # triggers ---------------------------------------------------------------
    def _trigger_reached(self, trig: str, t: float, tip, q, speed) -> bool:
        if trig in self.trigger_time:
            return True
        hit = False
        if trig == "mouth_open":
            hit = self.world.mouth(t)[1] > DEFAULT_OPEN_THRESHOLD_MM
        elif trig.startswith("near:"):
            hit = np.linalg.norm(tip - self.world.mouth(t)[0].t) < float(trig[5:])
        elif trig == "inside":
            hit = q[2] < -3.0
        elif trig == "placed":
            hit = q[2] < -3.0 and speed < self.cfg.goal_speed_tol
        elif trig.startswith("end:"):
            name = trig[4:]
            if name in self.ended:
                self.trigger_time[trig] = self.ended[name]
                return True
            return False
        if hit:
            self.trigger_time[trig] = t
        return hit

    def update(self, t: float) -> None:
        w = self.world
        tip = w.tip
        frame = w.mouth(t)[0]
        q = frame.inverse().apply(tip)
        speed = float(np.linalg.norm(w.ee.twist[:3]))
        for idx, ev in enumerate(self.sc.events):
            key = ev.name or f"{ev.kind}{idx}"
            if key in self.started or key in self.skipped:
                continue
            if ev.at is not None:
                t_fire = ev.at
                if t + 1e-9 < t_fire:
                    continue
            else:
                if not self._trigger_reached(ev.trigger, t, tip, q, speed):
                    continue
                t_fire = self.trigger_time[ev.trigger] + ev.delay
                if t + 1e-9 < t_fire:
                    continue
            self._fire(key, ev, t, frame, q)
        self._update_running(t, frame, q)

    def _fire(self, key, ev, t, frame: Rigid, q) -> None:
        p = ev.params
        kind = ev.kind
        if kind == "tongue" and np.linalg.norm(q - np.asarray(p.get("target", self.sc.preferred_location))) \
                < p.get("skip_within", 3.0):
            self.skipped.add(key)
            self.ended[key] = t
            return
        self.started[key] = t
        if kind in ("open", "close"):
            dur = float(p.get("duration", 0.3))
            self._ramp(t, dur, float(p.get("jaw", self.profile.jaw_open)) if kind == "open" else 0.0)
            self.ended[key] = t + dur
        elif kind == "speak":
            f, dur = float(p.get("freq", 2.0)), float(p.get("duration", 1.0))
            lo, hi = float(p.get("jaw_low", 0.02)), float(p.get("jaw_high", 0.3))
            self.jaw_segments.append((t, lambda s: lo + (hi - lo) * (0.5 + 0.5 * np.cos(2 * np.pi * f * (s - t)))))
            self.jaw_segments.append((t + dur, lambda s: hi))
            self._ramp_later = (t + dur, self.profile.jaw_open)
            self.ended[key] = t + dur
        elif kind == "turn":
            dur = float(p.get("duration", 0.5))
            self.turns.append((t, dur, np.deg2rad(float(p.get("yaw_deg", 30.0))),
                               np.asarray(p.get("pivot", (0.0, -60.0, -10.0)), float)))
            self.ended[key] = t + dur
        elif kind in ("spasm", "impulse"):
            d = np.asarray(p.get("direction", (0.0, 0.0, 1.0)), float)
            d = frame.R @ (d / np.linalg.norm(d))
            it = ImpulseIntent("Impulsive", t, displacement=float(p.get("displacement", 20.0)) * d,
                               rise=float(p.get("rise", 0.15)), hold=float(p.get("hold", 0.0)),
                               back=float(p.get("back", 0.3)), stiffness=self.cfg.impulse_stiffness)
            self._add_intent(key, it)
            self.ended[key] = it.t_end
        elif kind == "tongue":
            f = float(p.get("force", 2.0)) * self.profile.manipulation_strength
            it = TongueIntent("InMouthManipulation", t, target=np.asarray(p.get("target", self.sc.preferred_location),
                                                                         float),
                              max_force=f, ramp=float(p.get("ramp", 0.03)))
            it.max_duration = float(p.get("max_duration", 1.5))
            it.done_mm = float(p.get("done_mm", 1.5))
            self._add_intent(key, it)
        elif kind == "bite":
            style = p.get("style", "teeth")
            from .interactions import BITE_DIRECTIONS
            it = BiteIntent("Bite", t, direction=np.asarray(BITE_DIRECTIONS[style], float),
                            peak=float(p.get("force", 6.0)) * self.profile.bite_force_scale,
                            rise=float(p.get("rise", 0.06)), jaw_from=self.jaw(t),
                            jaw_to=float(p.get("jaw_to", 0.12)), close_time=float(p.get("close_time", 0.12)))
            self._add_intent(key, it)
        elif kind == "tap":
            it = TapIntent("Incidental", t, peak=float(p.get("force", 1.0)), duration=float(p.get("duration", 0.04)))
            self._add_intent(key, it)
            self.ended[key] = it.t_end

    def _add_intent(self, key, it) -> None:
        self.intents[key] = it
        self.world.intents.append(it)

    def _update_running(self, t, frame: Rigid, q) -> None:
        ramp = getattr(self, "_ramp_later", None)
        if ramp is not None and t >= ramp[0]:
            self._ramp(ramp[0], 0.2, ramp[1])
            self._ramp_later = None
        for key, it in self.intents.items():
            if isinstance(it, TongueIntent) and key not in self.ended:
                near = np.linalg.norm(q - it.target) < it.done_mm
                self._done_since = (self._done_since if self._done_since is not None else t) if near else None
                if (self._done_since is not None and t - self._done_since >= 0.1) \
                        or t - it.t_start >= it.max_duration:
                    it.stop(t)
                    self.ended[key] = t
            elif isinstance(it, BiteIntent):
                if q[2] < 0:
                    self._bite_inside = True
                if not it.taken and self._bite_inside and q[2] > self.world.contact.tip_radius:
                    it.taken = True
                    self.ended[key] = t

    def active_label(self, t: float) -> InteractionLabel:
        """True contact type at time ``t``: the most recent user intent still acting, else Incidental."""
        best = None
        for it in self.world.intents:
            if it.t_start <= t and it.active(t) and not getattr(it, "taken", False):
                if best is None or it.t_start >= best.t_start:
                    best = it
        return InteractionLabel.Incidental if best is None else InteractionLabel[best.label]

    def active_names(self, t: float) -> list:
        out = []
        for idx, ev in enumerate(self.sc.events):
            key = ev.name or f"{ev.kind}{idx}"
            if key in self.started and self.started[key] <= t and t < self.ended.get(key, np.inf):
                out.append(key)
        return out


# --------------------------------------------------------------------------- trace

COLUMNS = ("t", "state", "mode", "controller", "tip_x", "tip_y", "tip_z", "tip_speed", "goal_x", "goal_y", "goal_z",
           "mouth_x", "mouth_y", "mouth_z", "est_x", "est_y", "est_z", "aperture", "est_aperture", "perception",
           "tip_mx", "tip_my", "tip_mz", "force_max", "force_mean", "fx", "fy", "fz", "tx", "ty", "tz",
           "twist_dot_force", "twist_dot_torque", "intent", "script", "events", "contact")
_STRING_COLS = {"state", "mode", "controller", "perception", "intent", "script", "events", "contact"}


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    v = float(v)
    if not np.isfinite(v):
        return "nan"
    return f"{v:.9g}"


@dataclass
class EpisodeTrace:
    table: dict                        # column name -> list of values (floats or strings)
    meta: dict
    summary: dict
    fsm: TransferFsm | None = None
    log: list = field(default_factory=list)

    @property
    def n_ticks(self) -> int:
        return len(self.table["t"])

    def column(self, name) -> np.ndarray:
        col = self.table[name]
        return np.asarray(col, dtype=object if name in _STRING_COLS else float)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for i in range(self.n_ticks):
            w.writerow([_fmt(self.table[c][i]) for c in COLUMNS])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def summary_json(self, path=None) -> str:
        text = json.dumps({"meta": self.meta, "summary": self.summary}, indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def parse_table(text: str) -> dict:
    rows = list(csv.reader(io.StringIO(text)))
    head, body = rows[0], rows[1:]
    table = {c: [] for c in head}
    for r in body:
        for c, v in zip(head, r):
            table[c].append(v if c in _STRING_COLS else float(v))
    return table


def read_trace(csv_path, json_path) -> EpisodeTrace:
    table = parse_table(Path(csv_path).read_text())
    data = json.loads(Path(json_path).read_text())
    return EpisodeTrace(table, data["meta"], data["summary"])


def _first(mask) -> int | None:
    idx = np.flatnonzero(mask)
    return int(idx[0]) if len(idx) else None


def summarize(table: dict, meta: dict) -> dict:
    """Episode outcome metrics, computed only from the per-tick table and the metadata."""
    dt = meta["dt"]
    t = np.asarray(table["t"], float)
    n = len(t)
    state = np.asarray(table["state"], dtype=object)
    intent = np.asarray(table["intent"], dtype=object)
    script = [s.split("|") if s else [] for s in table["script"]]
    fmax = np.asarray(table["force_max"], float)
    fmean = np.asarray(table["force_mean"], float)
    tip_m = np.column_stack([np.asarray(table[c], float) for c in ("tip_mx", "tip_my", "tip_mz")])
    preferred = np.asarray(meta["preferred_location"], float)
    insert = np.asarray(meta["insert_point"], float)

    out: dict = {"n_ticks": n, "duration": round(n * dt, 9), "final_state": state[-1] if n else ""}
    labels = sorted({x for x in intent if x})
    out["max_force_by_label"] = {lab: float(fmax[intent == lab].max()) for lab in labels}
    out["mean_force_by_label"] = {lab: float(fmean[intent == lab].mean()) for lab in labels}
    out["max_force"] = float(fmax.max()) if n else 0.0

    bite_rows = (state == "Retract") & (intent == "Bite")
    k = _first(bite_rows)
    out["bite_success"] = bool(k is not None and "Done" in set(state[k:]))
    out["time_to_bite"] = float(t[k]) if k is not None else None

    k = _first(state == "Inside")
    out["placement_error_mm"] = float(np.linalg.norm(tip_m[k] - preferred)) if k is not None else None
    out["manipulation_needed"] = bool(np.any(intent == "InMouthManipulation"))
    out["terminal_error_mm"] = float(np.linalg.norm(tip_m[-1] - insert)) if n else None

    speaking = np.array(["speak" in s for s in script], bool)
    closed = speaking & (np.asarray(table["aperture"], float) <= meta["open_threshold"])
    out["closed_ticks"] = int(closed.sum())
    out["paused_fraction_closed"] = float(np.mean(state[closed] == "Paused")) if closed.any() else None
    out["ever_paused"] = bool(np.any(state == "Paused"))

    spasm = np.array([("spasm" in s) for s in script], bool)
    k = _first(spasm)
    if k is not None:
        end = k + int(np.sum(spasm[k:]))
        r = _first(state[k:] == "Retract")
        out["spasm_onset"] = float(t[k])
        out["retract_latency"] = float(t[k + r] - t[k]) if r is not None else None
        changes = int(np.sum(state[k:end] != state[k - 1:end - 1])) if k > 0 else 0
        out["state_changes_during_spasm"] = changes
    else:
        out["spasm_onset"] = out["retract_latency"] = out["state_changes_during_spasm"] = None

    # contact events: produced during tick i, delivered at tick i + 1
    contacts = []
    mode = np.asarray(table["mode"], dtype=object)
    ctrl = np.asarray(table["controller"], dtype=object)
    for i, c in enumerate(table["contact"]):
        if not c:
            continue
        true_lab, got = c.split(">")
        j = i + 1
        entry = {"t": float(t[i]), "truth": true_lab, "label": got,
                 "delivered": coarsen(got, meta["awareness"])}
        if j < n:
            entry["state_before"] = state[i]
            entry["state_after"] = state[j]
            entry["switched"] = bool(ctrl[j] != ctrl[i] or mode[j] != mode[i])
            # a repeat onset while already complying keeps the right controller
            entry["handled"] = entry["switched"] or bool(mode[i] == "force" and state[j] == state[i])
            entry["latency_ticks"] = 1
            entry["retracted"] = bool(state[j] == "Retract")
        contacts.append(entry)
    out["contacts"] = contacts
    out["n_contacts"] = len(contacts)
    inside = [c for c in contacts if c.get("state_before") not in (None, "Retract", "Done")]
    out["retract_on_every_contact"] = bool(inside) and all(c.get("retracted", False) for c in inside)

    impulse = intent == "Impulsive"
    k = _first(impulse)
    if k is not None:
        force_rows = (mode == "force") & impulse
        out["force_mode_during_impulse"] = bool(force_rows.any())
        out["goal_mode_throughout_impulse"] = bool(np.all(mode[impulse] != "force"))
    else:
        out["force_mode_during_impulse"] = out["goal_mode_throughout_impulse"] = None
    comply = np.isin(state, [s.value for s in COMPLY_STATES])
    out["min_compliance_dot"] = float(np.min(np.asarray(table["twist_dot_force"], float)[comply])) \
        if comply.any() else None
    return out


# --------------------------------------------------------------------------- runner

def _slew(ref: Rigid, target: Rigid, max_mm: float, max_rad: float) -> Rigid:
    dt_ = target.t - ref.t
    n = np.linalg.norm(dt_)
    t = target.t if n <= max_mm else ref.t + dt_ * (max_mm / n)
    rel = Rigid(target.R @ ref.R.T, np.zeros(3)).rotvec()
    a = np.linalg.norm(rel)
    R = target.R if a <= max_rad else Rigid.from_rotvec(rel * (max_rad / a)).R @ ref.R
    return Rigid(R, t)


@dataclass
class _Contact:
    t_on: float
    truth: InteractionLabel
    start: VisualSnapshot | None
    samples: list


def run_episode(scenario: Scenario, awareness, perception_mode: str = "RealTime", model=None,
                cfg: EpisodeConfig | None = None, seed: int = 0, profile: ParticipantProfile | None = None,
                template: HeadTemplate | None = None, rig=None, fsm: TransferFsm | None = None) -> EpisodeTrace:
    """Simulate one feeding attempt and return its per-tick trace and summary.

    ``fsm`` may carry a machine from an earlier feeding (its preferred
    location survives, everything else is reset).
    """
    cfg = cfg or EpisodeConfig()
    cfg.validate()
    scenario.validate()
    if perception_mode not in PERCEPTION_MODES:
        raise ConfigurationError(f"perception_mode must be one of {PERCEPTION_MODES}")
    awareness = Awareness(awareness)
    template = template or default_template()
    profile = profile or default_profile(template)
    rig = rig or default_rig()
    classifier = as_classifier(model)
    scenario = with_profile_jaw(scenario, profile.jaw_open)

    ss = np.random.SeedSequence([int(seed), 31337])
    rng_world, rng_perc = (np.random.default_rng(s) for s in ss.spawn(2))
    fcfg = FeatureConfig()
    n_window = fcfg.n_samples
    n_sub = int(round(cfg.dt / PHYSICS_DT))

    fsm_cfg = replace(cfg.fsm, insert_point=tuple(scenario.insert_point))
    if fsm is None:
        fsm = TransferFsm(awareness, fsm_cfg)
    else:
        if fsm.awareness is not awareness:
            raise ConfigurationError("carried-over state machine has a different awareness level")
        fsm.new_feeding()
    world = World(template, profile, HeadScript(Rigid.identity()), Rigid.identity(), rng_world, cfg.contact)
    runner = ScriptRunner(scenario, world, profile, cfg)
    frame0 = world.mouth(0.0)[0]
    world.ee = EndEffectorState(Rigid(frame0.R, frame0.apply([0.0, 0.0, scenario.start_distance])))

    head_params = HeadParams(profile.shape, profile.expression)
    tracker = MouthTracker(template, head_params, cfg.tracker)
    frozen: MouthPose | None = None
    est: MouthPose | None = None
    status = "none"
    last_open = None
    lost_reported = False
    ref: Rigid | None = None

    subside = SubsideMonitor(cfg.subside_n, cfg.subside_s)
    head_mon = HeadImpulseMonitor(cfg.head_impulse_mm_s, 0.02)
    queue: deque = deque()
    hold_pose = world.ee.pose
    goal_reported = None
    timeout_reported = None
    prev_state = fsm.state
    prev_sel = fsm.controller
    twist = np.zeros(6)
    wrench_meas = np.zeros(6)
    contact: _Contact | None = None
    quiet = 0
    armed = True
    done_at = None

    cols = {c: [] for c in COLUMNS}
    n_ticks = int(round(scenario.duration / cfg.dt))

    def cameras_now():
        return [m.at(world.ee.pose) for m in rig]

    def observation(t):
        cams = cameras_now()
        occ = occlusion_preset(cfg.occlusion, masks=utensil_masks(cams, world.ee.pose))
        return observe(world.keypoints(t), cams, occ, rng_perc, timestamp=t), cams

    def snapshot(t) -> VisualSnapshot | None:
        if perception_mode == "RealTime" and tracker.last is not None:
            res = tracker.last
        else:
            obs, cams = observation(t)
            try:
                res = track_mouth(template, head_params, obs, cams, None, cfg.tracker)
            except Exception as exc:           # perception dropout: no visual features for this window
                log.debug("snapshot tracking failed at %.3f: %s", t, exc)
                return None
        return VisualSnapshot(res.keypoints_3d, res.mouth, world.tip.copy())

    for k in range(n_ticks):
        t = round(k * cfg.dt, 9)
        runner.update(t)

        # perception ------------------------------------------------------
        fresh = False
        if perception_mode == "OneTime" and frozen is not None:
            est, status = frozen, "frozen"
        elif k % cfg.perception_every == 0:
            obs, cams = observation(t)
            est, status = tracker.update(obs, cams)
            fresh = est is not None and status == "ok"
            if perception_mode == "OneTime" and est is not None and est.open:
                frozen = est
        if est is None:
            if not lost_reported and status == "lost":
                queue.append(Event(EventKind.MouthLost))
                lost_reported = True
        else:
            lost_reported = False
            if last_open is None or est.open != last_open:
                queue.append(Event(EventKind.MouthOpened if est.open else EventKind.MouthClosed))
                last_open = est.open
            if fresh and perception_mode == "RealTime" and head_mon.update(t, est.center):
                queue.append(Event(EventKind.HeadImpulse))
                head_mon.reset()
            ref = est.frame if ref is None else _slew(ref, est.frame, cfg.goal_slew_mm_s * cfg.dt,
                                                      cfg.goal_slew_rad_s * cfg.dt)
        ref_mouth = MouthPose(ref, est.aperture, est.open, t) if (ref is not None and est is not None) else None

        # monitors ----------------------------------------------------------
        tip = world.tip
        speed = float(np.linalg.norm(world.ee.twist[:3]))
        if fsm.state in COMPLY_STATES:
            if subside.update(wrench_meas, cfg.dt):
                in_mouth = bool(ref_mouth is not None and ref_mouth.frame.inverse().apply(tip)[2] < 0.0)
                queue.append(Event(EventKind.ImpulseSubsided, tip_in_mouth=in_mouth))
                subside.reset()
        else:
            subside.reset()
        sel = fsm.controller
        goal_pt = sel.goal_point(ref_mouth) if sel.mode == "goal" else None
        if goal_pt is not None and goal_reported is not sel and np.linalg.norm(tip - goal_pt) < cfg.goal_tol_mm \
                and speed < cfg.goal_speed_tol:
            queue.append(Event(EventKind.GoalReached))
            goal_reported = sel
        limit = cfg.inside_timeout if fsm.state is State.Inside else \
            cfg.comply_timeout if fsm.state in COMPLY_STATES else None
        if limit is not None and fsm.time_in_state >= limit and timeout_reported is not fsm.state:
            queue.append(Event(EventKind.Timeout))
            timeout_reported = fsm.state

        # state machine -----------------------------------------------------
        delivered = []
        while queue:
            ev = queue.popleft()
            step_fsm(fsm, ev, ref_mouth, tip)
            delivered.append(ev.kind.value + (f"({ev.label})" if ev.label else ""))
        if fsm.state is not prev_state:
            timeout_reported = None if timeout_reported is not fsm.state else timeout_reported
            prev_state = fsm.state
        sel = fsm.controller
        if sel is not prev_sel:
            if sel.mode == "hold":
                hold_pose = world.ee.pose
            prev_sel = sel

        # controller --------------------------------------------------------
        ee = EndEffectorState(world.ee.pose, world.ee.twist, wrench_meas)
        goal_pt = None
        if sel.mode == "force":
            twist = force_step(ee, cfg.force_gains, cfg.dt)
        else:
            if sel.mode == "goal":
                goal_pt = sel.goal_point(ref_mouth)
            if goal_pt is not None:
                goal = Rigid(ref.R, goal_pt)
            else:
                goal = hold_pose
            twist = goal_step(ee, goal, cfg.goal_gains, cfg.dt)
        dot_f = float(twist[:3] @ wrench_meas[:3])
        dot_t = float(twist[3:] @ wrench_meas[3:])

        # physics -----------------------------------------------------------
        fm, fs, acc = 0.0, 0.0, np.zeros(6)
        contact_str = ""
        for _ in range(n_sub):
            w_tool = world.substep(twist)
            f_true = float(np.linalg.norm(world.last_force))
            fm = max(fm, f_true)
            fs += f_true
            w_world = world.wrench_world(w_tool)
            acc += w_world
            fn = float(np.linalg.norm(w_tool[:3]))
            if contact is None:
                if fn > cfg.onset_threshold:
                    quiet = 0
                    if armed:
                        contact = _Contact(world.t, runner.active_label(world.t), snapshot(world.t), [w_tool])
                        armed = False
                else:
                    quiet += 1
                    if quiet >= int(round(cfg.rearm_s / PHYSICS_DT)):
                        armed = True
            else:
                contact.samples.append(w_tool)
                if len(contact.samples) == n_window:
                    end = snapshot(world.t)
                    start = contact.start if end is not None else None
                    window = InteractionWindow(np.array(contact.samples), fcfg.rate_hz, start,
                                               end if start is not None else None)
                    label = classifier.classify(window, contact.truth)
                    queue.append(Event.contact(label, awareness))
                    contact_str = f"{contact.truth.name}>{label.name}"
                    contact = None
                    quiet = 0
        wrench_meas = acc / n_sub

        # log ---------------------------------------------------------------
        true_frame, true_ap, _ = world.mouth(world.t)
        tip_m = true_frame.inverse().apply(world.tip)
        gp = goal_pt if goal_pt is not None else (hold_pose.t if sel.mode == "hold" else np.full(3, np.nan))
        ec = est.center if est is not None else np.full(3, np.nan)
        row = (t, fsm.state.value, sel.mode, sel.name, *world.tip, float(np.linalg.norm(world.ee.twist[:3])), *gp,
               *true_frame.t, *ec, true_ap, est.aperture if est is not None else np.nan, status, *tip_m,
               fm, fs / n_sub, *wrench_meas, dot_f, dot_t, runner.active_label(t).name
               if _intent_active(world, t) else "", "|".join(runner.active_names(t)), ";".join(delivered),
               contact_str)
        for c, v in zip(COLUMNS, row):
            cols[c].append(_fmt(v) if c not in _STRING_COLS else v)
        fsm.tick(cfg.dt)
        if fsm.state is State.Done:
            done_at = t if done_at is None else done_at
            if t - done_at >= scenario.stop_after_done - 1e-9:
                break

    table = parse_table(_table_csv(cols))
    meta = {"scenario": scenario.to_dict(), "awareness": awareness.value, "perception_mode": perception_mode,
            "classifier": classifier.name, "seed": int(seed), "profile_id": int(profile.id), "dt": cfg.dt,
            "preferred_location": list(map(float, scenario.preferred_location)),
            "insert_point": list(map(float, scenario.insert_point)),
            "open_threshold": cfg.tracker.open_threshold}
    summary = summarize(table, meta)
    summary["preferred_location_learned"] = None if fsm.preferred_location is None else \
        [round(float(v), 6) for v in fsm.preferred_location]
    return EpisodeTrace(table, meta, summary, fsm, list(fsm.log))


def _intent_active(world: World, t: float) -> bool:
    return any(it.t_start <= t and it.active(t) and not getattr(it, "taken", False) for it in world.intents)


def _table_csv(cols: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in zip(*(cols[c] for c in COLUMNS)):
        w.writerow(row)
    return buf.getvalue()


def check_summary(trace: EpisodeTrace) -> bool:
    """True when the stored summary equals the one recomputed from the per-tick table."""
    fresh = summarize(trace.table, trace.meta)
    stored = {k: v for k, v in trace.summary.items() if k in fresh}
    return json.loads(json.dumps(fresh)) == json.loads(json.dumps(stored))


