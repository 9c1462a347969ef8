"""Parametric generators for the four contact types and the balanced dataset built from them."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from ..control.admittance import goal_step
from ..features import FeatureConfig, InteractionWindow, VisualSnapshot, extract, feature_layout
from ..geometry import Rigid, rotation_about_axis
from ..headmodel import HeadTemplate, default_template, mouth_state
from ..labels import LABELS, InteractionLabel
from .profiles import BITE_STYLES, ParticipantProfile, draw_profiles
from .world import (PHYSICS_DT, BiteIntent, ContactParams, HeadScript, ImpulseIntent, TapIntent, TongueIntent,
                    World)

CONTROL_DT = 0.01
ONSET_N = 0.3
BITE_DIRECTIONS = {"teeth": (0.0, -1.0, 0.0), "lips": (0.0, -0.6, -0.8), "both": (0.0, -0.85, -0.53)}


@dataclass(frozen=True)
class GeneratorParams:
    """Ranges for the invented force/motion parameterisations (mm, N, s)."""
    tap_force: tuple = (0.5, 2.0)
    tap_duration: tuple = (0.02, 0.06)
    manip_force: tuple = (0.5, 3.0)
    manip_pulse_hz: tuple = (6.0, 12.0)
    impulse_disp: tuple = (10.0, 26.0)
    impulse_rise: tuple = (0.04, 0.09)
    impulse_stiffness: float = 0.6
    bite_force: tuple = (3.0, 10.0)
    bite_rise: tuple = (0.04, 0.08)
    bite_close: tuple = (0.08, 0.15)
    bite_jaw_to: tuple = (0.09, 0.15)
    keypoint_noise: float = 0.3
    head_tilt_deg: float = 10.0
    tool_tilt_deg: float = 5.0
    onset_threshold: float = ONSET_N

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _u(rng, lo_hi):
    return float(rng.uniform(*lo_hi))


def _random_rotation_small(rng, max_deg):
    axis = rng.normal(size=3)
    return rotation_about_axis(axis / np.linalg.norm(axis), np.deg2rad(rng.uniform(0, max_deg)))


def snapshot(world: World, t: float, rng: np.random.Generator, noise: float, template: HeadTemplate):
    """Visual snapshot from the true keypoints plus isotropic noise."""
    kp = world.keypoints(t) + rng.normal(0.0, noise, (template.n_landmarks, 3))
    return VisualSnapshot(kp, mouth_state(kp, template, timestamp=t), world.tip.copy())


def _setup(label: InteractionLabel, profile: ParticipantProfile, rng, gp: GeneratorParams,
           template: HeadTemplate, contact: ContactParams):
    head = Rigid(_random_rotation_small(rng, gp.head_tilt_deg), rng.normal(0.0, 10.0, 3))
    jaw = float(np.clip(profile.jaw_open + rng.normal(0, 0.02), 0.3, 0.48))
    script = HeadScript(head, default_jaw=jaw)
    world = World(template, profile, script, Rigid.identity(), rng, contact)
    mouth, ap, hw = world.mouth(0.0)
    t0 = float(rng.uniform(0.02, 0.06))
    r = contact.tip_radius

    if label is InteractionLabel.Incidental:
        phi = rng.uniform(0, 2 * np.pi)
        q = np.array([(hw + rng.uniform(-3, 4)) * np.cos(phi),
                      (0.5 * ap + rng.uniform(0, 6)) * np.sin(phi),
                      r + rng.uniform(0.5, 3.0)])
        if rng.random() < 0.5:
            # glancing hit on the lip edge: pushed back and radially outward
            d = np.array([np.cos(phi), np.sin(phi), rng.uniform(0.2, 1.0)])
        else:
            lateral = rng.normal(0, 0.3, 2)
            d = np.array([lateral[0], lateral[1], 1.0])
        peak = _u(rng, gp.tap_force)
        linger = rng.uniform(0.35, 0.6) * peak if rng.random() < profile.tap_linger else 0.0
        intent = TapIntent("Incidental", t0, direction=d / np.linalg.norm(d), peak=peak,
                           duration=_u(rng, gp.tap_duration), linger=linger, linger_time=0.2 if linger else 0.0)
    else:
        q = np.array([0.0, 0.0, -10.0]) + rng.normal(0, 1.5, 3)
        if label is InteractionLabel.InMouthManipulation:
            theta = profile.manipulation_angle + rng.normal(0, 0.6)
            u = np.array([np.cos(theta), np.sin(theta), rng.normal(0.2, 0.4)])
            u /= np.linalg.norm(u)
            f = float(np.clip(_u(rng, gp.manip_force) * profile.manipulation_strength, 0.4, 3.5))
            pulse = float(rng.uniform(*gp.manip_pulse_hz)) if rng.random() < profile.manipulation_pulse else 0.0
            intent = TongueIntent("InMouthManipulation", t0, target=q + 1.5 * f / 0.25 * u,
                                  max_force=f, ramp=float(rng.uniform(0.01, 0.06)), pulse_hz=pulse)
        elif label is InteractionLabel.Impulsive:
            d = np.asarray(profile.impulse_bias) + rng.normal(0, 0.5, 3)
            d = mouth.R @ (d / np.linalg.norm(d))
            mag = float(np.clip(_u(rng, gp.impulse_disp) * profile.impulse_scale, 8.0, 26.0))
            intent = ImpulseIntent("Impulsive", t0, displacement=mag * d, rise=_u(rng, gp.impulse_rise),
                                   hold=0.2, back=0.25, stiffness=gp.impulse_stiffness,
                                   clench=float(rng.uniform(0.0, 1.0) * profile.impulse_clench))
        else:
            style = BITE_STYLES[rng.choice(3, p=np.asarray(profile.style_mix))]
            peak = float(np.clip(_u(rng, gp.bite_force) * profile.bite_force_scale, 2.5, 12.0))
            intent = BiteIntent("Bite", t0, direction=np.asarray(BITE_DIRECTIONS[style]), peak=peak,
                                rise=_u(rng, gp.bite_rise), jaw_from=jaw, jaw_to=_u(rng, gp.bite_jaw_to),
                                close_time=_u(rng, gp.bite_close),
                                lunge=mouth.R[:, 2] * rng.uniform(0.5, 1.0) * profile.bite_lunge)

    tilt = _random_rotation_small(rng, gp.tool_tilt_deg)
    tool = Rigid(mouth.R @ tilt, mouth.apply(q))
    world.ee = type(world.ee)(tool)
    world.intents.append(intent)
    return world


def gen_interaction(label, profile: ParticipantProfile, seed, params: GeneratorParams | None = None,
                    template: HeadTemplate | None = None, contact: ContactParams | None = None,
                    feature_cfg: FeatureConfig | None = None, max_time: float = 1.0):
    """One contact window of the given type, with the robot holding its pose.

    The window starts at the first 1 kHz sample whose force norm exceeds the
    onset threshold and spans the next ``rate * 0.1`` samples. Snapshots are
    taken at its first and last samples.
    """
    label = InteractionLabel.parse(label)
    gp = params or GeneratorParams()
    template = template or default_template()
    contact = contact or ContactParams()
    fcfg = feature_cfg or FeatureConfig()
    T = fcfg.n_samples
    rng = np.random.default_rng([int(seed), int(label), int(profile.id), 104729])
    world = _setup(label, profile, rng, gp, template, contact)
    goal = world.ee.pose
    n_sub = int(round(CONTROL_DT / PHYSICS_DT))
    samples: list = []
    onset = None
    start = None
    twist = np.zeros(6)
    last = np.zeros(6)
    steps = int(round(max_time / PHYSICS_DT))
    for k in range(steps):
        if k % n_sub == 0:
            twist = goal_step(type(world.ee)(world.ee.pose, twist), goal, dt=CONTROL_DT,
                              wrench=world.wrench_world(last))
        last = world.substep(twist)
        if onset is None:
            if np.linalg.norm(last[:3]) > gp.onset_threshold:
                onset = world.t
                start = snapshot(world, world.t, rng, gp.keypoint_noise, template)
                samples.append(last)
        else:
            samples.append(last)
        if len(samples) == T:
            break
    if onset is None or len(samples) < T:
        raise RuntimeError(f"no contact onset for {label.name} (seed {seed}); generator ranges too weak")
    end = snapshot(world, world.t, rng, gp.keypoint_noise, template)
    window = InteractionWindow(np.array(samples), fcfg.rate_hz, start, end)
    return window, label


def _provenance(n_participants, n_per, seed, gp: GeneratorParams, trait_spread) -> dict:
    cfg = {"n_participants": n_participants, "n_per_label_per_participant": n_per, "seed": seed,
           "trait_spread": trait_spread, "generator": gp.to_dict()}
    digest = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]
    return {"generator_config": cfg, "config_hash": digest, "seed": seed}


def gen_dataset(n_participants: int = 6, n_per_label_per_participant: int = 128, seed: int = 0,
                params: GeneratorParams | None = None, template: HeadTemplate | None = None,
                trait_spread: float = 1.0, profiles=None):
    """Balanced labelled feature dataset (participant-major, then label, then repetition)."""
    from ..classify.dataset import LabeledDataset

    gp = params or GeneratorParams()
    template = template or default_template()
    profiles = profiles or draw_profiles(n_participants, seed, template, trait_spread)
    fcfg = FeatureConfig()
    X, y, pid = [], [], []
    for p in profiles:
        for label in LABELS:
            for rep in range(n_per_label_per_participant):
                sample_seed = [seed, p.id, rep]
                s = int(np.random.SeedSequence(sample_seed).generate_state(1)[0])
                window, lab = gen_interaction(label, p, s, gp, template, feature_cfg=fcfg)
                X.append(extract(window, fcfg).values)
                y.append(int(lab))
                pid.append(p.id)
    prov = _provenance(len(profiles), n_per_label_per_participant, seed, gp, trait_spread)
    return LabeledDataset(np.array(X), np.array(y), np.array(pid), feature_layout(fcfg.bands, fcfg.n_landmarks),
                          prov)
