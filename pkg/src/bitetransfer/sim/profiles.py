"""Simulated participants: head identity plus interaction-style traits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError
from ..headmodel import HeadTemplate, default_template

BITE_STYLES = ("teeth", "lips", "both")


@dataclass(frozen=True)
class ParticipantProfile:
    id: int
    shape: np.ndarray
    expression: np.ndarray
    bite_force_scale: float = 1.0
    impulse_scale: float = 1.0
    impulse_bias: tuple = (0.0, 0.0, 1.0)       # preferred impulse direction, mouth frame
    manipulation_strength: float = 1.0
    manipulation_angle: float = 0.0             # preferred tongue push direction in the lip plane (rad)
    style_mix: tuple = (1 / 3, 1 / 3, 1 / 3)    # teeth, lips, both
    spasm_rate: float = 1.0
    jaw_open: float = 0.38                      # habitual jaw angle when waiting for food
    manipulation_pulse: float = 0.2             # fraction of tongue pushes that come in pulses
    bite_lunge: float = 2.0                     # mm the head moves toward the utensil while biting
    impulse_clench: float = 0.02                # rad the jaw closes during a spasm
    tap_linger: float = 0.2                     # fraction of incidental taps that rest on the lip afterwards

    def validate(self) -> None:
        scales = (self.bite_force_scale, self.impulse_scale, self.manipulation_strength, self.spasm_rate)
        if min(scales) <= 0:
            raise ConfigurationError("profile scales must be positive")
        if not (0 <= self.manipulation_pulse <= 1 and 0 <= self.tap_linger <= 1):
            raise ConfigurationError("style fractions must lie in [0, 1]")
        if self.bite_lunge < 0 or self.impulse_clench < 0:
            raise ConfigurationError("bite_lunge and impulse_clench must be non-negative")
        mix = np.asarray(self.style_mix, float)
        if np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-9:
            raise ConfigurationError("style_mix must be non-negative and sum to 1")

    def to_dict(self) -> dict:
        return {"id": self.id, "shape": self.shape.tolist(), "expression": self.expression.tolist(),
                "bite_force_scale": self.bite_force_scale, "impulse_scale": self.impulse_scale,
                "impulse_bias": list(self.impulse_bias), "manipulation_strength": self.manipulation_strength,
                "manipulation_angle": self.manipulation_angle, "style_mix": list(self.style_mix),
                "spasm_rate": self.spasm_rate, "jaw_open": self.jaw_open,
                "manipulation_pulse": self.manipulation_pulse, "bite_lunge": self.bite_lunge,
                "impulse_clench": self.impulse_clench, "tap_linger": self.tap_linger}


def default_profile(template: HeadTemplate | None = None, pid: int = 0) -> ParticipantProfile:
    template = template or default_template()
    return ParticipantProfile(pid, np.zeros(template.n_shape), np.zeros(template.n_expression))


def draw_profiles(n: int, seed: int, template: HeadTemplate | None = None,
                  trait_spread: float = 1.0) -> list[ParticipantProfile]:
    """Draw ``n`` participants; ``trait_spread`` scales how much their traits differ."""
    template = template or default_template()
    rng = np.random.default_rng([int(seed), 7919])
    out = []
    for pid in range(n):
        s = trait_spread
        bias = np.array([rng.normal(0, 0.6 * s), rng.normal(0, 0.6 * s), 1.0])
        mix = rng.dirichlet(np.full(3, 2.0 / max(s, 1e-3)))
        p = ParticipantProfile(
            id=pid,
            shape=rng.normal(0, 1.0, template.n_shape),
            expression=rng.normal(0, 0.5, template.n_expression),
            bite_force_scale=float(np.exp(rng.normal(0, 0.25 * s))),
            impulse_scale=float(np.exp(rng.normal(0, 0.25 * s))),
            impulse_bias=tuple(bias / np.linalg.norm(bias)),
            manipulation_strength=float(np.exp(rng.normal(0, 0.25 * s))),
            manipulation_angle=float(rng.uniform(-np.pi, np.pi) * min(s, 1.0)),
            style_mix=tuple(mix),
            spasm_rate=float(np.exp(rng.normal(0, 0.3 * s))),
            jaw_open=float(np.clip(rng.normal(0.38, 0.03), 0.32, 0.45)),
            manipulation_pulse=float(np.clip(rng.beta(1.0, 2.0) * s, 0.0, 1.0)),
            bite_lunge=float(rng.uniform(0.0, 6.0) * s),
            impulse_clench=float(rng.uniform(0.0, 0.06) * s),
            tap_linger=float(np.clip(rng.beta(1.0, 2.0) * s, 0.0, 1.0)),
        )
        p.validate()
        out.append(p)
    return out
