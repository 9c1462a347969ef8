"""Detectors that turn raw signals into FSM events."""
from __future__ import annotations

from collections import deque

import numpy as np


class SubsideMonitor:
    """Reports once the force norm has stayed below ``threshold_n`` for ``dwell_s``."""

    def __init__(self, threshold_n: float = 0.5, dwell_s: float = 0.2):
        self.threshold = threshold_n
        self.dwell = dwell_s
        self.quiet = 0.0

    def reset(self) -> None:
        self.quiet = 0.0

    def update(self, wrench, dt: float) -> bool:
        if np.linalg.norm(np.asarray(wrench, float)[:3]) < self.threshold:
            self.quiet += dt
        else:
            self.quiet = 0.0
        return self.quiet >= self.dwell - 1e-9


class HeadImpulseMonitor:
    """Flags a sudden head movement: mouth-centre speed above ``speed_mm_s`` over ``window_s``."""

    def __init__(self, speed_mm_s: float = 300.0, window_s: float = 0.02):
        self.speed = speed_mm_s
        self.window = window_s
        self.history: deque = deque()

    def reset(self) -> None:
        self.history.clear()

    def update(self, t: float, centre) -> bool:
        self.history.append((t, np.asarray(centre, float)))
        while len(self.history) > 1 and t - self.history[0][0] > self.window + 1e-9:
            self.history.popleft()
        t0, c0 = self.history[0]
        if t - t0 < self.window - 1e-9:
            return False
        return np.linalg.norm(self.history[-1][1] - c0) / (t - t0) > self.speed
