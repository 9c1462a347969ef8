"""Interaction labels shared by the classifier, the controller and the simulator."""
from __future__ import annotations

from enum import IntEnum


class InteractionLabel(IntEnum):
    Incidental = 0
    InMouthManipulation = 1
    Impulsive = 2
    Bite = 3

    @classmethod
    def parse(cls, value) -> "InteractionLabel":
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls[value]
            except KeyError:
                raise ValueError(f"unknown interaction label {value!r}") from None
        return cls(int(value))


LABELS = tuple(InteractionLabel)
N_CLASSES = len(LABELS)
