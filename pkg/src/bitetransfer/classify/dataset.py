"""Labeled feature datasets and their on-disk form (``.npy`` arrays plus a JSON header)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigurationError, LayoutMismatchError
from ..features import FeatureLayout, feature_layout

DATASET_VERSION = "dataset-v1"


@dataclass
class LabeledDataset:
    X: np.ndarray                       # (n, F) raw features
    y: np.ndarray                       # (n,) label codes
    participant: np.ndarray             # (n,) participant ids
    layout: FeatureLayout = field(default_factory=feature_layout, repr=False)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, float)
        self.y = np.asarray(self.y, int)
        self.participant = np.asarray(self.participant, int)
        n = len(self.y)
        if self.X.ndim != 2 or self.X.shape[0] != n or len(self.participant) != n:
            raise ConfigurationError("X, y and participant lengths disagree")
        if n and self.X.shape[1] != self.layout.size:
            raise LayoutMismatchError(f"X has {self.X.shape[1]} columns, layout has {self.layout.size}")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def participants(self) -> np.ndarray:
        return np.unique(self.participant)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.X[idx], self.y[idx], self.participant[idx], self.layout, dict(self.provenance))

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "X.npy", self.X)
        np.save(d / "y.npy", self.y)
        np.save(d / "participant.npy", self.participant)
        header = {"version": DATASET_VERSION, "n_samples": len(self), "provenance": self.provenance,
                  "manifest": self.layout.manifest()}
        (d / "dataset.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "LabeledDataset":
        d = Path(directory)
        try:
            header = json.loads((d / "dataset.json").read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"{d} does not contain a dataset (dataset.json missing)") from None
        if header.get("version") != DATASET_VERSION:
            raise ConfigurationError(f"unsupported dataset version {header.get('version')!r}")
        layout = layout_from_manifest(header["manifest"])
        return cls(np.load(d / "X.npy"), np.load(d / "y.npy"), np.load(d / "participant.npy"),
                   layout, header.get("provenance", {}))


def layout_from_manifest(manifest: dict) -> FeatureLayout:
    names = tuple(manifest["names"])
    haptic = np.array([m == "haptic" for m in manifest["modality"]])
    return FeatureLayout(names, haptic)


def stratified_split(labels, rng: np.random.Generator, train_fraction: float = 0.8):
    """Indices of a per-label train/test split of ``labels``."""
    labels = np.asarray(labels)
    train, test = [], []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(train_fraction * len(idx)))
        train.append(idx[:k])
        test.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))
