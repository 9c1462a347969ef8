"""Haptic and visual features over a short contact window.

Layout (fixed, see :func:`feature_layout`): for each wrench channel
``[mean, range, variance, kurtosis, activity, mobility, complexity, band_0..band_{B-1}]``
followed by the visual block ``[disp_0..disp_{L-1}, head_disp, utensil_dx, utensil_dy,
utensil_dz, aperture_change]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, InsufficientDataError, LayoutMismatchError, WindowTooShortError
from .headmodel import MouthPose, N_LANDMARKS

CHANNELS = ("Fx", "Fy", "Fz", "Tx", "Ty", "Tz")
STATS = ("mean", "range", "variance", "kurtosis", "hjorth_activity", "hjorth_mobility", "hjorth_complexity")
DEFAULT_BANDS = ((0.0, 20.0), (20.0, 50.0), (50.0, 150.0), (150.0, 500.0))
VAR_EPS = 1e-12
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class FeatureConfig:
    rate_hz: float = 1000.0
    window_s: float = 0.1
    bands: tuple = DEFAULT_BANDS
    n_landmarks: int = N_LANDMARKS

    @property
    def n_samples(self) -> int:
        return int(round(self.rate_hz * self.window_s))

    def validate(self) -> None:
        if self.rate_hz <= 0 or self.window_s <= 0:
            raise ConfigurationError("rate_hz and window_s must be positive")
        _check_bands(self.bands, self.rate_hz)


@dataclass(frozen=True)
class VisualSnapshot:
    """Perception output at one instant: keypoints, mouth pose and utensil tip (world, mm)."""
    keypoints_3d: np.ndarray
    mouth: MouthPose
    tip: np.ndarray
    keypoints_2d: np.ndarray | None = None


@dataclass(frozen=True)
class InteractionWindow:
    wrench: np.ndarray                  # (T, 6): N and N*mm
    rate_hz: float = 1000.0
    visual_start: VisualSnapshot | None = None
    visual_end: VisualSnapshot | None = None

    def validate(self, cfg: FeatureConfig | None = None) -> None:
        cfg = cfg or FeatureConfig(rate_hz=self.rate_hz)
        w = np.asarray(self.wrench)
        if w.ndim != 2 or w.shape[1] != len(CHANNELS):
            raise ConfigurationError(f"wrench must be (T, 6), got {w.shape}")
        if w.shape[0] != cfg.n_samples:
            raise WindowTooShortError(f"window has {w.shape[0]} samples, expected {cfg.n_samples}")
        if not np.all(np.isfinite(w)):
            raise ConfigurationError("wrench contains non-finite samples")


@dataclass(frozen=True)
class FeatureLayout:
    names: tuple
    haptic: np.ndarray                  # bool per entry

    @property
    def size(self) -> int:
        return len(self.names)

    def manifest(self) -> dict:
        return {"version": "features-v1",
                "names": list(self.names),
                "index": {n: i for i, n in enumerate(self.names)},
                "modality": ["haptic" if h else "visual" for h in self.haptic]}

    def modality_mask(self, modality: str) -> np.ndarray:
        modality = modality.lower()
        if modality == "all":
            return np.ones(self.size, bool)
        if modality == "haptic":
            return self.haptic.copy()
        if modality == "visual":
            return ~self.haptic
        raise ConfigurationError(f"unknown modality {modality!r}")


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    present: np.ndarray                 # False where a modality was missing and zero-filled
    layout: FeatureLayout = field(repr=False)


def feature_layout(bands=DEFAULT_BANDS, n_landmarks: int = N_LANDMARKS) -> FeatureLayout:
    names = []
    for ch in CHANNELS:
        names += [f"{ch}_{s}" for s in STATS]
        names += [f"{ch}_band_{lo:g}_{hi:g}" for lo, hi in bands]
    n_haptic = len(names)
    names += [f"kp{i}_disp" for i in range(n_landmarks)]
    names += ["head_disp", "utensil_dx", "utensil_dy", "utensil_dz", "aperture_change"]
    haptic = np.zeros(len(names), bool)
    haptic[:n_haptic] = True
    return FeatureLayout(tuple(names), haptic)


def _check_bands(bands, rate_hz):
    nyq = rate_hz / 2.0
    for lo, hi in bands:
        if not (0.0 <= lo < hi <= nyq + 1e-12):
            raise ConfigurationError(f"invalid band [{lo}, {hi}) for rate {rate_hz} Hz")


def hjorth(x) -> tuple[float, float, float]:
    """Hjorth activity, mobility and complexity of a 1-d series.

    Derivatives are central differences (one-sided at the ends), which keeps a
    whole-period sinusoid at complexity 1 on short windows; the forward
    difference drifts by about 2% at 100 samples.
    """
    x = np.asarray(x, float)
    if x.size < 3:
        raise WindowTooShortError(f"hjorth needs at least 3 samples, got {x.size}")
    v0 = np.var(x)
    if v0 < VAR_EPS:
        return 0.0, 0.0, 0.0
    d1 = np.gradient(x)
    v1 = np.var(d1)
    mob = np.sqrt(v1 / v0)
    if v1 < VAR_EPS:
        return float(v0), float(mob), 0.0
    v2 = np.var(np.gradient(d1))
    return float(v0), float(mob), float(np.sqrt(v2 / v1) / mob)


def excess_kurtosis(x) -> float:
    """Biased sample excess kurtosis; 0 for (near) constant input."""
    x = np.asarray(x, float)
    d = x - x.mean()
    m2 = np.mean(d ** 2)
    if m2 < VAR_EPS:
        return 0.0
    return float(np.mean(d ** 4) / m2 ** 2 - 3.0)


def band_energies(x, rate_hz: float, bands=DEFAULT_BANDS) -> np.ndarray:
    """Spectral power in each ``[lo, hi)`` band, DC excluded.

    Powers are one-sided periodogram values normalised so that the sum over
    all non-DC bins equals the population variance. A band ending exactly at
    Nyquist also takes the Nyquist bin.
    """
    _check_bands(bands, rate_hz)
    x = np.asarray(x, float)
    n = x.size
    X = np.fft.rfft(x)
    p = np.abs(X) ** 2 / n ** 2
    p[1:] *= 2.0
    if n % 2 == 0:
        p[-1] /= 2.0
    freqs = np.fft.rfftfreq(n, 1.0 / rate_hz)
    nyq = rate_hz / 2.0
    out = np.zeros(len(bands))
    for b, (lo, hi) in enumerate(bands):
        sel = (freqs >= lo) & (freqs < hi)
        if hi >= nyq:
            sel |= freqs >= hi
        sel[0] = False
        out[b] = p[sel].sum()
    return out


def haptic_features(wrench, rate_hz: float, bands=DEFAULT_BANDS) -> np.ndarray:
    rows = []
    for ch in np.asarray(wrench, float).T:
        a, m, c = hjorth(ch)
        rows.append(np.concatenate([[ch.mean(), np.ptp(ch), np.var(ch), excess_kurtosis(ch), a, m, c],
                                    band_energies(ch, rate_hz, bands)]))
    return np.concatenate(rows)


def visual_features(start: VisualSnapshot, end: VisualSnapshot) -> np.ndarray:
    k0 = np.asarray(start.keypoints_3d, float)
    k1 = np.asarray(end.keypoints_3d, float)
    disp = k1 - k0
    per_kp = np.linalg.norm(disp, axis=1)
    head = np.linalg.norm(disp.mean(axis=0))
    rel0 = np.asarray(start.tip, float) - start.mouth.frame.t
    rel1 = np.asarray(end.tip, float) - end.mouth.frame.t
    utensil = start.mouth.frame.R.T @ (rel1 - rel0)
    out = np.concatenate([per_kp, [head], utensil, [end.mouth.aperture - start.mouth.aperture]])
    return np.nan_to_num(out, nan=0.0, posinf=0.0, neginf=0.0)


def extract(window: InteractionWindow, cfg: FeatureConfig | None = None) -> FeatureVector:
    """Feature vector of one contact window; a missing snapshot zero-fills the visual block."""
    cfg = cfg or FeatureConfig(rate_hz=window.rate_hz)
    window.validate(cfg)
    layout = feature_layout(cfg.bands, cfg.n_landmarks)
    hap = haptic_features(window.wrench, cfg.rate_hz, cfg.bands)
    present = np.ones(layout.size, bool)
    if window.visual_start is None or window.visual_end is None:
        vis = np.zeros(layout.size - hap.size)
        present[~layout.haptic] = False
    else:
        vis = visual_features(window.visual_start, window.visual_end)
    values = np.concatenate([hap, vis])
    if values.size != layout.size:
        raise LayoutMismatchError(f"feature length {values.size} != layout {layout.size}")
    return FeatureVector(values, present, layout)


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, float)
        if X.shape[-1] != self.mean.size:
            raise LayoutMismatchError(f"expected {self.mean.size} features, got {X.shape[-1]}")
        return (X - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Standardizer":
        return cls(np.asarray(d["mean"], float), np.asarray(d["std"], float))


def fit_standardizer(X) -> Standardizer:
    X = np.asarray(X, float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InsufficientDataError("cannot fit a standardizer on an empty set")
    return Standardizer(X.mean(axis=0), np.maximum(X.std(axis=0), STD_FLOOR))


def apply(standardizer: Standardizer, fv) -> np.ndarray:
    values = fv.values if isinstance(fv, FeatureVector) else fv
    return standardizer.apply(values)


def write_manifest(layout: FeatureLayout, path) -> None:
    with open(path, "w") as fh:
        json.dump(layout.manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")
