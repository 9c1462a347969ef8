import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal, stats

from bitetransfer.errors import ConfigurationError, InsufficientDataError, WindowTooShortError
from bitetransfer.features import (DEFAULT_BANDS, FeatureConfig, InteractionWindow, VisualSnapshot, band_energies,
                                   excess_kurtosis, extract, feature_layout, fit_standardizer, hjorth)
from bitetransfer.geometry import Rigid
from bitetransfer.headmodel import MouthPose

seeds = st.integers(0, 2**32 - 1)
RATE = 1000.0
n = np.arange(100)


def _sine(f=10.0, amp=1.0, T=100):
    return amp * np.sin(2 * np.pi * f * np.arange(T) / RATE)


def _snapshot(rng, aperture=5.0):
    return VisualSnapshot(rng.normal(size=(68, 3)) * 30, MouthPose(Rigid.identity(), aperture, False),
                          rng.normal(size=3))


def test_hjorth_constant_guard():
    assert hjorth(np.full(100, 3.7)) == (0.0, 0.0, 0.0)


def test_hjorth_sinusoid_complexity_is_one():
    _, _, c = hjorth(_sine())
    assert abs(c - 1.0) < 0.02


def test_hjorth_too_short():
    with pytest.raises(WindowTooShortError):
        hjorth([1.0, 2.0])


def test_hjorth_noise_more_complex_than_sinusoid():
    sine = _sine(amp=np.sqrt(2))
    c_sine = hjorth(sine)[2]
    for seed in range(100):
        noise = np.random.default_rng(seed).standard_normal(100)
        assert hjorth(noise)[2] > c_sine


def test_band_energy_concentrates_30hz():
    e = band_energies(_sine(30.0), RATE, ((0, 20), (20, 50), (50, 200)))
    assert e[1] >= 0.99 * e.sum()


def test_band_energy_zero_signal_and_bad_band():
    assert np.all(band_energies(np.zeros(100), RATE) == 0)
    with pytest.raises(ConfigurationError):
        band_energies(np.zeros(100), RATE, ((0, 20), (20, 600)))


@given(seeds)
def test_band_energy_matches_scipy_periodogram(seed):
    x = np.random.default_rng(seed).normal(size=100) + 2.0
    f, p = signal.periodogram(x, fs=RATE, scaling="spectrum", detrend=False)
    for (lo, hi), e in zip(DEFAULT_BANDS, band_energies(x, RATE)):
        sel = (f >= lo) & ((f < hi) | (hi >= RATE / 2)) & (f > 0)
        assert np.isclose(e, p[sel].sum(), rtol=1e-9, atol=1e-14)


@given(seeds, st.integers(10, 300))
def test_band_energy_parseval(seed, T):
    x = np.random.default_rng(seed).normal(size=T) * 5 + 1.0
    ac_power = np.mean((x - x.mean()) ** 2)
    assert np.isclose(band_energies(x, RATE).sum(), ac_power, rtol=1e-9)


def test_gaussian_excess_kurtosis_near_zero():
    x = np.random.default_rng(0).standard_normal(100_000)
    assert abs(excess_kurtosis(x)) < 0.05


@given(seeds)
def test_kurtosis_matches_scipy(seed):
    x = np.random.default_rng(seed).exponential(size=100)
    assert np.isclose(excess_kurtosis(x), stats.kurtosis(x, fisher=True, bias=True), rtol=1e-10)


@given(seeds, st.floats(-1e3, 1e3))
def test_offset_invariance(seed, c):
    x = np.random.default_rng(seed).normal(size=100)
    np.testing.assert_allclose(hjorth(x + c), hjorth(x), rtol=1e-6)
    assert np.isclose(excess_kurtosis(x + c), excess_kurtosis(x), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(band_energies(x + c, RATE), band_energies(x, RATE), rtol=1e-6, atol=1e-9)


def test_extract_all_zero_window():
    rng = np.random.default_rng(0)
    s = _snapshot(rng)
    fv = extract(InteractionWindow(np.zeros((100, 6)), RATE, s, s))
    assert fv.values.size == feature_layout().size
    assert np.all(fv.values == 0) and fv.present.all()


def test_extract_constant_fz():
    w = np.zeros((100, 6))
    w[:, 2] = 5.0
    fv = extract(InteractionWindow(w, RATE))
    idx = {name: i for i, name in enumerate(fv.layout.names)}
    assert fv.values[idx["Fz_mean"]] == 5.0
    assert fv.values[idx["Fz_range"]] == 0.0
    assert fv.values[idx["Fz_kurtosis"]] == 0.0
    assert not fv.present[~fv.layout.haptic].any()
    assert np.all(fv.values[~fv.layout.haptic] == 0)


def test_extract_rejects_bad_windows():
    with pytest.raises(WindowTooShortError):
        extract(InteractionWindow(np.zeros((50, 6)), RATE))
    with pytest.raises(ConfigurationError):
        extract(InteractionWindow(np.zeros((100, 5)), RATE))
    w = np.zeros((100, 6))
    w[3, 0] = np.inf
    with pytest.raises(ConfigurationError):
        extract(InteractionWindow(w, RATE))


@given(seeds, st.sampled_from(["normal", "constant", "impulse"]))
def test_extract_total_and_deterministic(seed, kind):
    rng = np.random.default_rng(seed)
    if kind == "normal":
        w = rng.normal(size=(100, 6)) * rng.uniform(0.01, 100, 6)
    elif kind == "constant":
        w = np.tile(rng.normal(size=6), (100, 1))
    else:
        w = np.zeros((100, 6))
        w[rng.integers(100)] = rng.normal(size=6) * 1e3
    s0, s1 = _snapshot(rng), _snapshot(rng, 12.0)
    a = extract(InteractionWindow(w, RATE, s0, s1))
    b = extract(InteractionWindow(w.copy(), RATE, s0, s1))
    assert np.all(np.isfinite(a.values))
    np.testing.assert_array_equal(a.values, b.values)


def test_modality_isolation(rng):
    w = rng.normal(size=(100, 6))
    s0, s1 = _snapshot(rng), _snapshot(rng)
    base = extract(InteractionWindow(w, RATE, s0, s1))
    other_vis = extract(InteractionWindow(w, RATE, _snapshot(rng), _snapshot(rng, 9.0)))
    other_hap = extract(InteractionWindow(rng.normal(size=(100, 6)), RATE, s0, s1))
    h = base.layout.haptic
    np.testing.assert_array_equal(base.values[h], other_vis.values[h])
    np.testing.assert_array_equal(base.values[~h], other_hap.values[~h])
    assert not np.array_equal(base.values[~h], other_vis.values[~h])


def test_utensil_displacement_in_start_mouth_frame(rng):
    R = Rigid.from_rotvec([0, 0, np.pi / 2]).R
    kp = rng.normal(size=(68, 3))
    s0 = VisualSnapshot(kp, MouthPose(Rigid(R, np.zeros(3)), 5.0, False), np.zeros(3))
    s1 = VisualSnapshot(kp, MouthPose(Rigid(R, np.zeros(3)), 3.0, False), np.array([1.0, 0, 0]))
    fv = extract(InteractionWindow(np.zeros((100, 6)), RATE, s0, s1))
    idx = {name: i for i, name in enumerate(fv.layout.names)}
    got = fv.values[[idx["utensil_dx"], idx["utensil_dy"], idx["utensil_dz"]]]
    np.testing.assert_allclose(got, R.T @ [1.0, 0, 0], atol=1e-12)
    assert fv.values[idx["aperture_change"]] == -2.0


def test_layout_size_and_masks():
    lay = feature_layout()
    assert lay.size == 6 * (7 + 4) + 68 + 5
    assert lay.modality_mask("haptic").sum() == 66
    assert (lay.modality_mask("haptic") ^ lay.modality_mask("visual")).all()
    with pytest.raises(ConfigurationError):
        lay.modality_mask("audio")
    with pytest.raises(ConfigurationError):
        FeatureConfig(bands=((0, 600),)).validate()


def test_standardizer(rng):
    X = rng.normal(3, 2, (50, 4))
    X[:, 2] = 7.0
    s = fit_standardizer(X)
    Z = s.apply(X)
    np.testing.assert_allclose(Z.mean(0), 0, atol=1e-9)
    np.testing.assert_allclose(Z[:, [0, 1, 3]].std(0), 1, atol=1e-9)
    assert np.all(Z[:, 2] == 0) and np.all(s.std >= 1e-8)
    with pytest.raises(InsufficientDataError):
        fit_standardizer(np.zeros((0, 4)))
