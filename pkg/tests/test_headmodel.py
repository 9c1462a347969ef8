import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bitetransfer.errors import ConfigurationError, DegenerateGeometryError
from bitetransfer.geometry import Rigid, random_rotation
from bitetransfer.headmodel import (DEFAULT_OPEN_THRESHOLD_MM, HeadParams, generate_template, load_template,
                                    mouth_state, sample_params, save_template, synthesize)

seeds = st.integers(0, 2**32 - 1)


def test_template_invariants(template):
    template.validate()
    lm = template.landmark_indices
    jaw = set(template.jaw_region)
    assert not (set(lm[template.upper_positions]) & jaw)
    assert set(lm[template.lower_positions]) <= jaw
    assert len(template.mouth_indices) == 20 and template.n_landmarks == 68


def test_identity_params_give_template_landmarks(template):
    out = synthesize(template, HeadParams.neutral(template))
    np.testing.assert_array_equal(out, template.vertices[template.landmark_indices])


def test_translation_equivariance(template, rng):
    p = sample_params(template, rng, jaw_angle=0.2)
    t = np.array([10.0, -3.0, 250.0])
    base = synthesize(template, p)
    moved = synthesize(template, HeadParams(p.shape, p.expression, p.jaw_angle, Rigid.translation(t)))
    np.testing.assert_allclose(moved, base + t, atol=1e-12)


def test_aperture_strictly_increasing_over_jaw_sweep(template):
    ap = [mouth_state(synthesize(template, HeadParams.neutral(template, jaw_angle=a)), template).aperture
          for a in np.linspace(0, template.jaw_max, 10)]
    assert np.all(np.diff(ap) > 0)


def test_open_flag_at_extremes(template):
    closed = mouth_state(synthesize(template, HeadParams.neutral(template)), template)
    opened = mouth_state(synthesize(template, HeadParams.neutral(template, jaw_angle=template.jaw_max)), template)
    assert not closed.open and closed.aperture < DEFAULT_OPEN_THRESHOLD_MM
    assert opened.open and opened.aperture > DEFAULT_OPEN_THRESHOLD_MM


def test_dimension_mismatch_rejected(template):
    with pytest.raises(ConfigurationError):
        synthesize(template, HeadParams(np.zeros(3), np.zeros(template.n_expression)))
    with pytest.raises(ConfigurationError):
        synthesize(template, HeadParams.neutral(template, jaw_angle=template.jaw_max + 0.1))


def test_too_few_mouth_points_is_degenerate(template):
    kp = synthesize(template, HeadParams.neutral(template))
    kp[template.mouth_indices[2:]] = np.nan
    with pytest.raises(DegenerateGeometryError):
        mouth_state(kp, template)


@given(seeds, st.floats(-2, 2), st.floats(-2, 2))
def test_linear_in_shape_and_expression(template, seed, a, b):
    rng = np.random.default_rng(seed)
    p1 = sample_params(template, rng)
    p2 = sample_params(template, rng)
    mix = HeadParams(a * p1.shape + b * p2.shape, a * p1.expression + b * p2.expression)
    base = template.vertices[template.landmark_indices]
    rhs = a * synthesize(template, p1) + b * synthesize(template, p2) - (a + b - 1) * base
    np.testing.assert_allclose(synthesize(template, mix), rhs, atol=1e-9)


@given(seeds)
def test_aperture_monotone_for_prior_draws(template, seed):
    p = sample_params(template, np.random.default_rng(seed))
    ap = [mouth_state(synthesize(template, HeadParams(p.shape, p.expression, a)), template).aperture
          for a in np.linspace(0, template.jaw_max, 8)]
    assert np.all(np.diff(ap) >= 0)


@given(seeds)
def test_mouth_state_rigid_invariance(template, seed):
    rng = np.random.default_rng(seed)
    kp = synthesize(template, sample_params(template, rng, jaw_angle=rng.uniform(0, template.jaw_max)))
    T = Rigid(random_rotation(rng), rng.normal(0, 200, 3))
    m0 = mouth_state(kp, template)
    m1 = mouth_state(T.apply(kp), template)
    expect = T @ m0.frame
    np.testing.assert_allclose(m1.frame.t, expect.t, atol=1e-6)
    np.testing.assert_allclose(m1.frame.R, expect.R, atol=1e-9)
    assert abs(m1.aperture - m0.aperture) < 1e-6 and m1.open == m0.open


def test_frame_axes_point_right_and_outward(template):
    kp = synthesize(template, HeadParams.neutral(template))
    m = mouth_state(kp, template)
    assert m.frame.R[0, 0] > 0.9        # x toward right corner (model +x)
    assert m.frame.R[2, 2] > 0.8        # z outward from the face
    np.testing.assert_allclose(m.center, kp[template.mouth_indices].mean(0), atol=1e-12)


def test_template_file_roundtrip(template, tmp_path):
    path = tmp_path / "t.txt"
    save_template(template, path)
    back = load_template(path)
    np.testing.assert_array_equal(back.vertices, template.vertices)
    np.testing.assert_array_equal(back.shape_basis, template.shape_basis)
    np.testing.assert_array_equal(back.mouth_indices, template.mouth_indices)
    assert back.jaw_max == template.jaw_max


def test_shipped_template_matches_generator(template):
    np.testing.assert_allclose(generate_template().vertices, template.vertices, atol=1e-9)


def test_bad_template_header(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("nope\n1 0 0 0\n")
    with pytest.raises(ConfigurationError):
        load_template(p)
