import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from bitetransfer.geometry import Rigid, kabsch, kabsch_batch, min_jerk, pose_error, random_rotation, rotation_about_axis

seeds = st.integers(0, 2**32 - 1)


def test_identity_and_inverse(rng):
    T = Rigid(random_rotation(rng), rng.normal(size=3))
    pts = rng.normal(size=(10, 3))
    np.testing.assert_allclose((T.inverse() @ T).apply(pts), pts, atol=1e-12)
    assert Rigid.identity().is_proper()
    assert T.is_proper()


def test_rotation_about_axis_matches_scipy():
    R = rotation_about_axis([0, 0, 2.0], 0.3)
    np.testing.assert_allclose(R, Rotation.from_rotvec([0, 0, 0.3]).as_matrix(), atol=1e-12)


@given(seeds)
def test_kabsch_matches_scipy_align_vectors(seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(12, 3)) * 50
    T = Rigid(random_rotation(rng), rng.normal(size=3) * 100)
    Q = T.apply(P) + rng.normal(size=P.shape) * 0.5
    est = kabsch(P, Q)
    # independent oracle: scipy's Wahba solver on centred sets
    rot, _ = Rotation.align_vectors(Q - Q.mean(0), P - P.mean(0))
    np.testing.assert_allclose(est.R, rot.as_matrix(), atol=1e-8)
    assert est.is_proper()


def test_kabsch_batch_agrees_with_single(rng):
    P = rng.normal(size=(3, 15, 3))
    Q = rng.normal(size=(15, 3))
    w = rng.uniform(0.1, 1, (3, 15))
    R, t = kabsch_batch(P, Q, w)
    for b in range(3):
        ref = kabsch(P[b], Q, w[b])
        np.testing.assert_allclose(R[b], ref.R, atol=1e-10)
        np.testing.assert_allclose(t[b], ref.t, atol=1e-10)


def test_pose_error_and_min_jerk():
    a = Rigid.from_rotvec([0, 0, 0.1], [3, 4, 0])
    t_err, r_err = pose_error(a, Rigid.identity())
    assert np.isclose(t_err, 5.0) and np.isclose(r_err, 0.1)
    assert min_jerk(0.0) == 0.0 and min_jerk(1.0) == 1.0 and np.isclose(min_jerk(0.5), 0.5)
    assert min_jerk(-1.0) == 0.0 and min_jerk(2.0) == 1.0
