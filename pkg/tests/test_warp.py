"""Pose-derived affine transforms and bilinear warping invariants."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fuselag import warp
from fuselag.types import FeatureMap, PoseSE2, ValidationError

RES = 0.4


def gaussian_bump(h=32, w=32, cx=0.0, cy=0.0, sigma=2.0):
    cols, rows = np.meshgrid(np.arange(w, dtype=float),
                             np.arange(h, dtype=float))
    px = cols - (w - 1) / 2.0
    py = rows - (h - 1) / 2.0
    bump = np.exp(-0.5 * ((px - cx) ** 2 + (py - cy) ** 2) / sigma ** 2)
    return bump[None]


def test_identity_transform_is_exact():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(3, 16, 16))
    out = warp.warp_array(data, warp.AffineTransform2D.identity())
    np.testing.assert_array_equal(out, data)


def test_integer_lattice_shift_is_exact():
    rng = np.random.default_rng(1)
    data = rng.normal(size=(2, 12, 12))
    shift = warp.AffineTransform2D(np.array([[1.0, 0.0, 3.0],
                                             [0.0, 1.0, -2.0],
                                             [0.0, 0.0, 1.0]]))
    out = warp.warp_array(data, shift)
    # inverse mapping: output (i, j) reads input (i - 2, j + 3)
    np.testing.assert_array_equal(out[:, 2:, :-3], data[:, :-2, 3:])
    assert np.all(out[:, :2, :] == 0.0)
    assert np.all(out[:, :, -3:] == 0.0)


def test_quarter_turn_on_symmetric_grid_is_exact():
    rng = np.random.default_rng(2)
    data = rng.normal(size=(1, 15, 15))  # odd grid: center is a lattice point
    quarter = warp.AffineTransform2D(np.array([[0.0, -1.0, 0.0],
                                               [1.0, 0.0, 0.0],
                                               [0.0, 0.0, 1.0]]))
    out = warp.warp_array(data, quarter)
    assert np.max(np.abs(out - np.rot90(data, k=1, axes=(1, 2)))) < 1e-12


def test_round_trip_interior_error_small():
    # smooth content: bilinear round-trip error is curvature-bounded
    data = gaussian_bump(sigma=3.0)
    t = warp.derive_transform(PoseSE2(0, 0, 0), PoseSE2(0.37, -0.21, 0.15), RES)
    back = warp.warp_array(data, t)
    restored = warp.warp_array(back, warp.invert(t))
    interior = (slice(None), slice(4, -4), slice(4, -4))
    peak = data.max()
    assert np.max(np.abs(restored[interior] - data[interior])) <= 0.05 * peak


def test_compose_invert_group_laws():
    a = warp.derive_transform(PoseSE2(0, 0, 0), PoseSE2(1.0, 0.5, 0.3), RES)
    b = warp.derive_transform(PoseSE2(1.0, 0.5, 0.3), PoseSE2(0.2, -0.4, -0.5), RES)
    ident = warp.AffineTransform2D.identity()
    np.testing.assert_allclose(
        warp.compose(a, warp.invert(a)).matrix, ident.matrix, atol=1e-9)
    np.testing.assert_allclose(
        warp.compose(warp.invert(a), a).matrix, ident.matrix, atol=1e-9)
    # associativity
    c = warp.AffineTransform2D(np.array([[1.0, 0.0, 2.0],
                                         [0.0, 1.0, 1.0],
                                         [0.0, 0.0, 1.0]]))
    left = warp.compose(warp.compose(a, b), c).matrix
    right = warp.compose(a, warp.compose(b, c)).matrix
    np.testing.assert_allclose(left, right, atol=1e-9)
    # identity element
    np.testing.assert_allclose(warp.compose(a, ident).matrix, a.matrix,
                               atol=1e-12)


def test_rigid_motion_group_composition():
    p0 = PoseSE2(0.0, 0.0, 0.1)
    p1 = PoseSE2(0.8, -0.3, 0.5)
    p2 = PoseSE2(1.1, 0.4, -0.7)
    direct = warp.derive_transform(p0, p2, RES)
    chained = warp.compose(warp.derive_transform(p0, p1, RES),
                           warp.derive_transform(p1, p2, RES))
    np.testing.assert_allclose(direct.matrix, chained.matrix, atol=1e-9)


def test_pure_translation_never_creates_mass():
    data = gaussian_bump(cx=3.0, cy=1.0)
    for dx, dy in ((0.17, 0.0), (0.0, -0.53), (1.3, 0.61)):
        t = warp.derive_transform(PoseSE2(0, 0, 0), PoseSE2(dx, dy, 0.0), RES)
        out = warp.warp_array(data, t)
        assert out.sum() <= data.sum() + 1e-6


def test_derive_transform_identity_for_equal_poses():
    p = PoseSE2(3.0, -2.0, 0.7)
    t = warp.derive_transform(p, p, RES)
    np.testing.assert_allclose(t.matrix, np.eye(3), atol=1e-12)


def test_derive_transform_translation_in_previous_frame():
    # previous pose faces +y (yaw pi/2); world motion +x appears as lateral -y
    t = warp.derive_transform(PoseSE2(0, 0, math.pi / 2),
                              PoseSE2(1.0, 0.0, math.pi / 2), RES)
    np.testing.assert_allclose(t.matrix[:2, 2], [0.0, -1.0 / RES], atol=1e-12)
    np.testing.assert_allclose(t.matrix[:2, :2], np.eye(2), atol=1e-12)


def test_derive_transform_rejects_bad_resolution():
    with pytest.raises(ValidationError):
        warp.derive_transform(PoseSE2(0, 0, 0), PoseSE2(0, 0, 0), 0.0)


def test_transform_validation():
    with pytest.raises(ValidationError):
        warp.AffineTransform2D(np.zeros((3, 3)))
    bad = np.eye(3)
    bad[2, 0] = 0.5
    with pytest.raises(ValidationError):
        warp.AffineTransform2D(bad)
    with pytest.raises(ValidationError):
        warp.AffineTransform2D(np.eye(2))


def test_transform_list_round_trip():
    t = warp.derive_transform(PoseSE2(0, 0, 0), PoseSE2(0.5, 0.1, 0.2), RES)
    again = warp.AffineTransform2D.from_list(t.to_list())
    np.testing.assert_allclose(again.matrix, t.matrix, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(-0.6, 0.6))
def test_warp_mass_and_positivity(dx, dy, dyaw):
    """Warping interior smooth content approximately preserves total mass."""
    data = gaussian_bump(cx=2.0, cy=-1.0)
    t = warp.derive_transform(PoseSE2(0, 0, 0), PoseSE2(dx, dy, dyaw), RES)
    out = warp.warp_array(data, t)
    assert out.sum() == pytest.approx(data.sum(), rel=0.02)
    assert out.min() >= -1e-12
    assert out.max() <= data.max() + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-0.5, 0.5),
       st.integers(0, 2 ** 31 - 1))
def test_warp_adjoint_identity(dx, dy, dyaw, seed):
    """<g, warp(x)> == <adjoint(g), x> for random g, x and pose transforms."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 10, 10))
    g = rng.normal(size=(2, 10, 10))
    t = warp.derive_transform(PoseSE2(0, 0, 0), PoseSE2(dx, dy, dyaw), RES)
    lhs = float(np.sum(g * warp.warp_array(x, t)))
    rhs = float(np.sum(warp.warp_adjoint(g, t) * x))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_warp_feature_advances_timestamp_and_sets_pose():
    data = gaussian_bump(h=16, w=16)
    f = FeatureMap(agent_id=1, timestamp=4, pose=PoseSE2(0, 0, 0), data=data,
                   resolution=RES)
    new_pose = PoseSE2(0.4, 0.0, 0.0)
    t = warp.derive_transform(f.pose, new_pose, RES)
    out = warp.warp_feature(f, t, new_pose=new_pose)
    assert out.timestamp == 5
    assert out.pose == new_pose
    assert out.resolution == RES


def test_out_of_bounds_reads_are_zero():
    data = np.ones((1, 8, 8))
    big_shift = warp.AffineTransform2D(np.array([[1.0, 0.0, 100.0],
                                                 [0.0, 1.0, 0.0],
                                                 [0.0, 0.0, 1.0]]))
    out = warp.warp_array(data, big_shift)
    assert np.all(out == 0.0)
