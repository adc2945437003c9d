import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.ndimage import map_coordinates

from difform.errors import ValidationError
from difform.grid import DisplacementField, GridMeta, LabelImage, identity_grid
from difform.interp import (compose, gaussian_smooth, gaussian_taps, jacobian, jacobian_det, resample_array,
                            resample_field, upsample_field, warp_image, warp_labels)
from difform.synth import shear_field

from conftest import random_field, random_image


def test_warp_integer_shift_and_identity(rng):
    img = random_image(rng, (8, 7, 6))
    zero = DisplacementField(img.meta, np.zeros((3, 8, 7, 6)))
    assert np.array_equal(warp_image(img, zero).data, img.data)
    u = np.zeros((3, 8, 7, 6))
    u[1] = 2.0
    out = warp_image(img, DisplacementField(img.meta, u)).data
    assert np.allclose(out[:, :5], img.data[:, 2:])
    assert np.allclose(out[:, 5:], img.data[:, 6:7])  # clamped edge


def test_warp_labels_nearest(rng):
    lab = LabelImage(GridMeta((6, 6)), rng.integers(0, 4, (6, 6)))
    u = np.zeros((2, 6, 6))
    u[0] = 1.4
    out = warp_labels(lab, DisplacementField(lab.meta, u)).data
    assert np.array_equal(out[:5], lab.data[1:])
    u[0] = 0.5  # ties go up
    out = warp_labels(lab, DisplacementField(lab.meta, u)).data
    assert np.array_equal(out[:5], lab.data[1:])


def test_compose_against_pointwise_oracle(rng):
    dims = (9, 8, 7)
    phi = random_field(rng, dims, 1.5)
    psi = random_field(rng, dims, 1.5)
    out = compose(phi, psi).data
    x = identity_grid(dims) + psi.data
    clamped = np.stack([np.clip(x[a], 0, n - 1) for a, n in enumerate(dims)])
    ref = psi.data + np.stack([map_coordinates(phi.data[a], clamped, order=1, mode="nearest") for a in range(3)])
    assert np.allclose(out, ref, atol=1e-12)


def test_compose_with_identity(rng):
    phi = random_field(rng, (8, 8), 2.0)
    zero = DisplacementField(phi.meta, np.zeros_like(phi.data))
    assert np.allclose(compose(phi, zero).data, phi.data)
    assert np.allclose(compose(zero, phi).data, phi.data)


def test_jacobian_of_affine_field_is_exact():
    dims = (6, 7, 5)
    A = np.array([[1.2, 0.1, 0.0], [-0.2, 0.9, 0.3], [0.05, 0.0, 1.1]])
    x = identity_grid(dims)
    u = np.einsum("ij,j...->i...", A - np.eye(3), x) + 0.7
    J = jacobian(DisplacementField(GridMeta(dims), u)).data
    assert np.allclose(np.moveaxis(J, (0, 1), (-2, -1)), A)
    assert np.allclose(jacobian_det(DisplacementField(GridMeta(dims), u)).data, np.linalg.det(A))


def test_det_2d_hand_value():
    u = np.zeros((2, 5, 5))
    u[0] = 0.5 * identity_grid((5, 5))[1]  # du_x/dy = 0.5
    u[1] = -0.25 * identity_grid((5, 5))[0]  # du_y/dx = -0.25
    det = jacobian_det(DisplacementField(GridMeta((5, 5)), u)).data
    assert np.allclose(det, 1 - 0.5 * (-0.25))


def _brute_smooth_1d(a, sigma):
    w = gaussian_taps(sigma)
    r = len(w) // 2
    out = np.empty_like(a)
    for i in range(len(a)):
        num = den = 0.0
        for k in range(-r, r + 1):
            if 0 <= i + k < len(a):
                num += w[k + r] * a[i + k]
                den += w[k + r]
        out[i] = num / den
    return out


def test_gaussian_smooth_against_brute_force(rng):
    a = rng.standard_normal((11, 9))
    out = gaussian_smooth(a, (1.3, 0.7))
    ref = np.apply_along_axis(_brute_smooth_1d, 0, a, 1.3)
    ref = np.apply_along_axis(_brute_smooth_1d, 1, ref, 0.7)
    assert np.allclose(out, ref, atol=1e-13)


def test_gaussian_smooth_preserves_constants_and_leading_axes(rng):
    a = np.full((3, 6, 7), 2.5)
    assert np.allclose(gaussian_smooth(a, (2.0, 2.0)), 2.5)
    b = rng.standard_normal((2, 8, 8))
    out = gaussian_smooth(b, (1.0, 1.0))
    assert np.allclose(out[1], gaussian_smooth(b[1], (1.0, 1.0)))
    assert np.array_equal(gaussian_smooth(b, (0.0, 0.0)), b)
    with pytest.raises(ValidationError):
        gaussian_smooth(b, (-1.0, 1.0))


def test_gaussian_taps():
    w = gaussian_taps(1.0)
    assert len(w) == 7 and np.isclose(w.sum(), 1.0) and np.allclose(w, w[::-1])


def test_linear_resample_matches_scipy(rng):
    vol = rng.standard_normal((1, 5, 6, 4))
    new = (9, 11, 7)
    out = resample_array(vol, new, "linear")[0]
    grids = np.meshgrid(*[np.arange(n) * (o - 1) / (n - 1) for o, n in zip(vol.shape[1:], new)], indexing="ij")
    ref = map_coordinates(vol[0], np.stack(grids), order=1, mode="nearest")
    assert np.allclose(out, ref, atol=1e-12)


def test_cubic_reproduces_quadratics_in_interior():
    x = np.arange(10.0)
    f = 0.3 * x ** 2 - x + 2
    out = resample_array(f[None, :, None] * np.ones((1, 10, 2)), (19, 2), "cubic")[0, :, 0]
    xn = np.arange(19) * 9 / 18
    inner = (xn >= 1) & (xn <= 8)
    assert np.allclose(out[inner], (0.3 * xn ** 2 - xn + 2)[inner], atol=1e-12)


def test_resample_field_rescales_units():
    meta = GridMeta((5, 9))
    u = np.zeros((2, 5, 9))
    u[0], u[1] = 1.0, 2.0
    fine = resample_field(DisplacementField(meta, u), GridMeta((9, 17)))
    assert np.allclose(fine.data[0], 2.0) and np.allclose(fine.data[1], 4.0)
    with pytest.raises(ValidationError):
        upsample_field(fine, meta)
    with pytest.raises(ValidationError):
        resample_array(u, (3, 3), "spline")


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 9), st.integers(3, 9), st.floats(-3, 3), st.floats(-3, 3))
def test_upsampled_translation_stays_translation(nx, ny, tx, ty):
    meta = GridMeta((nx, ny))
    u = np.stack([np.full((nx, ny), tx), np.full((nx, ny), ty)])
    fine = upsample_field(DisplacementField(meta, u), GridMeta((2 * nx - 1, 2 * ny - 1)), "cubic")
    assert np.allclose(fine.data[0], 2 * tx) and np.allclose(fine.data[1], 2 * ty)


def test_shear_folds_only_under_cubic_upsampling():
    f = shear_field()
    assert np.all(jacobian_det(f).data > 0)
    n = f.meta.dims[0]
    fine = GridMeta((2 * n - 1, 2 * n - 1))
    lin = jacobian_det(upsample_field(f, fine, "linear")).data
    cub = jacobian_det(upsample_field(f, fine, "cubic")).data
    assert int(np.sum(lin <= 0)) == 0
    assert int(np.sum(cub <= 0)) >= 1
