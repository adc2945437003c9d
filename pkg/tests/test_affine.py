import numpy as np
import pytest

from difform.affine import (AffineTransform, _from_voxel, _half_extent, _to_voxel, affine_objective, affine_register, default_affine_loss,
                            affine_to_field, compose_affine)
from difform.errors import NumericalError, ValidationError
from difform.grid import GridMeta, ScalarImage, identity_grid
from difform.interp import gaussian_smooth, warp_image
from difform.similarity import get_loss

from conftest import kink_safe_step, rel_err, random_image


@pytest.mark.parametrize("loss,tol", [("ssd", 1e-4), ("lncc", 1e-3)])
def test_affine_gradient_matches_fd(rng, loss, tol):
    dims = (8, 7, 6)
    F, M = random_image(rng, dims), random_image(rng, dims)
    An = np.eye(3) + 0.05 * rng.standard_normal((3, 3))
    tn = 0.05 * rng.standard_normal(3)
    fn = get_loss(loss, 2)
    _, gA, gt = affine_objective(F, M, An, tn, fn)
    h = kink_safe_step(identity_grid(dims) + affine_to_field(_to_voxel(An, tn, dims), F.meta).data, _half_extent(dims))
    fdA = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            E = np.zeros((3, 3))
            E[i, j] = h
            fdA[i, j] = (affine_objective(F, M, An + E, tn, fn)[0] - affine_objective(F, M, An - E, tn, fn)[0]) / (2 * h)
    fdt = np.array([(affine_objective(F, M, An, tn + h * e, fn)[0] - affine_objective(F, M, An, tn - h * e, fn)[0])
                    / (2 * h) for e in np.eye(3)])
    assert rel_err(np.concatenate([gA.ravel(), gt]), np.concatenate([fdA.ravel(), fdt])) < tol


def test_normalised_parameter_roundtrip(rng):
    dims = (9, 7, 5)
    T = AffineTransform(np.eye(3) + 0.1 * rng.standard_normal((3, 3)), rng.standard_normal(3))
    An, tn = _from_voxel(T, dims)
    back = _to_voxel(An, tn, dims)
    assert np.allclose(back.A, T.A) and np.allclose(back.t, T.t)
    ident = _to_voxel(np.eye(3), np.zeros(3), dims)
    assert np.allclose(ident.A, np.eye(3)) and np.allclose(ident.t, 0)


def test_affine_field_and_algebra(rng):
    meta = GridMeta((5, 6))
    T = AffineTransform(np.array([[1.1, 0.2], [0.0, 0.9]]), np.array([1.0, -2.0]), meta)
    u = affine_to_field(T, meta).data
    assert np.allclose(u[:, 3, 4], T.A @ [3, 4] + T.t - [3, 4])
    I = compose_affine(T, T.inverse())
    assert np.allclose(I.A, np.eye(2)) and np.allclose(I.t, 0)
    back = AffineTransform.from_json(T.to_json())
    assert np.array_equal(back.A, T.A) and np.array_equal(back.t, T.t) and back.meta == meta
    with pytest.raises(NumericalError):
        AffineTransform(np.zeros((2, 2)), np.zeros(2)).inverse()
    with pytest.raises(ValidationError):
        AffineTransform(np.eye(3), np.zeros(2))


def _shifted_pair(rng):
    dims = (16, 16, 16)
    base = gaussian_smooth(rng.standard_normal(dims), (1.5,) * 3)
    F = ScalarImage(GridMeta(dims), base)
    u = np.zeros((3,) + dims)
    u[0] = 3.0
    from difform.grid import DisplacementField
    M = ScalarImage(F.meta, base)
    # fixed(x) = moving(x + t) with t = (3, 0, 0)
    F = warp_image(M, DisplacementField(F.meta, u))
    return F, M


@pytest.mark.parametrize("loss", ["ssd", "lncc"])
def test_affine_recovers_translation(rng, loss):
    F, M = _shifted_pair(rng)
    T = affine_register(F, M, loss=loss, iters=200, eta=0.01)
    assert np.allclose(T.t, [3, 0, 0], atol=0.2)
    assert np.allclose(T.A, np.eye(3), atol=0.05)


def test_affine_identity_fixed_point(rng):
    F = random_image(rng, (10, 10, 10))
    T = affine_register(F, F, iters=20)
    assert np.allclose(T.A, np.eye(3)) and np.allclose(T.t, 0)


def test_affine_rejects_mismatched_grids(rng):
    with pytest.raises(ValidationError):
        affine_register(random_image(rng, (6, 6, 6)), random_image(rng, (6, 6, 7)))
    with pytest.raises(ValidationError):
        affine_register(random_image(rng, (6, 6, 6)), random_image(rng, (6, 6, 6)), scales=(2, 1), iters=(5,))


def test_default_loss_follows_input_kind(rng):
    F = random_image(rng, (6, 6, 6))
    mask = ScalarImage(F.meta, (F.data > 0.5).astype(float))
    assert default_affine_loss(F, F) == "lncc"
    assert default_affine_loss(mask, mask) == "dice"
    assert default_affine_loss(mask, F) == "lncc"
