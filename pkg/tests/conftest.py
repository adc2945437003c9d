import numpy as np
import pytest

from difform import kernels
from difform.grid import DisplacementField, GridMeta, ScalarImage
from difform.interp import gaussian_smooth


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def smooth_random(rng, shape, sigma=1.0):
    return gaussian_smooth(rng.standard_normal(shape), (sigma,) * len(shape))


def random_image(rng, dims, sigma=1.0):
    a = smooth_random(rng, dims, sigma)
    return ScalarImage(GridMeta(dims), (a - a.min()) / (a.max() - a.min()))


def random_field(rng, dims, scale=1.0, sigma=1.5):
    d = len(dims)
    u = np.stack([smooth_random(rng, dims, sigma) for _ in range(d)])
    return DisplacementField(GridMeta(dims), scale * u / np.abs(u).max())


def fd_check(f, x, idx, h=1e-6):
    """Central differences of scalar f at flat indices ``idx`` of array x."""
    out = []
    for i in idx:
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        out.append((f(xp) - f(xm)) / (2 * h))
    return np.array(out)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=kernels.available_backends())
def backend(request, monkeypatch):
    monkeypatch.setattr(kernels, "BACKEND", request.param)
    return request.param


def kink_safe_step(coords, reach, h=1e-6):
    """Largest FD step <= h that keeps every sample on one linear piece.

    Linear interpolation is only piecewise smooth (kinks at integer
    coordinates), so a central difference straddling a kink is not a valid
    oracle. ``coords`` has shape (d, ...); ``reach`` bounds how far each
    coordinate moves per unit parameter change.
    """
    c = np.asarray(coords, dtype=np.float64)
    dist = np.abs(c - np.round(c)).reshape(len(c), -1).min(axis=1)
    return float(min(h, 0.5 * np.min(dist / np.asarray(reach, dtype=np.float64))))
