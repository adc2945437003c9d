"""Synthetic phantoms, ground-truth warps and a hand-built shear field."""
from __future__ import annotations

import numpy as np

from .grid import DisplacementField, GridMeta, LabelImage, ScalarImage, identity_grid
from .interp import gaussian_smooth, jacobian_det

DETJ_BOUNDS = (0.5, 2.0)


def textured_phantom(dims, seed: int = 0, n_blobs: int = 8, texture_sigma: float = 1.0,
                     blob_weight: float = 0.3) -> ScalarImage:
    """Band-limited noise over the whole grid plus a few smooth blobs, scaled to [0, 1].

    Texture everywhere keeps the displacement identifiable at every voxel;
    flat backgrounds leave it undetermined and make endpoint errors meaningless.
    """
    rng = np.random.default_rng(seed)
    dims = tuple(int(n) for n in dims)
    d = len(dims)
    x = identity_grid(dims)
    n = np.array(dims, dtype=np.float64).reshape((d,) + (1,) * d)
    tex = gaussian_smooth(rng.standard_normal(dims), (texture_sigma,) * d)
    tex /= max(np.abs(tex).max(), 1e-12)
    blobs = np.zeros(dims)
    for _ in range(n_blobs):
        c = rng.uniform(0.2, 0.8, d).reshape((d,) + (1,) * d) * (n - 1)
        w = rng.uniform(0.08, 0.18) * min(dims)
        blobs += rng.uniform(0.5, 1.0) * np.exp(-np.sum((x - c) ** 2, axis=0) / (2 * w * w))
    blobs /= max(blobs.max(), 1e-12)
    img = tex + blob_weight * blobs
    img -= img.min()
    img /= max(img.max(), 1e-12)
    return ScalarImage(GridMeta(dims), img)


def label_phantom(img: ScalarImage, levels=(0.25, 0.5, 0.75)) -> LabelImage:
    """Threshold a phantom into nested integer regions."""
    lab = np.zeros(img.meta.dims, dtype=np.int32)
    for k, lv in enumerate(levels, start=1):
        lab[img.data > lv] = k
    return LabelImage(img.meta, lab)


def _gaussian_bumps(dims, rng, n_per_axis: int):
    d = len(dims)
    x = identity_grid(dims)
    n = np.array(dims, dtype=np.float64).reshape((d,) + (1,) * d)
    u = np.zeros((d,) + tuple(dims))
    for k in range(d):
        for _ in range(n_per_axis):
            c = rng.uniform(0.25, 0.75, d).reshape((d,) + (1,) * d) * (n - 1)
            w = rng.uniform(0.12, 0.22) * min(dims)
            a = rng.uniform(-1.0, 1.0)
            u[k] += a * np.exp(-np.sum((x - c) ** 2, axis=0) / (2 * w * w))
    return u


def random_warp(meta: GridMeta, seed: int = 0, n_per_axis: int = 3, max_amplitude: float = 3.0,
                bounds=DETJ_BOUNDS) -> DisplacementField:
    """Smooth ground-truth displacement: sum of random Gaussians per component.

    The raw field is rescaled so its peak displacement is ``max_amplitude``
    voxels, then shrunk by 0.9 until every Jacobian determinant lies in
    ``bounds``.
    """
    rng = np.random.default_rng(seed)
    u = _gaussian_bumps(meta.dims, rng, n_per_axis)
    peak = float(np.sqrt(np.max(np.sum(u * u, axis=0))))
    u *= max_amplitude / max(peak, 1e-12)
    lo, hi = bounds
    for _ in range(200):
        det = jacobian_det(DisplacementField(meta, u)).data
        if det.min() >= lo and det.max() <= hi:
            return DisplacementField(meta, u)
        u *= 0.9
    raise RuntimeError("could not bring the Jacobian determinant into bounds")  # unreachable for smooth fields


def shear_field(n: int = 32, amplitude: float = 1.0, back: float = 0.95, pattern_period: int = 4) -> DisplacementField:
    """2D field whose x-displacement zig-zags along x with a small backward slope.

    Consecutive x-differences follow the periodic pattern
    ``[+a, +a, -back*a, -back*a]``. Central differences on this grid never
    drop below -1, so detJ > 0, but cubic interpolation overshoots between the
    nodes and creates folds after 2x upsampling. The pattern is confined to
    the interior and tapered smoothly along y.
    """
    D = np.zeros(n - 1)
    lo, hi = n // 4, n - n // 4
    pattern = np.array([amplitude, amplitude, -back * amplitude, -back * amplitude])
    for i in range(lo, hi):
        D[i] = pattern[(i - lo) % pattern_period]
    ux = np.concatenate([[0.0], np.cumsum(D)])
    y = np.arange(n)
    taper = np.exp(-((y - (n - 1) / 2) ** 2) / (2 * (n / 5.0) ** 2))
    u = np.zeros((2, n, n))
    u[0] = ux[:, None] * taper[None, :]
    return DisplacementField(GridMeta((n, n)), u)


def synthetic_pair(seed: int, dims=(32, 32, 32), max_amplitude: float = 3.0):
    """(fixed, moving, phi_true) with fixed = moving o phi_true.

    Registering moving onto fixed should therefore recover phi_true.
    """
    from .interp import warp_image

    moving = textured_phantom(dims, seed)
    truth = random_warp(moving.meta, seed + 1000, max_amplitude=max_amplitude)
    return warp_image(moving, truth), moving, truth


def smooth_velocity(meta: GridMeta, seed: int = 0, sigma: float = 8.0, max_norm: float = 1.0) -> DisplacementField:
    """Band-limited random velocity with peak norm ``max_norm``, tangential at the grid faces.

    Component ``a`` is multiplied by sin(pi x_a / (n_a - 1)) so no flow
    crosses the boundary and exp(v) stays inside the grid.
    """
    rng = np.random.default_rng(seed)
    x = identity_grid(meta.dims)
    d = meta.ndim
    v = np.stack([np.sin(np.pi * x[a] / (meta.dims[a] - 1)) * gaussian_smooth(rng.standard_normal(meta.dims), (sigma,) * d)
                  for a in range(d)])
    v *= max_norm / max(float(np.sqrt(np.max(np.sum(v * v, axis=0)))), 1e-12)
    return DisplacementField(meta, v)
