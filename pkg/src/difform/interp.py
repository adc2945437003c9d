"""Sampling, warping, composition, Jacobians, smoothing and field resampling.

All coordinates are voxel indices of the grid being sampled. Sampling clamps
to the volume edge, so every warp is total.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from . import kernels
from .errors import ValidationError
from .grid import DisplacementField, GridMeta, LabelImage, ScalarImage, identity_grid


@dataclass
class JacobianImage:
    meta: GridMeta
    data: np.ndarray  # (d, d, *dims); data[i, j] = d phi_i / d x_j


def _same_meta(a, b, what):
    if a.dims != b.dims:
        raise ValidationError(f"{what}: grid mismatch {a.dims} vs {b.dims}")


def sample_linear(img: ScalarImage, point) -> float:
    """Multilinear interpolation of ``img`` at one continuous voxel coordinate."""
    point = np.asarray(point, dtype=np.float64).reshape(-1, 1)
    if point.shape[0] != img.meta.ndim or not np.all(np.isfinite(point)):
        raise ValidationError("point must be a finite coordinate with one entry per axis")
    return float(kernels.sample(img.data[None], point)[0, 0])


def sample_at(vol: np.ndarray, coords: np.ndarray, want_grad=False):
    """Sample ``vol`` (``(C, *dims)``) at a coordinate grid ``coords`` (``(d, *shape)``).

    Returns values ``(C, *shape)`` and optionally derivatives ``(C, d, *shape)``.
    """
    shape = coords.shape[1:]
    flat = coords.reshape(coords.shape[0], -1)
    res = kernels.sample(vol, flat, want_grad)
    if want_grad:
        vals, grads = res
        return vals.reshape((vol.shape[0],) + shape), grads.reshape((vol.shape[0], coords.shape[0]) + shape)
    return res.reshape((vol.shape[0],) + shape)


def mapped_coords(phi: DisplacementField) -> np.ndarray:
    return identity_grid(phi.meta.dims) + phi.data


def warp_image(img: ScalarImage, phi: DisplacementField) -> ScalarImage:
    """(I o phi)(x) = I(x + u(x))."""
    _same_meta(img.meta, phi.meta, "warp_image")
    out = sample_at(img.data[None], mapped_coords(phi))[0]
    return ScalarImage(img.meta, out)


def warp_labels(labels: LabelImage, phi: DisplacementField) -> LabelImage:
    """Nearest-neighbour warp for label maps."""
    _same_meta(labels.meta, phi.meta, "warp_labels")
    coords = mapped_coords(phi)
    idx = []
    for a, n in enumerate(labels.meta.dims):
        # floor(x + 0.5) so ties round the same way everywhere
        idx.append(np.clip(np.floor(coords[a] + 0.5), 0, n - 1).astype(np.intp))
    return LabelImage(labels.meta, labels.data[tuple(idx)])


def compose(phi: DisplacementField, psi: DisplacementField) -> DisplacementField:
    """(phi o psi)(x) = phi(psi(x)); u_out = u_psi + u_phi(x + u_psi(x))."""
    _same_meta(phi.meta, psi.meta, "compose")
    inner = mapped_coords(psi)
    out = psi.data + sample_at(phi.data, inner)
    return type(psi)(psi.meta, out)


def jacobian(phi: DisplacementField) -> JacobianImage:
    """Per-voxel Jacobian of x + u(x) by central differences (one-sided at edges)."""
    d = phi.meta.ndim
    J = np.empty((d, d) + phi.meta.dims)
    for i in range(d):
        grads = np.gradient(phi.data[i])
        for j in range(d):
            J[i, j] = grads[j]
        J[i, i] += 1.0
    return JacobianImage(phi.meta, J)


def det_of(J: np.ndarray) -> np.ndarray:
    d = J.shape[0]
    if d == 2:
        return J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    return (J[0, 0] * (J[1, 1] * J[2, 2] - J[1, 2] * J[2, 1])
            - J[0, 1] * (J[1, 0] * J[2, 2] - J[1, 2] * J[2, 0])
            + J[0, 2] * (J[1, 0] * J[2, 1] - J[1, 1] * J[2, 0]))


def jacobian_det(phi: DisplacementField) -> ScalarImage:
    return ScalarImage(phi.meta, det_of(jacobian(phi).data))


def gaussian_taps(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3 * sigma))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (k / sigma) ** 2)
    return w / w.sum()


def gaussian_smooth(arr: np.ndarray, sigma) -> np.ndarray:
    """Separable truncated Gaussian over the trailing ``len(sigma)`` axes.

    Taps falling outside the volume are dropped and the remaining weights
    renormalised, so constants are preserved up to the boundary.
    """
    sigma = tuple(float(s) for s in np.atleast_1d(sigma))
    if any(s < 0 for s in sigma):
        raise ValidationError(f"sigma must be >= 0, got {sigma}")
    out = np.asarray(arr, dtype=np.float64)
    lead = out.ndim - len(sigma)
    for a, s in enumerate(sigma):
        if s == 0:
            continue
        w = gaussian_taps(s)
        axis = lead + a
        n = out.shape[axis]
        norm = correlate1d(np.ones(n), w, mode="constant", cval=0.0)
        shape = [1] * out.ndim
        shape[axis] = n
        out = correlate1d(out, w, axis=axis, mode="constant", cval=0.0) / norm.reshape(shape)
    if out is arr:
        out = out.copy()
    return out


def gaussian_smooth_field(f, sigma):
    """Smooth every component of a field (or a scalar image) with per-axis sigma in voxels."""
    d = f.meta.ndim
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (d,))
    return type(f)(f.meta, gaussian_smooth(f.data, sigma))


def _linear_matrix(old: int, new: int) -> np.ndarray:
    W = np.zeros((new, old))
    if new == 1:
        W[0, 0] = 1.0
        return W
    p = np.arange(new) * (old - 1) / (new - 1)
    b = np.minimum(np.floor(p), old - 2).astype(np.intp)
    f = p - b
    rows = np.arange(new)
    W[rows, b] += 1.0 - f
    W[rows, b + 1] += f
    return W


def _cubic_matrix(old: int, new: int) -> np.ndarray:
    """Catmull-Rom weights with clamped end taps."""
    W = np.zeros((new, old))
    p = np.arange(new) * (old - 1) / (new - 1)
    b = np.minimum(np.floor(p), old - 2).astype(np.intp)
    t = p - b
    weights = [
        0.5 * (-t ** 3 + 2 * t ** 2 - t),
        0.5 * (3 * t ** 3 - 5 * t ** 2 + 2),
        0.5 * (-3 * t ** 3 + 4 * t ** 2 + t),
        0.5 * (t ** 3 - t ** 2),
    ]
    rows = np.arange(new)
    for off, w in zip((-1, 0, 1, 2), weights):
        np.add.at(W, (rows, np.clip(b + off, 0, old - 1)), w)
    return W


def resample_array(vol: np.ndarray, new_dims, method="linear") -> np.ndarray:
    """Corner-aligned separable resampling of ``vol`` (``(C, *dims)``) onto ``new_dims``."""
    build = {"linear": _linear_matrix, "cubic": _cubic_matrix}.get(method)
    if build is None:
        raise ValidationError(f"unknown interpolation method {method!r}")
    out = np.asarray(vol, dtype=np.float64)
    for a, (old, new) in enumerate(zip(vol.shape[1:], new_dims)):
        if old == new:
            continue
        W = build(old, new)
        out = np.moveaxis(np.tensordot(W, np.moveaxis(out, a + 1, 0), axes=(1, 0)), 0, a + 1)
    return np.ascontiguousarray(out)


def axis_factors(old_dims, new_dims) -> np.ndarray:
    """Per-axis rescaling of voxel-unit displacements between corner-aligned grids."""
    return np.array([(n - 1) / (o - 1) for o, n in zip(old_dims, new_dims)])


def resample_field(phi: DisplacementField, new_meta: GridMeta, method="linear") -> DisplacementField:
    """Resample a field to another grid, keeping displacements in the new grid's voxel units."""
    if new_meta.ndim != phi.meta.ndim:
        raise ValidationError("dimensionality mismatch")
    if new_meta.dims == phi.meta.dims:
        return type(phi)(new_meta, phi.data.copy())
    scale = axis_factors(phi.meta.dims, new_meta.dims)
    data = resample_array(phi.data, new_meta.dims, method)
    data *= scale.reshape((-1,) + (1,) * new_meta.ndim)
    return type(phi)(new_meta, data)


def upsample_field(phi: DisplacementField, new_meta: GridMeta, method="linear") -> DisplacementField:
    """Interpolate a field onto a finer (or equal) grid; ``method`` is ``linear`` or ``cubic``."""
    if any(n < o for n, o in zip(new_meta.dims, phi.meta.dims)):
        raise ValidationError(f"upsample_field cannot shrink {phi.meta.dims} to {new_meta.dims}")
    return resample_field(phi, new_meta, method)
