"""Affine pre-alignment by Adam on matrix and translation parameters."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .grid import DisplacementField, GridMeta, ScalarImage, downsample_image, identity_grid
from .optim import AdaptiveState, adam_step
from .similarity import get_loss

MIN_ABS_DET = 1e-3


@dataclass
class AffineTransform:
    """phi(x) = A x + t in voxel coordinates of the fixed grid."""

    A: np.ndarray
    t: np.ndarray
    meta: GridMeta | None = None

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        d = self.t.shape[0]
        if self.A.shape != (d, d):
            raise ValidationError(f"A must be {d}x{d}, got {self.A.shape}")

    @classmethod
    def identity(cls, d, meta=None):
        return cls(np.eye(d), np.zeros(d), meta)

    def inverse(self) -> "AffineTransform":
        if abs(np.linalg.det(self.A)) < MIN_ABS_DET:
            raise NumericalError("affine matrix is (nearly) singular", self)
        Ainv = np.linalg.inv(self.A)
        return AffineTransform(Ainv, -Ainv @ self.t, self.meta)

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": 1,
            "A": self.A.ravel().tolist(),
            "t": self.t.tolist(),
            "meta": self.meta.to_dict() if self.meta is not None else None,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AffineTransform":
        obj = json.loads(text)
        t = np.asarray(obj["t"], dtype=np.float64)
        A = np.asarray(obj["A"], dtype=np.float64).reshape(len(t), len(t))
        meta = GridMeta.from_dict(obj["meta"]) if obj.get("meta") else None
        return cls(A, t, meta)


def compose_affine(outer: AffineTransform, inner: AffineTransform) -> AffineTransform:
    """outer o inner."""
    return AffineTransform(outer.A @ inner.A, outer.A @ inner.t + outer.t, inner.meta)


def affine_to_field(T: AffineTransform, meta: GridMeta) -> DisplacementField:
    """u(x) = (A - I) x + t on the grid ``meta``."""
    d = meta.ndim
    x = identity_grid(meta.dims)
    u = np.einsum("ij,j...->i...", T.A - np.eye(d), x) + T.t.reshape((d,) + (1,) * d)
    return DisplacementField(meta, u)


# Parameters are optimised in normalised coordinates xn = (x - c) / h with
# c = h = (n - 1) / 2, so that they are independent of the pyramid level.

def _half_extent(dims):
    return np.array([(n - 1) / 2.0 for n in dims])


def _to_voxel(An, tn, dims) -> AffineTransform:
    h = _half_extent(dims)
    A = (h[:, None] * An) / h[None, :]
    t = h - A @ h + h * tn
    return AffineTransform(A, t)


def _from_voxel(T: AffineTransform, dims):
    h = _half_extent(dims)
    An = (T.A * h[None, :]) / h[:, None]
    tn = (T.t - h + T.A @ h) / h
    return An, tn


def affine_objective(fixed, moving, An, tn, loss_fn):
    """Loss and its gradient with respect to the normalised parameters."""
    dims = fixed.meta.dims
    d = len(dims)
    T = _to_voxel(An, tn, dims)
    ev = loss_fn(fixed, moving, affine_to_field(T, fixed.meta))
    h = _half_extent(dims)
    xn = (identity_grid(dims) - h.reshape((d,) + (1,) * d)) / h.reshape((d,) + (1,) * d)
    gh = ev.grad * h.reshape((d,) + (1,) * d)
    gA = gh.reshape(d, -1) @ xn.reshape(d, -1).T
    gt = gh.reshape(d, -1).sum(axis=1)
    return ev.value, gA, gt


def default_affine_loss(fixed: ScalarImage, moving: ScalarImage) -> str:
    """'dice' when both inputs are binary masks, 'lncc' otherwise."""
    binary = all(np.isin(img.data, (0.0, 1.0)).all() for img in (fixed, moving))
    return "dice" if binary else "lncc"


def affine_register(fixed: ScalarImage, moving: ScalarImage, loss: str = "auto", iters=200, eta: float = 0.01,
                    scales=(1,), window_radius: int = 2, init: AffineTransform | None = None,
                    betas=(0.9, 0.999)) -> AffineTransform:
    """Fit phi(x) = A x + t minimising ``loss`` between ``fixed`` and ``moving o phi``.

    ``loss="auto"`` picks soft Dice for binary masks and LNCC for intensities.

    Runs coarse to fine over ``scales`` with ``iters`` iterations per scale
    (an int or one count per scale). Returns the lowest-loss iterate seen at
    the finest scale.
    """
    if fixed.meta.dims != moving.meta.dims:
        raise ValidationError("fixed and moving images must share a grid for affine registration")
    scales = list(scales)
    iters = [int(iters)] * len(scales) if np.isscalar(iters) else [int(i) for i in iters]
    if len(iters) != len(scales):
        raise ValidationError("need one iteration count per scale")
    if loss == "auto":
        loss = default_affine_loss(fixed, moving)
    loss_fn = get_loss(loss, window_radius)
    d = fixed.meta.ndim
    if init is None:
        An, tn = np.eye(d), np.zeros(d)
    else:
        An, tn = _from_voxel(init, fixed.meta.dims)
    state = AdaptiveState.zeros(d * d + d, beta1=betas[0], beta2=betas[1])
    best = (math.inf, An.copy(), tn.copy())
    for level, (s, T_k) in enumerate(zip(scales, iters)):
        F = downsample_image(fixed, s)
        M = downsample_image(moving, s)
        last = level == len(scales) - 1
        for _ in range(T_k):
            value, gA, gt = affine_objective(F, M, An, tn, loss_fn)
            if not (math.isfinite(value) and np.all(np.isfinite(gA)) and np.all(np.isfinite(gt))):
                raise NumericalError("affine loss became non-finite", _to_voxel(An, tn, fixed.meta.dims))
            if last and value < best[0]:
                best = (value, An.copy(), tn.copy())
            step = adam_step(state, -np.concatenate([gA.ravel(), gt]))
            An = An + eta * step[: d * d].reshape(d, d)
            tn = tn + eta * step[d * d:]
        if last:
            value, _, _ = affine_objective(F, M, An, tn, loss_fn)
            if math.isfinite(value) and value < best[0]:
                best = (value, An.copy(), tn.copy())
    if not math.isfinite(best[0]):
        best = (best[0], An, tn)
    T = _to_voxel(best[1], best[2], fixed.meta.dims)
    T.meta = fixed.meta
    if abs(np.linalg.det(T.A)) < MIN_ABS_DET:
        raise NumericalError("affine registration collapsed (|det A| < 1e-3)", T)
    return T
