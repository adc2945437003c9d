"""Similarity costs and their derivatives with respect to the warped coordinates.

Each ``*_eval`` returns a :class:`LossEval` whose ``grad`` is the exact
derivative of ``value`` with respect to phi(x) at every voxel, so it can be
checked directly against finite differences of ``value``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numpy as np

from .errors import ValidationError
from .grid import DisplacementField, ScalarImage
from .interp import mapped_coords, sample_at

LNCC_VAR_FLOOR = 1e-5
DICE_EPS = 1e-7


@dataclass
class LossEval:
    value: float
    grad: np.ndarray  # (d, *dims), d value / d phi(x)
    warped: np.ndarray | None = None


def _warp_with_grad(fixed, moving, phi):
    if fixed.meta.dims != phi.meta.dims or moving.meta.dims != phi.meta.dims:
        raise ValidationError(
            f"fixed {fixed.meta.dims}, moving {moving.meta.dims} and field {phi.meta.dims} must share a grid")
    vals, grads = sample_at(moving.data[None], mapped_coords(phi), want_grad=True)
    return vals[0], grads[0]


def ssd_eval(fixed: ScalarImage, moving: ScalarImage, phi: DisplacementField) -> LossEval:
    """Mean squared intensity difference between ``fixed`` and ``moving o phi``."""
    warped, dwarp = _warp_with_grad(fixed, moving, phi)
    resid = warped - fixed.data
    n = resid.size
    value = float(np.mean(resid * resid))
    grad = (2.0 / n) * resid[None] * dwarp
    return LossEval(value, grad, warped)


def box_sum(arr: np.ndarray, radius: int) -> np.ndarray:
    """Sum over the (2r+1)^d box around every voxel, truncated at the edges."""
    out = np.asarray(arr, dtype=np.float64)
    for axis in range(out.ndim):
        n = out.shape[axis]
        c = np.cumsum(out, axis=axis)
        pad = [(0, 0)] * out.ndim
        pad[axis] = (1, 0)
        c = np.pad(c, pad)
        hi = np.minimum(np.arange(n) + radius, n - 1) + 1
        lo = np.maximum(np.arange(n) - radius, 0)
        out = np.take(c, hi, axis=axis) - np.take(c, lo, axis=axis)
    return out


def lncc_terms(F: np.ndarray, M: np.ndarray, radius: int):
    """Windowed correlation pieces shared by value and gradient.

    Returns ``(cc2, alpha, beta, gamma)``: squared local correlation per
    voxel, and the per-window coefficients whose box sums give
    d(sum cc2)/dM. Degenerate windows are zeroed.
    """
    n = box_sum(np.ones_like(F), radius)
    sF, sM = box_sum(F, radius), box_sum(M, radius)
    sFF, sMM, sFM = box_sum(F * F, radius), box_sum(M * M, radius), box_sum(F * M, radius)
    muF, muM = sF / n, sM / n
    A = sFM - sF * muM
    B = sFF - sF * muF
    C = sMM - sM * muM
    ok = (B / n >= LNCC_VAR_FLOOR) & (C / n >= LNCC_VAR_FLOOR)
    Bs = np.where(ok, B, 1.0)
    Cs = np.where(ok, C, 1.0)
    cc2 = np.where(ok, A * A / (Bs * Cs), 0.0)
    alpha = np.where(ok, 2.0 * A / (Bs * Cs), 0.0)
    beta = alpha * np.where(ok, A / Cs, 0.0)
    gamma = beta * muM - alpha * muF
    return cc2, alpha, beta, gamma


def lncc_eval(fixed: ScalarImage, moving: ScalarImage, phi: DisplacementField, window_radius: int = 2) -> LossEval:
    """Negative mean squared local correlation over box windows of radius ``window_radius``."""
    r = int(window_radius)
    if r < 1:
        raise ValidationError("window_radius must be >= 1")
    if 2 * r + 1 > min(fixed.meta.dims):
        raise ValidationError(f"window of radius {r} does not fit in grid {fixed.meta.dims}")
    warped, dwarp = _warp_with_grad(fixed, moving, phi)
    F = fixed.data
    cc2, alpha, beta, gamma = lncc_terms(F, warped, r)
    N = F.size
    value = -float(np.mean(cc2))
    dM = -(F * box_sum(alpha, r) - warped * box_sum(beta, r) + box_sum(gamma, r)) / N
    return LossEval(value, dM[None] * dwarp, warped)


def _check_mask(img, name):
    if img.data.min() < 0 or img.data.max() > 1:
        raise ValidationError(f"{name} values must lie in [0, 1]")


def dice_soft_eval(fixed_mask: ScalarImage, moving_mask: ScalarImage, phi: DisplacementField) -> LossEval:
    """Soft Dice loss 1 - 2 sum(F M) / (sum F + sum M + eps)."""
    _check_mask(fixed_mask, "fixed_mask")
    _check_mask(moving_mask, "moving_mask")
    warped, dwarp = _warp_with_grad(fixed_mask, moving_mask, phi)
    F = fixed_mask.data
    inter = float(np.sum(F * warped))
    denom = float(np.sum(F) + np.sum(warped)) + DICE_EPS
    value = 1.0 - 2.0 * inter / denom
    dM = -2.0 * F / denom + 2.0 * inter / denom ** 2
    return LossEval(value, dM[None] * dwarp, warped)


LOSSES = ("ssd", "lncc", "dice")


def get_loss(name: str, window_radius: int = 2):
    if name == "ssd":
        return ssd_eval
    if name == "lncc":
        return partial(lncc_eval, window_radius=window_radius)
    if name == "dice":
        return dice_soft_eval
    raise ValidationError(f"unknown loss {name!r}; choose from {LOSSES}")
