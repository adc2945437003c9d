"""Group-structured updates: Eulerian descent, retraction, exponential map and its adjoint."""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import NumericalError, ValidationError
from .grid import DisplacementField, VelocityField, identity_grid
from .interp import gaussian_smooth, jacobian, sample_at

DEFAULT_STEP_CAP = 0.5


def _field_data(f):
    return f.data if isinstance(f, DisplacementField) else np.asarray(f, dtype=np.float64)


def eulerian_direction(grad, phi: DisplacementField, use_jac: bool = False) -> np.ndarray:
    """Descent direction in the tangent space at identity.

    ``use_jac=False`` gives the Jacobian-free direction -grad; otherwise
    -J(phi)^T grad, the steepest direction for right-composition updates.
    """
    g = _field_data(grad)
    if g.shape != phi.data.shape:
        raise ValidationError(f"gradient shape {g.shape} != field shape {phi.data.shape}")
    if not use_jac:
        return -g
    J = jacobian(phi).data
    return -np.einsum("ij...,i...->j...", J, g)


def cap_step(step: np.ndarray, cap: float) -> np.ndarray:
    """Uniformly rescale ``step`` so no voxel moves further than ``cap`` voxels."""
    if cap is None or cap <= 0:
        return step
    peak = float(np.sqrt(np.max(np.sum(step * step, axis=0))))
    if peak > cap:
        step = step * (cap / peak)
    return step


def apply_update(phi: DisplacementField, v, eta: float, sigma_warp=0.0, cap: float = DEFAULT_STEP_CAP):
    """phi o (id + eta v), with the step capped and the total displacement smoothed."""
    v = _field_data(v)
    if v.shape != phi.data.shape:
        raise ValidationError(f"direction shape {v.shape} != field shape {phi.data.shape}")
    if not np.all(np.isfinite(v)):
        raise NumericalError("non-finite descent direction", phi)
    step = cap_step(eta * v, cap)
    out = step + sample_at(phi.data, identity_grid(phi.meta.dims) + step)
    if np.any(np.asarray(sigma_warp) > 0):
        out = gaussian_smooth(out, np.broadcast_to(sigma_warp, (phi.meta.ndim,)))
    return type(phi)(phi.meta, out)


def _self_compose(u: np.ndarray, grid: np.ndarray) -> np.ndarray:
    return u + sample_at(u, grid + u)


def exp_map(v: VelocityField, M: int = 6) -> DisplacementField:
    """Scaling and squaring: start from id + v/2^M and self-compose M times."""
    if M < 0:
        raise ValidationError("number of squaring steps must be >= 0")
    grid = identity_grid(v.meta.dims)
    u = v.data / 2.0 ** M
    for _ in range(M):
        u = _self_compose(u, grid)
    return DisplacementField(v.meta, u)


def svf_pullback(v: VelocityField, grad_phi, M: int = 6) -> np.ndarray:
    """Gradient with respect to ``v`` of a loss whose gradient w.r.t. exp_map(v, M) is ``grad_phi``.

    Exact reverse-mode adjoint of the discrete recursion in :func:`exp_map`.
    """
    g = np.array(_field_data(grad_phi), dtype=np.float64)
    if g.shape != v.data.shape:
        raise ValidationError(f"gradient shape {g.shape} != velocity shape {v.data.shape}")
    dims = v.meta.dims
    grid = identity_grid(dims)
    us = [v.data / 2.0 ** M]
    for _ in range(M - 1):
        us.append(_self_compose(us[-1], grid))
    d = v.meta.ndim
    for u in reversed(us[:M]):
        coords = grid + u
        _, G = sample_at(u, coords, want_grad=True)
        through_point = np.einsum("ij...,i...->j...", G, g)
        through_values = kernels.scatter(g.reshape(d, -1), coords.reshape(d, -1), dims)
        g = g + through_point + through_values
    return g / 2.0 ** M
