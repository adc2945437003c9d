"""First-order optimizer states for descent directions in the tangent space at identity.

Directions are plain arrays; for dense fields they have shape ``(d, *dims)``
and the state lives on the same grid. The affine stage reuses the same
recurrences on a flat parameter vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .grid import GridMeta
from .interp import axis_factors, resample_array


@dataclass
class AdaptiveState:
    m: np.ndarray
    nu: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    meta: GridMeta | None = None

    @classmethod
    def zeros(cls, shape, meta=None, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros(shape), np.zeros(shape), 0, beta1, beta2, eps, meta)

    def copy(self):
        return AdaptiveState(self.m.copy(), self.nu.copy(), self.t, self.beta1, self.beta2, self.eps, self.meta)


def adam_step(state: AdaptiveState, v: np.ndarray) -> np.ndarray:
    """Advance ``state`` with direction ``v`` and return the bias-corrected Adam direction.

    The returned array points along ``v`` (a descent direction), so the caller
    applies it with a positive step size.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != state.m.shape:
        raise ValidationError(f"direction shape {v.shape} != optimizer state shape {state.m.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * v
    state.nu *= b2
    state.nu += (1.0 - b2) * (v * v)
    m_hat = state.m / (1.0 - b1 ** state.t)
    nu_hat = state.nu / (1.0 - b2 ** state.t)
    return m_hat / (np.sqrt(nu_hat) + state.eps)


@dataclass
class MomentumState:
    buf: np.ndarray | None = None


def sgd_step(state: MomentumState | None, v: np.ndarray, momentum_coeff: float = 0.0) -> np.ndarray:
    """Plain or heavy-ball direction: buf <- mu * buf + v, returned as the step direction."""
    v = np.asarray(v, dtype=np.float64)
    if momentum_coeff == 0 or state is None:
        return v.copy()
    if state.buf is None:
        state.buf = v.copy()
    else:
        state.buf = momentum_coeff * state.buf + v
    return state.buf.copy()


def upsample_state(state: AdaptiveState, new_meta: GridMeta) -> AdaptiveState:
    """Carry Adam moments to a finer grid.

    First moments transform like displacements (scaled per axis by the grid
    ratio); second moments by the squared ratio. Linear interpolation keeps
    ``nu`` non-negative.
    """
    old_dims = state.m.shape[1:]
    if len(old_dims) != new_meta.ndim:
        raise ValidationError("state dimensionality does not match new grid")
    if any(n < o for n, o in zip(new_meta.dims, old_dims)):
        raise ValidationError(f"upsample_state cannot shrink {old_dims} to {new_meta.dims}")
    if tuple(old_dims) == new_meta.dims:
        out = state.copy()
        out.meta = new_meta
        return out
    scale = axis_factors(old_dims, new_meta.dims).reshape((-1,) + (1,) * new_meta.ndim)
    m = resample_array(state.m, new_meta.dims) * scale
    nu = resample_array(state.nu, new_meta.dims) * scale ** 2
    return AdaptiveState(m, nu, state.t, state.beta1, state.beta2, state.eps, new_meta)
