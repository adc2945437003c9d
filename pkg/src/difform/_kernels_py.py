"""Pure-numpy reference kernels for linear sampling and its adjoint.

These are the fallback used when the compiled extension is unavailable, and
the ground truth the extension is tested against. Conventions shared by both
backends:

* ``vol`` has shape ``(C, *dims)``; ``coords`` has shape ``(d, N)`` in voxel
  index units; outputs are ``(C, N)``.
* Coordinates are clamped to ``[0, n-1]`` before interpolation.
* The positional derivative is the exact derivative of the interpolant. On a
  grid node (where the interpolant has a kink) it is the mean of the left and
  right slopes, which is what a symmetric finite difference sees. Outside
  the domain the clamped interpolant is flat, so the derivative is zero.
"""
from __future__ import annotations

import itertools

import numpy as np


def _axis_taps(p, n):
    pc = np.minimum(np.maximum(p, 0.0), n - 1.0)
    base = np.minimum(np.floor(pc), n - 2).astype(np.intp)
    frac = pc - base
    return pc, base, frac


def sample(vol, coords, want_grad=False):
    vol = np.ascontiguousarray(vol, dtype=np.float64)
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    d = coords.shape[0]
    dims = vol.shape[1:]
    C = vol.shape[0]
    flat = vol.reshape(C, -1)
    strides = np.array([int(np.prod(dims[a + 1:])) for a in range(d)], dtype=np.intp)

    bases, fracs = [], []
    for a in range(d):
        _, b, f = _axis_taps(coords[a], dims[a])
        bases.append(b)
        fracs.append(f)

    out = np.zeros((C, coords.shape[1]))
    for corner in itertools.product((0, 1), repeat=d):
        w = None
        idx = np.zeros(coords.shape[1], dtype=np.intp)
        for a, c in enumerate(corner):
            wa = fracs[a] if c else 1.0 - fracs[a]
            w = wa if w is None else w * wa
            idx += (bases[a] + c) * strides[a]
        out += w * flat[:, idx]
    if not want_grad:
        return out

    grad = np.zeros((C, d, coords.shape[1]))
    for a in range(d):
        n = dims[a]
        p = coords[a]
        pc, b, f = _axis_taps(p, n)
        inside = (p >= 0.0) & (p <= n - 1.0)
        node = inside & (pc == np.round(pc))
        k = np.round(pc).astype(np.intp)
        lo = np.where(node, np.maximum(k - 1, 0), b)
        hi = np.where(node, np.minimum(k + 1, n - 1), b + 1)
        coef = np.where(node, 0.5, 1.0) * inside
        for corner in itertools.product((0, 1), repeat=d - 1):
            others = [x for x in range(d) if x != a]
            w = coef.copy()
            off = np.zeros(coords.shape[1], dtype=np.intp)
            for o, c in zip(others, corner):
                w = w * (fracs[o] if c else 1.0 - fracs[o])
                off += (bases[o] + c) * strides[o]
            grad[:, a] += w * (flat[:, off + hi * strides[a]] - flat[:, off + lo * strides[a]])
    return out, grad


def scatter(cot, coords, dims):
    """Adjoint of :func:`sample` with respect to the volume values."""
    cot = np.ascontiguousarray(cot, dtype=np.float64)
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    d = coords.shape[0]
    C = cot.shape[0]
    strides = np.array([int(np.prod(dims[a + 1:])) for a in range(d)], dtype=np.intp)
    bases, fracs = [], []
    for a in range(d):
        _, b, f = _axis_taps(coords[a], dims[a])
        bases.append(b)
        fracs.append(f)
    out = np.zeros((C, int(np.prod(dims))))
    for corner in itertools.product((0, 1), repeat=d):
        w = None
        idx = np.zeros(coords.shape[1], dtype=np.intp)
        for a, c in enumerate(corner):
            wa = fracs[a] if c else 1.0 - fracs[a]
            w = wa if w is None else w * wa
            idx += (bases[a] + c) * strides[a]
        for ch in range(C):
            out[ch] += np.bincount(idx, weights=w * cot[ch], minlength=out.shape[1])
    return out.reshape((C,) + tuple(dims))
