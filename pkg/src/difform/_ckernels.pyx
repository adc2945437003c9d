# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled linear sampling and scatter kernels.

Same conventions as ``_kernels_py``: clamp-to-edge coordinates, exact
interpolant derivative with left/right slope averaging on grid nodes.
Sampling is parallel over points (each output written by one thread);
scatter is serial so accumulation order is fixed.
"""
import numpy as np
cimport numpy as cnp
from cython.parallel cimport prange
from libc.math cimport floor, round

cnp.import_array()


cdef inline void _taps(double p, Py_ssize_t n, Py_ssize_t* b, double* f) noexcept nogil:
    cdef double pc = p
    if pc < 0.0:
        pc = 0.0
    if pc > n - 1.0:
        pc = n - 1.0
    cdef Py_ssize_t base = <Py_ssize_t>floor(pc)
    if base > n - 2:
        base = n - 2
    b[0] = base
    f[0] = pc - base


cdef inline void _dtaps(double p, Py_ssize_t n, Py_ssize_t* lo, Py_ssize_t* hi, double* coef) noexcept nogil:
    cdef double pc
    cdef Py_ssize_t base, k
    if p < 0.0 or p > n - 1.0:
        lo[0] = 0
        hi[0] = 0
        coef[0] = 0.0
        return
    pc = p
    if pc == round(pc):
        k = <Py_ssize_t>round(pc)
        lo[0] = k - 1 if k > 0 else 0
        hi[0] = k + 1 if k < n - 1 else n - 1
        coef[0] = 0.5
    else:
        base = <Py_ssize_t>floor(pc)
        if base > n - 2:
            base = n - 2
        lo[0] = base
        hi[0] = base + 1
        coef[0] = 1.0


def sample3(double[:, :, :, ::1] vol, double[:, ::1] coords, bint want_grad, int nthreads):
    cdef Py_ssize_t C = vol.shape[0], nx = vol.shape[1], ny = vol.shape[2], nz = vol.shape[3]
    cdef Py_ssize_t N = coords.shape[1]
    out_arr = np.zeros((C, N))
    grad_arr = np.zeros((C, 3, N)) if want_grad else np.zeros((1, 3, 1))
    cdef double[:, ::1] out = out_arr
    cdef double[:, :, ::1] grad = grad_arr
    cdef Py_ssize_t i, c, bx, by, bz, lo, hi
    cdef double fx, fy, fz, gx, gy, gz, w000, w001, w010, w011, w100, w101, w110, w111, coef, acc
    for i in prange(N, nogil=True, num_threads=nthreads, schedule="static"):
        _taps(coords[0, i], nx, &bx, &fx)
        _taps(coords[1, i], ny, &by, &fy)
        _taps(coords[2, i], nz, &bz, &fz)
        gx = 1.0 - fx
        gy = 1.0 - fy
        gz = 1.0 - fz
        w000 = gx * gy * gz
        w001 = gx * gy * fz
        w010 = gx * fy * gz
        w011 = gx * fy * fz
        w100 = fx * gy * gz
        w101 = fx * gy * fz
        w110 = fx * fy * gz
        w111 = fx * fy * fz
        for c in range(C):
            acc = 0.0
            acc = acc + w000 * vol[c, bx, by, bz]
            acc = acc + w001 * vol[c, bx, by, bz + 1]
            acc = acc + w010 * vol[c, bx, by + 1, bz]
            acc = acc + w011 * vol[c, bx, by + 1, bz + 1]
            acc = acc + w100 * vol[c, bx + 1, by, bz]
            acc = acc + w101 * vol[c, bx + 1, by, bz + 1]
            acc = acc + w110 * vol[c, bx + 1, by + 1, bz]
            acc = acc + w111 * vol[c, bx + 1, by + 1, bz + 1]
            out[c, i] = acc
        if want_grad:
            _dtaps(coords[0, i], nx, &lo, &hi, &coef)
            for c in range(C):
                acc = 0.0
                acc = acc + coef * gy * gz * (vol[c, hi, by, bz] - vol[c, lo, by, bz])
                acc = acc + coef * gy * fz * (vol[c, hi, by, bz + 1] - vol[c, lo, by, bz + 1])
                acc = acc + coef * fy * gz * (vol[c, hi, by + 1, bz] - vol[c, lo, by + 1, bz])
                acc = acc + coef * fy * fz * (vol[c, hi, by + 1, bz + 1] - vol[c, lo, by + 1, bz + 1])
                grad[c, 0, i] = acc
            _dtaps(coords[1, i], ny, &lo, &hi, &coef)
            for c in range(C):
                acc = 0.0
                acc = acc + coef * gx * gz * (vol[c, bx, hi, bz] - vol[c, bx, lo, bz])
                acc = acc + coef * gx * fz * (vol[c, bx, hi, bz + 1] - vol[c, bx, lo, bz + 1])
                acc = acc + coef * fx * gz * (vol[c, bx + 1, hi, bz] - vol[c, bx + 1, lo, bz])
                acc = acc + coef * fx * fz * (vol[c, bx + 1, hi, bz + 1] - vol[c, bx + 1, lo, bz + 1])
                grad[c, 1, i] = acc
            _dtaps(coords[2, i], nz, &lo, &hi, &coef)
            for c in range(C):
                acc = 0.0
                acc = acc + coef * gx * gy * (vol[c, bx, by, hi] - vol[c, bx, by, lo])
                acc = acc + coef * gx * fy * (vol[c, bx, by + 1, hi] - vol[c, bx, by + 1, lo])
                acc = acc + coef * fx * gy * (vol[c, bx + 1, by, hi] - vol[c, bx + 1, by, lo])
                acc = acc + coef * fx * fy * (vol[c, bx + 1, by + 1, hi] - vol[c, bx + 1, by + 1, lo])
                grad[c, 2, i] = acc
    if want_grad:
        return out_arr, grad_arr
    return out_arr


def sample2(double[:, :, ::1] vol, double[:, ::1] coords, bint want_grad, int nthreads):
    cdef Py_ssize_t C = vol.shape[0], nx = vol.shape[1], ny = vol.shape[2]
    cdef Py_ssize_t N = coords.shape[1]
    out_arr = np.zeros((C, N))
    grad_arr = np.zeros((C, 2, N)) if want_grad else np.zeros((1, 2, 1))
    cdef double[:, ::1] out = out_arr
    cdef double[:, :, ::1] grad = grad_arr
    cdef Py_ssize_t i, c, bx, by, lo, hi
    cdef double fx, fy, gx, gy, w00, w01, w10, w11, coef, acc
    for i in prange(N, nogil=True, num_threads=nthreads, schedule="static"):
        _taps(coords[0, i], nx, &bx, &fx)
        _taps(coords[1, i], ny, &by, &fy)
        gx = 1.0 - fx
        gy = 1.0 - fy
        w00 = gx * gy
        w01 = gx * fy
        w10 = fx * gy
        w11 = fx * fy
        for c in range(C):
            acc = 0.0
            acc = acc + w00 * vol[c, bx, by]
            acc = acc + w01 * vol[c, bx, by + 1]
            acc = acc + w10 * vol[c, bx + 1, by]
            acc = acc + w11 * vol[c, bx + 1, by + 1]
            out[c, i] = acc
        if want_grad:
            _dtaps(coords[0, i], nx, &lo, &hi, &coef)
            for c in range(C):
                acc = 0.0
                acc = acc + coef * gy * (vol[c, hi, by] - vol[c, lo, by])
                acc = acc + coef * fy * (vol[c, hi, by + 1] - vol[c, lo, by + 1])
                grad[c, 0, i] = acc
            _dtaps(coords[1, i], ny, &lo, &hi, &coef)
            for c in range(C):
                acc = 0.0
                acc = acc + coef * gx * (vol[c, bx, hi] - vol[c, bx, lo])
                acc = acc + coef * fx * (vol[c, bx + 1, hi] - vol[c, bx + 1, lo])
                grad[c, 1, i] = acc
    if want_grad:
        return out_arr, grad_arr
    return out_arr


def scatter3(double[:, ::1] cot, double[:, ::1] coords, Py_ssize_t nx, Py_ssize_t ny, Py_ssize_t nz):
    cdef Py_ssize_t C = cot.shape[0], N = coords.shape[1]
    out_arr = np.zeros((C, nx, ny, nz))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, c, bx, by, bz
    cdef double fx, fy, fz, gx, gy, gz, v
    with nogil:
        for i in range(N):
            _taps(coords[0, i], nx, &bx, &fx)
            _taps(coords[1, i], ny, &by, &fy)
            _taps(coords[2, i], nz, &bz, &fz)
            gx = 1.0 - fx
            gy = 1.0 - fy
            gz = 1.0 - fz
            for c in range(C):
                v = cot[c, i]
                out[c, bx, by, bz] += gx * gy * gz * v
                out[c, bx, by, bz + 1] += gx * gy * fz * v
                out[c, bx, by + 1, bz] += gx * fy * gz * v
                out[c, bx, by + 1, bz + 1] += gx * fy * fz * v
                out[c, bx + 1, by, bz] += fx * gy * gz * v
                out[c, bx + 1, by, bz + 1] += fx * gy * fz * v
                out[c, bx + 1, by + 1, bz] += fx * fy * gz * v
                out[c, bx + 1, by + 1, bz + 1] += fx * fy * fz * v
    return out_arr


def scatter2(double[:, ::1] cot, double[:, ::1] coords, Py_ssize_t nx, Py_ssize_t ny):
    cdef Py_ssize_t C = cot.shape[0], N = coords.shape[1]
    out_arr = np.zeros((C, nx, ny))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, c, bx, by
    cdef double fx, fy, gx, gy, v
    with nogil:
        for i in range(N):
            _taps(coords[0, i], nx, &bx, &fx)
            _taps(coords[1, i], ny, &by, &fy)
            gx = 1.0 - fx
            gy = 1.0 - fy
            for c in range(C):
                v = cot[c, i]
                out[c, bx, by] += gx * gy * v
                out[c, bx, by + 1] += gx * fy * v
                out[c, bx + 1, by] += fx * gy * v
                out[c, bx + 1, by + 1] += fx * fy * v
    return out_arr
