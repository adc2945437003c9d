"""Grid-indexed containers for images, label maps, fields and landmarks.

Array layout: a volume with ``dims = (nx, ny[, nz])`` is stored as a numpy
array of that shape, so array axis ``k`` is spatial axis ``k``. Vector fields
carry a leading component axis, ``(d, nx, ny[, nz])``; component ``k`` is the
displacement along axis ``k`` in voxel-index units of the field's own grid.
File I/O converts to x-fastest ordering (see :mod:`difform.io`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class GridMeta:
    dims: tuple[int, ...]
    spacing: tuple[float, ...] = None
    origin: tuple[float, ...] = None

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        d = len(dims)
        spacing = (1.0,) * d if self.spacing is None else tuple(float(s) for s in self.spacing)
        origin = (0.0,) * d if self.origin is None else tuple(float(o) for o in self.origin)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        self.validate()

    def validate(self):
        d = len(self.dims)
        if d not in (2, 3):
            raise ValidationError(f"only 2D and 3D grids are supported, got {d} axes")
        if len(self.spacing) != d or len(self.origin) != d:
            raise ValidationError("dims, spacing and origin must have the same length")
        if any(n < 2 for n in self.dims):
            raise ValidationError(f"every axis needs at least 2 samples, got dims={self.dims}")
        if not all(s > 0 and math.isfinite(s) for s in self.spacing):
            raise ValidationError(f"spacing must be strictly positive, got {self.spacing}")
        if not all(math.isfinite(o) for o in self.origin):
            raise ValidationError(f"origin must be finite, got {self.origin}")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def with_dims(self, dims: Sequence[int]) -> "GridMeta":
        """Same physical extent sampled with ``dims`` points per axis."""
        dims = tuple(int(n) for n in dims)
        spacing = tuple(s * o / n for s, o, n in zip(self.spacing, self.dims, dims))
        return GridMeta(dims, spacing, self.origin)

    def to_physical(self, index) -> np.ndarray:
        """Voxel-index coordinates (..., d) to millimetres."""
        return np.asarray(self.origin) + np.asarray(self.spacing) * np.asarray(index, dtype=np.float64)

    def to_index(self, point) -> np.ndarray:
        return (np.asarray(point, dtype=np.float64) - np.asarray(self.origin)) / np.asarray(self.spacing)

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "spacing": list(self.spacing), "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridMeta":
        return cls(tuple(d["dims"]), tuple(d["spacing"]), tuple(d["origin"]))


def _check_meta(meta):
    if not isinstance(meta, GridMeta):
        raise ValidationError(f"expected GridMeta, got {type(meta).__name__}")


@dataclass
class ScalarImage:
    meta: GridMeta
    data: np.ndarray

    def __post_init__(self):
        _check_meta(self.meta)
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != self.meta.dims:
            raise ValidationError(f"image data shape {self.data.shape} != dims {self.meta.dims}")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("image contains non-finite values")

    def copy(self) -> "ScalarImage":
        return ScalarImage(self.meta, self.data.copy())


@dataclass
class LabelImage:
    meta: GridMeta
    data: np.ndarray

    def __post_init__(self):
        _check_meta(self.meta)
        data = np.asarray(self.data)
        if data.shape != self.meta.dims:
            raise ValidationError(f"label data shape {data.shape} != dims {self.meta.dims}")
        if data.dtype.kind not in "iu":
            if not np.all(np.equal(np.mod(data, 1), 0)):
                raise ValidationError("labels must be integers")
            data = data.astype(np.int64)
        if data.size and data.min() < 0:
            raise ValidationError("labels must be non-negative")
        self.data = data


@dataclass
class DisplacementField:
    """phi(x) = x + u(x); ``data`` holds u with shape ``(d, *dims)``."""

    meta: GridMeta
    data: np.ndarray

    def __post_init__(self):
        _check_meta(self.meta)
        self.data = np.asarray(self.data, dtype=np.float64)
        expected = (self.meta.ndim,) + self.meta.dims
        if self.data.shape != expected:
            raise ValidationError(f"field data shape {self.data.shape} != {expected}")
        if not np.all(np.isfinite(self.data)):
            raise ValidationError("field contains non-finite values")

    def copy(self):
        return type(self)(self.meta, self.data.copy())


class VelocityField(DisplacementField):
    """Stationary velocity field; same layout as a displacement field."""


@dataclass
class Landmark:
    point: tuple[float, ...]
    id: str | None = None


@dataclass
class LandmarkSet:
    landmarks: list[Landmark] = field(default_factory=list)

    def __post_init__(self):
        for lm in self.landmarks:
            if not all(math.isfinite(c) for c in lm.point):
                raise ValidationError(f"landmark {lm.id!r} has non-finite coordinates")

    def __len__(self):
        return len(self.landmarks)

    def points(self) -> np.ndarray:
        return np.array([lm.point for lm in self.landmarks], dtype=np.float64)

    @classmethod
    def from_points(cls, points, ids=None) -> "LandmarkSet":
        points = np.asarray(points, dtype=np.float64)
        ids = ids if ids is not None else [str(i) for i in range(len(points))]
        return cls([Landmark(tuple(p), i) for p, i in zip(points, ids)])


def new_identity_field(meta: GridMeta) -> DisplacementField:
    _check_meta(meta)
    meta.validate()
    return DisplacementField(meta, np.zeros((meta.ndim,) + meta.dims))


def identity_grid(dims: Sequence[int]) -> np.ndarray:
    """Voxel-index coordinates, shape ``(d, *dims)``."""
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in dims], indexing="ij"))


def _per_axis(value, d, name):
    arr = np.broadcast_to(np.asarray(value, dtype=np.float64), (d,))
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    return tuple(float(v) for v in arr)


def downsample_image(img: ScalarImage, factor) -> ScalarImage:
    """Anti-aliased downsampling by ``factor`` (>= 1) per axis.

    Gaussian pre-blur with sigma = factor/2 voxels on every axis whose factor
    exceeds one, then linear resampling onto ``ceil(dims/factor)`` points with
    corner-aligned coordinates (first and last samples coincide).
    """
    from .interp import gaussian_smooth, resample_array

    meta = img.meta
    factor = _per_axis(factor, meta.ndim, "factor")
    if any(f < 1 for f in factor):
        raise ValidationError(f"downsample factor must be >= 1, got {factor}")
    if all(f == 1 for f in factor):
        return ScalarImage(meta, img.data.copy())
    new_dims = tuple(int(math.ceil(n / f)) for n, f in zip(meta.dims, factor))
    if any(n < 2 for n in new_dims):
        raise ValidationError(f"downsampling {meta.dims} by {factor} leaves fewer than 2 samples")
    sigma = tuple(f / 2 if f > 1 else 0.0 for f in factor)
    blurred = gaussian_smooth(img.data, sigma)
    out = resample_array(blurred[None], new_dims)[0]
    return ScalarImage(meta.with_dims(new_dims), out)
