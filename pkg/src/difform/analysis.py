"""Per-voxel conditioning of the SSD cost and evaluation metrics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ValidationError
from .grid import DisplacementField, LabelImage, LandmarkSet, ScalarImage, downsample_image
from .interp import jacobian_det, sample_at

CONDITIONING_FACTORS = (1, 2, 4)
FOREGROUND_FRACTION = 0.01
KAPPA_THRESHOLD = 10.0
MIN_EIGENVALUE = 1e-12
HIST_EDGES = np.logspace(0, 8, 33)


def _central_gradient(a: np.ndarray) -> np.ndarray:
    g = np.gradient(a)
    return np.stack(g if isinstance(g, (list, tuple)) else [g])


def ssd_hessian_blocks(fixed: ScalarImage, moving: ScalarImage) -> np.ndarray:
    """H_i = 2 [grad M grad M^T + (M - F) Hess M] at phi = id, shape (d, d, *dims).

    Derivatives of the moving image are central differences (one-sided at
    the border), the Hessian being the central difference of the gradient.
    """
    if fixed.meta.dims != moving.meta.dims:
        raise ValidationError(f"fixed {fixed.meta.dims} and moving {moving.meta.dims} must share a grid")
    M, F = moving.data, fixed.data
    g = _central_gradient(M)
    hess = np.stack([_central_gradient(gk) for gk in g])
    hess = 0.5 * (hess + np.swapaxes(hess, 0, 1))
    return 2.0 * (g[:, None] * g[None, :] + (M - F)[None, None] * hess)


@dataclass
class ConditioningLevel:
    factor: int
    kappa: np.ndarray          # NaN where undefined
    foreground: np.ndarray
    hist_counts: np.ndarray
    frac_above: float          # over foreground voxels with defined kappa
    n_foreground: int
    n_excluded: int


@dataclass
class ConditioningReport:
    levels: list = field(default_factory=list)
    threshold: float = KAPPA_THRESHOLD
    hist_edges: np.ndarray = field(default_factory=lambda: HIST_EDGES.copy())

    def level(self, factor) -> ConditioningLevel:
        for lv in self.levels:
            if lv.factor == factor:
                return lv
        raise KeyError(factor)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "foreground_rule": f"|I_fixed| > {FOREGROUND_FRACTION} * max|I_fixed|",
            "kappa_exclusion": f"|lambda_min| < {MIN_EIGENVALUE}",
            "threshold": self.threshold,
            "hist_edges": self.hist_edges.tolist(),
            "levels": [{
                "factor": lv.factor,
                "n_foreground": lv.n_foreground,
                "n_excluded": lv.n_excluded,
                "frac_above_threshold": lv.frac_above,
                "hist_counts": lv.hist_counts.tolist(),
            } for lv in self.levels],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hist_csv(self) -> str:
        lines = ["factor,bin_lo,bin_hi,count"]
        for lv in self.levels:
            for lo, hi, c in zip(self.hist_edges[:-1], self.hist_edges[1:], lv.hist_counts):
                lines.append(f"{lv.factor},{lo!r},{hi!r},{int(c)}")
        return "\n".join(lines) + "\n"


def condition_numbers(H: np.ndarray) -> np.ndarray:
    """|lambda_max| / |lambda_min| per voxel of symmetric blocks (d, d, *dims); NaN where undefined."""
    d = H.shape[0]
    blocks = np.moveaxis(H.reshape(d, d, -1), -1, 0)
    lam = np.abs(np.linalg.eigvalsh(blocks))
    lo, hi = lam.min(axis=1), lam.max(axis=1)
    kappa = np.full(lo.shape, np.nan)
    ok = lo >= MIN_EIGENVALUE
    kappa[ok] = hi[ok] / lo[ok]
    return kappa.reshape(H.shape[2:])


def _level_report(fixed, moving, factor):
    F = downsample_image(fixed, factor)
    M = downsample_image(moving, factor)
    kappa = condition_numbers(ssd_hessian_blocks(F, M))
    fg = np.abs(F.data) > FOREGROUND_FRACTION * np.abs(F.data).max()
    sel = fg & np.isfinite(kappa)
    counts, _ = np.histogram(np.clip(kappa[sel], HIST_EDGES[0], HIST_EDGES[-1]), bins=HIST_EDGES)
    frac = float(np.mean(kappa[sel] > KAPPA_THRESHOLD)) if sel.any() else 0.0
    return ConditioningLevel(factor, kappa, fg, counts, frac, int(fg.sum()), int((fg & ~np.isfinite(kappa)).sum()))


def conditioning_report(fixed: ScalarImage, moving: ScalarImage, factors=CONDITIONING_FACTORS) -> ConditioningReport:
    if fixed.meta != moving.meta:
        raise ValidationError("conditioning_report needs fixed and moving on the same grid")
    return ConditioningReport([_level_report(fixed, moving, f) for f in factors])


def singularity_fraction(phi: DisplacementField) -> float:
    """Fraction of voxels whose Jacobian determinant is <= 0."""
    return float(np.mean(jacobian_det(phi).data <= 0))


# ---------------------------------------------------------------------------
# overlap

@dataclass
class RegionOverlap:
    label: int
    source: int        # |S_r|, warped
    target: int        # |T_r|, fixed
    intersection: int
    TO: Fraction | None
    MO: Fraction
    FN: Fraction | None
    FP: Fraction | None
    VS: Fraction


def _mean(values):
    vals = [v for v in values if v is not None]
    return sum(vals, Fraction(0)) / len(vals) if vals else None


@dataclass
class OverlapReport:
    regions: list

    def _pooled(self):
        S = sum(r.source for r in self.regions)
        T = sum(r.target for r in self.regions)
        I = sum(r.intersection for r in self.regions)
        return S, T, I

    # mean aggregates: average of per-region scores over regions where defined
    @property
    def TO(self):
        return _mean(r.TO for r in self.regions)

    @property
    def MO(self):
        return _mean(r.MO for r in self.regions)

    @property
    def FN(self):
        return _mean(r.FN for r in self.regions)

    @property
    def FP(self):
        return _mean(r.FP for r in self.regions)

    @property
    def VS(self):
        return _mean(r.VS for r in self.regions)

    # pooled-sum aggregates
    @property
    def TO_Klein(self):
        _, T, I = self._pooled()
        return Fraction(I, T) if T else None

    @property
    def MO_Klein(self):
        S, T, I = self._pooled()
        return Fraction(2 * I, S + T) if S + T else None

    @property
    def FN_Klein(self):
        _, T, I = self._pooled()
        return Fraction(T - I, T) if T else None

    @property
    def FP_Klein(self):
        S, _, I = self._pooled()
        return Fraction(S - I, S) if S else None

    @property
    def VS_Klein(self):
        S, T, _ = self._pooled()
        return Fraction(2 * (S - T), S + T) if S + T else None

    def to_dict(self) -> dict:
        f = lambda v: None if v is None else float(v)  # noqa: E731
        names = ("TO", "MO", "FN", "FP", "VS")
        return {
            "schema_version": 1,
            "regions": [{"label": r.label, "source": r.source, "target": r.target,
                         "intersection": r.intersection, **{k: f(getattr(r, k)) for k in names}}
                        for r in self.regions],
            "mean": {k: f(getattr(self, k)) for k in names},
            "klein": {k: f(getattr(self, k + "_Klein")) for k in names},
        }


def overlap_report(warped: LabelImage, fixed: LabelImage) -> OverlapReport:
    """Region overlap of warped (source S) against fixed (target T) labels, in exact arithmetic."""
    if warped.meta.dims != fixed.meta.dims:
        raise ValidationError(f"label grids differ: {warped.meta.dims} vs {fixed.meta.dims}")
    S_all, T_all = warped.data.ravel(), fixed.data.ravel()
    labels = sorted((set(np.unique(S_all).tolist()) | set(np.unique(T_all).tolist())) - {0})
    regions = []
    for lab in labels:
        s = S_all == lab
        t = T_all == lab
        ns, nt, ni = int(s.sum()), int(t.sum()), int((s & t).sum())
        regions.append(RegionOverlap(
            label=int(lab), source=ns, target=nt, intersection=ni,
            TO=Fraction(ni, nt) if nt else None,
            MO=Fraction(2 * ni, ns + nt),
            FN=Fraction(nt - ni, nt) if nt else None,
            FP=Fraction(ns - ni, ns) if ns else None,
            VS=Fraction(2 * (ns - nt), ns + nt),
        ))
    return OverlapReport(regions)


# ---------------------------------------------------------------------------
# landmarks

@dataclass
class LandmarkReport:
    distances: np.ndarray   # millimetres, one per landmark pair
    ids: list

    @property
    def mean(self):
        return float(self.distances.mean()) if self.distances.size else 0.0

    @property
    def max(self):
        return float(self.distances.max()) if self.distances.size else 0.0

    def to_dict(self) -> dict:
        return {"schema_version": 1, "ids": list(self.ids), "distances_mm": self.distances.tolist(),
                "mean_mm": self.mean, "std_mm": float(self.distances.std()) if self.distances.size else 0.0,
                "max_mm": self.max}


def landmark_error(fixed_lm: LandmarkSet, moving_lm: LandmarkSet, phi: DisplacementField,
                   moving_meta=None) -> LandmarkReport:
    """Distance between phi(fixed landmark) and its moving counterpart, in millimetres.

    ``phi`` lives on the fixed grid and maps fixed voxel coordinates to moving
    voxel coordinates; ``moving_meta`` defaults to ``phi.meta``.
    """
    if len(fixed_lm) != len(moving_lm):
        raise ValidationError(f"landmark counts differ: {len(fixed_lm)} vs {len(moving_lm)}")
    meta = phi.meta
    moving_meta = moving_meta or meta
    d = meta.ndim
    if len(fixed_lm) == 0:
        return LandmarkReport(np.zeros(0), [])
    P = fixed_lm.points()
    Q = moving_lm.points()
    if P.shape[1] != d or Q.shape[1] != d:
        raise ValidationError(f"landmarks must have {d} coordinates")
    idx = meta.to_index(P)
    hi = np.array(meta.dims) - 1
    if np.any(idx < -1e-9) or np.any(idx > hi + 1e-9):
        raise ValidationError("fixed landmarks must lie inside the fixed grid")
    u = sample_at(phi.data, idx.T)
    mapped = moving_meta.to_physical((idx.T + u).T)
    dist = np.sqrt(np.sum((mapped - Q) ** 2, axis=1))
    return LandmarkReport(dist, [lm.id for lm in fixed_lm.landmarks])
