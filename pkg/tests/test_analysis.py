from fractions import Fraction

import numpy as np
import pytest

from difform.analysis import (HIST_EDGES, KAPPA_THRESHOLD, condition_numbers, conditioning_report, landmark_error,
                              overlap_report, singularity_fraction, ssd_hessian_blocks)
from difform.errors import ValidationError
from difform.grid import DisplacementField, GridMeta, LabelImage, LandmarkSet, ScalarImage, identity_grid
from difform.interp import sample_at
from difform.pipeline import PyramidSchedule, RegistrationConfig, register
from difform.synth import synthetic_pair, textured_phantom

# moving image: an analytic quadratic, so central differences are exact in the interior
COEF = np.array([0.3, -0.2, 0.5, 0.1, 0.05, -0.07, 0.02, 0.04, -0.03])


def quad(p):
    x, y, z = p
    a = COEF
    return (a[0] * x * x + a[1] * y * y + a[2] * z * z + a[3] * x * y + a[4] * y * z + a[5] * x * z
            + a[6] * x + a[7] * y + a[8] * z)


def test_hessian_blocks_match_finite_differences():
    dims = (8, 9, 7)
    X = identity_grid(dims)
    M = ScalarImage(GridMeta(dims), quad(X))
    rng = np.random.default_rng(3)
    F = ScalarImage(GridMeta(dims), rng.normal(size=dims))
    H = ssd_hessian_blocks(F, M)
    h = 1e-3
    for idx in [(2, 2, 2), (3, 4, 4), (5, 6, 4), (4, 3, 2)]:
        x0 = np.array(idx, dtype=float)
        f0 = F.data[idx]
        e = lambda u: (quad(x0 + u) - f0) ** 2  # noqa: E731
        fd = np.zeros((3, 3))
        for a in range(3):
            for b in range(3):
                ea, eb = np.eye(3)[a] * h, np.eye(3)[b] * h
                fd[a, b] = (e(ea + eb) - e(ea - eb) - e(-ea + eb) + e(-ea - eb)) / (4 * h * h)
        got = H[(slice(None), slice(None)) + idx]
        assert np.allclose(got, got.T)
        assert np.linalg.norm(got - fd) / np.linalg.norm(fd) < 1e-3


def test_condition_numbers_hand_values():
    H = np.zeros((2, 2, 3))
    H[:, :, 0] = np.diag([4.0, 1.0])
    H[:, :, 1] = np.diag([-3.0, 0.5])
    H[:, :, 2] = np.diag([1.0, 0.0])
    k = condition_numbers(H)
    assert k[0] == 4.0 and k[1] == 6.0 and np.isnan(k[2])


def test_quadratic_fixture_has_kappa_ten():
    dims = (16, 16, 16)
    x, y, z = identity_grid(dims)
    meta = GridMeta(dims)
    F = ScalarImage(meta, np.full(dims, 5.0))
    M = ScalarImage(meta, 6.0 + 1e-6 * (x * x + 10 * y * y + z * z))
    rep = conditioning_report(F, M, factors=(1,))
    kappa = rep.level(1).kappa[2:-2, 2:-2, 2:-2]
    assert abs(np.median(kappa) / 10.0 - 1) < 0.2


def test_textured_phantom_is_ill_conditioned():
    F = textured_phantom((32, 32, 32), seed=0)
    M = textured_phantom((32, 32, 32), seed=1)
    rep = conditioning_report(F, M)
    assert [lv.factor for lv in rep.levels] == [1, 2, 4]
    for lv in rep.levels:
        assert lv.frac_above > 0
        assert lv.hist_counts.sum() == lv.n_foreground - lv.n_excluded
        assert lv.hist_counts[np.searchsorted(HIST_EDGES, KAPPA_THRESHOLD):].sum() > 0
    d = rep.to_dict()
    assert d["schema_version"] == 1 and len(d["levels"]) == 3
    assert rep.hist_csv().count("\n") == 1 + 3 * (len(HIST_EDGES) - 1)
    with pytest.raises(ValidationError):
        conditioning_report(F, ScalarImage(GridMeta((16, 16, 16)), np.zeros((16, 16, 16))))


def test_singularity_fraction_fold_fixture():
    meta = GridMeta((6, 6, 6))
    u = np.zeros((3, 6, 6, 6))
    assert singularity_fraction(DisplacementField(meta, u)) == 0.0
    u[0, :, 2, 2] = -2.0 * np.arange(6)
    assert singularity_fraction(DisplacementField(meta, u)) == pytest.approx(6 / 216)
    t = np.zeros_like(u)
    t[1] = 1.3
    assert singularity_fraction(DisplacementField(meta, u + t)) == pytest.approx(6 / 216)


def test_overlap_hand_fixture():
    meta = GridMeta((4, 4, 4))
    fixed = np.zeros((4, 4, 4), dtype=np.int64)
    warped = np.zeros_like(fixed)
    fixed[:2, :2, :2] = 1            # 8 voxels
    warped[:1, :2, :2] = 1           # 4 voxels, all inside
    rep = overlap_report(LabelImage(meta, warped), LabelImage(meta, fixed))
    r = rep.regions[0]
    assert (r.source, r.target, r.intersection) == (4, 8, 4)
    assert r.TO == Fraction(1, 2) and r.MO == Fraction(2, 3)
    assert r.FN == Fraction(1, 2) and r.FP == 0 and r.VS == Fraction(-2, 3)
    same = overlap_report(LabelImage(meta, fixed), LabelImage(meta, fixed))
    assert same.MO == 1 and same.TO == 1 and same.FP == 0 and same.VS == 0


def test_overlap_klein_versus_mean():
    meta = GridMeta((8, 8, 8))
    fixed = np.zeros((8, 8, 8), dtype=np.int64)
    warped = np.zeros_like(fixed)
    fixed.reshape(-1)[:100] = 1
    warped.reshape(-1)[10:110] = 1    # |S|=100, |T|=100, |I|=90
    fixed.reshape(-1)[200:204] = 2
    warped.reshape(-1)[203:207] = 2   # |S|=4, |T|=4, |I|=1
    rep = overlap_report(LabelImage(meta, warped), LabelImage(meta, fixed))
    assert rep.TO == (Fraction(90, 100) + Fraction(1, 4)) / 2
    assert rep.TO_Klein == Fraction(91, 104)
    assert rep.MO_Klein == Fraction(2 * 91, 208)
    assert rep.FN_Klein == Fraction(13, 104) and rep.FP_Klein == Fraction(13, 104)
    assert rep.VS_Klein == 0
    assert rep.TO != rep.TO_Klein
    d = rep.to_dict()
    assert d["klein"]["TO"] == pytest.approx(91 / 104)


def test_overlap_undefined_cases():
    meta = GridMeta((4, 4, 4))
    fixed = np.zeros((4, 4, 4), dtype=np.int64)
    warped = np.zeros_like(fixed)
    warped[0, 0, 0] = 3               # region only in the source
    rep = overlap_report(LabelImage(meta, warped), LabelImage(meta, fixed))
    r = rep.regions[0]
    assert r.TO is None and r.FN is None and r.FP == 1 and r.MO == 0 and r.VS == 2
    assert rep.TO is None
    with pytest.raises(ValidationError):
        overlap_report(LabelImage(meta, warped), LabelImage(GridMeta((4, 4, 5)), np.zeros((4, 4, 5), int)))


def test_landmarks_identity_and_shift():
    meta = GridMeta((10, 10, 10), spacing=(1.5, 1.0, 1.0), origin=(-3.0, 0.0, 2.0))
    pts = meta.to_physical(np.array([[2.0, 3.0, 4.0], [5.5, 1.0, 7.25]]))
    lm = LandmarkSet.from_points(pts)
    u = np.zeros((3, 10, 10, 10))
    assert landmark_error(lm, lm, DisplacementField(meta, u)).max == 0.0
    u[0] = 2.0
    rep = landmark_error(lm, lm, DisplacementField(meta, u))
    assert np.allclose(rep.distances, 3.0)
    with pytest.raises(ValidationError):
        landmark_error(lm, LandmarkSet.from_points(pts[:1]), DisplacementField(meta, u))
    with pytest.raises(ValidationError):
        far = LandmarkSet.from_points(pts + 100)
        landmark_error(far, far, DisplacementField(meta, u))


def test_landmark_error_drops_after_registration():
    fixed, moving, truth = synthetic_pair(2)
    rng = np.random.default_rng(0)
    idx = rng.uniform(6, 25, size=(20, 3))
    fixed_lm = LandmarkSet.from_points(fixed.meta.to_physical(idx))
    moved = idx + sample_at(truth.data, idx.T).T
    moving_lm = LandmarkSet.from_points(moving.meta.to_physical(moved))
    before = landmark_error(fixed_lm, moving_lm, DisplacementField(fixed.meta, np.zeros_like(truth.data)))
    phi, _ = register(fixed, moving, RegistrationConfig(), PyramidSchedule())
    after = landmark_error(fixed_lm, moving_lm, phi)
    assert after.mean <= 0.2 * before.mean
