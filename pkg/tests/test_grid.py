import numpy as np
import pytest

from difform.errors import ValidationError
from difform.grid import (DisplacementField, GridMeta, LabelImage, LandmarkSet, ScalarImage, downsample_image,
                          identity_grid, new_identity_field)


def test_meta_defaults_and_validation():
    m = GridMeta((4, 5, 6))
    assert m.spacing == (1.0, 1.0, 1.0) and m.origin == (0.0, 0.0, 0.0)
    assert m.ndim == 3 and m.size == 120
    for bad in [dict(dims=(4,)), dict(dims=(1, 4)), dict(dims=(4, 4), spacing=(1, 0)),
                dict(dims=(4, 4), spacing=(1, float("nan"))), dict(dims=(4, 4, 4, 4))]:
        with pytest.raises(ValidationError):
            GridMeta(**bad)


def test_meta_dict_roundtrip_and_physical():
    m = GridMeta((4, 6), (1.5, 0.5), (10.0, -2.0))
    assert GridMeta.from_dict(m.to_dict()) == m
    assert np.allclose(m.to_physical([2, 4]), [13.0, 0.0])
    assert np.allclose(m.to_index(m.to_physical([[1, 2], [3, 5]])), [[1, 2], [3, 5]])


def test_with_dims_keeps_extent():
    m = GridMeta((32, 16), (1.0, 2.0))
    c = m.with_dims((8, 4))
    assert c.spacing == (4.0, 8.0)


def test_containers_reject_bad_data():
    m = GridMeta((3, 3))
    with pytest.raises(ValidationError):
        ScalarImage(m, np.zeros((3, 4)))
    with pytest.raises(ValidationError):
        ScalarImage(m, np.full((3, 3), np.inf))
    with pytest.raises(ValidationError):
        LabelImage(m, -np.ones((3, 3), dtype=int))
    with pytest.raises(ValidationError):
        LabelImage(m, np.full((3, 3), 0.5))
    with pytest.raises(ValidationError):
        DisplacementField(m, np.zeros((3, 3, 3)))
    with pytest.raises(ValidationError):
        LandmarkSet.from_points([[0.0, np.nan]])


def test_identity():
    m = GridMeta((3, 4, 5))
    assert not new_identity_field(m).data.any()
    g = identity_grid((3, 4))
    assert g.shape == (2, 3, 4)
    assert g[0, 2, 1] == 2 and g[1, 2, 1] == 1


def test_downsample_shapes_and_constant():
    img = ScalarImage(GridMeta((32, 17, 9)), np.full((32, 17, 9), 3.0))
    small = downsample_image(img, 4)
    assert small.meta.dims == (8, 5, 3)
    assert np.allclose(small.data, 3.0)
    assert downsample_image(img, 1).data is not img.data
    with pytest.raises(ValidationError):
        downsample_image(img, 0.5)
