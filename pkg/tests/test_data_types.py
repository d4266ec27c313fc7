import numpy as np
import pytest

from idseg.data.types import (
    CaptureSource,
    CountryCard,
    PolygonAnnotation,
    PolygonValidationError,
    Sample,
    SampleMeta,
    Split,
    validate_mask,
)


def test_enums_match_dataset_description():
    assert [c.value for c in CountryCard] == ["ARG1", "ARG2", "CHL1", "CHL2", "MEX"]
    assert [c.value for c in CaptureSource] == ["Digital", "Composite", "Printed", "Display"]
    assert [s.value for s in Split] == ["train", "val", "test"]


def test_meta_coerces_strings_and_rejects_unknown():
    m = SampleMeta("a", "MEX", "Printed", "val")
    assert m.country_card is CountryCard.MEX and m.split is Split.VAL
    with pytest.raises(ValueError):
        SampleMeta("a", "PER")


def test_sample_shape_and_label_checks():
    img = np.zeros((4, 5, 3), np.uint8)
    Sample(img, np.zeros((4, 5), np.uint8), SampleMeta("x"))
    with pytest.raises(ValueError):
        Sample(img, np.zeros((5, 4), np.uint8), SampleMeta("x"))
    with pytest.raises(ValueError):
        Sample(img, np.full((4, 5), 2, np.uint8), SampleMeta("x"))
    with pytest.raises(ValueError):
        Sample(img.astype(np.float32), np.zeros((4, 5), np.uint8), SampleMeta("x"))


def test_validate_mask():
    assert validate_mask(np.array([[0, 1]], bool)).dtype == np.uint8
    with pytest.raises(ValueError):
        validate_mask(np.zeros(3))


def test_polygon_needs_three_finite_points():
    with pytest.raises(PolygonValidationError):
        PolygonAnnotation([(0, 0), (1, 1)])
    with pytest.raises(PolygonValidationError):
        PolygonAnnotation([(0, 0), (1, np.nan), (2, 2)])
    p = PolygonAnnotation([(0, 0), (-5, 3), (1e4, 2)], "img")
    assert p.xs == [0, -5, 1e4]
