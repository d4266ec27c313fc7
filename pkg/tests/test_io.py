import numpy as np
import pytest

from idseg.data.io import available_splits, read_dataset, read_mask, write_dataset


def test_round_trip(tmp_path, small_samples):
    write_dataset(tmp_path, small_samples)
    back = read_dataset(tmp_path)
    assert [s.meta for s in back] == [s.meta for s in small_samples]
    for a, b in zip(back, small_samples):
        assert (a.image == b.image).all() and (a.mask == b.mask).all()
    on_disk = read_mask(next((tmp_path / "masks").rglob("*.png")))
    assert set(np.unique(on_disk)) <= {0, 1}
    header = (tmp_path / "meta.csv").read_text().splitlines()[0]
    assert header == "source_id,country_card,capture_source,split,width,height"
    assert available_splits(tmp_path) == {small_samples[0].meta.split}


def test_missing_meta(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_dataset(tmp_path)
