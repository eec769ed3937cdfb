import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meno.dataset_io import MAGIC, DatasetFormatError, read_dataset, write_dataset
from meno.field import Quantity, Split, TrajectorySet


def _ts(seed=0, b=2, t=3, h=8, w=8):
    arr = np.random.default_rng(seed).standard_normal((b, t, h, w)).astype(np.float32)
    return TrajectorySet(arr, 0.25, 1.0, Quantity.ORDER_PARAMETER, Split.TRAIN, "test:abc")


def test_round_trip_bit_identical(tmp_path):
    ts = _ts()
    path = tmp_path / "d.meno"
    write_dataset(ts, path)
    back = read_dataset(path)
    assert np.array_equal(back.trajectories, ts.trajectories)
    assert back.dt == ts.dt
    assert back.domain_size == ts.domain_size
    assert back.quantity == ts.quantity
    assert back.split == ts.split
    assert back.provenance == ts.provenance


@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(2, 5))
@settings(max_examples=15, deadline=None)
def test_round_trip_random_shapes(tmp_path_factory, seed, b, t):
    ts = _ts(seed=seed, b=b, t=t)
    path = tmp_path_factory.mktemp("ds") / "d.meno"
    write_dataset(ts, path)
    assert np.array_equal(read_dataset(path).trajectories, ts.trajectories)


def test_corrupted_magic(tmp_path):
    ts = _ts()
    path = tmp_path / "d.meno"
    write_dataset(ts, path)
    blob = bytearray(path.read_bytes())
    blob[:8] = b"XXXXXXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(DatasetFormatError, match="magic"):
        read_dataset(path)


def test_truncated_payload(tmp_path):
    ts = _ts()
    path = tmp_path / "d.meno"
    write_dataset(ts, path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-10])
    with pytest.raises(DatasetFormatError, match="payload"):
        read_dataset(path)


def test_trailing_garbage(tmp_path):
    ts = _ts()
    path = tmp_path / "d.meno"
    write_dataset(ts, path)
    path.write_bytes(path.read_bytes() + b"zz")
    with pytest.raises(DatasetFormatError, match="trailing"):
        read_dataset(path)


def test_header_dimension_mismatch(tmp_path):
    # header claims a bigger payload than present
    ts = _ts(b=1, t=2)
    path = tmp_path / "d.meno"
    write_dataset(ts, path)
    blob = path.read_bytes()
    mutated = blob.replace(b'"B": 1', b'"B": 9')
    assert mutated != blob
    path.write_bytes(mutated)
    with pytest.raises(DatasetFormatError):
        read_dataset(path)


def test_magic_constant():
    assert MAGIC == b"MENODSv1"
