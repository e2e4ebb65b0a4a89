from __future__ import annotations

import numpy as np
import pytest

from vista_adapter.rle import RleError, decode, encode


def test_round_trip_random():
    rng = np.random.default_rng(0)
    for _ in range(200):
        h = int(rng.integers(1, 80))
        w = int(rng.integers(1, 80))
        mask = rng.random((h, w)) < rng.random()
        assert np.array_equal(decode(encode(mask)), mask)


def test_round_trip_extremes():
    for mask in (np.zeros((5, 9), bool), np.ones((5, 9), bool)):
        assert np.array_equal(decode(encode(mask)), mask)


def test_counts_is_string():
    obj = encode(np.ones((2, 2), bool))
    assert obj == {"size": [2, 2], "counts": "0 4"}


def test_column_major():
    mask = np.zeros((2, 2), bool)
    mask[1, 0] = True
    assert encode(mask)["counts"] == "1 1 2"


def test_accepts_int_list():
    out = decode({"size": [2, 2], "counts": [1, 1, 2]})
    assert out[1, 0] and not out[0, 0]


def test_bad_sum():
    with pytest.raises(RleError):
        decode({"size": [2, 2], "counts": "1 1"})


def test_bad_tokens():
    with pytest.raises(RleError):
        decode({"size": [2, 2], "counts": "1 x 2"})


def test_negative_run():
    with pytest.raises(RleError):
        decode({"size": [2, 2], "counts": [-1, 5]})
