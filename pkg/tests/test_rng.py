import numpy as np
import pytest

from privtrain.rng import derive_seed, substream


def test_same_path_same_draws():
    a = substream(42, "batch", 1, 3).standard_normal(16)
    b = substream(42, "batch", 1, 3).standard_normal(16)
    np.testing.assert_array_equal(a, b)


def test_different_paths_differ():
    a = substream(42, "batch", 1, 3).standard_normal(16)
    b = substream(42, "batch", 1, 4).standard_normal(16)
    c = substream(42, "noise", 1, 3).standard_normal(16)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_different_seeds_differ():
    a = substream(1, "x").standard_normal(8)
    b = substream(2, "x").standard_normal(8)
    assert not np.array_equal(a, b)


def test_known_stream_is_stable():
    # Pinned draw: the (seed, path) -> stream mapping is an external
    # contract, so a change here is a breaking format change.
    value = substream(0, "pin").random()
    assert value == pytest.approx(0.5935493015068007, abs=0)


def test_path_type_validation():
    with pytest.raises(TypeError):
        substream(0, 1.5)
    with pytest.raises(ValueError):
        substream(0, -1)
    with pytest.raises(ValueError):
        substream(-3, "x")


def test_derive_seed_deterministic_and_bounded():
    s1 = derive_seed(9, "sweep", 0)
    s2 = derive_seed(9, "sweep", 0)
    s3 = derive_seed(9, "sweep", 1)
    assert s1 == s2 != s3
    assert 0 <= s1 < 2**63
