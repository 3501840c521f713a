"""Tests for ParameterSet."""

import math

import numpy as np
import pytest

from vega_align.errors import ShapeError
from vega_align.params import ParameterSet, xavier_uniform
from vega_align.tensor import Tensor


@pytest.fixture
def pset():
    return ParameterSet({"w": Tensor(np.ones((2, 3))), "b": Tensor(np.zeros(3))})


class TestParameterSet:
    def test_names_follow_insertion_order(self, pset):
        assert [name for name, _ in pset] == ["w", "b"]
        assert pset["w"].name == "w"
        assert pset.num_parameters() == 9

    def test_freeze_and_unfreeze(self, pset):
        pset["w"].grad = np.ones((2, 3))
        pset.freeze()
        assert pset.trainable() == []
        assert pset["w"].grad is None
        assert not any(t.requires_grad for t in pset.parameters())
        pset.unfreeze()
        assert all(t.requires_grad for t in pset.trainable())

    def test_constructed_frozen(self):
        frozen = ParameterSet({"w": Tensor([1.0])}, frozen=True)
        assert frozen.frozen and not frozen["w"].requires_grad

    def test_digest_tracks_values(self, pset):
        before = pset.digest()
        assert len(before) == 64
        pset["b"].values = np.array([0.0, 0.0, 1e-12])
        assert pset.digest() != before

    def test_digest_includes_names(self):
        a = ParameterSet({"x": Tensor([1.0])})
        b = ParameterSet({"y": Tensor([1.0])})
        assert a.digest() != b.digest()

    def test_state_dict_is_a_copy(self, pset):
        state = pset.state_dict()
        state["w"][0, 0] = 5.0
        assert pset["w"].values[0, 0] == 1.0

    def test_load_state(self, pset):
        pset.load_state({"w": np.full((2, 3), 2.0), "b": np.arange(3.0)})
        np.testing.assert_array_equal(pset["b"].values, [0.0, 1.0, 2.0])

    def test_load_state_missing(self, pset):
        with pytest.raises(ShapeError, match="missing"):
            pset.load_state({"w": np.ones((2, 3))})

    def test_load_state_wrong_shape(self, pset):
        with pytest.raises(ShapeError, match="'b'"):
            pset.load_state({"w": np.ones((2, 3)), "b": np.ones(4)})


class TestXavier:
    def test_within_limit(self, rng):
        w = xavier_uniform(rng, 10, 6)
        assert w.shape == (10, 6)
        assert np.abs(w).max() <= math.sqrt(6.0 / 16)
