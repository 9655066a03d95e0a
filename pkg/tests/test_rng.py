import numpy as np
import pytest

from kac.rng import make_rng, stream_seed


def test_streams_are_reproducible():
    assert np.array_equal(make_rng(7, 3, 1).random(5), make_rng(7, 3, 1).random(5))


def test_streams_are_distinct():
    draws = {(r, s): make_rng(7, r, s).random() for r in range(3) for s in range(3)}
    assert len(set(draws.values())) == 9


def test_generator_is_philox():
    assert isinstance(make_rng(1).bit_generator, np.random.Philox)


def test_passing_a_generator_returns_it(rng):
    assert make_rng(0, generator=rng) is rng


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        stream_seed(-1)
