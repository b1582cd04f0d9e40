import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tdm.codec import LatentGrid, decode, encode, mixing_matrix


def test_zero_image_and_latent():
    z = encode(np.zeros((3, 8, 12)))
    assert z.data.shape == (48, 2, 3)
    assert not z.data.any()
    assert not decode(z).any()


def test_mixing_matrix_is_orthonormal():
    m = mixing_matrix(48)
    np.testing.assert_allclose(m @ m.T, np.eye(48), atol=1e-12)
    assert np.array_equal(m, mixing_matrix(48))


@given(seed=st.integers(0, 2**32 - 1), c=st.sampled_from([1, 3]), hp=st.integers(1, 4), wp=st.integers(1, 4))
def test_round_trip_and_norm(seed, c, hp, wp):
    x = np.random.default_rng(seed).random((c, 4 * hp, 4 * wp))
    z = encode(x)
    assert z.data.shape == (c * 16, hp, wp)
    assert abs(np.linalg.norm(z.data) - np.linalg.norm(x)) <= 1e-10
    assert np.max(np.abs(decode(z) - x)) <= 1e-10


@pytest.mark.parametrize("seed", range(100))
def test_decode_preserves_norm_on_random_latents(seed):
    data = np.random.default_rng(seed).standard_normal((16, 3, 2))
    img = decode(LatentGrid(data, 4, (1, 12, 8)))
    assert abs(np.linalg.norm(img) - np.linalg.norm(data)) <= 1e-10 * np.linalg.norm(data)


def test_other_patch_sizes():
    x = np.random.default_rng(0).random((1, 6, 6))
    assert np.max(np.abs(decode(encode(x, patch=2)) - x)) <= 1e-12


def test_errors():
    with pytest.raises(ValueError):
        encode(np.zeros((1, 10, 8)))
    with pytest.raises(ValueError):
        encode(np.zeros((8, 8)))
    with pytest.raises(ValueError):
        LatentGrid(np.zeros((16, 2, 2)), 4, (1, 8, 12))
    with pytest.raises(ValueError):
        LatentGrid(np.zeros((16, 2, 2)), 4, (1, 10, 8))
    with pytest.raises(TypeError):
        decode(np.zeros((16, 2, 2)))
