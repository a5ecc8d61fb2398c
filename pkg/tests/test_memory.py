import io

import numpy as np
import pytest

from failmon import (
    FeatureTensor,
    FormatError,
    InsufficientData,
    ParameterError,
    ValidationError,
    build_memory,
    load_memory,
    save_memory,
)
from tests.conftest import make_tensor


def tensor_from(values) -> FeatureTensor:
    return FeatureTensor(data=np.asarray(values, dtype=np.float32))


def test_two_point_statistics():
    episodes = tensor_from([[[[1.0]]], [[[3.0]]]])  # N=2, T=P=F=1
    memory = build_memory(episodes, sigma_floor=1e-3)
    assert memory.mean[0, 0, 0] == 2.0
    assert memory.std[0, 0, 0] == 1.0  # population std of {1, 3}


def test_sigma_floor_dominates_small_spread():
    episodes = tensor_from([[[[1.0]]], [[[1.000001]]]])
    memory = build_memory(episodes, sigma_floor=0.5)
    assert memory.std[0, 0, 0] == np.float32(0.5)


def test_single_episode_floors_everything(rng):
    tensor = make_tensor(rng, n_episodes=1)
    memory = build_memory(tensor, sigma_floor=1e-3)
    assert np.all(memory.std == np.float32(1e-3))
    assert np.array_equal(memory.mean, tensor.data[0])


def test_replicated_episodes_have_zero_variance(rng):
    one = make_tensor(rng, n_episodes=1)
    stacked = FeatureTensor(data=np.repeat(one.data, 5, axis=0))
    memory = build_memory(stacked, sigma_floor=1e-3)
    assert np.all(memory.std == np.float32(1e-3))
    assert np.allclose(memory.mean, one.data[0], atol=1e-6)


def test_permutation_invariance(rng):
    tensor = make_tensor(rng, n_episodes=6)
    shuffled = FeatureTensor(data=tensor.data[::-1].copy())
    a = build_memory(tensor)
    b = build_memory(shuffled)
    assert np.allclose(a.mean, b.mean, atol=1e-6)
    assert np.allclose(a.std, b.std, atol=1e-6)


def test_mean_within_per_index_bounds(rng):
    tensor = make_tensor(rng, n_episodes=7)
    memory = build_memory(tensor)
    lo = tensor.data.min(axis=0) - 1e-6
    hi = tensor.data.max(axis=0) + 1e-6
    assert np.all(memory.mean >= lo) and np.all(memory.mean <= hi)


def test_std_floored_everywhere(rng):
    memory = build_memory(make_tensor(rng, n_episodes=5), sigma_floor=0.7)
    assert np.all(memory.std >= np.float32(0.7))


def test_empty_tensor_rejected():
    empty = FeatureTensor(data=np.zeros((0, 2, 2, 2), dtype=np.float32))
    with pytest.raises(InsufficientData):
        build_memory(empty)


def test_bad_sigma_floor_rejected(rng):
    with pytest.raises(ParameterError):
        build_memory(make_tensor(rng), sigma_floor=0.0)


def test_short_episodes_rejected(rng):
    with pytest.raises(ValidationError, match="shorter"):
        build_memory(make_tensor(rng, horizon=4), horizon=6)


def test_long_episodes_truncated_loudly(rng):
    tensor = make_tensor(rng, horizon=8)
    with pytest.warns(UserWarning, match="truncating"):
        memory = build_memory(tensor, horizon=5)
    assert memory.horizon == 5
    assert np.allclose(memory.mean, tensor.data[:, :5].mean(axis=0), atol=1e-6)


def test_save_load_roundtrip(rng):
    memory = build_memory(make_tensor(rng, n_episodes=5), sigma_floor=2e-3)
    buf = io.BytesIO()
    save_memory(memory, buf)
    back = load_memory(buf.getvalue())
    assert np.array_equal(back.mean, memory.mean)
    assert np.array_equal(back.std, memory.std)
    assert back.sigma_floor == memory.sigma_floor
    assert back.source_episode_count == memory.source_episode_count
    # file-level identity on the second pass
    again = io.BytesIO()
    save_memory(back, again)
    assert again.getvalue() == buf.getvalue()


def test_load_rejects_bad_magic(rng):
    buf = io.BytesIO()
    save_memory(build_memory(make_tensor(rng)), buf)
    with pytest.raises(FormatError, match="magic"):
        load_memory(b"NOPE" + buf.getvalue()[4:])


def test_load_rejects_truncation(rng):
    buf = io.BytesIO()
    save_memory(build_memory(make_tensor(rng)), buf)
    with pytest.raises(FormatError, match="truncated"):
        load_memory(buf.getvalue()[:-8])


def test_load_rejects_trailing_bytes(rng):
    buf = io.BytesIO()
    save_memory(build_memory(make_tensor(rng)), buf)
    with pytest.raises(FormatError, match="trailing"):
        load_memory(buf.getvalue() + b"!")
