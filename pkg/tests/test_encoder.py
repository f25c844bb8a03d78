import numpy as np
import pytest

from core.errors import DegenerateNorm, ShapeMismatch
from encoder import (PARAM_NAMES, backward, forward_batch, forward_map, momentum_update, pool, project, sgd_step)
from encoder.encoder_class import EncoderConfig, EncoderState, extract_patches


@pytest.fixture
def images():
    return np.random.default_rng(3).uniform(0.0, 1.0, size=(4, 1, 8, 8))


def test_z_is_unit_norm(tiny_state, images):
    cache = forward_batch(tiny_state.online, images)

    assert cache.z.shape == (4, 6)
    np.testing.assert_allclose(np.linalg.norm(cache.z, axis=1), 1.0, atol=1e-12)


def test_single_image_path_matches_batch(tiny_state, images):
    params = tiny_state.online
    cache = forward_batch(params, images)
    m = forward_map(params, images[1])

    assert (m.d1, m.h, m.w) == (8, 4, 4)
    np.testing.assert_allclose(pool(m), cache.pooled[1])
    np.testing.assert_allclose(project(params, pool(m)).z, cache.z[1])


def test_wrong_image_size_is_rejected(tiny_state):
    with pytest.raises(ShapeMismatch):
        forward_map(tiny_state.online, np.zeros((6, 6)))


def test_zero_projection_is_degenerate(tiny_state, images):
    params = tiny_state.online.copy()
    params.tensors["proj2_w"][:] = 0.0
    params.tensors["proj2_b"][:] = 0.0

    with pytest.raises(DegenerateNorm):
        forward_batch(params, images)


@pytest.mark.parametrize("seed", range(20))
def test_backward_matches_finite_differences(encoder_config, seed):
    params = EncoderState.create(encoder_config, seed=seed).online
    images = np.random.default_rng(seed).uniform(0.0, 1.0, size=(4, 1, 8, 8))
    upstream = np.random.default_rng(seed + 100).normal(size=(4, 6))

    def objective():
        return float(np.sum(upstream * forward_batch(params, images).z))

    grads = backward(params, forward_batch(params, images), upstream)
    rng = np.random.default_rng(seed + 200)
    eps = 1e-6
    for name in PARAM_NAMES:
        tensor = params.tensors[name]
        for flat in rng.choice(tensor.size, size=3, replace=False):
            index = np.unravel_index(flat, tensor.shape)
            original = tensor[index]
            tensor[index] = original + eps
            plus = objective()
            tensor[index] = original - eps
            minus = objective()
            tensor[index] = original
            assert grads[name][index] == pytest.approx((plus - minus) / (2 * eps), rel=1e-4, abs=1e-6), name


def test_momentum_update_moves_toward_online(tiny_state):
    state = tiny_state
    for name in PARAM_NAMES:
        state.online.tensors[name] = state.online.tensors[name] + 1.0
    online_before = state.online.copy()
    momentum_before = state.momentum.copy()

    momentum_update(state, 0.75)

    for name in PARAM_NAMES:
        expected = 0.75 * momentum_before[name] + 0.25 * online_before[name]
        np.testing.assert_allclose(state.momentum[name], expected)
        np.testing.assert_array_equal(state.online[name], online_before[name])


def test_zero_coefficient_copies_online(tiny_state):
    tiny_state.online.tensors["patch_b"] = tiny_state.online["patch_b"] + 3.0
    momentum_update(tiny_state, 0.0)

    np.testing.assert_array_equal(tiny_state.momentum["patch_b"], tiny_state.online["patch_b"])


def test_sgd_step_with_momentum_buffer():
    params = {"w": np.array([1.0, -2.0])}
    velocity = {}
    grads = {"w": np.array([0.5, 0.5])}

    sgd_step(params, grads, lr=0.1, weight_decay=0.0, sgd_momentum=0.9, velocity=velocity)
    np.testing.assert_allclose(params["w"], [0.95, -2.05])

    sgd_step(params, grads, lr=0.1, weight_decay=0.0, sgd_momentum=0.9, velocity=velocity)
    np.testing.assert_allclose(velocity["w"], [0.95, 0.95])
    np.testing.assert_allclose(params["w"], [0.855, -2.145])


def test_zero_learning_rate_leaves_params(tiny_state, images):
    params = tiny_state.online
    before = params.copy()
    grads = backward(params, forward_batch(params, images), np.ones((4, 6)))

    sgd_step(params, grads, lr=0.0, weight_decay=0.1, sgd_momentum=0.9, velocity={})

    for name in PARAM_NAMES:
        np.testing.assert_array_equal(params[name], before[name])


def test_momentum_gap_decays_geometrically(tiny_state):
    for name in PARAM_NAMES:
        tiny_state.online.tensors[name] = tiny_state.online.tensors[name] + 1.0

    def gap():
        return np.sqrt(sum(np.sum((tiny_state.momentum[n] - tiny_state.online[n]) ** 2) for n in PARAM_NAMES))

    before = gap()
    for _ in range(10000):
        momentum_update(tiny_state, 0.999)

    assert gap() <= before * 0.999 ** 10000 * (1.0 + 1e-6)


def test_weight_decay_alone_shrinks_params_geometrically():
    start = np.random.default_rng(8).normal(size=(3, 4))
    params, velocity = {"w": start.copy()}, {}

    for _ in range(25):
        sgd_step(params, {"w": np.zeros((3, 4))}, lr=0.1, weight_decay=0.05, sgd_momentum=0.0, velocity=velocity)

    np.testing.assert_allclose(params["w"], start * (1.0 - 0.1 * 0.05) ** 25)


def test_blank_image_gives_a_blank_map(tiny_state):
    m = forward_map(tiny_state.online, np.zeros((8, 8)))

    assert not m.data.any()


def test_identity_encoder_lifts_the_image_into_the_first_channel():
    config = EncoderConfig(image_side=2, channels=1, patch_size=1, d1=3, d_hidden=4, d2=2)
    params = EncoderState.create(config, seed=0).online
    params.tensors["patch_w"] = np.eye(1, 3)
    params.tensors["mix1_w"] = np.eye(3)
    params.tensors["mix2_w"] = np.eye(3)
    image = np.array([[0.1, 0.9], [0.4, 0.0]])

    m = forward_map(params, image)

    np.testing.assert_allclose(m.data, np.stack([image, np.zeros((2, 2)), np.zeros((2, 2))]))


def test_permuting_patches_permutes_the_map(tiny_state):
    image = np.random.default_rng(9).uniform(size=(8, 8))
    perm = np.random.default_rng(10).permutation(16)
    patches = extract_patches(image[None, None], 2)[0][perm]
    shuffled = patches.reshape(4, 4, 1, 2, 2).transpose(2, 0, 3, 1, 4).reshape(8, 8)

    original = forward_map(tiny_state.online, image).data.reshape(8, -1)
    permuted = forward_map(tiny_state.online, shuffled).data.reshape(8, -1)

    np.testing.assert_allclose(permuted, original[:, perm])
