import numpy as np
import pytest

from fakelab import tensor as T
from fakelab.encoders import Adapter, DualEncoder, EncoderConfig, FrozenEncoder
from fakelab.synth import generate_dataset
from fakelab.tensor import Tensor


@pytest.fixture(scope="module")
def config():
    return EncoderConfig()


@pytest.fixture(scope="module")
def images():
    samples = generate_dataset(seed=21, n_real=3, n_fake=3)
    return np.stack([s.image.grid for s in samples])


@pytest.fixture(scope="module")
def dual(config):
    return DualEncoder(config, seed=101)


def test_config_defaults_give_16_tokens(config):
    assert config.tokens_per_image == 16


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(image_side=15)
    with pytest.raises(ValueError):
        EncoderConfig(token_dim=30, heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(layers=0)


def test_encode_shapes(dual, images, config):
    out = dual.encode("selfsup", images)
    L = config.tokens_per_image
    assert out.tokens.shape == (6, L, config.token_dim)
    assert out.attention_maps.shape == (6, config.heads, L, L)
    assert len(out.layer_maps) == config.layers


def test_semantic_branch_reports_no_maps(dual, images):
    out = dual.encode("semantic", images)
    assert out.attention_maps is None
    assert len(out.layer_maps) == 2


def test_attention_maps_row_stochastic(dual, images):
    out = dual.encode("selfsup", images)
    for maps in out.layer_maps:
        sums = maps.sum(axis=-1)
        assert np.allclose(sums, 1.0, atol=1e-6)
        assert maps.min() >= 0.0


def test_identical_images_identical_rows(dual, images):
    batch = np.stack([images[0], images[0]])
    out = dual.encode("selfsup", batch)
    assert np.array_equal(out.tokens[0], out.tokens[1])
    assert np.array_equal(out.attention_maps[0], out.attention_maps[1])


def test_encode_rejects_wrong_size(dual):
    with pytest.raises(T.ShapeError):
        dual.encode("semantic", np.zeros((2, 8, 8)))


def test_branches_expose_different_statistics(dual, images):
    sem = dual.encode("semantic", images).tokens
    ssl = dual.encode("selfsup", images).tokens
    assert not np.allclose(sem, ssl)


def test_encoder_construction_deterministic(config, images):
    a = FrozenEncoder(config, "selfsup", seed=5).encode(images)
    b = FrozenEncoder(config, "selfsup", seed=5).encode(images)
    assert np.array_equal(a.tokens, b.tokens)


def test_encoder_params_are_plain_arrays(dual):
    for arr in dual.frozen_params().values():
        assert isinstance(arr, np.ndarray)


def test_adapter_output_shape(dual, images, config):
    raw = dual.encode("semantic", images).tokens
    out = dual.adapt("semantic", raw)
    assert out.shape == (6, config.tokens_per_image, config.text_dim)


def test_adapter_params_disjoint(dual, images):
    raw = dual.encode("semantic", images).tokens
    before = dual.adapt("semantic", raw).data.copy()
    saved = dual.adapter_selfsup.w2.data.copy()
    dual.adapter_selfsup.w2.data += 1.0
    after = dual.adapt("semantic", raw).data
    dual.adapter_selfsup.w2.data = saved
    assert np.array_equal(before, after)


def test_adapter_zero_final_layer_zeroes_output(config, images):
    adapter = Adapter(config, "semantic", seed=3)
    adapter.w2.data[:] = 0.0
    adapter.b2.data[:] = 0.0
    out = adapter(np.random.default_rng(0).standard_normal((2, 16, config.token_dim)))
    assert np.allclose(out.data, 0.0)


def test_adapter_rejects_wrong_token_dim(config):
    adapter = Adapter(config, "semantic", seed=3)
    with pytest.raises(ValueError):
        adapter(np.zeros((1, 16, config.token_dim + 1)))


def test_adapter_gradients_flow(config, images):
    adapter = Adapter(config, "semantic", seed=3, dtype=np.float64)
    raw = FrozenEncoder(config, "semantic", seed=3, dtype=np.float64).encode(images).tokens
    loss = T.mean_all(T.mul(adapter(raw), adapter(raw)))
    loss.backward()
    for t in adapter.params().values():
        assert t.grad is not None
        assert np.isfinite(t.grad).all()


def test_adapter_grad_check():
    rng = np.random.default_rng(4)
    small = EncoderConfig(image_side=8, patch_size=4, token_dim=8, text_dim=8, heads=2)
    adapter = Adapter(small, "semantic", seed=9, dtype=np.float64)
    x = Tensor(rng.standard_normal((2, 4, 8)), requires_grad=True, dtype=np.float64)
    wrt = [x] + list(adapter.params().values())
    err = T.grad_check(lambda: T.mean_all(T.mul(adapter(x), adapter(x))), wrt)
    assert err <= 1e-4
