import numpy as np
import pytest
import torch

from tedm.diffusion import NoisyImage
from tedm.errors import ModelError, ShapeError
from tedm.unet import (
    DenoiserConfig,
    DenoiserUNet,
    SegmentationNet,
    SegNetConfig,
    predict_noise,
    sinusoidal_embedding,
)


@pytest.fixture(scope="module")
def small_model():
    cfg = DenoiserConfig(widths=(8, 16), bottleneck_width=32, time_embed_dim=16)
    return DenoiserUNet(cfg, seed=0)


def test_output_shape_matches_input(small_model):
    x = np.random.default_rng(0).standard_normal((1, 16, 16)).astype(np.float32)
    out = predict_noise(small_model, NoisyImage(x, 100))
    assert out.shape == (1, 16, 16)


def test_predict_noise_deterministic(small_model):
    x = np.random.default_rng(1).standard_normal((1, 16, 16)).astype(np.float32)
    a = predict_noise(small_model, NoisyImage(x, 42))
    b = predict_noise(small_model, NoisyImage(x, 42))
    np.testing.assert_array_equal(a, b)


def test_zero_initialized_final_layer_outputs_zero(small_model):
    # the output conv is zero-initialized at construction
    x = np.random.default_rng(2).standard_normal((1, 16, 16)).astype(np.float32)
    out = predict_noise(small_model, NoisyImage(x, 7))
    assert np.all(out == 0.0)


def test_seeded_init_reproducible():
    cfg = DenoiserConfig(widths=(4, 8), bottleneck_width=8, time_embed_dim=8)
    a = DenoiserUNet(cfg, seed=9).parameter_vector()
    b = DenoiserUNet(cfg, seed=9).parameter_vector()
    c = DenoiserUNet(cfg, seed=10).parameter_vector()
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_parameter_vector_roundtrip(small_model):
    vec = small_model.parameter_vector()
    new = vec + 0.01
    small_model.load_parameter_vector(new)
    np.testing.assert_allclose(small_model.parameter_vector(), new, rtol=1e-6)
    small_model.load_parameter_vector(vec)
    with pytest.raises(ShapeError):
        small_model.load_parameter_vector(vec[:-1])


def test_latent_width_sums_tap_channels():
    cfg = DenoiserConfig(widths=(16, 40), bottleneck_width=64)
    assert cfg.latent_width == 64 + 40 + 16
    only_deep = DenoiserConfig(widths=(16, 40), bottleneck_width=64,
                               taps=("bottleneck",))
    assert only_deep.latent_width == 64
    with pytest.raises(ModelError):
        DenoiserConfig(taps=("nope",)).latent_width


def test_input_validation(small_model):
    with pytest.raises(ShapeError):
        small_model.check_input((2, 16, 16))  # wrong channels
    with pytest.raises(ShapeError):
        small_model.check_input((1, 10, 16))  # not divisible by 4
    with pytest.raises(ShapeError):
        predict_noise(small_model, NoisyImage(np.zeros((16, 16)), 5))


def test_taps_have_documented_shapes(small_model):
    x = torch.zeros(1, 1, 16, 16)
    _, taps = small_model(x, torch.tensor([1.0]), return_taps=True)
    assert list(taps) == list(small_model.config.taps)
    assert taps["bottleneck"].shape == (1, 32, 4, 4)
    assert taps["dec1"].shape == (1, 16, 8, 8)
    assert taps["dec0"].shape == (1, 8, 16, 16)


def test_sinusoidal_embedding_shapes():
    emb = sinusoidal_embedding(torch.tensor([1.0, 500.0]), 16)
    assert emb.shape == (2, 16)
    assert not torch.allclose(emb[0], emb[1])


def test_segmentation_net_predict():
    cfg = SegNetConfig(
        n_classes=3,
        denoiser=DenoiserConfig(widths=(4, 8), bottleneck_width=8, time_embed_dim=8),
    )
    net = SegmentationNet(cfg, seed=1)
    img = np.random.default_rng(3).standard_normal((1, 16, 16)).astype(np.float32)
    labels, probs = net.predict(img)
    assert labels.shape == (16, 16)
    assert probs.shape == (3, 16, 16)
    np.testing.assert_allclose(probs.sum(axis=0), 1.0, atol=1e-6)
    again, _ = net.predict(img)
    np.testing.assert_array_equal(labels, again)
