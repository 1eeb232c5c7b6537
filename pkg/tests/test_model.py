import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from clhad.errors import ArgumentError, ShapeError
from clhad.model import (DiscriminatorConfig, Discriminator, Generator, GeneratorConfig, ModelState,
                         MultiScaleConv, diff_augment, draw_augment_params, l2_self_attention)
from gradients import TOL, gradient_suite


def test_generator_default_dims():
    assert GeneratorConfig(128).encoder_dims == [128, 64, 32, 16]
    assert GeneratorConfig(20).encoder_dims == [20, 10, 5, 3]
    with pytest.raises(ArgumentError):
        GeneratorConfig(8, latent_dim=8)


def test_generator_zero_weights_give_half():
    gen = Generator(GeneratorConfig(12))
    for p in gen.parameters():
        torch.nn.init.zeros_(p)
    assert torch.all(gen(torch.rand(3, 12)) == 0.5)


def test_generator_batch_independence():
    torch.manual_seed(0)
    gen = Generator(GeneratorConfig(16))
    x = torch.rand(4, 16)
    assert torch.equal(gen(x[:1])[0], gen(x)[0])


def test_generator_decoder_mirrors_encoder():
    gen = Generator(GeneratorConfig(32))
    enc = [(l.in_features, l.out_features) for l in gen.encoder]
    dec = [(l.out_features, l.in_features) for l in gen.decoder][::-1]
    assert enc == dec


def test_shape_errors():
    state = ModelState.create(8)
    with pytest.raises(ShapeError):
        state.generator(torch.rand(2, 15))
    with pytest.raises(ShapeError):
        state.discriminator(torch.rand(2, 15))


def test_attention_singleton_and_identical_rows():
    w = [torch.randn(4, 3, dtype=torch.float64) for _ in range(3)]
    f = torch.randn(1, 1, 4, dtype=torch.float64)
    out, weights = l2_self_attention(f, *w, 8, return_weights=True)
    assert weights.item() == 1.0
    assert torch.allclose(out, f @ w[2])
    same = torch.randn(1, 4, dtype=torch.float64).expand(5, 4).unsqueeze(0)
    _, weights = l2_self_attention(same, *w, 8, return_weights=True)
    assert torch.allclose(weights, torch.full((1, 5, 5), 0.2, dtype=torch.float64))


def test_attention_literal_oracle(rng):
    f = rng.normal(size=(3, 4))
    wq, wk, wv = (rng.normal(size=(4, 2)) for _ in range(3))
    q, k, v = f @ wq, f @ wk, f @ wv
    # straight-line transcription, one entry at a time
    logits = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            logits[i, j] = (q[i] @ k[j]) / (math.sqrt(q[i] @ q[i]) * math.sqrt(k[j] @ k[j])) / math.sqrt(10)
    weights = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    oracle = weights @ v
    T = lambda a: torch.tensor(a)
    out, got_w = l2_self_attention(T(f)[None], T(wq), T(wk), T(wv), 10, return_weights=True)
    np.testing.assert_allclose(got_w[0].numpy(), weights, rtol=1e-12)
    np.testing.assert_allclose(out[0].numpy(), oracle, rtol=1e-12)
    fused = l2_self_attention(T(f)[None], T(wq), T(wk), T(wv), 10)
    np.testing.assert_allclose(fused[0].numpy(), oracle, rtol=1e-10)


def test_attention_zero_row_uniform():
    f = torch.zeros(1, 3, 4, dtype=torch.float64)
    w = [torch.randn(4, 2, dtype=torch.float64) for _ in range(3)]
    _, weights = l2_self_attention(f, *w, 8, return_weights=True)
    assert torch.allclose(weights, torch.full((1, 3, 3), 1 / 3, dtype=torch.float64))


def test_msc_pooled_matches_dense(rng):
    torch.manual_seed(1)
    msc = MultiScaleConv(3, 4).double()
    x = torch.tensor(rng.random((2, 16)))
    dense = msc.dense(x)  # (2, 16, 9)
    pooled = dense.reshape(2, 4, 4, 9).mean(2)
    assert torch.allclose(msc(x), pooled, atol=1e-12)


def test_msc_dense_matches_conv1d(rng):
    torch.manual_seed(2)
    msc = MultiScaleConv(2, 4).double()
    x = torch.tensor(rng.random((3, 12)))
    outs = []
    for k, w, b in zip((1, 3, 5), msc.weights, msc.biases):
        kernel = w.T.unsqueeze(1)  # (channels, 1, k)
        outs.append(torch.nn.functional.conv1d(x.unsqueeze(1), kernel, b, padding=k // 2).transpose(1, 2))
    assert torch.allclose(msc.dense(x), torch.cat(outs, -1), atol=1e-12)


def test_discriminator_config_rules():
    cfg = DiscriminatorConfig(128)
    assert cfg.tokens * cfg.patch == 128
    assert DiscriminatorConfig(20, patch=16).patch == 10
    with pytest.raises(ArgumentError):
        DiscriminatorConfig(16, kernel_sizes=(1, 3))
    with pytest.raises(ArgumentError):
        DiscriminatorConfig(16, attention_dim=5)


def test_discriminator_range_and_eval_determinism():
    state = ModelState.create(16, seed=4)
    x = torch.rand(6, 32) * 3 - 1
    state.eval()
    p1, p2 = state.discriminator(x), state.discriminator(x)
    assert torch.equal(p1, p2)
    assert torch.all((p1 > 0) & (p1 < 1))


def test_diff_augment_neutral_and_constant():
    x = torch.rand(3, 10, dtype=torch.float64)
    zero = torch.zeros(3, 1, dtype=torch.float64)
    neutral = (zero, zero + 1, zero)
    assert torch.allclose(diff_augment(x, neutral), x, atol=1e-15)
    const = torch.full((2, 10), 0.3, dtype=torch.float64)
    params = (torch.zeros(2, 1, dtype=torch.float64), torch.tensor([[0.5], [1.5]], dtype=torch.float64),
              torch.zeros(2, 1, dtype=torch.float64))
    assert torch.allclose(diff_augment(const, params), const)


def test_diff_augment_ranges_and_determinism():
    g1, g2 = torch.Generator().manual_seed(9), torch.Generator().manual_seed(9)
    delta, scale, blend = draw_augment_params(4000, generator=g1)
    assert delta.abs().max() <= 0.2 and scale.min() >= 0.5 and scale.max() <= 1.5
    assert blend.min() >= 0 and blend.max() <= 1
    x = torch.rand(5, 8)
    assert torch.equal(diff_augment(x, generator=torch.Generator().manual_seed(3)),
                       diff_augment(x, generator=torch.Generator().manual_seed(3)))
    assert torch.equal(draw_augment_params(4000, generator=g2)[0], delta)


@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(seed):
    errors = gradient_suite(seed)
    assert max(errors.values()) < TOL, errors


def test_param_counts_at_64_bands():
    counts = ModelState.create(64).param_counts()
    gen = 2 * (128 * 64 + 64 * 32 + 32 * 16) + (64 + 32 + 16) + (32 + 64 + 128)
    assert counts["generator"] == gen
    assert counts["training"] == counts["generator"] + counts["discriminator"]
    assert counts["detection"] == counts["generator"]


def test_same_seed_same_weights():
    a, b = ModelState.create(8, seed=5), ModelState.create(8, seed=5)
    assert np.array_equal(a.flat_parameters(), b.flat_parameters())
    assert not np.array_equal(a.flat_parameters(), ModelState.create(8, seed=6).flat_parameters())


def _one_step(state, x):
    out = state.generator(x)
    loss = ((out - x) ** 2).mean() - torch.log(state.discriminator(x)).mean()
    state.opt_g.zero_grad()
    state.opt_d.zero_grad()
    loss.backward()
    state.opt_g.step()
    state.opt_d.step()


def test_checkpoint_round_trip_bit_exact(tmp_path):
    torch.manual_seed(0)
    state = ModelState.create(8, seed=2).eval()
    x = torch.rand(7, 16)
    _one_step(state, x)
    path = state.save(tmp_path / "ck")
    loaded = ModelState.load(path).eval()
    assert np.array_equal(loaded.flat_parameters(), state.flat_parameters())
    assert torch.equal(loaded.generator(x), state.generator(x))
    assert torch.equal(loaded.discriminator(x), state.discriminator(x))
    # optimizer moments survive: one more identical step stays identical
    _one_step(state, x)
    _one_step(loaded, x)
    assert np.array_equal(loaded.flat_parameters(), state.flat_parameters())


def test_checkpoint_manifest_dims(tmp_path):
    state = ModelState.create(8)
    path = state.save(tmp_path / "ck")
    import json
    manifest = json.loads(path.with_suffix(".json").read_text())
    assert manifest["dims"]["generator"] + manifest["dims"]["discriminator"] == state.flat_parameters().size
    assert path.stat().st_size == 4 * manifest["dims"]["total"]


def test_checkpoint_truncated(tmp_path):
    path = ModelState.create(8).save(tmp_path / "ck")
    path.write_bytes(path.read_bytes()[:-4])
    from clhad.errors import FormatError
    with pytest.raises(FormatError):
        ModelState.load(path)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(2, 9), st.integers(0, 1000))
def test_attention_rows_sum_to_one(n, d, seed):
    g = torch.Generator().manual_seed(seed)
    f = torch.randn(2, n, d, generator=g, dtype=torch.float64)
    w = [torch.randn(d, 3, generator=g, dtype=torch.float64) for _ in range(3)]
    _, weights = l2_self_attention(f, *w, 2 * d, return_weights=True)
    assert torch.allclose(weights.sum(-1), torch.ones(2, n, dtype=torch.float64), atol=1e-6)
