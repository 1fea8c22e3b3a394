import numpy as np
import pytest

from slwsr import tensor as T
from slwsr.config import DEFAULT_LAYOUT, ModelConfig
from slwsr.errors import ConfigurationError
from slwsr.model import (BlockSpec, activation_flags, basic_residual_block, block_bunch, build_model,
                         information_pool, inverted_residual_block, plan)
from slwsr.profiler import count_params, profile
from slwsr.tensor import Tensor


def t64(a):
    return Tensor(np.asarray(a, np.float64), dtype=np.float64)


def block_params(spec, rng, zero=False):
    params = {}
    for layer in spec.layers():
        w = np.zeros(layer.weight_shape) if zero else rng.standard_normal(layer.weight_shape) * 0.3
        b = np.zeros(layer.c_out) if zero else rng.standard_normal(layer.c_out) * 0.1
        params[f"{layer.name}.weight"], params[f"{layer.name}.bias"] = t64(w), t64(b)
    return params


def conv(x, p, name):
    return T.conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"])


# ------------------------------------------------------------ basic block


def test_basic_block_alpha_zero_is_activation(rng):
    spec = BlockSpec("b", "basic_residual", 4, activation=True)
    x = t64(rng.standard_normal((1, 4, 5, 5)))
    out = basic_residual_block(x, spec, block_params(spec, rng), alpha=0.0)
    np.testing.assert_array_equal(out.data, np.maximum(x.data, 0))


def test_basic_block_zero_convs(rng):
    spec = BlockSpec("b", "basic_residual", 4, activation=False)
    x = t64(rng.standard_normal((1, 4, 5, 5)))
    np.testing.assert_array_equal(basic_residual_block(x, spec, block_params(spec, rng, zero=True)).data, x.data)


@pytest.mark.parametrize("activation", [True, False])
def test_basic_block_composition(activation, rng):
    spec = BlockSpec("b", "basic_residual", 4, activation=activation)
    p = block_params(spec, rng)
    x = t64(rng.standard_normal((2, 4, 5, 6)))
    f = T.relu(x) if activation else x
    want = f.data + 0.7 * conv(conv(f, p, "b.conv1"), p, "b.conv2").data
    np.testing.assert_allclose(basic_residual_block(x, spec, p, alpha=0.7).data, want, atol=1e-12)


# --------------------------------------------------------- inverted block


def test_inverted_block_zero_weights_identity(rng):
    spec = BlockSpec("i", "inverted_residual", 4)
    x = t64(rng.standard_normal((1, 4, 5, 5)))
    np.testing.assert_array_equal(inverted_residual_block(x, spec, block_params(spec, rng, zero=True)).data, x.data)


def test_inverted_block_param_count():
    spec = BlockSpec("i", "inverted_residual", 16, expansion=2)
    assert sum(count_params(layer) for layer in spec.layers()) == (16 * 32 + 32) + (9 * 32 + 32) + (32 * 16 + 16) == 1392


def test_inverted_block_composition(rng):
    spec = BlockSpec("i", "inverted_residual", 3, expansion=2)
    p = block_params(spec, rng)
    x = t64(rng.standard_normal((1, 3, 5, 4)))
    h = T.relu(conv(x, p, "i.expand"))
    h = T.relu(T.depthwise_conv2d(h, p["i.depthwise.weight"], p["i.depthwise.bias"]))
    want = x.data + conv(h, p, "i.project").data
    np.testing.assert_allclose(inverted_residual_block(x, spec, p).data, want, atol=1e-12)


@pytest.mark.parametrize("beta", [16, 32, 64])
@pytest.mark.parametrize("t", [1, 2])
def test_inverted_cheaper_than_basic(beta, t):
    inv = sum(count_params(l) for l in BlockSpec("i", "inverted_residual", beta, expansion=t).layers())
    assert inv < 2 * (9 * beta * beta + beta)


def test_block_channel_mismatch(rng):
    spec = BlockSpec("b", "basic_residual", 4)
    with pytest.raises(ConfigurationError, match="channels"):
        basic_residual_block(t64(np.zeros((1, 3, 4, 4))), spec, block_params(spec, rng))


# ------------------------------------------------------------------ bunch


def test_bunch_identity_chain(rng):
    x = t64(rng.standard_normal((1, 2, 3, 3)))
    ident = lambda v: T.add_scaled(v, v, 0.0)
    out, taps = block_bunch(x, [ident, ident, ident])
    # R3(u + R2(u)) with identity blocks gives 2x; a pure identity chain needs R2 to vanish
    np.testing.assert_array_equal(out.data, 2 * x.data)
    zero = lambda v: T.scale(v, 0.0)
    out, _ = block_bunch(x, [ident, zero, ident])
    np.testing.assert_array_equal(out.data, x.data)


def test_bunch_r2_identity_doubles_u(rng):
    x = t64(rng.standard_normal((1, 3, 4, 4)))
    specs = [BlockSpec(f"b{i}", "basic_residual", 3, activation=(i == 1)) for i in range(3)]
    ps = [block_params(s, rng) for s in specs]
    r1 = lambda v: basic_residual_block(v, specs[0], ps[0])
    r3 = lambda v: basic_residual_block(v, specs[2], ps[2])
    zspec = BlockSpec("z", "basic_residual", 3, activation=False)
    ident = lambda v: basic_residual_block(v, zspec, block_params(zspec, rng, zero=True))
    out, taps = block_bunch(x, [r1, ident, r3])
    np.testing.assert_allclose(out.data, r3(T.scale(r1(x), 2.0)).data, atol=1e-12)
    assert set(taps) == {"u", "r2", "out"}


def test_bunch_random_composition_and_short_forms(rng):
    x = t64(rng.standard_normal((1, 3, 4, 4)))
    specs = [BlockSpec(f"b{i}", "basic_residual", 3, activation=True) for i in range(3)]
    ps = [block_params(s, rng) for s in specs]
    fs = [lambda v, s=s, p=p: basic_residual_block(v, s, p) for s, p in zip(specs, ps)]
    u = fs[0](x)
    np.testing.assert_allclose(block_bunch(x, fs)[0].data, fs[2](T.add(u, fs[1](u))).data, atol=1e-12)
    np.testing.assert_allclose(block_bunch(x, [fs[0], fs[2]])[0].data, fs[2](u).data, atol=1e-12)
    out, taps = block_bunch(x, fs[:1])
    assert out is taps["u"] and "r2" not in taps
    with pytest.raises(ConfigurationError):
        block_bunch(x, fs + fs)


# ------------------------------------------------------------------- pool


def test_pool_zero_taps_give_bias(rng):
    taps = [t64(np.zeros((1, 2, 3, 3))) for _ in range(6)]
    out = information_pool(taps, t64(rng.standard_normal((2, 12, 1, 1))), t64([0.5, -1.0]))
    np.testing.assert_array_equal(out.data[0, 0], 0.5)
    np.testing.assert_array_equal(out.data[0, 1], -1.0)


@pytest.mark.parametrize("k", range(6))
def test_pool_selector_kernel(k, rng):
    taps = [t64(rng.standard_normal((1, 2, 3, 3))) for _ in range(6)]
    w = np.zeros((2, 12, 1, 1))
    w[0, 2 * k, 0, 0] = w[1, 2 * k + 1, 0, 0] = 1.0
    out = information_pool(taps, t64(w), t64(np.zeros(2)))
    np.testing.assert_array_equal(out.data, taps[k].data)


def test_pool_matches_concat_oracle(rng):
    taps = [rng.standard_normal((2, 3, 4, 4)) for _ in range(6)]
    w = rng.standard_normal((3, 18, 1, 1))
    b = rng.standard_normal(3)
    want = np.einsum("oc,nchw->nohw", w[:, :, 0, 0], np.concatenate(taps, axis=1)) + b.reshape(1, 3, 1, 1)
    got = information_pool([t64(t) for t in taps], t64(w), t64(b))
    np.testing.assert_allclose(got.data, want, atol=1e-12)


def test_pool_checks_tap_count(rng):
    with pytest.raises(ConfigurationError):
        information_pool([t64(np.zeros((1, 2, 3, 3)))] * 5, t64(np.zeros((2, 10, 1, 1))), t64(np.zeros(2)))


# ------------------------------------------------------------------ model


@pytest.mark.parametrize("beta,reported", [(16, 144_000), (32, 571_000), (64, 2_277_000)])
def test_parameter_counts_near_reported(beta, reported):
    model = build_model(ModelConfig(n_feats=beta))
    assert abs(model.num_parameters() / reported - 1) <= 0.03


@pytest.mark.parametrize("cfg", [ModelConfig(), ModelConfig(n_feats=8, compress_set=(1, 5, 20)),
                                 ModelConfig(n_feats=8, pool_mode="none"), ModelConfig(n_feats=8, scale=3),
                                 ModelConfig(n_feats=8, pool_mode="former_all", scale=2)])
def test_params_equal_profiler_sum(cfg):
    model = build_model(cfg)
    assert model.num_parameters() == profile(cfg).params
    assert sum(a.size for a in model.state_dict().values()) == profile(model).params


def test_layout_and_block_count():
    bunches, _ = plan(ModelConfig())
    assert [len(b) for b in bunches] == list(DEFAULT_LAYOUT)
    assert sum(len(b) for b in bunches) == 26
    assert [s.name for s in bunches[-1]] == ["bunch9.block1", "bunch9.block3"]


@pytest.mark.parametrize("scale,h,w", [(4, 8, 9), (2, 10, 8), (3, 8, 8), (8, 8, 11)])
def test_output_size(scale, h, w, rng):
    model = build_model(ModelConfig(n_feats=4, scale=scale))
    out = model.predict(rng.random((3, h, w)).astype(np.float32))
    assert out.shape == (3, scale * h, scale * w)


def test_patch_48_gives_192():
    model = build_model(ModelConfig(n_feats=16))
    assert model(np.zeros((1, 3, 48, 48), np.float32)).shape == (1, 3, 192, 192)


def test_zero_input_zero_tail_gives_zero():
    cfg = ModelConfig(n_feats=4, normalize=False)
    model = build_model(cfg)
    model.params["tail.out.weight"].data[...] = 0
    assert not model.predict(np.zeros((3, 8, 8), np.float32)).any()


def test_forward_deterministic(rng):
    x = rng.random((1, 3, 9, 7)).astype(np.float32)
    a = build_model(ModelConfig(n_feats=8), seed=3).predict(x)
    b = build_model(ModelConfig(n_feats=8), seed=3).predict(x)
    np.testing.assert_array_equal(a, b)


def test_fusion_linearity(rng):
    normal = build_model(ModelConfig(n_feats=4, skip_weight=1.0), seed=1, dtype=np.float64)
    normal.params["pool.weight"].data[...] = 0
    normal.params["pool.bias"].data[...] = 0
    nopool = build_model(ModelConfig(n_feats=4, pool_mode="none"), dtype=np.float64)
    nopool.load_state_dict(normal.state_dict(), strict=False)
    x = rng.random((1, 3, 8, 8))
    np.testing.assert_allclose(normal.predict(x), nopool.predict(x), atol=1e-6)


def test_activation_variants_share_params():
    a = build_model(ModelConfig(n_feats=8, activation_keep="all"))
    r = build_model(ModelConfig(n_feats=8, activation_keep="rare"))
    assert a.num_parameters() == r.num_parameters()
    assert [s.activation for b in r.bunches for s in b].count(True) == 2


def test_activation_flags():
    assert activation_flags(6, "half") == [False, True, False, True, False, True]
    assert activation_flags(6, "third") == [True, False, False, True, False, False]
    assert activation_flags(6, "two_thirds") == [True, True, False, True, True, False]
    assert activation_flags(4, "rare") == [True, False, False, True]
    with pytest.raises(ConfigurationError):
        activation_flags(3, "most")


def test_model_gradients_reach_every_parameter(rng):
    model = build_model(ModelConfig(n_feats=4), seed=0)
    for p in model.parameters():
        p.data += 0.01 * rng.standard_normal(p.shape).astype(p.dtype)
    out = model(rng.random((1, 3, 6, 6)).astype(np.float32))
    T.l1_loss(out, Tensor(rng.random(out.shape).astype(np.float32))).backward()
    assert all(p.grad is not None and p.grad.shape == p.shape for p in model.parameters())


def test_state_dict_mismatch():
    model = build_model(ModelConfig(n_feats=4))
    state = model.state_dict()
    state["head.weight"] = np.zeros((1, 1, 1, 1))
    with pytest.raises(ConfigurationError):
        model.load_state_dict(state)
    with pytest.raises(ConfigurationError):
        model.load_state_dict({"head.weight": state["head.bias"]})


def test_wrong_input_channels():
    with pytest.raises(ConfigurationError):
        build_model(ModelConfig(n_feats=4))(np.zeros((1, 1, 8, 8), np.float32))


# ----------------------------------------------------------------- config


def test_config_text_round_trip(tmp_path):
    cfg = ModelConfig(n_feats=24, compress_set=(0, 4, 7), activation_keep="third", residual_scale=0.1,
                      pool_mode="former_all", normalize=False)
    assert ModelConfig.from_text(cfg.to_text()) == cfg
    cfg.save(tmp_path / "m.cfg")
    assert ModelConfig.load(tmp_path / "m.cfg") == cfg


def test_config_compress_all():
    cfg = ModelConfig.from_text("n_feats = 32\ncompress_set = all  # every block\n")
    assert cfg.compress_set == tuple(range(26))


@pytest.mark.parametrize("text", ["n_feats = 0", "scale = 5", "pool_mode = max", "activation_keep = some",
                                  "compress_set = 26", "n_bunches = 7", "unknown = 1", "n_feats = many",
                                  "blocks_per_bunch = 3, 3, 3, 3, 1, 3, 3, 3, 2", "just text"])
def test_config_rejects(text):
    with pytest.raises(ConfigurationError):
        ModelConfig.from_text(text)
