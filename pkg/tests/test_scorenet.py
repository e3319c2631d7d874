import numpy as np
import pytest
from conftest import gradient_error

from srg import autodiff as ad
from srg import scorenet as sn
from srg.encoder import ConditionEmbedding
from srg.grid import choose_grid, flatten_from_grid, grid_mask, reshape_to_grid

TOL = 1e-4


def small_cfg(h=2, w=2, seed=0):
    return sn.DenoiserConfig(h, w, channels=2, heads=1, token_dim=2, seed=seed)


def batch(cfg, n, B=2, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((B, cfg.h, cfg.w))
    gm = np.broadcast_to(grid_mask(n, cfg.h, cfg.w), (B, cfg.h, cfg.w)).copy()
    x *= gm
    tok = rng.standard_normal((B, n, cfg.token_dim))
    t = rng.integers(1, 20, size=B)
    return x, t, tok, gm


# ------------------------------------------------------------------ grid

def test_grid_roundtrip_and_padding():
    x = np.arange(3.0)
    g = reshape_to_grid(x, 2, 2)
    assert g.pad_mask.tolist() == [[True, True], [True, False]]
    assert g.values[0, 1, 1] == 0.0
    np.testing.assert_array_equal(flatten_from_grid(g), x)
    full = reshape_to_grid(np.arange(6.0), 2, 3)
    assert full.pad_mask.all()
    np.testing.assert_array_equal(full.values[0], np.arange(6.0).reshape(2, 3))
    a, b = np.random.default_rng(0).random((2, 5))
    ga, gb = reshape_to_grid(a, 2, 3), reshape_to_grid(b, 2, 3)
    assert np.linalg.norm(a - b) == pytest.approx(np.linalg.norm(ga.values - gb.values))
    with pytest.raises(ValueError):
        reshape_to_grid(np.zeros(7), 2, 3)


@pytest.mark.parametrize("n, hw", [(50, (5, 10)), (16, (4, 4)), (2, (1, 2)), (7, (3, 3)),
                                   (43, (7, 7))])
def test_choose_grid(n, hw):
    assert choose_grid(n) == hw


# ------------------------------------------------------------- gradients

def test_linear_layer_outer_product_rule():
    rng = np.random.default_rng(0)
    x, W, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2)), rng.standard_normal(2)
    Wt = ad.leaf(W)
    out = ad.add(ad.matmul(ad.const(x), Wt), ad.const(b))
    g = rng.standard_normal((3, 2))
    out.backward(g)
    np.testing.assert_allclose(Wt.grad, x.T @ g, rtol=1e-14)


def test_cross_attention_gradients():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        arrays = {"x": rng.standard_normal((2, 5, 4)), "tok": rng.standard_normal((2, 5, 3)),
                  "WQ": rng.standard_normal((4, 4)), "WK": rng.standard_normal((3, 4)),
                  "WV": rng.standard_normal((3, 4)), "bias": rng.standard_normal(2)}
        mask = np.array([[True] * 5, [True, True, True, False, False]])
        err = gradient_error(lambda t: sn.cross_attention(
            t["x"], t["tok"], t["WQ"], t["WK"], t["WV"], 2, mask, t["bias"]), arrays, rng)
        assert err < TOL


def test_res_block_gradients():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        C = 2
        arrays = {"h": rng.standard_normal((2, C, 3, 3)), "temb": rng.standard_normal((2, C)),
                  "r.conv1.w": rng.standard_normal((C, C, 3, 3)), "r.conv1.b": rng.standard_normal(C),
                  "r.tproj.W": rng.standard_normal((C, C)), "r.tproj.b": rng.standard_normal(C),
                  "r.conv2.w": rng.standard_normal((C, C, 3, 3)), "r.conv2.b": rng.standard_normal(C)}
        m = ad.const(np.ones((2, 1, 3, 3)))
        err = gradient_error(lambda t: sn._res_block(t, "r", t["h"], t["temb"], m), arrays, rng)
        assert err < TOL


def test_full_forward_gradients():
    cfg = small_cfg(2, 2)
    for seed in range(20):
        params = sn.init_params(sn.DenoiserConfig(2, 2, 2, 1, 2, seed), dtype=np.float64)
        rng = np.random.default_rng(seed)
        x, t, tok, gm = batch(cfg, 3, seed=seed)
        arrays = dict(params.arrays, x=x, tok=tok)
        err = gradient_error(
            lambda tp: sn.forward_tensor(tp, cfg, tp["x"], t, tp["tok"], gm), arrays, rng)
        assert err < TOL


def test_zero_loss_gradient_gives_zero_parameter_gradients():
    cfg = small_cfg()
    params = sn.init_params(cfg)
    x, t, tok, gm = batch(cfg, 4)
    out, tape = sn.forward_batch(params, x, t, tok, gm)
    grads = sn.backward(tape, np.zeros_like(out))
    assert all(not g.any() for g in grads.values())


# ------------------------------------------------------------- structure

def test_attention_rows_are_distributions():
    rng = np.random.default_rng(0)
    x = ad.const(rng.standard_normal((2, 6, 4)))
    tok = ad.const(rng.standard_normal((2, 5, 3)))
    W = [ad.const(rng.standard_normal(s)) for s in ((4, 4), (3, 4), (3, 4))]
    mask = np.array([[True] * 5, [True, True, False, True, False]])
    _, probs = sn.cross_attention(x, tok, *W, 2, mask, ad.const(np.ones(2)), return_probs=True)
    np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, atol=1e-6)
    assert np.all(probs.data[1, :, :, [2, 4]] == 0)


def test_token_permutation_invariance_without_self_bias():
    rng = np.random.default_rng(1)
    x = ad.const(rng.standard_normal((1, 4, 4)))
    tok = rng.standard_normal((1, 5, 3))
    W = [ad.const(rng.standard_normal(s)) for s in ((4, 4), (3, 4), (3, 4))]
    perm = rng.permutation(5)
    a = sn.cross_attention(x, ad.const(tok), *W, 2).data
    b = sn.cross_attention(x, ad.const(tok[:, perm]), *W, 2).data
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_self_bias_pulls_cells_to_their_own_token():
    rng = np.random.default_rng(2)
    x = ad.const(rng.standard_normal((1, 4, 4)))
    tok = ad.const(rng.standard_normal((1, 4, 3)))
    W = [ad.const(0.1 * rng.standard_normal(s)) for s in ((4, 4), (3, 4), (3, 4))]
    _, p0 = sn.cross_attention(x, tok, *W, 2, return_probs=True)
    _, p1 = sn.cross_attention(x, tok, *W, 2, self_bias=ad.const(np.full(2, 3.0)),
                               return_probs=True)
    diag0 = np.einsum("bhii->bhi", p0.data)
    diag1 = np.einsum("bhii->bhi", p1.data)
    assert np.all(diag1 > diag0)
    assert np.all(np.argmax(p1.data, axis=-1) == np.arange(4))


def test_zero_params_output_is_bias_pattern():
    cfg = small_cfg(2, 2)
    params = sn.init_params(cfg, dtype=np.float64)
    for k in params.arrays:
        params.arrays[k][...] = 0.0
    params.arrays["conv_out.b"][...] = 0.7
    x, t, tok, gm = batch(cfg, 3)
    out = sn.predict(params, np.zeros_like(x), t, tok, gm)
    np.testing.assert_array_equal(out, 0.7 * gm)


def test_padding_cells_do_not_influence_real_cells():
    cfg = sn.DenoiserConfig(3, 3, channels=4, heads=2, token_dim=4)
    params = sn.init_params(cfg)
    x, t, tok, gm = batch(cfg, 7, B=1)
    base = sn.predict(params, x, t, tok, gm)
    x2 = x.copy()
    x2[~gm] = 100.0
    out = sn.predict(params, x2, t, tok, gm)
    np.testing.assert_array_equal(out, base)
    assert np.all(out[~gm] == 0)


def test_shape_errors_and_nan_detection():
    cfg = small_cfg()
    params = sn.init_params(cfg)
    x, t, tok, gm = batch(cfg, 4)
    with pytest.raises(ValueError):
        sn.predict(params, np.zeros((2, 3, 3)), t, tok, np.ones((2, 3, 3), bool))
    with pytest.raises(ValueError):
        sn.predict(params, x, t, np.zeros((2, 4, 5)), gm)
    bad = params.copy()
    bad.arrays["conv_out.b"][...] = np.nan
    with pytest.raises(sn.NaNError):
        sn.predict(bad, x, t, tok, gm)
    with pytest.raises(ValueError):
        sn.DenoiserConfig(2, 2, channels=6, heads=4)


def test_single_sample_forward_matches_batch():
    cfg = small_cfg()
    params = sn.init_params(cfg)
    x, t, tok, gm = batch(cfg, 3, B=1)
    g = sn.forward(params, reshape_to_grid(x[0].reshape(-1)[:3], 2, 2), int(t[0]),
                   ConditionEmbedding(tok[0].astype(np.float32)))
    np.testing.assert_array_equal(g.values, sn.predict(params, x, t, tok, gm))


def test_adam_step_moves_against_gradient():
    p = {"w": np.array([1.0, -1.0])}
    st = sn.AdamState.zeros_like(p)
    sn.adam_step(p, {"w": np.array([2.0, -3.0])}, st, sn.AdamConfig(lr=0.1))
    np.testing.assert_allclose(p["w"], [0.9, -0.9], rtol=1e-6)
    assert st.step == 1


def test_checkpoint_roundtrip_and_version_check(tmp_path):
    cfg = sn.DenoiserConfig(2, 3, channels=4, heads=2, token_dim=4, seed=5)
    params = sn.init_params(cfg)
    enc = {"W": np.arange(6, dtype=np.float32).reshape(2, 3)}
    path = sn.save_checkpoint(tmp_path / "m.ckpt", params, enc, {"beta": [0.1, 0.2]})
    p2, e2, extra = sn.load_checkpoint(path)
    assert p2.config == cfg and extra == {"beta": [0.1, 0.2]}
    assert all(np.array_equal(p2.arrays[k], v) for k, v in params.arrays.items())
    assert np.array_equal(e2["W"], enc["W"])
    assert sn.save_checkpoint(tmp_path / "again.ckpt", p2, e2, extra).read_bytes() == \
        path.read_bytes()
    raw = bytearray(path.read_bytes())
    raw[8] = 99
    (tmp_path / "bad.ckpt").write_bytes(bytes(raw))
    with pytest.raises(sn.CheckpointError, match="version"):
        sn.load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"hello")
    with pytest.raises(sn.CheckpointError):
        sn.load_checkpoint(tmp_path / "junk.ckpt")
