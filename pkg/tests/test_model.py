import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lantnet import model as M
from lantnet import tensor as T
from lantnet.diff_image import log_ratio
from lantnet.patches import SampleSet
from lantnet.raster_io import RasterImage


@pytest.fixture(scope="module")
def params7():
    return M.init_params(7, seed=3)


def test_init(params7):
    np.testing.assert_array_equal(params7["attn_diag"], [1, 1, 1, 1])
    assert params7["fc_w"].size == 3136
    again = M.init_params(7, seed=3)
    for name in params7.names():
        np.testing.assert_array_equal(params7[name], again[name])
        if name.endswith("_b"):
            assert not params7[name].any()
    for name, (cout, cin, k) in M.CONV_LAYERS.items():
        w = params7[f"{name}_w"]
        assert w.shape == (cout, cin, k, k)
        assert np.abs(w).max() <= np.sqrt(1 / (cin * k * k))
    with pytest.raises(ValueError):
        M.init_params(6)


def test_w_is_a_diagonal_only(params7):
    # the attention matrix exists only as its 4-entry diagonal, so off-diagonal
    # entries can never be trained
    attn = [n for n in params7.names() if n.startswith("attn")]
    assert attn == ["attn_diag"] and params7["attn_diag"].shape == (4,)


def test_stem_shapes_and_zero_input():
    p = M.init_params(9, 0)
    X, _ = M.stem_forward(p, np.random.default_rng(0).uniform(size=(3, 9, 9)))
    assert X.shape == (4, 32, 9, 9)
    X0, _ = M.stem_forward(p, np.zeros((3, 9, 9)))
    assert not X0.any()
    with pytest.raises(T.ShapeError):
        M.stem_forward(p, np.zeros((3, 7, 7)))


def test_stem_gradient_through_readout(rng):
    p = M.init_params(5, 1)
    x = rng.uniform(size=(1, 3, 5, 5))
    c = rng.normal(size=(1, 4, 32, 5, 5))
    X, cache = M.stem_forward(p, x)
    grads = M.stem_backward(p, cache, c)

    def masks():
        cc = M.stem_forward(p, x)[1]
        return b"".join(np.packbits(cc[k][1]).tobytes() for k in sorted(cc) if k.startswith("relu"))

    base = masks()
    h = 1e-4
    for name in ("stem0_w", "stem1_w", "stem3_b", "lift0_w", "lift0_b"):
        flat = p.tensors[name].reshape(-1)
        checked = 0
        for i in rng.choice(flat.size, min(flat.size, 40), replace=False):
            orig = flat[i]
            flat[i] = orig + h
            fp, mp = float(np.sum(c * M.stem_forward(p, x)[0])), masks()
            flat[i] = orig - h
            fm, mm = float(np.sum(c * M.stem_forward(p, x)[0])), masks()
            flat[i] = orig
            if mp != base or mm != base:
                continue  # the +-h segment crosses a ReLU kink
            checked += 1
            assert T.relative_error(grads[name].reshape(-1)[i], (fp - fm) / (2 * h)) < 1e-4
        assert checked >= 5, name


# ---------------------------------------------------------------- attention


def test_attention_zero_input():
    Y, cache = M.layer_attention_forward(np.zeros((4, 32, 3, 3)), np.ones(4))
    np.testing.assert_array_equal(cache["A"][0], np.full((4, 4), 0.25))
    assert not Y.any()


def test_attention_identical_slices(rng):
    s = rng.normal(size=(32, 3, 3)) * 0.1
    X = np.stack([s] * 4)
    Y, cache = M.layer_attention_forward(X, np.ones(4))
    np.testing.assert_allclose(cache["A"][0], 0.25, atol=1e-12)
    np.testing.assert_allclose(Y, 2 * X, rtol=0, atol=1e-12)


def test_attention_two_layer_hand_oracle():
    X = np.array([1.0, 2.0]).reshape(2, 1, 1, 1)
    Y, cache = M.layer_attention_forward(X, np.ones(2))
    e = np.exp
    a = np.array([[e(1) / (e(1) + e(2)), e(2) / (e(1) + e(2))], [e(2) / (e(2) + e(4)), e(4) / (e(2) + e(4))]])
    np.testing.assert_allclose(cache["A"][0], a, atol=1e-12)
    want = [a[0, 0] * 1 + a[0, 1] * 2 + 1, a[1, 0] * 1 + a[1, 1] * 2 + 2]
    np.testing.assert_allclose(Y.ravel(), want, atol=1e-12)


def test_attention_rows_and_scaling(rng):
    X = rng.normal(size=(4, 32, 5, 5)) * 0.05
    d = rng.uniform(0.5, 1.5, 4)
    _, base = M.layer_attention_forward(X, d)
    A = base["A"][0]
    np.testing.assert_allclose(A.sum(axis=1), 1, atol=1e-12)
    assert np.all((A > 0) & (A < 1))
    _, scaled = M.layer_attention_forward(X, 3.0 * d)
    np.testing.assert_allclose(scaled["Xh"], 3.0 * base["Xh"], rtol=1e-14)
    np.testing.assert_allclose(scaled["G"], 9.0 * base["G"], rtol=1e-13)


def test_attention_shape_error():
    with pytest.raises(T.ShapeError):
        M.layer_attention_forward(np.zeros((4, 32, 3, 3)), np.ones(3))


# ---------------------------------------------------------------- head


def test_head_zero_features():
    p = M.init_params(5, 0)
    probs, _ = M.head_forward(p, np.zeros((4, 32, 5, 5)))
    np.testing.assert_array_equal(probs, [0.5, 0.5])


def test_head_probabilities_sum_to_one(rng):
    p = M.init_params(5, 2)
    probs, _ = M.head_forward(p, rng.normal(size=(6, 4, 32, 5, 5)))
    np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-12)


# ---------------------------------------------------------------- losses


def test_mae_examples():
    assert M.mae_loss([1.0, 0.0], 0)[0] == 0
    assert M.mae_loss([0.5, 0.5], 0)[0] == 1.0
    np.testing.assert_array_equal(M.mae_loss([0.3, 0.7], 0)[1], [-1, 1])


def test_ce_examples():
    assert M.ce_loss([0.0, 1.0], 1)[0] == 0
    assert M.ce_loss([0.5, 0.5], 1)[0] == pytest.approx(0.693147, abs=1e-6)
    loss, g = M.ce_loss([1.0, 1e-20], 1)
    assert loss == pytest.approx(-np.log(1e-12)) and np.isfinite(loss)
    assert not g.any()
    np.testing.assert_allclose(M.ce_loss([0.2, 0.8], 1)[1], [0, -1 / 0.8])


def test_combined_examples(rng):
    w = M.LossWeights()
    assert float(M.combined_loss([0.5, 0.5], 0, w)[0]) == pytest.approx(0.969315, abs=1e-6)
    f = rng.dirichlet([1, 1], size=5)
    y = rng.integers(0, 2, 5)
    np.testing.assert_allclose(M.combined_loss(f, y, M.LossWeights(0, 1))[0], M.mae_loss(f, y)[0])
    np.testing.assert_allclose(M.combined_loss(f, y, M.LossWeights(1, 0))[0], M.ce_loss(f, y)[0])


@pytest.mark.parametrize("f", [[0.5, 0.6], [np.nan, 1.0], [-0.1, 1.1], [1.0]])
def test_invalid_probabilities(f):
    with pytest.raises(T.NumericError):
        M.mae_loss(f, 0)
    with pytest.raises(T.NumericError):
        M.ce_loss(f, 0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1))
def test_mae_symmetry(p):
    f = [1 - p, p]
    assert M.mae_loss(f, 0)[0] + M.mae_loss(f, 1)[0] == pytest.approx(2.0, abs=1e-9)


@pytest.mark.parametrize("bad", [(-0.1, 1.0), (0.0, 0.0), (0.5, -1.0)])
def test_loss_weights_validated(bad):
    with pytest.raises(ValueError):
        M.LossWeights(*bad)


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(batch_size=0), dict(lr=-1.0), dict(flip_rate=1.0)])
def test_train_config_validated(kw):
    with pytest.raises(ValueError):
        M.TrainConfig(**kw)


# ---------------------------------------------------------------- training


def separable_set(n=200, r=3, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    patches = rng.uniform(0, 0.3, size=(n, 3, r, r))
    patches[y == 1, 2] += 0.6
    patches[y == 1, 1] += 0.5
    order = rng.permutation(n)
    return SampleSet(patches[order], y[order].astype(np.int64), np.zeros((n, 2), dtype=np.int64))


def test_train_lr_zero_keeps_params():
    s = separable_set(40)
    init = M.init_params(3, 5)
    res = M.train(s, M.TrainConfig(epochs=3, lr=0.0, batch_size=16), init=init)
    for name in init.names():
        np.testing.assert_array_equal(res.params[name], init[name])


def test_train_deterministic():
    s = separable_set(60)
    cfg = M.TrainConfig(epochs=2, batch_size=16, seed=4)
    a, b = M.train(s, cfg), M.train(s, cfg)
    for name in a.params.names():
        np.testing.assert_array_equal(a.params[name], b.params[name])
    assert a.loss_trace == b.loss_trace


def test_train_fits_separable_set():
    s = separable_set(200)
    res = M.train(s, M.TrainConfig(epochs=30, batch_size=16, seed=0))
    trace = res.loss_trace
    assert all(b < a for a, b in zip(trace[:5], trace[1:5]))
    probs = M.predict_proba(res.params, s.patches)
    acc = np.mean((probs[:, 1] > probs[:, 0]) == s.labels)
    assert acc >= 0.99


def test_train_input_errors():
    s = separable_set(20)
    with pytest.raises(ValueError):
        M.train(SampleSet(s.patches[:0], s.labels[:0], s.pixel_index[:0]))
    one = SampleSet(s.patches, np.zeros(20, dtype=np.int64), s.pixel_index)
    with pytest.raises(ValueError):
        M.train(one)


def test_attention_off_leaves_diag(rng):
    s = separable_set(40)
    res = M.train(s, M.TrainConfig(epochs=1, batch_size=16, attention=False))
    np.testing.assert_array_equal(res.params["attn_diag"], np.ones(4))


def test_attention_off_is_identity_block(rng):
    p = M.init_params(3, 0)
    x = rng.uniform(size=(5, 3, 3, 3))
    X, _ = M.stem_forward(p, x)
    probs_off, _ = M.forward(p, x, attention=False)
    np.testing.assert_array_equal(probs_off, M.head_forward(p, X)[0])


# ---------------------------------------------------------------- inference and checkpoints


def small_pair(rng, shape=(9, 11)):
    i1 = RasterImage(rng.integers(0, 256, shape).astype(float))
    i2 = RasterImage(rng.integers(0, 256, shape).astype(float))
    return i1, i2, log_ratio(i1, i2)


def test_tie_resolves_to_unchanged(rng):
    p = M.init_params(5, 0)
    p.tensors["fc_w"][:] = 0.0
    cmap = M.predict_map(p, *small_pair(rng))
    assert cmap.shape == (9, 11) and not cmap.labels.any()


def test_predict_map_matches_per_pixel(rng):
    from lantnet.patches import extract_patch

    p = M.init_params(5, 8)
    p.tensors["fc_b"][:] = [0.0, 0.02]
    i1, i2, di = small_pair(rng)
    cmap = M.predict_map(p, i1, i2, di, batch_size=7)
    for row, col in [(0, 0), (4, 5), (8, 10), (2, 9)]:
        f = M.forward(p, extract_patch(i1, i2, di, (row, col), 5)[None])[0][0]
        assert cmap.labels[row, col] == int(f[1] > f[0])
    with pytest.raises(ValueError):
        M.predict_map(p, i1, i2, di, r=7)


def test_checkpoint_round_trip(tmp_path):
    p = M.init_params(5, 9)
    cfg = M.TrainConfig(epochs=3, seed=2, loss_weights=M.LossWeights(1.0, 0.0))
    M.save_checkpoint(tmp_path / "a.ckpt", p, cfg)
    q, cfg2 = M.load_checkpoint(tmp_path / "a.ckpt", r=5)
    assert cfg2 == cfg
    for name in p.names():
        np.testing.assert_array_equal(p[name], q[name])
    M.save_checkpoint(tmp_path / "b.ckpt", q, cfg2)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_rejections(tmp_path):
    buf = M.encode_checkpoint(M.init_params(5, 0))
    with pytest.raises(M.CheckpointError, match="R=5"):
        M.decode_checkpoint(buf, r=7)
    with pytest.raises(M.CheckpointError):
        M.decode_checkpoint(b"NOTACKPT" + buf[8:])
    with pytest.raises(M.CheckpointError):
        M.decode_checkpoint(buf[:-8])


# ---------------------------------------------------------------- gradient verification


def test_loss_difference_matches_direct():
    w = M.LossWeights()
    dp, dm = np.array([0.3, -1.2]), np.array([0.1, -1.5])

    def direct(d):
        return w.alpha * np.log1p(np.exp(d)) + w.beta * 2 / (1 + np.exp(-d))

    assert M.loss_difference(dp, dm, w) == pytest.approx(np.mean(direct(dp) - direct(dm)), rel=1e-12)


def test_margin_form_equals_loss(rng):
    p = M.init_params(3, 1)
    x = rng.uniform(size=(4, 3, 3, 3))
    y = np.array([0, 1, 1, 0])
    d, _, _ = M._probe(p, x, y, True)
    w = M.LossWeights()
    want = w.alpha * np.log1p(np.exp(d)) + w.beta * 2 / (1 + np.exp(-d))
    assert M.loss_value(p, x, y, w) == pytest.approx(float(np.mean(want)), rel=1e-12)


def test_check_gradients_small_model(rng):
    p = M.init_params(3, 0)
    x = rng.uniform(size=(2, 3, 3, 3))
    res = M.check_gradients(p, x, [0, 1], max_per_group=30)
    assert set(res) == set(p.names())
    for name, g in res.items():
        assert g.checked > 0, name
        assert g.max_rel_error < 1e-4, (name, g)
