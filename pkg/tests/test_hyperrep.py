import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fd_check
from zootwin.engine import ShapeError, Tensor, precision
from zootwin.hyperrep import (
    BIAS_ALPHA,
    AEConfig,
    Autoencoder,
    LayerStats,
    LossConfig,
    TrainConfig,
    augment,
    build_population,
    chunk,
    detokenize,
    evaluate_loss,
    load_ae,
    loss_contrastive,
    loss_recon_alpha,
    loss_recon_w,
    probe,
    probe_all,
    reconstruction_r2,
    save_ae,
    save_embeddings,
    shuffled_control,
    split_by_model,
    tokenize,
    total_loss,
    train_ae,
)
from zootwin.hyperrep.probe import ridge_fit
from zootwin.hyperrep.tokens import param_layout
from zootwin.sparsify import vd_wrap
from zootwin.zoo.arch import GeneratingFactors, build_model, small_cnn
from zootwin.zoo.checkpoint import load_checkpoint

E = math.e


# -- loss oracles ----------------------------------------------------------------
def test_alpha_loss_worked_example():
    v = loss_recon_alpha(np.array([[4.0]]), np.array([[3.0]]), t=3.0, r=1.0).item()
    assert v == pytest.approx(math.tanh(1.0) ** 2, abs=1e-6)
    assert v == pytest.approx(0.580026, abs=1e-5)


def test_alpha_loss_zero_and_saturation():
    a = np.random.default_rng(0).uniform(-10, 10, (2, 5))
    assert loss_recon_alpha(a, a).item() == 0.0
    assert loss_recon_alpha(np.array([[20.0]]), np.array([[10.0]])).item() < 1e-5
    with pytest.raises(ValueError):
        loss_recon_alpha(a, a, r=0.0)


def test_alpha_loss_mean_over_models():
    one = loss_recon_alpha(np.array([[4.0, 3.0]]), np.array([[3.0, 3.0]])).item()
    two = loss_recon_alpha(np.array([[4.0, 3.0], [3.0, 3.0]]), np.array([[3.0, 3.0], [3.0, 3.0]])).item()
    assert two == pytest.approx(one / 2)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(-50, 50), b=st.floats(-50, 50), t=st.floats(-5, 5), r=st.floats(0.1, 5))
def test_alpha_loss_bounded(a, b, t, r):
    v = loss_recon_alpha(np.array([[a]]), np.array([[b]]), t, r).item()
    assert 0.0 <= v <= 4.0 + 1e-6


def test_weight_loss_worked_example():
    v = loss_recon_w(np.array([[1.0, 1.0]]), np.array([[0.0, 0.0]]), 0.0, 1.0, np.ones((1, 2))).item()
    assert v == pytest.approx(1.0, abs=1e-6)
    same = np.ones((2, 3))
    assert loss_recon_w(same, same, 0.5, 2.0, np.ones(3)).item() == 0.0


def test_weight_loss_sigma_scaling_and_mu_cancellation():
    rng = np.random.default_rng(1)
    w_hat, w = rng.standard_normal((2, 4)), rng.standard_normal((2, 4))
    sigma = np.array([1.0, 1.0, 2.0, 2.0])
    valid = np.ones(4)
    base = loss_recon_w(w_hat, w, 0.0, np.ones(4), valid).item()
    scaled = loss_recon_w(w_hat, w, 0.0, sigma, valid).item()
    part = ((w_hat - w) ** 2)
    expect = (part[:, :2].sum() + part[:, 2:].sum() / 4) / 8
    assert scaled == pytest.approx(expect, rel=1e-6)
    assert base == pytest.approx(part.sum() / 8, rel=1e-6)
    mu = rng.standard_normal(4) * 10
    assert loss_recon_w(w_hat, w, mu, sigma, valid).item() == pytest.approx(scaled, rel=1e-5)


def test_weight_loss_ignores_padding():
    valid = np.array([1.0, 1.0, 0.0])
    v = loss_recon_w(np.array([[1.0, 1.0, 99.0]]), np.zeros((1, 3)), 0.0, 1.0, valid).item()
    assert v == pytest.approx(1.0)


def test_contrastive_single_pair_is_zero():
    z = np.array([[1.0, 2.0], [-3.0, 0.5]])
    assert loss_contrastive(z, 0.7).item() == pytest.approx(0.0, abs=1e-6)


def test_contrastive_two_orthogonal_pairs():
    z = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    expect = 4 * -math.log(E / (E + 2))
    with precision(np.float64):
        assert loss_contrastive(z, 1.0).item() == pytest.approx(expect, abs=1e-9)


def test_contrastive_monotone_in_positive_similarity():
    vals = []
    for ang in (1.2, 0.8, 0.4, 0.0):
        z = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [math.cos(ang), math.sin(ang), 0.0], [0.0, 0.0, 1.0]])
        vals.append(loss_contrastive(z, 0.5).item())
    assert all(a > b for a, b in zip(vals, vals[1:]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(2, 5))
def test_contrastive_pair_order_invariant(seed, m):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((m, 4)), rng.standard_normal((m, 4))
    perm = rng.permutation(m)
    with precision(np.float64):
        v1 = loss_contrastive(np.concatenate([a, b]), 0.3).item()
        v2 = loss_contrastive(np.concatenate([a[perm], b[perm]]), 0.3).item()
        v3 = loss_contrastive(np.concatenate([b, a]), 0.3).item()
    assert v1 == pytest.approx(v2, rel=1e-9) and v1 == pytest.approx(v3, rel=1e-9)


def test_contrastive_rejects_odd_batches():
    with pytest.raises(ValueError):
        loss_contrastive(np.ones((3, 2)), 0.1)
    with pytest.raises(ValueError):
        loss_contrastive(np.ones((0, 2)), 0.1)


def test_total_loss_arithmetic():
    assert total_loss(2.0, 1.0, 1.0, 0.5) == 2.0
    assert total_loss(7.0, 1.0, 2.0, 0.0) == 3.0
    assert total_loss(7.0, 1.0, 2.0, 1.0) == 7.0
    with pytest.raises(ValueError):
        total_loss(1.0, 1.0, 1.0, 1.5)


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(beta=-0.1)
    with pytest.raises(ValueError):
        LossConfig(temperature=0.0)
    with pytest.raises(ValueError):
        LossConfig(alpha_range=-1.0)


@pytest.mark.parametrize("which", ["alpha", "weight", "contrastive"])
def test_loss_gradients(which):
    rng = np.random.default_rng(2)
    if which == "alpha":
        target = rng.uniform(0, 6, (2, 5))
        fn = lambda t: loss_recon_alpha(t[0], target, 3.0, 1.5)  # noqa: E731
        x = rng.uniform(0, 6, (2, 5))
    elif which == "weight":
        target, sigma = rng.standard_normal((2, 5)), rng.uniform(0.5, 2, 5)
        fn = lambda t: loss_recon_w(t[0], target, 0.3, sigma, np.ones(5))  # noqa: E731
        x = rng.standard_normal((2, 5))
    else:
        fn = lambda t: loss_contrastive(t[0], 0.5)  # noqa: E731
        x = rng.standard_normal((4, 3))
    assert fd_check(fn, [x]) < 1e-3


# -- tokenization ----------------------------------------------------------------
def test_chunk_arithmetic():
    toks, pad = chunk(np.arange(2416, dtype=np.float32), 64)
    assert toks.shape == (38, 64) and pad == 16
    assert np.all(toks[-1, -16:] == 0)


def test_tokenize_small_model():
    m = build_model(small_cnn(), GeneratingFactors())
    seq, a = tokenize(m, vd_wrap(m).log_alpha(), d_tok=64)
    assert seq.n_tokens == 39 and seq.pad == 39 * 64 - 2464
    assert a.shape == seq.tokens.shape
    # bias alphas carry the sentinel, padding is zero
    start = m.params["layer_0.weight"].size
    assert np.all(a.ravel()[start : start + 8] == BIAS_ALPHA)
    assert np.all(a.ravel()[2464:] == 0) and np.all(seq.tokens.ravel()[2464:] == 0)


def test_detokenize_round_trip():
    m = build_model(small_cnn(), GeneratingFactors(seed=9))
    seq, _ = tokenize(m, d_tok=50)
    back = detokenize(seq.tokens, m)
    assert all(back.params[k].tobytes() == m.params[k].tobytes() for k in m.params)


def test_layer_map_matches_layout():
    m = build_model(small_cnn(), GeneratingFactors())
    seq, _ = tokenize(m, d_tok=64)
    pos = 0
    for name, shape, li in param_layout(m):
        n = int(np.prod(shape))
        assert name.startswith(f"layer_{li}.")
        assert np.all(seq.layer_of[pos : pos + n] == li)
        pos += n
    assert np.all(seq.layer_of[pos:] == -1)
    assert seq.valid.sum() == m.num_params()


def test_tokenize_alpha_errors():
    m = build_model(small_cnn(), GeneratingFactors())
    la = vd_wrap(m).log_alpha()
    la["layer_0.weight"] = la["layer_0.weight"][:1]
    with pytest.raises(ShapeError):
        tokenize(m, la)


# -- augmentation ----------------------------------------------------------------
def test_augment_identity():
    rng = np.random.default_rng(0)
    w, a, s = rng.standard_normal((10, 4)), rng.standard_normal((10, 4)), np.ones((10, 4))
    vw, va = augment(w, a, s, rng, gamma=0.0, rho=0.0)
    np.testing.assert_array_equal(vw, w.astype(np.float32))
    np.testing.assert_array_equal(va, a.astype(np.float32))


def test_augment_views_differ_and_alpha_not_noised():
    w, a, s = np.ones((20, 4)), np.full((20, 4), 2.0), np.ones((20, 4))
    v1 = augment(w, a, s, np.random.default_rng(1))
    v2 = augment(w, a, s, np.random.default_rng(2))
    assert not np.array_equal(v1[0], v2[0])
    assert set(np.unique(v1[1])) <= {0.0, 2.0}
    erased = np.all(v1[1] == 0, axis=1)
    assert np.all(v1[0][erased] == 0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), s=st.integers(1, 60), rho=st.floats(0.0, 0.9))
def test_augment_erase_fraction(seed, s, rho):
    w = np.ones((s, 3))
    vw, _ = augment(w, np.ones((s, 3)), np.zeros((s, 3)), np.random.default_rng(seed), 0.0, rho)
    frac = np.mean(np.all(vw == 0, axis=1))
    assert abs(frac - rho) <= 1.0 / s + 1e-12


# -- autoencoder -----------------------------------------------------------------
MICRO = AEConfig(n_tokens=3, d_tok=4, d_model=8, heads=2, enc_blocks=1, dec_blocks=1, d_z=4, mlp_ratio=2, proj_dim=3)


def test_encode_decode_shapes_and_determinism():
    ae = Autoencoder(MICRO, seed=0)
    x = np.random.default_rng(0).standard_normal((5, 3, 4))
    z = ae.encode(x)
    assert z.shape == (5, 4)
    assert np.array_equal(z.data, ae.encode(x).data)
    w, a = ae.decode(z)
    assert w.shape == (5, 3, 4) and a.shape == (5, 3, 4)
    w2, a2 = ae.decode(z)
    assert np.array_equal(w.data, w2.data) and np.array_equal(a.data, a2.data)
    assert ae.encode(x[0]).shape == (1, 4)


def test_encode_shape_error():
    ae = Autoencoder(MICRO)
    with pytest.raises(ShapeError):
        ae.encode(np.zeros((1, 4, 4)))
    with pytest.raises(ShapeError):
        ae.encode(np.zeros((1, 3, 5)))


def test_position_encoding_active():
    ae = Autoencoder(MICRO, seed=1)
    x = np.random.default_rng(3).standard_normal((1, 3, 4))
    assert not np.allclose(ae.encode(x).data, ae.encode(x[:, ::-1]).data)


def test_type_encoding_ablation():
    ae = Autoencoder(MICRO, seed=2)
    z = np.random.default_rng(4).standard_normal((2, 4))
    hw, ha = ae.decode_hidden(z, use_type=False)
    np.testing.assert_allclose(hw.data, ha.data, atol=1e-6)
    hw, ha = ae.decode_hidden(z, use_type=True)
    assert not np.allclose(hw.data, ha.data)


def test_ae_gradients_micro():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 3, 4))
    tw, ta = rng.standard_normal((4, 3, 4)), rng.uniform(-4, 8, (4, 3, 4))
    with precision(np.float64):
        ae = Autoencoder(MICRO, seed=3)
        names = list(ae.p)
        init = [ae.p[k].data.copy() for k in names]

        def loss(ts):
            for k, t in zip(names, ts):
                ae.p[k] = t
            xx = Tensor(np.concatenate([x, x + 0.1]))
            z = ae.encode(xx)
            w, a = ae.decode(z)
            lw = loss_recon_w(w, tw, 0.0, 0.7, np.ones((3, 4)))
            la = loss_recon_alpha(a, ta, 3.0, 2.0)
            return total_loss(loss_contrastive(ae.project(z), 0.5), lw, la, 0.3)

        err = fd_check(loss, init)
    assert err < 1e-3


# -- population, training, probes ------------------------------------------------
def _population(n_models=4, n_states=4, d_tok=64):
    items = []
    for mid in range(n_models):
        m = build_model(small_cnn(), GeneratingFactors(seed=mid))
        vd = vd_wrap(m)
        for ep in range(n_states):
            st_ = m.copy()
            la = vd.log_alpha()
            # fake a sparsification trajectory: shrink the smallest weights progressively
            for k in st_.weight_names():
                cut = np.quantile(np.abs(st_.params[k]), 0.15 * ep)
                la[k] = np.where(np.abs(st_.params[k]) <= cut, 5.0, la[k]).astype(np.float32)
                st_.params[k] = np.where(np.abs(st_.params[k]) <= cut, 0.0, st_.params[k]).astype(np.float32)
            rec = {"test_acc": 0.9 - 0.01 * ep, "sparsity": 0.15 * ep, "epoch": ep, "ggap": 0.01 * mid}
            items.append((mid, st_, la, rec))
    return build_population(items, d_tok)


def test_population_layout():
    pop = _population(2, 2)
    assert pop.w.shape == (4, 39, 64) and pop.alpha.shape == pop.w.shape
    assert pop.n_params == 2464 and pop.weight_valid.sum() == 2416
    assert pop.model_id.tolist() == [0, 0, 1, 1]
    sub = pop.subset([1, 3])
    assert sub.props["epoch"].tolist() == [1.0, 1.0]


def test_population_rejects_mixed_arch():
    from zootwin.zoo.arch import large_cnn

    a = build_model(small_cnn(), GeneratingFactors())
    b = build_model(large_cnn(), GeneratingFactors(activation="gelu"))
    rec = {"test_acc": 0.1, "sparsity": 0.0, "epoch": 0, "ggap": 0.0}
    with pytest.raises(ValueError, match="architecture"):
        build_population([(0, a, vd_wrap(a).log_alpha(), rec), (1, b, vd_wrap(b).log_alpha(), rec)])


def test_layer_stats_floor():
    pop = _population(1, 2)
    pop.w[:, 0, :] = 0.0  # first 64 weights of layer 0 constant does not zero the whole layer
    stats = LayerStats.compute(pop)
    assert set(stats.mu) == {0, 1, 2, 3, 4}
    assert all(s >= 1e-6 for s in stats.sigma.values())
    const = _population(1, 1)
    const.w[:] = 0.0
    assert LayerStats.compute(const).sigma[0] == 1e-6


def test_train_ae_reduces_loss_and_is_deterministic(tmp_path):
    pop = _population(3, 3)
    cfg = TrainConfig(epochs=3, batch=4, lr=2e-3, seed=1)
    ae_cfg = AEConfig(n_tokens=39, d_tok=64, d_model=16, heads=2, enc_blocks=1, dec_blocks=1, d_z=8, proj_dim=8)
    res = train_ae(pop, cfg, ae_cfg)
    log_ = res.loss_log
    assert [r["epoch"] for r in log_] == [0, 1, 2, 3]
    assert log_[-1]["eval_total"] < log_[0]["eval_total"]
    again = train_ae(pop, cfg, ae_cfg)
    assert [r["eval_total"] for r in again.loss_log] == [r["eval_total"] for r in log_]
    r2 = reconstruction_r2(res.ae, pop, pop)
    assert set(r2) == {"weights", "alphas"}
    # save / load
    save_ae(tmp_path / "ae.ztc", res, cfg)
    ae2, meta = load_ae(tmp_path / "ae.ztc")
    assert meta["train_config"]["epochs"] == 3
    np.testing.assert_array_equal(ae2.embed(pop.w[:2]), res.ae.embed(pop.w[:2]))
    ev = evaluate_loss(ae2, pop, res.stats, cfg)
    assert ev["total"] == pytest.approx(log_[-1]["eval_total"], rel=1e-4)
    z = res.ae.embed(pop.w)
    zp, side = save_embeddings(tmp_path / "emb.ztc", z, pop)
    assert load_checkpoint(zp)[0]["z"].shape == (9, 8)
    rows = json.loads(side.read_text())
    assert rows[4] == {"row": 4, "model_id": 1, "test_acc": pytest.approx(0.89), "sparsity": pytest.approx(0.15),
                       "epoch": 1.0, "ggap": pytest.approx(0.01)}


def test_pure_contrastive_leaves_reconstruction_at_baseline():
    pop = _population(4, 5)
    ae_cfg = AEConfig(n_tokens=39, d_tok=64, d_model=16, heads=2, enc_blocks=1, dec_blocks=1, d_z=8, proj_dim=8)
    r2 = {}
    for beta in (0.05, 1.0):
        cfg = TrainConfig(epochs=60, batch=4, lr=3e-3, seed=1, loss=LossConfig(beta=beta))
        r2[beta] = reconstruction_r2(train_ae(pop, cfg, ae_cfg).ae, pop, pop)
    for key in ("weights", "alphas"):
        assert r2[1.0][key] <= 0.05
        assert r2[1.0][key] < r2[0.05][key]


def test_train_config_round_trip():
    cfg = TrainConfig.from_dict({"epochs": 2, "loss": {"beta": 0.2}})
    assert cfg.loss.beta == 0.2 and TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_split_by_model_disjoint():
    ids = np.repeat(np.arange(10), 5)
    tr, te = split_by_model(ids, 0.2, seed=3)
    assert set(ids[tr]).isdisjoint(ids[te])
    assert len(set(ids[te])) == 2 and len(tr) + len(te) == 50


def test_ridge_recovers_linear_map():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((100, 6))
    y = z @ np.arange(1.0, 7.0) + 3.0
    coef, b = ridge_fit(z, y, lam=0.0)
    np.testing.assert_allclose(coef, np.arange(1.0, 7.0), atol=1e-9)
    assert b == pytest.approx(3.0)


def test_probe_linear_target_and_shuffled_control():
    rng = np.random.default_rng(1)
    ids = np.repeat(np.arange(20), 10)
    z = rng.standard_normal((200, 8))
    y = z @ rng.standard_normal(8)
    assert probe(z, y, ids, "accuracy").r2 == pytest.approx(1.0, abs=1e-6)
    ctrl = shuffled_control(z, y, ids, "accuracy")
    assert ctrl.target == "accuracy_shuffled" and ctrl.r2 <= 0.1


def test_probe_errors():
    ids = np.arange(30)
    with pytest.raises(ValueError, match="at least 20"):
        probe(np.zeros((10, 2)), np.arange(10.0), ids[:10])
    with pytest.raises(ValueError, match="degenerate"):
        probe(np.random.default_rng(0).standard_normal((30, 2)), np.ones(30), ids)


def test_probe_all_targets():
    rng = np.random.default_rng(2)
    z = rng.standard_normal((40, 3))
    props = {k: rng.standard_normal(40) for k in ("test_acc", "sparsity", "epoch", "ggap")}
    res = probe_all(z, props, np.repeat(np.arange(8), 5))
    assert [r.target for r in res] == ["accuracy", "sparsity", "epoch", "ggap"]
    assert all(r.n_train + r.n_test == 40 for r in res)
