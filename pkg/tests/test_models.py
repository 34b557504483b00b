import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import SMALL_DIMS, model_gradient_error
from pasnet import autodiff as ad
from pasnet.models import (KINDS, LossConfig, ModelDims, build_policy, channel_features,
                           load_checkpoint, loss_augmented, loss_bce, predict, save_checkpoint,
                           soft_snr)


def feats(rng, b=2, n=5):
    return rng.standard_normal((b, n, 2))


@pytest.mark.parametrize("kind,count", [("mlp", 49_921), ("gnnmlp", 132_737), ("dispn", 124_160)])
def test_parameter_counts(kind, count):
    assert build_policy(kind).num_parameters() == count


def test_unknown_kind():
    with pytest.raises(ValueError):
        build_policy("transformer")


def test_dims_validation():
    for kwargs in ({"gnn_layers": 0}, {"sharpening": 0.0}, {"key_dim": 0}):
        with pytest.raises(ValueError):
            ModelDims(**kwargs)


def test_channel_features():
    f = channel_features(np.array([[2j, -1.0]]))
    np.testing.assert_allclose(f, [[[2.0, np.pi / 2], [1.0, np.pi]]])


@pytest.mark.parametrize("kind", KINDS)
def test_gradients_match_finite_differences(kind):
    for seed in range(3):
        assert model_gradient_error(kind, seed) < 1e-4


@pytest.mark.parametrize("kind", KINDS)
def test_output_shapes_and_range(kind):
    rng = np.random.default_rng(0)
    scores, probs = build_policy(kind, SMALL_DIMS, seed=1)(feats(rng, 3, 7))
    assert scores.shape == probs.shape == (3, 7)
    assert np.all((probs.data > 0) & (probs.data < 1))


@pytest.mark.parametrize("kind", KINDS)
def test_permutation_equivariance(kind):
    rng = np.random.default_rng(1)
    x = feats(rng, 2, 6)
    perm = rng.permutation(6)
    model = build_policy(kind, SMALL_DIMS, seed=2)
    _, p = model(x)
    _, pp = model(x[:, perm])
    np.testing.assert_allclose(pp.data, p.data[:, perm], atol=1e-10)


@pytest.mark.parametrize("kind", KINDS)
def test_identical_antennas_identical_outputs(kind):
    x = np.tile(np.array([0.3, -1.2]), (1, 4, 1))
    _, p = build_policy(kind, SMALL_DIMS, seed=3)(x)
    np.testing.assert_allclose(p.data, p.data[:, :1].repeat(4, axis=1), rtol=1e-12)


@pytest.mark.parametrize("kind", ["mlp", "gnnmlp"])
def test_zero_fusion_gives_half(kind):
    model = build_policy(kind, SMALL_DIMS, seed=4)
    for p in model.fusion.parameters():
        p.data[...] = 0.0
    _, probs = model(feats(np.random.default_rng(2)))
    np.testing.assert_array_equal(probs.data, 0.5)


def test_mlp_single_antenna_mean_is_itself():
    model = build_policy("mlp", SMALL_DIMS, seed=5)
    x = np.array([[[0.7, 0.1]]])
    h = ad.relu(model.encoder(ad.as_tensor(x)))
    z = ad.concat([h, h], axis=-1)
    expected = ad.sigmoid(model.fusion(z).reshape((1, 1))).data
    np.testing.assert_allclose(model(x)[1].data, expected, rtol=1e-14)


def test_gnn_pooling_on_equal_edges():
    model = build_policy("gnnmlp", SMALL_DIMS, seed=6)
    x = np.tile(np.array([1.0, 0.5]), (1, 5, 1))
    ant, user, graph = model.encoder(x)
    np.testing.assert_allclose(ant.data, ant.data[:, :1].repeat(5, axis=1), rtol=1e-12)
    h = ant.data
    np.testing.assert_allclose(h.mean(axis=1), h.max(axis=1), rtol=1e-12)


def test_gnn_graph_embedding_permutation_invariant():
    rng = np.random.default_rng(7)
    x = feats(rng, 1, 8)
    enc = build_policy("gnnmlp", SMALL_DIMS, seed=7).encoder
    perm = rng.permutation(8)
    a = enc(x)
    b = enc(x[:, perm])
    np.testing.assert_allclose(b[0].data, a[0].data[:, perm], atol=1e-12)
    np.testing.assert_allclose(b[1].data, a[1].data, atol=1e-12)
    np.testing.assert_allclose(b[2].data, a[2].data, atol=1e-12)


def test_dispn_importance_bound():
    model = build_policy("dispn", ModelDims(hidden=8, key_dim=4, sharpening=10.0), seed=8)
    for p in model.parameters():
        p.data *= 40.0
    imp, probs, weights = model.attend(feats(np.random.default_rng(8), 4, 9) * 10)
    assert np.all(np.abs(imp.data) <= 10.0)
    lo = 1 / (1 + math.exp(10.0))
    assert np.all((probs.data >= lo) & (probs.data <= 1 - lo))
    assert np.all((weights.data >= 0) & (weights.data <= 1))


def test_predict_matches_forward_and_batches():
    rng = np.random.default_rng(9)
    gains = rng.standard_normal((7, 5)) + 1j * rng.standard_normal((7, 5))
    model = build_policy("dispn", SMALL_DIMS, seed=9)
    s1, p1 = predict(model, gains, batch_size=3)
    s2, p2 = model(channel_features(gains))
    np.testing.assert_allclose(s1, s2.data)
    np.testing.assert_allclose(p1, p2.data)
    s0, p0 = predict(model, np.zeros((0, 5), dtype=complex))
    assert s0.shape == p0.shape == (0, 5)


# -- losses -------------------------------------------------------------------

def test_bce_examples():
    assert loss_bce(np.array([0.5]), np.array([1])).item() == pytest.approx(math.log(2))
    assert loss_bce(np.array([1.0, 0.0]), np.array([1, 0])).item() == pytest.approx(0.0, abs=1e-11)
    with pytest.raises(ValueError):
        loss_bce(np.array([0.5, 0.5]), np.array([1]))


def test_bce_against_direct_formula():
    rng = np.random.default_rng(10)
    p = rng.uniform(0.01, 0.99, (4, 6))
    y = rng.random((4, 6)) > 0.5
    direct = -np.mean(np.sum(y * np.log(p) + (1 - y) * np.log(1 - p), axis=1))
    assert loss_bce(p, y).item() == pytest.approx(direct, rel=1e-12)


def _binary_gains(rng, n=6):
    return rng.standard_normal((1, n)) + 1j * rng.standard_normal((1, n))


def test_augmented_alpha_one_is_mean_bce():
    rng = np.random.default_rng(11)
    scores = rng.standard_normal((3, 5))
    y = rng.random((3, 5)) > 0.5
    gains = rng.standard_normal((3, 5)) + 1j * rng.standard_normal((3, 5))
    cfg = LossConfig(alpha=1.0, lambda_wbce=(1.0, 1.0), lambda_snr=(0.0, 0.0),
                     lambda_collapse=(0.0, 0.0))
    total, comp = loss_augmented(scores, y, gains, np.ones(3), 1.0, cfg)
    p = 1 / (1 + np.exp(-scores))
    bce = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p), axis=1)
    assert total.item() == pytest.approx(bce.mean(), rel=1e-10)
    assert comp["wbce"] == pytest.approx(bce.mean(), rel=1e-10)


def test_augmented_at_optimum():
    rng = np.random.default_rng(12)
    gains = _binary_gains(rng)
    bits = np.array([[1, 0, 1, 1, 0, 0]])
    gamma = 100.0 * abs(gains[bits.astype(bool)].sum()) ** 2 / 3
    scores = np.where(bits, 40.0, -40.0)
    total, comp = loss_augmented(scores, bits, gains, [gamma], 100.0, LossConfig())
    assert comp["snr"] == pytest.approx(0.0, abs=1e-14)
    assert comp["collapse"] == 0.0
    assert comp["wbce"] == pytest.approx(0.0, abs=1e-11)


@pytest.mark.parametrize("ratio,expected", [(0.05, 0.05), (0.2, 0.0)])
def test_collapse_hinge(ratio, expected):
    gains = np.array([[1.0 + 0j]])
    scores = np.array([[40.0]])
    _, comp = loss_augmented(scores, [[1]], gains, [1.0 / ratio], 1.0, LossConfig())
    assert comp["collapse"] == pytest.approx(expected, abs=1e-9)
    assert comp["snr"] == pytest.approx((1 - ratio) ** 2, rel=1e-7)


@pytest.mark.parametrize("kind", ["mlp", "dispn"])
def test_augmented_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(14)
    gains = rng.standard_normal((2, 6)) * 0.2 + 1j * rng.standard_normal((2, 6)) * 0.2
    labels = np.array([[1, 0, 1, 1, 0, 0], [0, 1, 0, 0, 1, 1]], dtype=bool)
    gamma = np.array([100.0 * abs(g[lab].sum()) ** 2 / lab.sum() for g, lab in zip(gains, labels)])
    feats = channel_features(gains).astype(np.longdouble)
    model = build_policy(kind, SMALL_DIMS, seed=14).astype(np.longdouble)
    for p in model.parameters():
        if not np.any(p.data):
            p.data = rng.uniform(-0.1, 0.1, p.data.shape).astype(np.longdouble)

    def loss():
        return loss_augmented(model(feats)[0], labels, gains, gamma, 100.0, LossConfig(), 0.3)[0]

    assert max(ad.gradient_check(loss, model.parameters())) < 1e-4


def test_augmented_rejects_nonpositive_gamma():
    with pytest.raises(ValueError):
        loss_augmented(np.zeros((1, 2)), [[1, 0]], np.ones((1, 2)), [0.0], 1.0, LossConfig())


def test_loss_config_schedule():
    cfg = LossConfig()
    assert cfg.coefficients(0.0) == (0.5, 2.0, 100.0)
    np.testing.assert_allclose(cfg.coefficients(1.0), (0.3, 8.0, 20.0))
    np.testing.assert_allclose(cfg.coefficients(0.5), (0.4, 5.0, 60.0))
    with pytest.raises(ValueError):
        LossConfig(alpha=0.5)
    with pytest.raises(ValueError):
        LossConfig(lambda_snr=(1.0, math.inf))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 1))
def test_augmented_components_nonnegative(seed, progress):
    rng = np.random.default_rng(seed)
    scores = rng.standard_normal((2, 5)) * 3
    y = rng.random((2, 5)) > 0.5
    gains = rng.standard_normal((2, 5)) + 1j * rng.standard_normal((2, 5))
    total, comp = loss_augmented(scores, y, gains, rng.uniform(0.5, 5, 2), 1.0, LossConfig(), progress)
    assert total.item() >= 0
    assert comp["wbce"] >= 0 and comp["snr"] >= 0 and comp["collapse"] >= 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(-np.pi, np.pi))
def test_soft_snr_phase_invariant(seed, phi):
    rng = np.random.default_rng(seed)
    p = rng.random((1, 6))
    gains = rng.standard_normal((1, 6)) + 1j * rng.standard_normal((1, 6))
    a = soft_snr(p, gains, 10.0).item()
    b = soft_snr(p, gains * np.exp(1j * phi), 10.0).item()
    assert b == pytest.approx(a, rel=1e-10)


def test_soft_snr_reduces_to_binary_snr():
    gains = np.array([[1 + 1j, 2 - 1j, 0.5j]])
    p = np.array([[1.0, 0.0, 1.0]])
    expected = 3.0 * abs(1 + 1j + 0.5j) ** 2 / 2
    assert soft_snr(p, gains, 3.0).item() == pytest.approx(expected, rel=1e-8)


# -- checkpoints ---------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_checkpoint_round_trip(kind, tmp_path):
    model = build_policy(kind, SMALL_DIMS, seed=13).astype(np.float32)
    path = tmp_path / "m.npz"
    save_checkpoint(model, path, extra={"note": "x"})
    loaded = load_checkpoint(path)
    assert loaded.kind == kind and loaded.dims == SMALL_DIMS
    assert loaded.meta["extra"] == {"note": "x"}
    for (n1, a), (n2, b) in zip(model.named_parameters(), loaded.named_parameters()):
        assert n1 == n2 and a.data.dtype == b.data.dtype
        np.testing.assert_array_equal(a.data, b.data)


def test_checkpoint_rejects_other_version(tmp_path):
    import json
    model = build_policy("mlp", SMALL_DIMS)
    path = tmp_path / "m.npz"
    save_checkpoint(model, path)
    with np.load(path) as data:
        arrays = dict(data)
    meta = json.loads(bytes(arrays["__meta__"]).decode())
    meta["format_version"] = 99
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), np.uint8)
    np.savez(path, **arrays)
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)
