"""Network checks: layer semantics, permutation behavior, the Gaussian loss,
and hand-derived gradients against central finite differences."""

import numpy as np
import pytest

from entrometer.errors import NumericalError
from entrometer.neural import model as nm

TINY = nm.ModelConfig(rnn_features=(4, 3), gat_features=(3, 3),
                      dfnn_features=(4, 2), seed=11)


def tiny_instance(seed=42, n_ex=2, n_samp=5, n_sites=3):
    rng = np.random.default_rng(seed)
    batches = rng.integers(1, 5, size=(n_ex, n_samp, n_sites)).astype(np.uint8)
    labels = rng.uniform(0.0, 1.5, size=n_ex)
    return batches, labels


def finite_difference_gradient(params, cfg, batches, labels, step=1e-5):
    """Central differences through the public loss, coordinate by coordinate."""
    vec = nm.flatten_params(params, cfg)
    fd = np.empty_like(vec)
    for i in range(vec.size):
        up, down = vec.copy(), vec.copy()
        up[i] += step
        down[i] -= step
        lu, _ = nm.gradients(nm.unflatten_params(up, cfg), cfg, batches, labels)
        ld, _ = nm.gradients(nm.unflatten_params(down, cfg), cfg, batches, labels)
        fd[i] = (lu - ld) / (2.0 * step)
    return fd


def gradient_agreement(analytic, fd, abs_floor=1e-8, rel_tol=1e-5):
    diff = np.abs(analytic - fd)
    rel = diff / np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-300)
    return bool(((diff < abs_floor) | (rel < rel_tol)).all())


# ---------------------------------------------------------------------------
# configuration and parameters
# ---------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        nm.ModelConfig(dfnn_features=(4, 3))
    with pytest.raises(ValueError):
        nm.ModelConfig(rnn_features=())
    with pytest.raises(ValueError):
        nm.ModelConfig(learning_rate=0.0)
    default = nm.ModelConfig()
    assert default.rnn_features == (20, 20, 20)
    assert default.gat_features == (10, 10)
    assert default.dfnn_features == (4, 2)
    assert default.learning_rate == 5e-4


def test_param_shapes_and_flat_round_trip():
    params = nm.init_params(TINY)
    assert params["lstm0.wx"].shape == (4, 16)
    assert params["lstm1.wx"].shape == (4, 12)
    assert params["lstm1.wh"].shape == (3, 12)
    assert params["gat0.w"].shape == (3, 3)
    assert params["head0.w"].shape == (3, 4)
    assert params["head1.w"].shape == (4, 2)
    vec = nm.flatten_params(params, TINY)
    back = nm.unflatten_params(vec, TINY)
    for k in params:
        assert np.array_equal(params[k], back[k])
    with pytest.raises(ValueError):
        nm.unflatten_params(vec[:-1], TINY)


def test_init_members_differ_and_reproduce():
    a = nm.init_params(TINY, member=0)
    b = nm.init_params(TINY, member=0)
    c = nm.init_params(TINY, member=1)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)
    # forget-gate bias starts open
    f = TINY.rnn_features[0]
    assert (a["lstm0.b"][f:2 * f] == 1.0).all()
    assert (a["head0.b"] == 0.0).all()


# ---------------------------------------------------------------------------
# LSTM embedding
# ---------------------------------------------------------------------------

def test_lstm_zero_params_zero_embedding():
    params = {k: np.zeros_like(v) for k, v in nm.init_params(TINY).items()}
    rng = np.random.default_rng(0)
    x = np.eye(4)[rng.integers(0, 4, size=(7, 3))].astype(np.float64)
    emb = nm.lstm_embed(x, params, TINY)
    assert emb.shape == (7, 3)
    assert np.abs(emb).max() == 0.0


def test_lstm_output_width_follows_config():
    cfg = nm.ModelConfig(seed=1)
    params = nm.init_params(cfg)
    rng = np.random.default_rng(1)
    for n_sites in (4, 6, 10):
        x = np.eye(4)[rng.integers(0, 4, size=(11, n_sites))].astype(np.float64)
        assert nm.lstm_embed(x, params, cfg).shape == (11, 20)


def test_lstm_site_order_sensitivity():
    params = nm.init_params(TINY, member=3)
    rng = np.random.default_rng(5)
    x = np.eye(4)[rng.integers(0, 4, size=(6, 3))].astype(np.float64)
    forward = nm.lstm_embed(x, params, TINY)
    backward = nm.lstm_embed(x[:, ::-1, :], params, TINY)
    assert np.abs(forward - backward).max() > 1e-6


def test_lstm_matches_direct_gate_recursion():
    """One layer, explicit per-sample gate equations as the oracle."""
    cfg = nm.ModelConfig(rnn_features=(3,), gat_features=(2,),
                         dfnn_features=(2, 2), seed=2)
    params = nm.init_params(cfg)
    rng = np.random.default_rng(3)
    x = np.eye(4)[rng.integers(0, 4, size=(4, 5))].astype(np.float64)

    def sigmoid(v):
        return 1.0 / (1.0 + np.exp(-v))

    f = 3
    wx, wh, b = params["lstm0.wx"], params["lstm0.wh"], params["lstm0.b"]
    expected = np.empty((4, 3))
    for s in range(4):
        h = np.zeros(3)
        c = np.zeros(3)
        for t in range(5):
            z = x[s, t] @ wx + h @ wh + b
            ig, fg, og = sigmoid(z[:f]), sigmoid(z[f:2 * f]), sigmoid(z[2 * f:3 * f])
            gg = np.tanh(z[3 * f:])
            c = fg * c + ig * gg
            h = og * np.tanh(c)
        expected[s] = h
    got = nm.lstm_embed(x, params, cfg)
    assert np.abs(got - expected).max() < 1e-12


# ---------------------------------------------------------------------------
# graph attention
# ---------------------------------------------------------------------------

def test_gat_single_node():
    params = nm.init_params(TINY, member=1)
    node = np.random.default_rng(2).normal(size=(1, 4))
    # use the first layer of a config whose gat input width matches
    cfg = nm.ModelConfig(rnn_features=(4,), gat_features=(3,),
                         dfnn_features=(2, 2), seed=1)
    p = nm.init_params(cfg)
    out = nm.gat_layer(node, p, layer=0)
    expected = node @ p["gat0.w"]
    expected = np.where(expected > 0, expected, np.expm1(expected))
    assert np.abs(out - expected).max() < 1e-12


def test_gat_permutation_equivariance():
    cfg = nm.ModelConfig(rnn_features=(4,), gat_features=(3,),
                         dfnn_features=(2, 2), seed=4)
    p = nm.init_params(cfg)
    rng = np.random.default_rng(6)
    nodes = rng.normal(size=(9, 4))
    perm = rng.permutation(9)
    out = nm.gat_layer(nodes, p)
    out_perm = nm.gat_layer(nodes[perm], p)
    assert np.abs(out[perm] - out_perm).max() < 1e-12


def test_gat_identical_nodes_identical_outputs():
    cfg = nm.ModelConfig(rnn_features=(4,), gat_features=(3,),
                         dfnn_features=(2, 2), seed=4)
    p = nm.init_params(cfg)
    nodes = np.tile(np.random.default_rng(7).normal(size=(1, 4)), (6, 1))
    out = nm.gat_layer(nodes, p)
    assert np.abs(out - out[0]).max() < 1e-14


# ---------------------------------------------------------------------------
# pooling head
# ---------------------------------------------------------------------------

def test_head_permutation_bit_identical():
    cfg = nm.ModelConfig(rnn_features=(4,), gat_features=(10,),
                         dfnn_features=(4, 2), seed=5)
    p = nm.init_params(cfg)
    rng = np.random.default_rng(8)
    nodes = rng.normal(size=(50, 10))
    base = nm.pool_and_head(nodes, p, cfg)
    for _ in range(20):
        perm = rng.permutation(50)
        again = nm.pool_and_head(nodes[perm], p, cfg)
        assert again == base


def test_head_zero_params_unit_sigma():
    cfg = nm.ModelConfig(seed=0)
    zeros = {k: np.zeros_like(v) for k, v in nm.init_params(cfg).items()}
    nodes = np.random.default_rng(9).normal(size=(12, 10))
    pred = nm.pool_and_head(nodes, zeros, cfg)
    assert pred.mean == 0.0
    assert pred.sigma == 1.0  # raw log-variance 0 maps to unit sigma


def test_head_sum_pool_scales_with_node_magnitude():
    cfg = nm.ModelConfig(seed=6)
    p = nm.init_params(cfg)
    nodes = np.random.default_rng(10).normal(size=(8, 10))
    a = nm.pool_and_head(nodes, p, cfg)
    b = nm.pool_and_head(2.0 * nodes, p, cfg)
    assert abs(a.mean - b.mean) > 1e-9


def test_head_rejects_non_finite():
    cfg = nm.ModelConfig(seed=6)
    p = nm.init_params(cfg)
    nodes = np.full((3, 10), np.nan)
    with pytest.raises(NumericalError):
        nm.pool_and_head(nodes, p, cfg)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def test_nll_loss_values():
    assert nm.nll_loss(nm.Prediction(1.0, 1.0), 1.0) == 0.0
    assert nm.nll_loss(nm.Prediction(0.0, 1.0), 1.0) == 1.0
    # with sigma frozen at one the loss is exactly the squared error
    rng = np.random.default_rng(11)
    for _ in range(10):
        mean, label = rng.normal(size=2)
        assert nm.nll_loss(nm.Prediction(mean, 1.0), label) == (label - mean) ** 2


def test_prediction_requires_positive_sigma():
    with pytest.raises(NumericalError):
        nm.Prediction(0.0, 0.0)
    with pytest.raises(NumericalError):
        nm.Prediction(np.nan, 1.0)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def test_gradients_match_finite_differences():
    params = nm.init_params(TINY)
    batches, labels = tiny_instance()
    _, grads = nm.gradients(params, TINY, batches, labels)
    fd = finite_difference_gradient(params, TINY, batches, labels)
    assert gradient_agreement(nm.flatten_params(grads, TINY), fd)


def test_gradients_deterministic():
    params = nm.init_params(TINY, member=2)
    batches, labels = tiny_instance(seed=1)
    l1, g1 = nm.gradients(params, TINY, batches, labels)
    l2, g2 = nm.gradients(params, TINY, batches, labels)
    assert l1 == l2
    assert all(np.array_equal(g1[k], g2[k]) for k in g1)


def test_gradients_stationary_mean_at_zero_residual():
    """At a zero-residual, optimal-variance point the mean-path gradient of
    the squared term vanishes; only the log-variance term drives updates."""
    cfg = nm.ModelConfig(rnn_features=(3,), gat_features=(2,),
                         dfnn_features=(2, 2), seed=9)
    params = nm.init_params(cfg)
    batches, _ = tiny_instance(seed=2, n_ex=1)
    means, _ = nm.predict_many(params, cfg, batches)
    labels = means.copy()  # residual exactly zero
    _, grads = nm.gradients(params, cfg, batches, labels)
    # gradient w.r.t. the mean output neuron's bias is -2r/sigma^2 = 0
    assert abs(grads["head1.b"][0]) < 1e-14
    assert abs(grads["head1.b"][1] - 1.0) < 1e-12  # d/dr of (r + r^2 e^{-r}) term


def test_gradients_flag_non_finite():
    params = nm.init_params(TINY)
    params["gat0.w"] = params["gat0.w"] * np.inf
    batches, labels = tiny_instance()
    with np.errstate(invalid="ignore"), pytest.raises(NumericalError):
        nm.gradients(params, TINY, batches, labels)


# ---------------------------------------------------------------------------
# end-to-end prediction
# ---------------------------------------------------------------------------

def test_predict_bitwise_permutation_invariance():
    cfg = nm.ModelConfig(seed=3)
    params = nm.init_params(cfg)
    rng = np.random.default_rng(12)
    outcomes = rng.integers(1, 5, size=(100, 6)).astype(np.uint8)
    base = nm.predict(params, cfg, outcomes)
    for _ in range(100):
        perm = rng.permutation(100)
        assert nm.predict(params, cfg, outcomes[perm]) == base


def test_predict_many_matches_predict():
    cfg = nm.ModelConfig(seed=3)
    params = nm.init_params(cfg)
    rng = np.random.default_rng(13)
    batches = rng.integers(1, 5, size=(7, 40, 5)).astype(np.uint8)
    means, sigmas = nm.predict_many(params, cfg, batches)
    for e in range(7):
        single = nm.predict(params, cfg, batches[e])
        assert abs(single.mean - means[e]) < 1e-12
        assert abs(single.sigma - sigmas[e]) < 1e-12


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

def test_ensemble_single_member_reduction():
    pred = nm.Prediction(0.7, 0.3)
    ens = nm.ensemble_from_predictions([pred])
    assert abs(ens.mean - 0.7) < 1e-15
    assert abs(ens.sigma_total - 0.3) < 1e-12


def test_ensemble_two_member_example():
    eps = 1e-9  # sigma must stay positive; contribution is negligible
    ens = nm.ensemble_from_predictions(
        [nm.Prediction(0.0, eps), nm.Prediction(1.0, eps)])
    assert abs(ens.mean - 0.5) < 1e-12
    assert abs(ens.sigma_total ** 2 - 0.25) < 1e-9


def test_ensemble_variance_identity():
    rng = np.random.default_rng(14)
    members = [nm.Prediction(float(m), float(s))
               for m, s in zip(rng.normal(size=6), rng.uniform(0.1, 1.0, 6))]
    ens = nm.ensemble_from_predictions(members)
    means = np.array([m.mean for m in members])
    alea = np.array([m.sigma ** 2 for m in members])
    identity = ens.sigma_total ** 2 - alea.mean()
    assert abs(identity - means.var()) < 1e-12
    assert ens.sigma_total ** 2 >= alea.mean() - 1e-12


def test_ensemble_predict_end_to_end():
    cfg = nm.ModelConfig(seed=5)
    members = [nm.init_params(cfg, member=m) for m in range(3)]
    outcomes = np.random.default_rng(15).integers(1, 5, size=(30, 4)).astype(np.uint8)
    ens = nm.ensemble_predict(members, cfg, outcomes)
    assert len(ens.members) == 3
    singles = [nm.predict(p, cfg, outcomes) for p in members]
    assert ens.mean == nm.ensemble_from_predictions(singles).mean
