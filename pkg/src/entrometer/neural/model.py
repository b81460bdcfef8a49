"""Set-regression network: per-sample LSTM embedding, graph attention over
the sample set, sum pooling and a small dense head with mean/uncertainty
outputs.

The whole stack is written against numpy with hand-derived reverse-mode
gradients (the architecture is fixed and tiny, so a framework would buy
nothing); the gradients are validated against central finite differences in
the test suite.  All math is float64.  Attention and head stages operate on
a leading example axis so that a minibatch runs as a handful of BLAS calls
rather than a Python loop.

Prediction order convention: the sample set is unordered, so `predict` and
`gradients` first sort the outcome strings lexicographically, and the
pooling reduction additionally sorts each feature column before summing.
Downstream arithmetic then sees identical arrays for any permutation of the
input, which makes predictions bit-identical, not merely close.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericalError
from ..povm import encode_one_hot
from ..streams import INIT, stream

N_INPUT = 4          # one-hot width of a single-site outcome
LEAKY_SLOPE = 0.2    # attention scores and head hidden activation
LOG_VAR_CLAMP = 10.0

# Soft cap on transient attention memory (bytes) when evaluating many
# examples at once; forward passes are chunked to stay under it.
_ATTENTION_BUDGET = 2.5e8


@dataclass(frozen=True)
class ModelConfig:
    """Layer widths and optimizer learning rate."""

    rnn_features: tuple[int, ...] = (20, 20, 20)
    gat_features: tuple[int, ...] = (10, 10)
    dfnn_features: tuple[int, ...] = (4, 2)
    learning_rate: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        if not self.rnn_features or not self.gat_features or not self.dfnn_features:
            raise ValueError("every stage needs at least one layer")
        if any(f < 1 for f in self.rnn_features + self.gat_features + self.dfnn_features):
            raise ValueError("layer widths must be positive")
        if self.dfnn_features[-1] != 2:
            raise ValueError("final dense layer must have width 2 (mean, log-variance)")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


@dataclass(frozen=True)
class Prediction:
    """Mean estimate and aleatoric standard deviation, both in nats."""

    mean: float
    sigma: float

    def __post_init__(self):
        if not (np.isfinite(self.mean) and np.isfinite(self.sigma) and self.sigma > 0):
            raise NumericalError(f"non-finite or non-positive prediction {self}")


@dataclass(frozen=True)
class EnsemblePrediction:
    members: tuple[Prediction, ...]
    mean: float
    sigma_total: float


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def param_layout(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) order; also the flat checkpoint layout."""
    layout = []
    fan_in = N_INPUT
    for l, f in enumerate(cfg.rnn_features):
        layout += [(f"lstm{l}.wx", (fan_in, 4 * f)),
                   (f"lstm{l}.wh", (f, 4 * f)),
                   (f"lstm{l}.b", (4 * f,))]
        fan_in = f
    for l, f in enumerate(cfg.gat_features):
        layout += [(f"gat{l}.w", (fan_in, f)),
                   (f"gat{l}.a_src", (f,)),
                   (f"gat{l}.a_dst", (f,))]
        fan_in = f
    for l, f in enumerate(cfg.dfnn_features):
        layout += [(f"head{l}.w", (fan_in, f)), (f"head{l}.b", (f,))]
        fan_in = f
    return layout


def init_params(cfg: ModelConfig, member: int = 0) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, forget-gate bias +1.

    Distinct `member` values give independently initialized networks from
    the same base seed (stream path (INIT, member)).
    """
    rng = stream(cfg.seed, INIT, member)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_layout(cfg):
        if name.endswith(".b"):
            arr = np.zeros(shape)
            if name.startswith("lstm"):
                f = shape[0] // 4
                arr[f:2 * f] = 1.0
        elif name.endswith(".a_src") or name.endswith(".a_dst"):
            # halves of one attention vector of length 2*F
            limit = np.sqrt(6.0 / (2 * shape[0] + 1))
            arr = rng.uniform(-limit, limit, size=shape)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-limit, limit, size=shape)
        params[name] = arr
    return params


def flatten_params(params: dict[str, np.ndarray], cfg: ModelConfig) -> np.ndarray:
    return np.concatenate([params[name].ravel() for name, _ in param_layout(cfg)])


def unflatten_params(vec: np.ndarray, cfg: ModelConfig) -> dict[str, np.ndarray]:
    params = {}
    pos = 0
    for name, shape in param_layout(cfg):
        size = int(np.prod(shape))
        params[name] = vec[pos:pos + size].reshape(shape).copy()
        pos += size
    if pos != vec.size:
        raise ValueError(f"parameter vector holds {vec.size} values, expected {pos}")
    return params


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _leaky(x):
    # max(x, slope*x) equals LeakyReLU for 0 < slope < 1
    return np.maximum(x, LEAKY_SLOPE * x)

def _leaky_grad(x):
    return np.where(x > 0, 1.0, LEAKY_SLOPE)

def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))

def _elu_grad(x):
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


# ---------------------------------------------------------------------------
# LSTM embedding
# ---------------------------------------------------------------------------

def _lstm_forward(x: np.ndarray, params: dict, cfg: ModelConfig,
                  want_cache: bool = False):
    """Stacked LSTM over the site axis; returns the top layer's final hidden.

    x: (S, N, 4) float64.  Gate order along the 4F axis is (i, f, o, g);
    initial hidden and cell states are zero.  All three sigmoid gates are
    evaluated through one tanh pass (sigmoid(v) = (tanh(v/2) + 1) / 2),
    which is the hot loop's dominant cost.
    """
    s, n_sites, _ = x.shape
    n_layers = len(cfg.rnn_features)
    h = [np.zeros((s, f)) for f in cfg.rnn_features]
    c = [np.zeros((s, f)) for f in cfg.rnn_features]
    cache = [[None] * n_sites for _ in range(n_layers)] if want_cache else None
    z_buf = [np.empty((s, 4 * f)) for f in cfg.rnn_features]
    t_buf = [np.empty((s, 4 * f)) for f in cfg.rnn_features]

    for t in range(n_sites):
        inp = x[:, t, :]
        for l, f in enumerate(cfg.rnn_features):
            z = z_buf[l]
            np.matmul(inp, params[f"lstm{l}.wx"], out=z)
            np.matmul(h[l], params[f"lstm{l}.wh"], out=t_buf[l])
            z += t_buf[l]
            z += params[f"lstm{l}.b"]
            z *= 0.5
            y = np.tanh(z, out=z)
            # sigmoid(v) = (tanh(v/2) + 1) / 2; tanh(v) = 2w / (1 + w^2)
            ig = np.multiply(y[:, :f], 0.5)
            ig += 0.5
            fg = np.multiply(y[:, f:2 * f], 0.5)
            fg += 0.5
            og = np.multiply(y[:, 2 * f:3 * f], 0.5)
            og += 0.5
            w = y[:, 3 * f:]
            gg = np.multiply(w, w)
            gg += 1.0
            np.divide(w, gg, out=gg)
            gg *= 2.0
            c_new = ig * gg
            scratch = t_buf[l][:, :f]
            np.multiply(fg, c[l], out=scratch)
            c_new += scratch
            tc = np.tanh(c_new)
            h_new = og * tc
            if want_cache:
                cache[l][t] = (inp, h[l], c[l], ig, fg, og, gg, tc)
            h[l], c[l] = h_new, c_new
            inp = h_new
    return h[-1], cache


def _lstm_backward(cache, params: dict, cfg: ModelConfig,
                   d_embed: np.ndarray) -> dict[str, np.ndarray]:
    """Backpropagation through time for the stacked LSTM.

    d_embed is the gradient w.r.t. the top layer's hidden state at the last
    site (the only read-out point).
    """
    n_layers = len(cfg.rnn_features)
    n_sites = len(cache[0])
    s = d_embed.shape[0]
    grads: dict[str, np.ndarray] = {}

    d_above = None  # (S, N, F_l) gradient w.r.t. this layer's hidden outputs
    for l in range(n_layers - 1, -1, -1):
        f = cfg.rnn_features[l]
        wx = params[f"lstm{l}.wx"]
        wh = params[f"lstm{l}.wh"]
        dwx = np.zeros_like(wx)
        dwh = np.zeros_like(wh)
        db = np.zeros(4 * f)
        f_below = cfg.rnn_features[l - 1] if l > 0 else None
        d_below = np.empty((s, n_sites, f_below)) if l > 0 else None

        dz = np.empty((s, 4 * f))
        s1 = np.empty((s, f))
        s2 = np.empty((s, f))
        dh_next = np.zeros((s, f))
        dc = np.zeros((s, f))  # carries dc_next between steps
        for t in range(n_sites - 1, -1, -1):
            inp, h_prev, c_prev, ig, fg, og, gg, tc = cache[l][t]
            dh = dh_next
            if l == n_layers - 1 and t == n_sites - 1:
                dh = dh + d_embed
            if d_above is not None:
                dh = dh + d_above[:, t, :]
            # dc += dh * og * (1 - tc^2)
            np.multiply(tc, tc, out=s1)
            np.subtract(1.0, s1, out=s1)
            s1 *= og
            s1 *= dh
            dc += s1
            # gate pre-activation gradients, order (i, f, o, g)
            np.subtract(1.0, ig, out=s1)
            s1 *= ig
            np.multiply(dc, gg, out=s2)
            s2 *= s1
            dz[:, :f] = s2
            np.subtract(1.0, fg, out=s1)
            s1 *= fg
            np.multiply(dc, c_prev, out=s2)
            s2 *= s1
            dz[:, f:2 * f] = s2
            np.subtract(1.0, og, out=s1)
            s1 *= og
            np.multiply(dh, tc, out=s2)
            s2 *= s1
            dz[:, 2 * f:3 * f] = s2
            np.multiply(gg, gg, out=s1)
            np.subtract(1.0, s1, out=s1)
            np.multiply(dc, ig, out=s2)
            s2 *= s1
            dz[:, 3 * f:] = s2
            dwx += inp.T @ dz
            dwh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dh_next = dz @ wh.T
            dc *= fg
            if l > 0:
                np.matmul(dz, wx.T, out=d_below[:, t, :])
        grads[f"lstm{l}.wx"] = dwx
        grads[f"lstm{l}.wh"] = dwh
        grads[f"lstm{l}.b"] = db
        d_above = d_below
    return grads


def lstm_embed(batch_one_hot: np.ndarray, params: dict, cfg: ModelConfig) -> np.ndarray:
    """Embed each sample's site sequence; output (n_samples, F_top)."""
    x = np.asarray(batch_one_hot, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != N_INPUT:
        raise ValueError(f"expected shape (n_samples, n_sites, 4), got {x.shape}")
    emb, _ = _lstm_forward(x, params, cfg)
    return emb


# ---------------------------------------------------------------------------
# graph attention (batched over a leading example axis)
# ---------------------------------------------------------------------------

def _gat_forward(nodes, w, a_src, a_dst, want_cache: bool = False):
    """nodes: (E, B, F_in) -> (E, B, F_out) on the complete graph per example."""
    g = nodes @ w
    score_src = g @ a_src
    score_dst = g @ a_dst
    pre = score_src[:, :, None] + score_dst[:, None, :]
    e = _leaky(pre)
    e -= e.max(axis=2, keepdims=True)
    alpha = np.exp(e)
    alpha /= alpha.sum(axis=2, keepdims=True)
    p = alpha @ g
    out = _elu(p)
    cache = (nodes, g, pre, alpha, p) if want_cache else None
    return out, cache


def _gat_backward(d_out, cache, w, a_src, a_dst):
    nodes, g, pre, alpha, p = cache
    dp = d_out * _elu_grad(p)
    dalpha = dp @ g.transpose(0, 2, 1)
    dg = alpha.transpose(0, 2, 1) @ dp
    dpre = alpha * (dalpha - (alpha * dalpha).sum(axis=2, keepdims=True))
    dpre *= _leaky_grad(pre)
    ds = dpre.sum(axis=2)
    dd = dpre.sum(axis=1)
    dg += ds[:, :, None] * a_src + dd[:, :, None] * a_dst
    da_src = np.einsum("ebf,eb->f", g, ds)
    da_dst = np.einsum("ebf,eb->f", g, dd)
    dnodes = dg @ w.T
    dw = np.einsum("ebi,ebo->io", nodes, dg)
    return dnodes, dw, da_src, da_dst


def gat_layer(nodes: np.ndarray, params: dict, layer: int = 0) -> np.ndarray:
    """Single-head attention over the complete sample graph with self-loops.

    Scores are LeakyReLU(a . [Wh_i || Wh_j]), normalized per target node
    with a softmax over all sources; node update is ELU of the attention-
    weighted sum.
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    out, _ = _gat_forward(nodes[None], params[f"gat{layer}.w"],
                          params[f"gat{layer}.a_src"], params[f"gat{layer}.a_dst"])
    return out[0]


# ---------------------------------------------------------------------------
# pooling and dense head (batched over a leading example axis)
# ---------------------------------------------------------------------------

def _head_forward(nodes, params, cfg: ModelConfig, want_cache: bool = False):
    """nodes: (E, B, F) -> mean (E,), raw log-variance (E,).

    The pool is an unordered sum: each feature column is sorted before the
    reduction, so the result is independent of the caller's node order.
    """
    pooled = np.sort(nodes, axis=1).sum(axis=1)
    u = pooled
    zs = []
    n_layers = len(cfg.dfnn_features)
    for j in range(n_layers):
        z = u @ params[f"head{j}.w"] + params[f"head{j}.b"]
        zs.append((u, z))
        u = _leaky(z) if j < n_layers - 1 else z
    cache = zs if want_cache else None
    return u[:, 0], u[:, 1], cache


def _head_backward(dmean, dr_raw, cache, params, cfg: ModelConfig, n_nodes: int):
    grads = {}
    n_layers = len(cfg.dfnn_features)
    du = np.stack([dmean, dr_raw], axis=1)
    for j in range(n_layers - 1, -1, -1):
        u_in, z = cache[j]
        dz = du if j == n_layers - 1 else du * _leaky_grad(z)
        grads[f"head{j}.w"] = u_in.T @ dz
        grads[f"head{j}.b"] = dz.sum(axis=0)
        du = dz @ params[f"head{j}.w"].T
    dnodes = np.broadcast_to(du[:, None, :], (du.shape[0], n_nodes, du.shape[1]))
    return dnodes, grads


def clamp_log_var(r_raw):
    return np.clip(r_raw, -LOG_VAR_CLAMP, LOG_VAR_CLAMP)


def pool_and_head(nodes: np.ndarray, params: dict, cfg: ModelConfig) -> Prediction:
    """Sum-pool the node set and map through the dense head to (mean, sigma)."""
    nodes = np.asarray(nodes, dtype=np.float64)
    mean, r_raw, _ = _head_forward(nodes[None], params, cfg)
    if not (np.isfinite(mean[0]) and np.isfinite(r_raw[0])):
        raise NumericalError("non-finite head output")
    return Prediction(float(mean[0]),
                      float(np.sqrt(np.exp(clamp_log_var(r_raw[0])))))


# ---------------------------------------------------------------------------
# full network
# ---------------------------------------------------------------------------

def canonical_order(outcomes: np.ndarray) -> np.ndarray:
    """Lexicographic sort of outcome strings (site 0 = primary key)."""
    return np.lexsort(outcomes.T[::-1])


def _canonical_batches(batches: np.ndarray) -> np.ndarray:
    """Sort each example's outcome strings into canonical order."""
    ordered = np.empty_like(batches)
    for e in range(batches.shape[0]):
        ordered[e] = batches[e][canonical_order(batches[e])]
    return ordered


def _forward_batched(params, cfg, batches: np.ndarray, want_cache: bool = False):
    """One-hot encode, embed, attend, pool; batches: (E, B, N) symbols 1..4.

    Identical outcome strings share one LSTM evaluation: the embedding runs
    over the distinct strings only and is scattered back afterwards, which
    pays off for the low-entropy states that dominate early evolution times.
    """
    n_ex, n_samp, n_sites = batches.shape
    flat = batches.reshape(n_ex * n_samp, n_sites)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    x = encode_one_hot(uniq).astype(np.float64)
    emb, lstm_cache = _lstm_forward(x, params, cfg, want_cache)
    nodes = emb[inverse].reshape(n_ex, n_samp, -1)
    gat_caches = []
    for l in range(len(cfg.gat_features)):
        nodes, cache = _gat_forward(nodes, params[f"gat{l}.w"],
                                    params[f"gat{l}.a_src"],
                                    params[f"gat{l}.a_dst"], want_cache)
        gat_caches.append(cache)
    mean, r_raw, head_cache = _head_forward(nodes, params, cfg, want_cache)
    return mean, r_raw, (lstm_cache, gat_caches, head_cache, inverse, uniq.shape[0])


def predict(params: dict, cfg: ModelConfig, outcomes: np.ndarray) -> Prediction:
    """End-to-end prediction for one batch of outcome strings (n_samples, n_sites)."""
    out = np.asarray(outcomes, dtype=np.uint8)
    out = out[canonical_order(out)]
    mean, r_raw, _ = _forward_batched(params, cfg, out[None])
    if not (np.isfinite(mean[0]) and np.isfinite(r_raw[0])):
        raise NumericalError("non-finite network output")
    return Prediction(float(mean[0]),
                      float(np.sqrt(np.exp(clamp_log_var(r_raw[0])))))


def nll_loss(pred: Prediction, label: float) -> float:
    """Gaussian negative log-likelihood (S - mean)^2 / sigma^2 + ln(sigma^2)."""
    var = pred.sigma ** 2
    return float((label - pred.mean) ** 2 / var + np.log(var))


def gradients(params: dict, cfg: ModelConfig, batches: np.ndarray,
              labels: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over a minibatch and its exact gradient for every parameter.

    batches: (n_examples, n_samples, n_sites) outcome symbols 1..4.
    """
    batches = np.asarray(batches, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.float64)
    n_ex, n_samp, _ = batches.shape
    ordered = _canonical_batches(batches)
    mean, r_raw, (lstm_cache, gat_caches, head_cache, inverse, n_uniq) = \
        _forward_batched(params, cfg, ordered, want_cache=True)

    r = clamp_log_var(r_raw)
    inv_var = np.exp(-r)
    resid = labels - mean
    loss = float(np.mean(resid * resid * inv_var + r))
    scale = 1.0 / n_ex
    dmean = -2.0 * resid * inv_var * scale
    dr = (1.0 - resid * resid * inv_var) * scale
    dr = np.where((r_raw > -LOG_VAR_CLAMP) & (r_raw < LOG_VAR_CLAMP), dr, 0.0)

    dnodes, grads = _head_backward(dmean, dr, head_cache, params, cfg, n_samp)
    for l in range(len(cfg.gat_features) - 1, -1, -1):
        dnodes, dw, da_s, da_d = _gat_backward(
            dnodes, gat_caches[l], params[f"gat{l}.w"],
            params[f"gat{l}.a_src"], params[f"gat{l}.a_dst"])
        grads[f"gat{l}.w"] = dw
        grads[f"gat{l}.a_src"] = da_s
        grads[f"gat{l}.a_dst"] = da_d
    # Scatter-add node gradients onto the deduplicated embedding rows.
    d_embed = dnodes.reshape(n_ex * n_samp, -1)
    order = np.argsort(inverse, kind="stable")
    starts = np.searchsorted(inverse[order], np.arange(n_uniq))
    d_uniq = np.add.reduceat(d_embed[order], starts, axis=0)
    grads.update(_lstm_backward(lstm_cache, params, cfg, d_uniq))

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in {name}")
    return loss, grads


def predict_many(params: dict, cfg: ModelConfig, batches: np.ndarray
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized predictions for many example batches; returns (means, sigmas).

    Chunks the example axis so the transient attention matrices stay inside
    a fixed memory budget.
    """
    batches = np.asarray(batches, dtype=np.uint8)
    n_ex, n_samp, _ = batches.shape
    chunk = max(1, int(_ATTENTION_BUDGET / (24.0 * n_samp * n_samp)))
    means = np.empty(n_ex)
    sigmas = np.empty(n_ex)
    for start in range(0, n_ex, chunk):
        sl = slice(start, min(start + chunk, n_ex))
        ordered = _canonical_batches(batches[sl])
        mean, r_raw, _ = _forward_batched(params, cfg, ordered)
        means[sl] = mean
        sigmas[sl] = np.sqrt(np.exp(clamp_log_var(r_raw)))
    return means, sigmas


def forward_loss(params: dict, cfg: ModelConfig, batches: np.ndarray,
                 labels: np.ndarray) -> float:
    """Mean loss over examples without building gradients (validation passes)."""
    means, sigmas = predict_many(params, cfg, batches)
    var = sigmas ** 2
    return float(np.mean((labels - means) ** 2 / var + np.log(var)))


def ensemble_from_predictions(members: list[Prediction]) -> EnsemblePrediction:
    """Combine member outputs: mean of means, total variance adds disagreement."""
    if not members:
        raise ValueError("need at least one member")
    means = np.array([m.mean for m in members])
    alea = np.array([m.sigma ** 2 for m in members])
    mean = float(means.mean())
    total_var = float(np.mean(alea + means ** 2) - means.mean() ** 2)
    return EnsemblePrediction(tuple(members), mean, float(np.sqrt(max(total_var, 0.0))))


def ensemble_predict(member_params: list[dict], cfg: ModelConfig,
                     outcomes: np.ndarray) -> EnsemblePrediction:
    """Evaluate every member on one batch and pool their (mean, sigma) outputs."""
    preds = [predict(p, cfg, outcomes) for p in member_params]
    return ensemble_from_predictions(preds)
