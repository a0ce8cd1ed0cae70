"""Semi-structured additive regression model with hand-rolled reverse-mode gradients.

The predictor is mu = x' theta + MLP(u): a linear "structured" part over
tabular features x and a small fully-connected network over inputs u.
Likelihood heads: Normal (identity link, fixed or learnable dispersion),
Poisson (exponential link), Bernoulli (logistic link).

Gradients are exact reverse-mode accumulation over the fixed MLP
structure; no autodiff framework is involved, which keeps the whole
model a pure function of a flat numpy parameter vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln

ACTIVATIONS = ("relu", "tanh")


class DimensionError(ValueError):
    """Shape of an input does not match the model layout."""


class InvalidOutcomeError(ValueError):
    """An outcome value is invalid for the chosen likelihood family."""


@dataclass(frozen=True)
class MlpArchitecture:
    """Fully-connected net u in R^q -> R with a linear output layer.

    ``hidden_layers`` is a sequence of (width, activation) pairs; the
    output layer is always linear with a single unit.
    """

    input_dim: int
    hidden_layers: tuple = ((16, "relu"), (16, "relu"))

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        for width, act in self.hidden_layers:
            if width < 1:
                raise ValueError(f"hidden width must be >= 1, got {width}")
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}, expected one of {ACTIVATIONS}")
        # normalize to hashable tuples so the dataclass stays frozen/comparable
        object.__setattr__(
            self, "hidden_layers", tuple((int(w), str(a)) for w, a in self.hidden_layers)
        )

    @property
    def layer_dims(self):
        """Widths [q, h_1, ..., h_L, 1]."""
        return [self.input_dim] + [w for w, _ in self.hidden_layers] + [1]

    @property
    def weight_count(self):
        """Total flat weight count d = sum over layers of (fan_in + 1) * fan_out."""
        dims = self.layer_dims
        return sum((dims[i] + 1) * dims[i + 1] for i in range(len(dims) - 1))

    def layer_shapes(self):
        """Per-layer ((fan_out, fan_in), fan_out) weight/bias shapes."""
        dims = self.layer_dims
        return [((dims[i + 1], dims[i]), dims[i + 1]) for i in range(len(dims) - 1)]

    def unflatten(self, w):
        """Split a flat weight vector into [(W_1, b_1), ...].

        Flattening order is layer-major; within a layer the (fan_out, fan_in)
        weight matrix in row-major order, then the bias.
        """
        w = np.asarray(w, dtype=float)
        if w.shape != (self.weight_count,):
            raise DimensionError(
                f"expected flat weight vector of length {self.weight_count}, got shape {w.shape}"
            )
        layers = []
        off = 0
        for (wshape, bdim) in self.layer_shapes():
            n = wshape[0] * wshape[1]
            layers.append((w[off:off + n].reshape(wshape), w[off + n:off + n + bdim]))
            off += n + bdim
        return layers

    def flatten(self, layers):
        """Inverse of :meth:`unflatten`; exact round-trip."""
        return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in layers])

    def init_weights(self, rng):
        """Uniform Kaiming-style fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        parts = []
        for (wshape, bdim) in self.layer_shapes():
            bound = 1.0 / math.sqrt(wshape[1])
            parts.append(rng.uniform(-bound, bound, size=wshape[0] * wshape[1]))
            parts.append(rng.uniform(-bound, bound, size=bdim))
        return np.concatenate(parts)


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad(name, z, a):
    if name == "relu":
        # subgradient at 0 defined as 0
        return (z > 0).astype(float)
    return 1.0 - a * a


def mlp_forward(arch, w, U, want_cache=False):
    """Evaluate the net on U [n x q]; returns outputs [n] (and a backprop cache)."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[1] != arch.input_dim:
        raise DimensionError(f"expected U with {arch.input_dim} columns, got {U.shape[1]}")
    layers = arch.unflatten(w)
    a = U
    cache = [(None, a)]
    for i, (W, b) in enumerate(layers):
        z = a @ W.T + b
        if i < len(arch.hidden_layers):
            a = _act(arch.hidden_layers[i][1], z)
        else:
            a = z
        cache.append((z, a))
    out = a[:, 0]
    if want_cache:
        return out, (layers, cache)
    return out


def mlp_backward(arch, cache, dout):
    """Reverse-mode pass: flat weight gradient given d(loss)/d(output) per row."""
    layers, acts = cache
    delta = np.asarray(dout, dtype=float)[:, None]  # [n x 1], output layer is linear
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        a_prev = acts[i][1]
        gW = delta.T @ a_prev
        gb = delta.sum(axis=0)
        grads[i] = (gW, gb)
        if i > 0:
            delta = delta @ layers[i][0]
            name = arch.hidden_layers[i - 1][1]
            delta = delta * _act_grad(name, acts[i][0], acts[i][1])
    return arch.flatten(grads)


@dataclass(frozen=True)
class LikelihoodHead:
    """Outcome distribution and link for the additive predictor mu.

    families: ``normal`` (identity link), ``poisson`` (exponential link),
    ``bernoulli`` (logistic link). ``dispersion`` is either the string
    ``"learnable"`` (Normal only: log-sigma is appended to the flat
    parameter vector) or a fixed positive sigma.
    """

    family: str = "normal"
    dispersion: object = "learnable"

    def __post_init__(self):
        if self.family not in ("normal", "poisson", "bernoulli"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.family != "normal":
            object.__setattr__(self, "dispersion", None)
        elif self.dispersion != "learnable":
            sigma = float(self.dispersion)
            if not sigma > 0:
                raise ValueError(f"fixed sigma must be > 0, got {sigma}")
            object.__setattr__(self, "dispersion", sigma)

    @property
    def has_learnable_dispersion(self):
        return self.family == "normal" and self.dispersion == "learnable"

    def validate_y(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == "poisson":
            bad = np.flatnonzero((y < 0) | (y != np.round(y)))
            if bad.size:
                raise InvalidOutcomeError(
                    f"poisson outcomes must be non-negative integers; bad rows {bad[:10].tolist()}"
                )
        elif self.family == "bernoulli":
            bad = np.flatnonzero(~np.isin(y, (0.0, 1.0)))
            if bad.size:
                raise InvalidOutcomeError(
                    f"bernoulli outcomes must be 0 or 1; bad rows {bad[:10].tolist()}"
                )
        return y

    def log_prob(self, y, mu, log_sigma=None):
        """Per-row log p(y | mu); for Normal, sigma = exp(log_sigma) if learnable."""
        y = np.asarray(y, dtype=float)
        mu = np.asarray(mu, dtype=float)
        if self.family == "normal":
            ls = float(log_sigma) if self.has_learnable_dispersion else math.log(self.dispersion)
            # keep everything in log scale so extreme log-sigma values stay finite;
            # overflow to -inf just means the proposal will be rejected
            with np.errstate(over="ignore"):
                inv_var = np.exp(-2.0 * ls)
                return -0.5 * math.log(2.0 * math.pi) - ls - 0.5 * (y - mu) ** 2 * inv_var
        if self.family == "poisson":
            return y * mu - np.exp(mu) - gammaln(y + 1.0)
        # bernoulli with logistic link: log p = y*mu - log(1 + e^mu), stably
        return y * mu - np.logaddexp(0.0, mu)

    def dlog_prob(self, y, mu, log_sigma=None):
        """(d log p / d mu per row, d sum log p / d log_sigma or None)."""
        y = np.asarray(y, dtype=float)
        mu = np.asarray(mu, dtype=float)
        if self.family == "normal":
            ls = float(log_sigma) if self.has_learnable_dispersion else math.log(self.dispersion)
            with np.errstate(over="ignore"):
                inv_var = np.exp(-2.0 * ls)
            r = (y - mu) * inv_var
            dls = float(np.sum((y - mu) ** 2 * inv_var - 1.0)) if self.has_learnable_dispersion else None
            return r, dls
        if self.family == "poisson":
            return y - np.exp(mu), None
        return y - expit(mu), None


@dataclass(frozen=True)
class SsrModel:
    """Additive model mu = X theta + MLP(U) with a likelihood head.

    Flat parameter layout: theta (p entries), then the MLP weights
    (d entries), then log-sigma if the head has learnable dispersion.
    """

    p: int
    arch: MlpArchitecture
    head: LikelihoodHead = field(default_factory=LikelihoodHead)

    def __post_init__(self):
        if self.p < 0:
            raise ValueError(f"structured dimension p must be >= 0, got {self.p}")

    @property
    def d(self):
        return self.arch.weight_count

    @property
    def n_params(self):
        return self.p + self.d + (1 if self.head.has_learnable_dispersion else 0)

    def split(self, values):
        """Flat vector -> (theta, w, log_sigma-or-None). Views, not copies."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_params,):
            raise DimensionError(
                f"expected flat parameter vector of length {self.n_params}, got shape {values.shape}"
            )
        theta = values[: self.p]
        w = values[self.p: self.p + self.d]
        log_sigma = float(values[-1]) if self.head.has_learnable_dispersion else None
        return theta, w, log_sigma

    def join(self, theta, w, log_sigma=None):
        parts = [np.asarray(theta, dtype=float), np.asarray(w, dtype=float)]
        if self.head.has_learnable_dispersion:
            if log_sigma is None:
                raise ValueError("model has learnable dispersion; log_sigma required")
            parts.append(np.array([log_sigma], dtype=float))
        out = np.concatenate(parts)
        if out.shape != (self.n_params,):
            raise DimensionError(
                f"joined parameter vector has length {out.shape[0]}, expected {self.n_params}"
            )
        return out

    def init_params(self, rng):
        """Kaiming-uniform MLP weights, small random theta, log-sigma 0."""
        theta = 0.1 * rng.standard_normal(self.p)
        w = self.arch.init_weights(rng)
        return self.join(theta, w, 0.0 if self.head.has_learnable_dispersion else None)


def _check_xu(model, X, U):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if X.shape[1] != model.p:
        raise DimensionError(f"expected X with {model.p} columns, got {X.shape[1]}")
    if U.shape[1] != model.arch.input_dim:
        raise DimensionError(f"expected U with {model.arch.input_dim} columns, got {U.shape[1]}")
    if X.shape[0] != U.shape[0]:
        raise DimensionError(f"X has {X.shape[0]} rows but U has {U.shape[0]}")
    return X, U


def predict_mu(model, params, X, U):
    """Predictor mu_i = x_i' theta + MLP(u_i), vectorized over rows."""
    theta, w, _ = model.split(params)
    X, U = _check_xu(model, X, U)
    return X @ theta + mlp_forward(model.arch, w, U)


def log_likelihood(model, params, y, X, U):
    """Sum over rows of log p(y_i | head(mu_i))."""
    theta, w, log_sigma = model.split(params)
    X, U = _check_xu(model, X, U)
    y = model.head.validate_y(y)
    if y.shape[0] != X.shape[0]:
        raise DimensionError(f"y has {y.shape[0]} rows but X has {X.shape[0]}")
    mu = X @ theta + mlp_forward(model.arch, w, U)
    return float(np.sum(model.head.log_prob(y, mu, log_sigma)))


def grad_log_likelihood(model, params, y, X, U):
    """Exact gradient of log_likelihood w.r.t. the flat parameter vector."""
    theta, w, log_sigma = model.split(params)
    X, U = _check_xu(model, X, U)
    y = model.head.validate_y(y)
    out, cache = mlp_forward(model.arch, w, U, want_cache=True)
    mu = X @ theta + out
    dmu, dls = model.head.dlog_prob(y, mu, log_sigma)
    g_theta = X.T @ dmu
    g_w = mlp_backward(model.arch, cache, dmu)
    if model.head.has_learnable_dispersion:
        return np.concatenate([g_theta, g_w, [dls]])
    return np.concatenate([g_theta, g_w])


def log_likelihood_and_grad(model, params, y, X, U):
    """Single-pass (value, gradient); the workhorse for samplers."""
    theta, w, log_sigma = model.split(params)
    X, U = _check_xu(model, X, U)
    y = model.head.validate_y(y)
    out, cache = mlp_forward(model.arch, w, U, want_cache=True)
    mu = X @ theta + out
    ll = float(np.sum(model.head.log_prob(y, mu, log_sigma)))
    if not np.isfinite(ll):
        # a diverged proposal; callers treat -inf as an automatic rejection
        return -np.inf, np.zeros(model.n_params)
    dmu, dls = model.head.dlog_prob(y, mu, log_sigma)
    g_theta = X.T @ dmu
    g_w = mlp_backward(model.arch, cache, dmu)
    if model.head.has_learnable_dispersion:
        return ll, np.concatenate([g_theta, g_w, [dls]])
    return ll, np.concatenate([g_theta, g_w])
