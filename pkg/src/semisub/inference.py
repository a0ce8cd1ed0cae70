"""Posterior assembly and MCMC samplers over (phi, theta).

The target combines the data likelihood at weights w = mean + Pi @ phi
with independent zero-mean Gaussian priors on phi and theta (and on the
log-dispersion when present). Samplers: Hamiltonian Monte Carlo with a
leapfrog integrator and optional dual-averaging step-size adaptation, and
gradient-free elliptical slice sampling for Gaussian priors. A full-space
HMC over all model parameters serves as the small-model gold standard.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .model import log_likelihood_and_grad
from .subspace import phi_to_weights

FULL_SPACE_GUARD = 2000


class SamplingError(RuntimeError):
    """Sampler failed to make progress (e.g. zero acceptance in warmup)."""


@dataclass(frozen=True)
class PriorSpec:
    """Scales of the independent zero-mean Gaussian priors."""

    sigma_phi: float = 1.0
    sigma_theta: float = 1.0
    sigma_log_dispersion: float = 1.0
    sigma_w: float = 1.0  # full-space sampling only

    def __post_init__(self):
        for name in ("sigma_phi", "sigma_theta", "sigma_log_dispersion", "sigma_w"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class HmcConfig:
    step_size: float = 0.05
    n_leapfrog: int = 16
    n_samples: int = 1000
    n_warmup: int = 500
    n_chains: int = 4
    seed: int = 0
    adapt_step_size: bool = True
    target_accept: float = 0.8
    init_jitter: float = 0.1

    def __post_init__(self):
        if self.step_size <= 0 or self.n_leapfrog < 1:
            raise ValueError("step_size must be > 0 and n_leapfrog >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0, 1)")


@dataclass(frozen=True)
class EssConfig:
    n_samples: int = 1000
    n_warmup: int = 200
    n_chains: int = 4
    seed: int = 0
    init_jitter: float = 0.1
    max_shrink: int = 1000
    minibatch_size: int = None  # approximate subsampled likelihood if set


@dataclass
class PosteriorSamples:
    """Kept draws from all chains, stacked; one row per draw."""

    draws: np.ndarray
    columns: list
    log_post: np.ndarray
    chain: np.ndarray
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        self.log_post = np.asarray(self.log_post, dtype=float)
        self.chain = np.asarray(self.chain, dtype=int)
        if self.draws.shape[0] and self.draws.shape[1] != len(self.columns):
            raise ValueError(
                f"{self.draws.shape[1]} draw columns but {len(self.columns)} labels"
            )

    @property
    def n(self):
        return self.draws.shape[0]

    def column(self, name):
        try:
            j = self.columns.index(name)
        except ValueError:
            raise KeyError(f"no column {name!r}; have {self.columns}")
        return self.draws[:, j]

    def block(self, prefix):
        """All columns named like `prefix_1`, `prefix_2`, ... as a matrix."""
        js = [j for j, c in enumerate(self.columns) if c.startswith(prefix + "_")]
        return self.draws[:, js]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["chain", "draw", "log_post"] + list(self.columns))
            counters = {}
            for i in range(self.n):
                c = int(self.chain[i])
                counters[c] = counters.get(c, -1) + 1
                writer.writerow([c, counters[c], repr(float(self.log_post[i]))]
                                + [repr(float(v)) for v in self.draws[i]])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            columns = header[3:]
            chain, logp, rows = [], [], []
            for rec in reader:
                chain.append(int(rec[0]))
                logp.append(float(rec[2]))
                rows.append([float(v) for v in rec[3:]])
        return cls(draws=np.array(rows) if rows else np.zeros((0, len(columns))),
                   columns=columns, log_post=np.array(logp), chain=np.array(chain, dtype=int))


def _gaussian_logpdf(x, sigma):
    x = np.asarray(x, dtype=float)
    return float(-0.5 * x.size * math.log(2.0 * math.pi) - x.size * math.log(sigma)
                 - 0.5 * np.dot(x, x) / sigma ** 2)


def _state_split(model, sub, z):
    """Sampling state (phi, theta[, log_sigma]) from a flat vector."""
    k = sub.k
    phi = z[:k]
    if sub.include_theta:
        return phi, None, None
    theta = z[k: k + model.p]
    log_sigma = float(z[-1]) if model.head.has_learnable_dispersion else None
    return phi, theta, log_sigma


def state_dim(model, sub):
    if sub.include_theta:
        return sub.k
    return sub.k + model.p + (1 if model.head.has_learnable_dispersion else 0)


def _params_from_state(model, sub, z):
    """Flat model parameter vector for a sampling state."""
    phi, theta, log_sigma = _state_split(model, sub, z)
    mapped = phi_to_weights(sub, phi)
    if sub.include_theta:
        return mapped  # naive mode: the map already yields all parameters
    return model.join(theta, mapped, log_sigma)


def log_posterior(model, sub, prior, data_slice, phi, theta=None, log_sigma=None):
    """log p(D | theta, w = mean + Pi phi) + log priors. Returns a float."""
    z = _pack_state(sub, phi, theta, log_sigma)
    val, _ = log_posterior_and_grad(model, sub, prior, data_slice, z)
    return val


def _pack_state(sub, phi, theta, log_sigma):
    parts = [np.asarray(phi, dtype=float)]
    if not sub.include_theta:
        parts.append(np.asarray(theta, dtype=float))
        if log_sigma is not None:
            parts.append([log_sigma])
    return np.concatenate(parts)


def _prior_logpdf_and_grad(model, sub, prior, z):
    phi, theta, log_sigma = _state_split(model, sub, z)
    lp = _gaussian_logpdf(phi, prior.sigma_phi)
    g = np.empty_like(z)
    g[: sub.k] = -phi / prior.sigma_phi ** 2
    if not sub.include_theta:
        lp += _gaussian_logpdf(theta, prior.sigma_theta)
        g[sub.k: sub.k + model.p] = -theta / prior.sigma_theta ** 2
        if log_sigma is not None:
            lp += _gaussian_logpdf(np.array([log_sigma]), prior.sigma_log_dispersion)
            g[-1] = -log_sigma / prior.sigma_log_dispersion ** 2
    return lp, g


def log_posterior_and_grad(model, sub, prior, data_slice, z):
    """(value, gradient) of the log-posterior over the sampling state z.

    ``data_slice`` is a (y, X, U) triple; empty data reduces the value to
    the prior log-density. The w-block of the likelihood gradient is
    chained through the projection transpose to get the phi-gradient.
    """
    y, X, U = data_slice
    lp, g = _prior_logpdf_and_grad(model, sub, prior, z)
    if len(y) == 0:
        return lp, g
    params = _params_from_state(model, sub, z)
    ll, gl = log_likelihood_and_grad(model, params, y, X, U)
    if not np.isfinite(ll):
        return -np.inf, g
    if sub.include_theta:
        g[: sub.k] += sub.projection.T @ gl
    else:
        th_g, w_g, ls_g = model.split(gl)
        g[: sub.k] += sub.projection.T @ w_g
        g[sub.k: sub.k + model.p] += th_g
        if model.head.has_learnable_dispersion:
            g[-1] += ls_g
    return lp + ll, g


def likelihood_only(model, sub, data_slice):
    """log p(D | state) as a function of the sampling state (for ESS)."""
    y, X, U = data_slice

    def loglik(z):
        if len(y) == 0:
            return 0.0
        params = _params_from_state(model, sub, z)
        ll, _ = log_likelihood_and_grad(model, params, y, X, U)
        return ll

    return loglik


def _prior_sds(model, sub, prior):
    sds = np.full(state_dim(model, sub), prior.sigma_phi)
    if not sub.include_theta:
        sds[sub.k: sub.k + model.p] = prior.sigma_theta
        if model.head.has_learnable_dispersion:
            sds[-1] = prior.sigma_log_dispersion
    return sds


# ---------------------------------------------------------------------------
# Hamiltonian Monte Carlo

def _leapfrog(grad_fn, z, r, eps, n_steps):
    """Leapfrog integration with unit mass matrix; returns (z, r, grad, ok)."""
    # diverged trajectories overflow before they are rejected; silence the noise
    with np.errstate(over="ignore", invalid="ignore"):
        _, g = grad_fn(z)
        for _ in range(n_steps):
            r = r + 0.5 * eps * g
            z = z + eps * r
            lp, g = grad_fn(z)
            if not np.isfinite(lp) or not np.all(np.isfinite(g)):
                return z, r, g, False
            r = r + 0.5 * eps * g
    return z, r, g, True


def hmc_sample(logp_and_grad, cfg, init):
    """HMC over R^m for a target returning (log-density, gradient).

    Unit mass matrix, momentum resampled per iteration, Metropolis
    correction on the Hamiltonian difference. During warmup only, the step
    size is adapted by dual averaging toward ``cfg.target_accept``; warmup
    draws are discarded. Chains start from ``init`` plus N(0, init_jitter^2)
    jitter and are stacked in chain order.
    """
    init = np.asarray(init, dtype=float)
    m = init.shape[0]
    all_draws, all_logp, all_chain = [], [], []
    accept_rates, divergences = [], 0

    for c in range(cfg.n_chains):
        rng = np.random.default_rng(cfg.seed + c)
        z = init + cfg.init_jitter * rng.standard_normal(m)
        lp, _ = logp_and_grad(z)
        if not np.isfinite(lp):
            raise SamplingError(f"target not finite at chain {c} init")

        eps = cfg.step_size
        # dual averaging state
        mu_da = math.log(10.0 * eps)
        log_eps_bar, h_bar = 0.0, 0.0
        gamma, t0, kappa = 0.05, 10.0, 0.75
        n_accept_warm = 0
        kept, kept_lp = [], []
        n_iter = cfg.n_warmup + cfg.n_samples
        accepted = 0

        for it in range(n_iter):
            warm = it < cfg.n_warmup
            r = rng.standard_normal(m)
            h0 = lp - 0.5 * np.dot(r, r)
            z_new, r_new, _, ok = _leapfrog(logp_and_grad, z, r, eps, cfg.n_leapfrog)
            if ok:
                lp_new, _ = logp_and_grad(z_new)
                h1 = lp_new - 0.5 * np.dot(r_new, r_new)
                log_alpha = min(0.0, h1 - h0)
                alpha = math.exp(log_alpha) if np.isfinite(log_alpha) else 0.0
            else:
                lp_new, alpha = -np.inf, 0.0
                if not warm:
                    divergences += 1
            if rng.random() < alpha:
                z, lp = z_new, lp_new
                if warm:
                    n_accept_warm += 1
                else:
                    accepted += 1
            if warm and cfg.adapt_step_size:
                t = it + 1
                h_bar = (1 - 1 / (t + t0)) * h_bar + (cfg.target_accept - alpha) / (t + t0)
                log_eps = mu_da - math.sqrt(t) / gamma * h_bar
                w = t ** (-kappa)
                log_eps_bar = w * log_eps + (1 - w) * log_eps_bar
                eps = math.exp(log_eps)
            if warm and it == cfg.n_warmup - 1:
                if cfg.adapt_step_size:
                    eps = math.exp(log_eps_bar)
                if cfg.n_warmup > 0 and n_accept_warm == 0:
                    raise SamplingError(
                        f"chain {c}: zero acceptance over {cfg.n_warmup} warmup iterations"
                    )
            if not warm:
                kept.append(z.copy())
                kept_lp.append(lp)

        if cfg.n_samples > 0:
            all_draws.append(np.array(kept))
            all_logp.append(np.array(kept_lp))
            all_chain.append(np.full(cfg.n_samples, c))
            accept_rates.append(accepted / cfg.n_samples)

    draws = np.vstack(all_draws) if all_draws else np.zeros((0, m))
    stats = {"accept_rate": accept_rates, "divergences": divergences,
             "final_step_size": eps if cfg.n_chains else cfg.step_size}
    return draws, (np.concatenate(all_logp) if all_logp else np.zeros(0)), (
        np.concatenate(all_chain) if all_chain else np.zeros(0, dtype=int)), stats


# ---------------------------------------------------------------------------
# Elliptical slice sampling

def _ess_step(z, ll, loglik, prior_sds, rng, max_shrink):
    """One elliptical slice move; exact for the zero-mean Gaussian prior."""
    nu = prior_sds * rng.standard_normal(z.shape[0])
    log_u = ll + math.log(rng.random())
    angle = 2.0 * math.pi * rng.random()
    lo, hi = angle - 2.0 * math.pi, angle
    for _ in range(max_shrink):
        z_new = z * math.cos(angle) + nu * math.sin(angle)
        ll_new = loglik(z_new)
        if ll_new > log_u:
            return z_new, ll_new
        if angle < 0:
            lo = angle
        else:
            hi = angle
        angle = lo + (hi - lo) * rng.random()
    raise SamplingError(f"elliptical slice bracket failed to shrink within {max_shrink} steps")


def ess_sample(loglik, prior_sds, cfg, init):
    """Elliptical slice sampling for a zero-mean Gaussian prior N(0, diag(sds^2)).

    Gradient-free; with a constant likelihood the stationary distribution
    is exactly the prior. ``loglik`` may optionally accept a per-iteration
    row subsample (see EssConfig.minibatch_size) by being a factory; here
    it is a plain callable z -> log-likelihood.
    """
    init = np.asarray(init, dtype=float)
    prior_sds = np.asarray(prior_sds, dtype=float)
    m = init.shape[0]
    all_draws, all_ll, all_chain = [], [], []

    for c in range(cfg.n_chains):
        rng = np.random.default_rng(cfg.seed + c)
        z = init + cfg.init_jitter * rng.standard_normal(m)
        ll = loglik(z)
        if not np.isfinite(ll):
            raise SamplingError(f"log-likelihood not finite at chain {c} init")
        kept, kept_ll = [], []
        for it in range(cfg.n_warmup + cfg.n_samples):
            z, ll = _ess_step(z, ll, loglik, prior_sds, rng, cfg.max_shrink)
            if it >= cfg.n_warmup:
                kept.append(z.copy())
                kept_ll.append(ll)
        if cfg.n_samples > 0:
            all_draws.append(np.array(kept))
            all_ll.append(np.array(kept_ll))
            all_chain.append(np.full(cfg.n_samples, c))

    draws = np.vstack(all_draws) if all_draws else np.zeros((0, m))
    return draws, (np.concatenate(all_ll) if all_ll else np.zeros(0)), (
        np.concatenate(all_chain) if all_chain else np.zeros(0, dtype=int)), {}


# ---------------------------------------------------------------------------
# High-level wrappers

def _state_columns(model, sub):
    cols = [f"phi_{i+1}" for i in range(sub.k)]
    if not sub.include_theta:
        cols += [f"theta_{j+1}" for j in range(model.p)]
        if model.head.has_learnable_dispersion:
            cols.append("log_sigma")
    return cols


def _default_init(model, sub, rng, warm_theta=True):
    z = np.zeros(state_dim(model, sub))
    if not sub.include_theta and warm_theta and sub.theta_star is not None:
        z[sub.k: sub.k + model.p] = sub.theta_star
        if model.head.has_learnable_dispersion and sub.log_sigma_star is not None:
            z[-1] = sub.log_sigma_star
    return z


def _augment_naive_theta(model, sub, draws, columns):
    """Naive mode: derive theta (and log-sigma) columns from the mapped params."""
    extra = []
    names = [f"theta_{j+1}" for j in range(model.p)]
    if model.head.has_learnable_dispersion:
        names.append("log_sigma")
    for row in draws:
        params = _params_from_state(model, sub, row)
        theta, _, log_sigma = model.split(params)
        extra.append(list(theta) + ([log_sigma] if log_sigma is not None else []))
    if draws.shape[0] == 0:
        extra = np.zeros((0, len(names)))
    return np.hstack([draws, np.array(extra)]), columns + names


def sample_semi_subspace(model, sub, prior, data, cfg, sampler="hmc"):
    """Draws over (phi, theta[, log_sigma]) for the subspace posterior.

    ``sampler`` is "hmc" or "ess". In naive mode (subspace built with
    include_theta=True) the sampling state is phi alone; theta columns in
    the output are derived through the affine map for comparability.
    """
    y, X, U = data.subset("train")
    data_slice = (y, X, U)
    rng = np.random.default_rng(cfg.seed)
    init = _default_init(model, sub, rng)
    columns = _state_columns(model, sub)

    if sampler == "hmc":
        target = lambda z: log_posterior_and_grad(model, sub, prior, data_slice, z)
        draws, logp, chain, stats = hmc_sample(target, cfg, init)
    elif sampler == "ess":
        loglik = likelihood_only(model, sub, data_slice)
        if getattr(cfg, "minibatch_size", None):
            loglik = _minibatch_loglik(model, sub, data_slice, cfg)
        sds = _prior_sds(model, sub, prior)
        draws, logp, chain, stats = ess_sample(loglik, sds, cfg, init)
    else:
        raise ValueError(f"unknown sampler {sampler!r}")

    if sub.include_theta:
        draws, columns = _augment_naive_theta(model, sub, draws, columns)
    return PosteriorSamples(draws=draws, columns=columns, log_post=logp,
                            chain=chain, stats=stats)


def _minibatch_loglik(model, sub, data_slice, cfg):
    """Subsampled-likelihood surrogate for ESS: fixed random minibatch per call.

    Approximate by construction; rescales the minibatch sum to the full-data
    scale. Flag-gated via EssConfig.minibatch_size.
    """
    y, X, U = data_slice
    n = len(y)
    b = min(cfg.minibatch_size, n)
    rng = np.random.default_rng(cfg.seed + 104729)
    scale = n / b

    def loglik(z):
        idx = rng.choice(n, size=b, replace=False)
        params = _params_from_state(model, sub, z)
        ll, _ = log_likelihood_and_grad(model, params, y[idx], X[idx], U[idx])
        return scale * ll

    return loglik


def sample_full_space(model, prior, data, cfg, force=False, init=None):
    """HMC over every model parameter jointly; the gold-standard oracle.

    Refuses models above ``FULL_SPACE_GUARD`` parameters unless forced.
    Priors: N(0, sigma_theta^2) on theta, N(0, sigma_w^2) on the weights,
    N(0, sigma_log_dispersion^2) on the log-dispersion.
    """
    if model.n_params > FULL_SPACE_GUARD and not force:
        raise SamplingError(
            f"{model.n_params} parameters exceeds the full-space guard of "
            f"{FULL_SPACE_GUARD}; pass force=True to override"
        )
    y, X, U = data.subset("train")
    sds = np.empty(model.n_params)
    sds[: model.p] = prior.sigma_theta
    sds[model.p: model.p + model.d] = prior.sigma_w
    if model.head.has_learnable_dispersion:
        sds[-1] = prior.sigma_log_dispersion

    def target(z):
        lp = float(np.sum(-0.5 * math.log(2.0 * math.pi) - np.log(sds)
                          - 0.5 * (z / sds) ** 2))
        g = -z / sds ** 2
        if len(y):
            ll, gl = log_likelihood_and_grad(model, z, y, X, U)
            if not np.isfinite(ll):
                return -np.inf, g
            lp += ll
            g = g + gl
        return lp, g

    if init is None:
        rng = np.random.default_rng(cfg.seed)
        init = 0.01 * rng.standard_normal(model.n_params)
    draws, logp, chain, stats = hmc_sample(target, cfg, np.asarray(init, dtype=float))
    columns = ([f"theta_{j+1}" for j in range(model.p)]
               + [f"w_{j+1}" for j in range(model.d)]
               + (["log_sigma"] if model.head.has_learnable_dispersion else []))
    return PosteriorSamples(draws=draws, columns=columns, log_post=logp,
                            chain=chain, stats=stats)


# ---------------------------------------------------------------------------
# Tempering

def tempered_log_posterior(model, sub, prior, data, phi, theta=None, log_sigma=None,
                           temperature=1.0, form="plain", n_grid=401, grid_half_width=None):
    """Tempered log-posterior over (phi, theta), up to additive constants.

    ``form="plain"`` scales the likelihood by 1/T. ``form="split"`` tempers
    only the subspace marginal: log p(theta | phi, D) + (1/T) log p(D | phi)
    + log p(phi), with the phi-marginal likelihood p(D | phi) =
    integral of p(D | theta, phi) p(theta) dtheta computed by trapezoid
    quadrature over a grid of ``n_grid`` points spanning +-8 sigma_theta
    (scalar theta only).
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    y, X, U = data.subset("train") if hasattr(data, "subset") else data
    data_slice = (y, X, U)
    z = _pack_state(sub, phi, theta, log_sigma)
    lp_prior, _ = _prior_logpdf_and_grad(model, sub, prior, z)
    params = _params_from_state(model, sub, z)
    ll, _ = log_likelihood_and_grad(model, params, y, X, U) if len(y) else (0.0, None)

    if form == "plain":
        return lp_prior + ll / temperature
    if form != "split":
        raise ValueError(f"unknown form {form!r}")
    if sub.include_theta or model.p != 1:
        raise ValueError(
            "split-form tempering requires a scalar structured parameter "
            "(quadrature over theta is only feasible in low dimension)"
        )
    log_marg = _log_marginal_likelihood_phi(
        model, sub, prior, data_slice, np.asarray(phi, dtype=float), log_sigma,
        n_grid, grid_half_width)
    # log p(theta|phi,D) + (1/T) log p(D|phi) + log p(phi), constants dropped:
    # = ll + log N(theta) - log p(D|phi) + (1/T) log p(D|phi) + log N(phi)
    return lp_prior + ll + (1.0 / temperature - 1.0) * log_marg


def _log_marginal_likelihood_phi(model, sub, prior, data_slice, phi, log_sigma,
                                 n_grid, grid_half_width):
    """Trapezoid quadrature of p(D | theta, phi) p(theta) over scalar theta."""
    y, X, U = data_slice
    half = grid_half_width if grid_half_width is not None else 8.0 * prior.sigma_theta
    grid = np.linspace(-half, half, n_grid)
    logs = np.empty(n_grid)
    w = phi_to_weights(sub, np.asarray(phi, dtype=float))
    for i, th in enumerate(grid):
        params = model.join(np.array([th]), w, log_sigma)
        ll, _ = log_likelihood_and_grad(model, params, y, X, U)
        logs[i] = ll + _gaussian_logpdf(np.array([th]), prior.sigma_theta)
    m = np.max(logs)
    dx = grid[1] - grid[0]
    vals = np.exp(logs - m)
    integral = np.trapezoid(vals, dx=dx) if hasattr(np, "trapezoid") else np.trapz(vals, dx=dx)
    return m + math.log(integral)
