"""Posterior-quality metrics: predictive density, moments, intervals, coverage, AUC."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata

from .inference import _params_from_state
from .model import predict_mu


def pointwise_log_density(model, sub, samples, y, X, U):
    """Matrix [S x n] of log p(y_i | draw_s) over a test set.

    ``sub`` maps subspace draws to weights; pass ``sub=None`` for
    full-space samples whose columns already are the flat parameters.
    """
    S = samples.n
    n = len(y)
    if S == 0 or n == 0:
        raise ValueError("need at least one draw and one test point")
    out = np.empty((S, n))
    for s in range(S):
        if sub is None:
            params = samples.draws[s]
        else:
            params = _params_from_state(model, sub, samples.draws[s][: _state_len(model, sub)])
        theta, w, log_sigma = model.split(params)
        mu = predict_mu(model, params, X, U)
        out[s] = model.head.log_prob(y, mu, log_sigma)
    return out


def _state_len(model, sub):
    if sub.include_theta:
        return sub.k
    return sub.k + model.p + (1 if model.head.has_learnable_dispersion else 0)


def lppd(samples, model, sub, y, X, U):
    """Normalized log pointwise predictive density and its standard error.

    lppd = (1/n) sum_i log[(1/S) sum_s p(y_i | draw_s)], the inner average
    in log-space; the standard error is the sd over points of the per-point
    log predictive density divided by sqrt(n).
    """
    logdens = pointwise_log_density(model, sub, samples, y, X, U)
    per_point = logsumexp(logdens, axis=0) - math.log(logdens.shape[0])
    n = per_point.shape[0]
    return float(np.mean(per_point)), float(np.std(per_point, ddof=0) / math.sqrt(n))


def sample_moment(values, moment):
    """Moments 1-4: mean, sd, skewness, excess kurtosis (standardized central)."""
    x = np.asarray(values, dtype=float)
    if moment == 1:
        return float(np.mean(x))
    mu = np.mean(x)
    sd = np.std(x, ddof=0)
    if moment == 2:
        return float(sd)
    zc = (x - mu) / sd
    if moment == 3:
        return float(np.mean(zc ** 3))
    if moment == 4:
        return float(np.mean(zc ** 4) - 3.0)
    raise ValueError(f"moment must be 1..4, got {moment}")


def posterior_moment_diff(a, b, param, moment):
    """moment_m(a[param]) - moment_m(b[param]) for two sample sets."""
    return sample_moment(a.column(param), moment) - sample_moment(b.column(param), moment)


def credible_interval(values, alpha):
    """Equal-tailed interval: [(1-alpha)/2, (1+alpha)/2] empirical quantiles.

    Linear interpolation between order statistics (the common "type 7" rule).
    """
    x = np.asarray(values, dtype=float)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if x.size < 2:
        raise ValueError(f"need at least 2 draws, got {x.size}")
    lo, hi = np.quantile(x, [(1 - alpha) / 2, (1 + alpha) / 2], method="linear")
    return float(lo), float(hi)


def wilson_interval(successes, trials, z=1.96):
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    phat = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    center = (phat + z2 / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z2 / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass
class CoverageTable:
    """Per-alpha empirical coverage with Wilson 95% score bounds."""

    rows: list  # of dicts: alpha, empirical, wilson_low, wilson_high, n_trials

    def row(self, alpha):
        for r in self.rows:
            if math.isclose(r["alpha"], alpha):
                return r
        raise KeyError(f"no row for alpha={alpha}")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["alpha", "empirical", "wilson_low", "wilson_high", "n_trials"])
            writer.writeheader()
            writer.writerows(self.rows)


def coverage_study(runs, alphas):
    """Fraction of runs whose equal-tailed interval contains the true value.

    ``runs`` is a list of (draws-1d, theta_true) pairs; one CoverageTable
    row per nominal alpha, with the Wilson 95% interval on the fraction.
    """
    runs = list(runs)
    if len(runs) < 2:
        raise ValueError(f"need at least 2 runs, got {len(runs)}")
    rows = []
    for alpha in alphas:
        hits = 0
        for draws, true_val in runs:
            lo, hi = credible_interval(draws, alpha)
            hits += int(lo <= true_val <= hi)
        lo_w, hi_w = wilson_interval(hits, len(runs))
        rows.append({"alpha": float(alpha), "empirical": hits / len(runs),
                     "wilson_low": lo_w, "wilson_high": hi_w, "n_trials": len(runs)})
    return CoverageTable(rows=rows)


def hdi(draws, mass):
    """Shortest contiguous order-statistic window holding the given mass."""
    x = np.sort(np.asarray(draws, dtype=float))
    if not 0.0 < mass < 1.0:
        raise ValueError(f"mass must be in (0, 1), got {mass}")
    n = x.size
    window = int(math.ceil(mass * n))
    if window < 2 or window > n:
        raise ValueError(f"too few draws ({n}) for mass {mass}")
    widths = x[window - 1:] - x[: n - window + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + window - 1])


def auc(labels, scores):
    """Rank-based (Mann-Whitney) AUC with midrank tie handling."""
    y = np.asarray(labels, dtype=float)
    s = np.asarray(scores, dtype=float)
    if y.shape != s.shape:
        raise ValueError("labels and scores must have the same length")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("both classes must be present")
    ranks = rankdata(s)
    u = np.sum(ranks[y == 1]) - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class DiagnosticsReport:
    """Aggregated evaluation output, serializable to JSON."""

    lppd: float
    lppd_se: float
    posterior_moments: dict  # param -> {mean, sd, skewness, excess_kurtosis}
    coverage: list = None
    calibration_note: str = "equal-tailed credible intervals, type-7 quantiles"
    auc: float = None
    predictive_intervals: list = None  # rows of {u, mean, hdi_low, hdi_high}

    def to_json(self, path):
        payload = asdict(self)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)


def moments_table(samples, params):
    out = {}
    for p in params:
        x = samples.column(p)
        out[p] = {
            "mean": sample_moment(x, 1),
            "sd": sample_moment(x, 2),
            "skewness": sample_moment(x, 3),
            "excess_kurtosis": sample_moment(x, 4),
        }
    return out


def predictive_bands(model, sub, samples, X, U, mass=0.95, rng=None):
    """Posterior-predictive mean and HDI band per input row.

    Draws one outcome per posterior draw per row from the head, then takes
    the shortest interval of the requested mass.
    """
    rng = rng or np.random.default_rng(0)
    S = samples.n
    n = len(U)
    mus = np.empty((S, n))
    sigmas = np.empty(S)
    for s in range(S):
        if sub is None:
            params = samples.draws[s]
        else:
            params = _params_from_state(model, sub, samples.draws[s][: _state_len(model, sub)])
        mus[s] = predict_mu(model, params, X, U)
        _, _, log_sigma = model.split(params)
        if model.head.family == "normal":
            sigmas[s] = (math.exp(log_sigma) if model.head.has_learnable_dispersion
                         else model.head.dispersion)
    if model.head.family == "normal":
        draws_y = mus + sigmas[:, None] * rng.standard_normal((S, n))
    elif model.head.family == "poisson":
        draws_y = rng.poisson(np.exp(np.clip(mus, -30, 30))).astype(float)
    else:
        draws_y = (rng.random((S, n)) < 1.0 / (1.0 + np.exp(-mus))).astype(float)
    rows = []
    for i in range(n):
        lo, hi = hdi(draws_y[:, i], mass)
        rows.append({"mean": float(np.mean(mus[:, i])), "hdi_low": lo, "hdi_high": hi})
    return rows


def write_bands_csv(rows, us, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "mean", "hdi_low", "hdi_high"])
        for u, r in zip(us, rows):
            writer.writerow([repr(float(u)), repr(r["mean"]), repr(r["hdi_low"]),
                             repr(r["hdi_high"])])
