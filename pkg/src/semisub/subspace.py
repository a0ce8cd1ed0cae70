"""Low-loss Bezier subspace over network weights.

A Bernstein-basis curve with k+1 trainable control points is fit so that
weights anywhere along the curve give a low negative log-likelihood; the
affine span of the optimized control points is then turned into an
orthonormal k-dimensional sampling coordinate system via PCA (thin SVD of
the centered control-point matrix), giving the map w = mean + Pi @ phi.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb

from .model import log_likelihood_and_grad


class DegenerateSubspaceError(ValueError):
    """All control points identical; no subspace can be built."""


class TrainingDivergedError(RuntimeError):
    """Non-finite loss encountered during curve training."""


@dataclass(frozen=True)
class ControlPoints:
    """k+1 weight vectors in R^dim defining the curve; points has shape (k+1, dim)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] < 2:
            raise ValueError(f"need at least 2 control points, got {pts.shape[0]}")
        object.__setattr__(self, "points", pts)

    @property
    def k(self):
        return self.points.shape[0] - 1

    @property
    def dim(self):
        return self.points.shape[1]


def bernstein_weights(k, t):
    """Bernstein basis values C(k,l) (1-t)^(k-l) t^l for l = 0..k."""
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    ls = np.arange(k + 1)
    return comb(k, ls) * (1.0 - t) ** (k - ls) * t ** ls


def bezier_eval(cp, t):
    """Point on the curve at t in [0, 1]; weights form a partition of unity."""
    return bernstein_weights(cp.k, t) @ cp.points


@dataclass(frozen=True)
class TrainConfig:
    """Adam hyperparameters and schedule for curve training."""

    learning_rate: float = 0.0025
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 200
    batch_size: int = 32
    select_best_val: bool = True
    val_t: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.val_t <= 1.0:
            raise ValueError(f"val_t must be in [0, 1], got {self.val_t}")


@dataclass(frozen=True)
class TrainResult:
    control_points: ControlPoints
    theta_star: np.ndarray
    log_sigma_star: float | None
    best_epoch: int
    train_nll: float
    val_nll: float
    include_theta: bool


def _curve_params_for(model, include_theta):
    """Dimension of one control point; naive mode folds (theta[, log-sigma]) in."""
    return model.n_params if include_theta else model.d


def train_subspace(model, data, k, cfg, include_theta=False):
    """Fit the curve's k+1 control points (and theta) by Adam on the NLL.

    Every minibatch step samples a fresh t ~ U(0,1), sets the network
    weights to the curve point b(t), and updates all control points and
    theta jointly (single-stage training). With ``select_best_val`` the
    parameter snapshot with the lowest validation NLL (evaluated at
    t = cfg.val_t) is returned; otherwise the final state.

    ``include_theta`` switches to the naive variant where theta (and the
    dispersion) are folded into the curve instead of living in their own
    full space.

    With ``max_epochs=0`` the random initialization is returned unchanged.
    """
    if k < 1:
        raise ValueError(f"subspace dimension k must be >= 1, got {k}")
    rng = np.random.default_rng(cfg.seed)
    dim = _curve_params_for(model, include_theta)

    # independent random init per control point
    points = np.empty((k + 1, dim))
    for l in range(k + 1):
        full = model.init_params(rng)
        points[l] = full if include_theta else model.split(full)[1]
    theta = 0.1 * rng.standard_normal(model.p)
    log_sigma = 0.0 if model.head.has_learnable_dispersion else None

    y_tr, X_tr, U_tr = data.subset("train")
    has_val = data.n_split("val") > 0
    if cfg.select_best_val and not has_val and cfg.max_epochs > 0:
        raise ValueError("select_best_val requires a validation split")
    n_tr = y_tr.shape[0]

    def pack():
        parts = [points.ravel()]
        if not include_theta:
            parts.append(theta)
            if log_sigma is not None:
                parts.append([log_sigma])
        return np.concatenate(parts)

    def unpack(z):
        nonlocal points, theta, log_sigma
        points = z[: (k + 1) * dim].reshape(k + 1, dim).copy()
        if not include_theta:
            off = (k + 1) * dim
            theta = z[off: off + model.p].copy()
            if log_sigma is not None:
                log_sigma = float(z[-1])

    z = pack()
    m_adam = np.zeros_like(z)
    v_adam = np.zeros_like(z)
    step = 0

    def val_nll(z_now):
        pts = z_now[: (k + 1) * dim].reshape(k + 1, dim)
        wts = bernstein_weights(k, cfg.val_t)
        curve_w = wts @ pts
        if include_theta:
            params = curve_w
        else:
            off = (k + 1) * dim
            th = z_now[off: off + model.p]
            ls = float(z_now[-1]) if log_sigma is not None else None
            params = model.join(th, curve_w, ls)
        y_v, X_v, U_v = data.subset("val" if has_val else "train")
        ll, _ = log_likelihood_and_grad(model, params, y_v, X_v, U_v)
        return -ll / y_v.shape[0]

    def train_nll(z_now):
        pts = z_now[: (k + 1) * dim].reshape(k + 1, dim)
        wts = bernstein_weights(k, cfg.val_t)
        curve_w = wts @ pts
        if include_theta:
            params = curve_w
        else:
            off = (k + 1) * dim
            th = z_now[off: off + model.p]
            ls = float(z_now[-1]) if log_sigma is not None else None
            params = model.join(th, curve_w, ls)
        ll, _ = log_likelihood_and_grad(model, params, y_tr, X_tr, U_tr)
        return -ll / n_tr

    best = (np.inf, z.copy(), 0)
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(n_tr)
        for start in range(0, n_tr, cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            t = rng.random()
            wts = bernstein_weights(k, t)
            curve_w = wts @ points
            if include_theta:
                params = curve_w
            else:
                params = model.join(theta, curve_w, log_sigma)
            ll, g = log_likelihood_and_grad(model, params, y_tr[idx], X_tr[idx], U_tr[idx])
            loss = -ll / idx.size
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {step}"
                )
            g = -g / idx.size  # gradient of the mean NLL w.r.t. flat params
            if include_theta:
                g_curve = g
            else:
                th_g, g_curve, ls_g = model.split(g)
            # chain rule through the curve: dL/dp_l = bernstein_l(t) * dL/dw
            g_points = np.outer(wts, g_curve)
            # decoupled-from-theta L2 weight decay on the control points only
            g_points += cfg.weight_decay * points
            parts = [g_points.ravel()]
            if not include_theta:
                parts.append(th_g)
                if log_sigma is not None:
                    parts.append([ls_g])
            grad = np.concatenate(parts)

            step += 1
            m_adam = cfg.beta1 * m_adam + (1 - cfg.beta1) * grad
            v_adam = cfg.beta2 * v_adam + (1 - cfg.beta2) * grad * grad
            mhat = m_adam / (1 - cfg.beta1 ** step)
            vhat = v_adam / (1 - cfg.beta2 ** step)
            z = z - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
            unpack(z)

        if cfg.select_best_val:
            v = val_nll(z)
            if v < best[0]:
                best = (v, z.copy(), epoch)

    if cfg.select_best_val and cfg.max_epochs > 0:
        z = best[1]
        unpack(z)
        best_epoch = best[2]
        vnll = best[0]
    else:
        best_epoch = max(cfg.max_epochs - 1, 0)
        vnll = val_nll(z) if (has_val or cfg.max_epochs == 0) else float("nan")

    cp = ControlPoints(points=points.copy())
    return TrainResult(
        control_points=cp,
        theta_star=theta.copy(),
        log_sigma_star=log_sigma,
        best_epoch=best_epoch,
        train_nll=train_nll(z),
        val_nll=vnll,
        include_theta=include_theta,
    )


@dataclass(frozen=True)
class BezierSubspace:
    """Affine sampling coordinates w = mean + projection @ phi.

    ``projection`` has orthonormal columns ordered by descending explained
    variance of the centered control points; every optimized control point
    lies in its column span (up to rank deficiency, where trailing columns
    are zero).
    """

    mean: np.ndarray
    projection: np.ndarray
    control_points: ControlPoints
    theta_star: np.ndarray = None
    log_sigma_star: float = None
    include_theta: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def k(self):
        return self.projection.shape[1]

    @property
    def dim(self):
        return self.projection.shape[0]


def build_projection(cp, theta_star=None, log_sigma_star=None, include_theta=False,
                     meta=None):
    """PCA of the centered control points via thin SVD.

    The k leading right-singular vectors of the (k+1) x dim centered matrix
    become the projection columns. Collinear control points make trailing
    singular values vanish; the corresponding columns are zeroed and a
    warning is emitted (sampling in those directions is a no-op).
    """
    pts = cp.points
    mean = pts.mean(axis=0)
    centered = pts - mean
    if np.allclose(centered, 0.0):
        raise DegenerateSubspaceError("all control points identical")
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    k = cp.k
    tol = s[0] * max(pts.shape) * np.finfo(float).eps
    rank = int(np.sum(s > tol))
    proj = np.zeros((cp.dim, k))
    r = min(rank, k)
    proj[:, :r] = vt[:r].T
    if rank < k:
        warnings.warn(
            f"control points span only {rank} of {k} directions; trailing columns zeroed"
        )
    return BezierSubspace(
        mean=mean, projection=proj, control_points=cp,
        theta_star=None if theta_star is None else np.asarray(theta_star, dtype=float),
        log_sigma_star=log_sigma_star, include_theta=include_theta,
        meta=dict(meta or {}),
    )


def subspace_from_training(result, meta=None):
    """Convenience: PCA projection straight from a TrainResult."""
    return build_projection(
        result.control_points, theta_star=result.theta_star,
        log_sigma_star=result.log_sigma_star, include_theta=result.include_theta,
        meta=meta,
    )


def phi_to_weights(sub, phi):
    """Affine map phi -> weights; an isometry since the columns are orthonormal."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (sub.k,):
        raise ValueError(f"expected phi of length {sub.k}, got shape {phi.shape}")
    return sub.mean + sub.projection @ phi


def save_checkpoint(sub, path):
    """Write the subspace to JSON (shortest round-trip float encoding)."""
    payload = {
        "dim": sub.dim,
        "k": sub.k,
        "mean": sub.mean.tolist(),
        "projection_columns": [sub.projection[:, j].tolist() for j in range(sub.k)],
        "control_points": sub.control_points.points.tolist(),
        "theta_star": None if sub.theta_star is None else sub.theta_star.tolist(),
        "log_sigma_star": sub.log_sigma_star,
        "include_theta": sub.include_theta,
        "meta": sub.meta,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    proj = np.array(payload["projection_columns"], dtype=float).T
    return BezierSubspace(
        mean=np.array(payload["mean"], dtype=float),
        projection=proj,
        control_points=ControlPoints(points=np.array(payload["control_points"], dtype=float)),
        theta_star=(None if payload["theta_star"] is None
                    else np.array(payload["theta_star"], dtype=float)),
        log_sigma_star=payload["log_sigma_star"],
        include_theta=payload["include_theta"],
        meta=payload.get("meta", {}),
    )
