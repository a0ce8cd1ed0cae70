"""Synthetic data generators, CSV ingestion, standardization, and splits.

Generators are pure functions of (spec, seed): running one twice with the
same spec yields bit-identical datasets.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import LikelihoodHead, MlpArchitecture, SsrModel, mlp_forward

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    """Malformed input data or schema."""


@dataclass
class Dataset:
    """Rows (y, x, u) with split labels and standardization metadata.

    ``split`` holds one of "train"/"val"/"test" per row. ``standardization``
    records per-column (mean, sd) applied to U (and optionally y), computed
    on the training split only, so predictions can be de-standardized.
    """

    y: np.ndarray
    X: np.ndarray
    U: np.ndarray
    split: np.ndarray
    standardization: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float))
        self.split = np.asarray(self.split)
        n = self.y.shape[0]
        if not (self.X.shape[0] == n and self.U.shape[0] == n and self.split.shape[0] == n):
            raise DataError(
                f"inconsistent row counts: y={n}, X={self.X.shape[0]}, "
                f"U={self.U.shape[0]}, split={self.split.shape[0]}"
            )
        for arr, name in ((self.y, "y"), (self.X, "X"), (self.U, "U")):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite entries in {name}")

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def q(self):
        return self.U.shape[1]

    def subset(self, name):
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        m = self.split == name
        return self.y[m], self.X[m], self.U[m]

    def n_split(self, name):
        return int(np.sum(self.split == name))


@dataclass(frozen=True)
class SimSpec:
    """Configuration for the synthetic generators.

    families: ``toy_1d`` (1-d nonlinearity with categorical shifts),
    ``sim_normal`` / ``sim_poisson`` (random ground-truth network over
    u in R^4, x in R^3).
    """

    family: str = "toy_1d"
    n_train: int = 35
    n_val: int = 35
    n_test: int = 365
    seed: int = 0
    theta_star: tuple = None
    noise_sd: float = 0.1

    def __post_init__(self):
        if self.family not in ("toy_1d", "sim_normal", "sim_poisson"):
            raise DataError(f"unknown family {self.family!r}")
        if min(self.n_train, self.n_test) < 1 or self.n_val < 0:
            raise DataError("split sizes must be positive (n_val may be 0)")
        want = 2 if self.family == "toy_1d" else 3
        theta = self.theta_star
        if theta is None:
            theta = (-0.5, 1.0) if self.family == "toy_1d" else None
        if theta is not None and len(theta) != want:
            raise DataError(f"theta_star must have length {want} for {self.family}")
        object.__setattr__(self, "theta_star", tuple(theta) if theta is not None else None)


# Design intervals for the toy input: gaps between them create the
# in/out-of-distribution regions used by the predictive-band plots.
TOY_INTERVALS = ((-4.0, -2.0), (-0.5, 0.5), (2.0, 4.0))
TOY_CATEGORIES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _toy_f_scale():
    # normalize f(u) = u^3 cos(u) to sd ~ 1 over the design support
    grid = np.concatenate([np.linspace(a, b, 4001) for a, b in TOY_INTERVALS])
    vals = grid ** 3 * np.cos(grid)
    return float(np.std(vals))


_TOY_SCALE = _toy_f_scale()


def toy_f(u):
    """The toy nonlinearity, scaled to output sd ~ 1 over the design."""
    u = np.asarray(u, dtype=float)
    return u ** 3 * np.cos(u) / _TOY_SCALE


def _sample_toy_u(rng, n):
    widths = np.array([b - a for a, b in TOY_INTERVALS])
    probs = widths / widths.sum()
    idx = rng.choice(len(TOY_INTERVALS), size=n, p=probs)
    lo = np.array([a for a, _ in TOY_INTERVALS])[idx]
    hi = np.array([b for _, b in TOY_INTERVALS])[idx]
    return lo + (hi - lo) * rng.random(n)


def generate_toy(spec):
    """Toy regression dataset: y = f(u) + x' theta* + eps, categorical x.

    x is drawn uniformly over {(0,0), (1,0), (0,1)}; u from three disjoint
    intervals; eps ~ N(0, noise_sd^2).
    """
    if spec.family != "toy_1d":
        raise DataError(f"generate_toy expects family 'toy_1d', got {spec.family!r}")
    rng = np.random.default_rng(spec.seed)
    n = spec.n_train + spec.n_val + spec.n_test
    u = _sample_toy_u(rng, n)
    cat = rng.integers(0, 3, size=n)
    X = TOY_CATEGORIES[cat]
    theta = np.asarray(spec.theta_star, dtype=float)
    y = toy_f(u) + X @ theta + spec.noise_sd * rng.standard_normal(n)
    split = np.array(
        ["train"] * spec.n_train + ["val"] * spec.n_val + ["test"] * spec.n_test
    )
    meta = {"family": "toy_1d", "seed": spec.seed, "theta_star": theta.tolist(),
            "noise_sd": spec.noise_sd}
    return Dataset(y=y, X=X, U=u[:, None], split=split, meta=meta)


SIM_ARCH = MlpArchitecture(input_dim=4, hidden_layers=((16, "relu"), (16, "relu")))
POISSON_CLIP = 10.0


def generate_simulation(spec):
    """Simulation-study dataset from a random ground-truth network.

    u_i ~ N(0, I_4), x_i ~ N(0, I_3); the generator network is a seeded
    random 4-16-16-1 ReLU MLP with N(0, 1/fan_in) weights. Normal outcome:
    y ~ N(f(u) + x' theta*, 1). Poisson: y ~ Pois(exp(clip(f(u) + x' theta*)))
    with the linear predictor clipped to +-10 before the exponential.

    Returns (dataset, theta_star, generator_weights).
    """
    if spec.family not in ("sim_normal", "sim_poisson"):
        raise DataError(f"generate_simulation expects sim_* family, got {spec.family!r}")
    rng = np.random.default_rng(spec.seed)
    theta = (np.asarray(spec.theta_star, dtype=float)
             if spec.theta_star is not None else rng.standard_normal(3))
    parts = []
    for (wshape, bdim) in SIM_ARCH.layer_shapes():
        sd = 1.0 / np.sqrt(wshape[1])
        parts.append(sd * rng.standard_normal(wshape[0] * wshape[1]))
        parts.append(sd * rng.standard_normal(bdim))
    w_star = np.concatenate(parts)

    n = spec.n_train + spec.n_val + spec.n_test
    U = rng.standard_normal((n, 4))
    X = rng.standard_normal((n, 3))
    eta = mlp_forward(SIM_ARCH, w_star, U) + X @ theta
    if spec.family == "sim_normal":
        y = eta + rng.standard_normal(n)
    else:
        eta = np.clip(eta, -POISSON_CLIP, POISSON_CLIP)
        y = rng.poisson(np.exp(eta)).astype(float)
    split = np.array(
        ["train"] * spec.n_train + ["val"] * spec.n_val + ["test"] * spec.n_test
    )
    meta = {
        "family": spec.family, "seed": spec.seed, "theta_star": theta.tolist(),
        "generator_arch": {"input_dim": 4, "hidden_layers": [[16, "relu"], [16, "relu"]]},
        "poisson_clip": POISSON_CLIP if spec.family == "sim_poisson" else None,
    }
    ds = Dataset(y=y, X=X, U=U, split=split, meta=meta)
    return ds, theta, w_star


def generator_model(spec):
    """The SsrModel matching :func:`generate_simulation`'s ground truth."""
    head = (LikelihoodHead("normal", dispersion=1.0) if spec.family == "sim_normal"
            else LikelihoodHead("poisson"))
    return SsrModel(p=3, arch=SIM_ARCH, head=head)


def standardize(ds, u_too=True, y_too=False):
    """Standardize U columns (and optionally y) to mean 0, sd 1 on train rows.

    Statistics come from the training split only and are applied unchanged
    to val/test. Constant columns are left unscaled with a warning.
    Returns a new Dataset; the applied statistics live in
    ``.standardization``.
    """
    train = ds.split == "train"
    if not np.any(train):
        raise DataError("cannot standardize: no training rows")
    U = ds.U.copy()
    stats = {"u_mean": [], "u_sd": []}
    for j in range(U.shape[1] if u_too else 0):
        m = float(np.mean(U[train, j]))
        s = float(np.std(U[train, j]))
        if s == 0.0:
            warnings.warn(f"constant column u[{j}]; left unscaled")
            s = 1.0
        U[:, j] = (U[:, j] - m) / s
        stats["u_mean"].append(m)
        stats["u_sd"].append(s)
    y = ds.y.copy()
    if y_too:
        m = float(np.mean(y[train]))
        s = float(np.std(y[train]))
        if s == 0.0:
            warnings.warn("constant outcome y; left unscaled")
            s = 1.0
        y = (y - m) / s
        stats["y_mean"], stats["y_sd"] = m, s
    return Dataset(y=y, X=ds.X.copy(), U=U, split=ds.split.copy(),
                   standardization=stats, meta=dict(ds.meta))


def destandardize_y(ds, y_std):
    """Invert the y-standardization recorded on the dataset."""
    if "y_mean" not in ds.standardization:
        return np.asarray(y_std, dtype=float)
    return np.asarray(y_std, dtype=float) * ds.standardization["y_sd"] + ds.standardization["y_mean"]


def load_csv(path, y_col, x_cols, u_cols, split=(0.8, 0.1, 0.1), seed=0,
             split_col=None, standardize_u=True, standardize_y=False):
    """Load an RFC-4180 CSV with a header row into a Dataset.

    Rows are shuffled deterministically by ``seed`` and assigned to
    train/val/test by the ``split`` fractions, unless ``split_col`` names a
    column already holding train/val/test labels. U (and optionally y) are
    standardized on the training split.
    """
    fracs = np.asarray(split, dtype=float)
    if abs(fracs.sum() - 1.0) > 1e-9:
        raise DataError(f"split fractions must sum to 1, got {fracs.tolist()}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise DataError(f"empty CSV: {path}")
    needed = [y_col] + list(x_cols) + list(u_cols) + ([split_col] if split_col else [])
    for c in needed:
        if c not in rows[0]:
            raise DataError(f"missing column {c!r} in {path}")

    def parse(row, col, i):
        try:
            return float(row[col])
        except ValueError:
            raise DataError(f"non-numeric cell at row {i}, column {col!r}: {row[col]!r}")

    n = len(rows)
    y = np.array([parse(r, y_col, i) for i, r in enumerate(rows)])
    X = np.array([[parse(r, c, i) for c in x_cols] for i, r in enumerate(rows)])
    if X.size == 0:
        X = np.zeros((n, 0))
    U = np.array([[parse(r, c, i) for c in u_cols] for i, r in enumerate(rows)])

    if split_col:
        labels = np.array([r[split_col] for r in rows])
        bad = set(labels) - set(SPLITS)
        if bad:
            raise DataError(f"unknown split labels {sorted(bad)} in column {split_col!r}")
    else:
        rng = np.random.default_rng(seed)
        order = rng.permutation(n)
        n_train = int(round(fracs[0] * n))
        n_val = int(round(fracs[1] * n))
        labels = np.empty(n, dtype=object)
        labels[order[:n_train]] = "train"
        labels[order[n_train:n_train + n_val]] = "val"
        labels[order[n_train + n_val:]] = "test"
        labels = labels.astype(str)

    ds = Dataset(y=y, X=X, U=U, split=labels, meta={"source": str(path), "seed": seed})
    if standardize_u or standardize_y:
        ds = standardize(ds, u_too=standardize_u, y_too=standardize_y)
    return ds


def save_csv(ds, path, sidecar_path=None):
    """Write a dataset to CSV (y, x_*, u_*, split) plus a JSON sidecar."""
    header = (["y"] + [f"x_{j+1}" for j in range(ds.p)]
              + [f"u_{j+1}" for j in range(ds.q)] + ["split"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = ([repr(float(ds.y[i]))] + [repr(float(v)) for v in ds.X[i]]
                   + [repr(float(v)) for v in ds.U[i]])
            writer.writerow(row + [ds.split[i]])
    if sidecar_path is not None:
        payload = dict(ds.meta)
        payload["standardization"] = ds.standardization
        with open(sidecar_path, "w") as fh:
            json.dump(payload, fh, indent=2)
