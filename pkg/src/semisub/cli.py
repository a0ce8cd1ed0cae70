"""Command-line front-end: simulate -> train-subspace -> sample -> evaluate -> coverage-study.

Every command is driven by a JSON config (single source of truth) with
``--set section.key=value`` overrides; re-running a command with the same
config and seed reproduces its output files byte for byte. Exit codes:
0 success, 2 config error, 3 numeric failure, 4 partial study failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import tempfile
import time

import numpy as np

from . import diagnostics as dx
from .data import DataError, SimSpec, generate_simulation, generate_toy, load_csv, save_csv
from .inference import (EssConfig, HmcConfig, PosteriorSamples, PriorSpec, SamplingError,
                        sample_full_space, sample_semi_subspace)
from .model import LikelihoodHead, MlpArchitecture, SsrModel
from .subspace import (TrainConfig, TrainingDivergedError, load_checkpoint, save_checkpoint,
                       subspace_from_training, train_subspace)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


CONFIG_SCHEMA = {
    "seed": None,
    "out_dir": None,
    "model": {"p": None, "arch": {"input_dim": None, "hidden_layers": None},
              "head": {"family": None, "dispersion": None}},
    "subspace": {"k": None, "naive": None, "train": {
        "learning_rate": None, "weight_decay": None, "beta1": None, "beta2": None,
        "eps": None, "max_epochs": None, "batch_size": None, "select_best_val": None,
        "val_t": None, "seed": None}},
    "inference": {
        "sampler": None,
        "hmc": {"step_size": None, "n_leapfrog": None, "n_samples": None, "n_warmup": None,
                "n_chains": None, "seed": None, "adapt_step_size": None,
                "target_accept": None, "init_jitter": None},
        "ess": {"n_samples": None, "n_warmup": None, "n_chains": None, "seed": None,
                "init_jitter": None, "max_shrink": None, "minibatch_size": None},
        "prior": {"sigma_phi": None, "sigma_theta": None, "sigma_log_dispersion": None,
                  "sigma_w": None},
        "tempering": {"enabled": None, "temperature": None, "form": None, "n_grid": None},
    },
    "data": {
        "sim": {"family": None, "n_train": None, "n_val": None, "n_test": None,
                "seed": None, "theta_star": None, "noise_sd": None},
        "csv": {"path": None, "y_col": None, "x_cols": None, "u_cols": None,
                "split": None, "split_col": None, "seed": None,
                "standardize_u": None, "standardize_y": None},
    },
    "study": {"reps": None, "k_grid": None, "alphas": None, "param": None},
}


def _check_keys(cfg, schema, path=""):
    for key, val in cfg.items():
        if key not in schema:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(schema[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            _check_keys(val, schema[key], path + key + ".")


def load_config(path, overrides=()):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        keys = dotted.split(".")
        node = cfg
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        try:
            node[keys[-1]] = json.loads(raw)
        except json.JSONDecodeError:
            node[keys[-1]] = raw
    _check_keys(cfg, CONFIG_SCHEMA)
    return cfg


def _build_model(cfg):
    mc = cfg.get("model")
    if mc is None:
        raise ConfigError("config is missing the 'model' section")
    arch_cfg = mc.get("arch", {})
    arch = MlpArchitecture(
        input_dim=arch_cfg.get("input_dim", 1),
        hidden_layers=tuple(tuple(h) for h in arch_cfg.get(
            "hidden_layers", [[16, "relu"], [16, "relu"]])),
    )
    head_cfg = mc.get("head", {})
    head = LikelihoodHead(family=head_cfg.get("family", "normal"),
                          dispersion=head_cfg.get("dispersion", "learnable"))
    return SsrModel(p=mc.get("p", 2), arch=arch, head=head)


def _build_dataset(cfg, seed_shift=0):
    dc = cfg.get("data", {})
    if ("sim" in dc) == ("csv" in dc):
        raise ConfigError("config must name exactly one data source ('sim' or 'csv')")
    if "sim" in dc:
        sc = dict(dc["sim"])
        sc["seed"] = sc.get("seed", cfg.get("seed", 0)) + seed_shift
        spec = SimSpec(**sc)
        if spec.family == "toy_1d":
            return generate_toy(spec), None
        ds, theta_star, _ = generate_simulation(spec)
        return ds, theta_star
    cc = dict(dc["csv"])
    if not os.path.exists(cc["path"]):
        raise ConfigError(f"csv file does not exist: {cc['path']}")
    return load_csv(
        cc["path"], cc["y_col"], cc.get("x_cols", []), cc["u_cols"],
        split=cc.get("split", (0.8, 0.1, 0.1)), seed=cc.get("seed", cfg.get("seed", 0)),
        split_col=cc.get("split_col"), standardize_u=cc.get("standardize_u", True),
        standardize_y=cc.get("standardize_y", False)), None


def _train_config(cfg):
    tc = dict(cfg.get("subspace", {}).get("train", {}))
    tc.setdefault("seed", cfg.get("seed", 0))
    return TrainConfig(**tc)


def _hmc_config(cfg):
    hc = dict(cfg.get("inference", {}).get("hmc", {}))
    hc.setdefault("seed", cfg.get("seed", 0))
    return HmcConfig(**hc)


def _ess_config(cfg):
    ec = dict(cfg.get("inference", {}).get("ess", {}))
    ec.setdefault("seed", cfg.get("seed", 0))
    return EssConfig(**ec)


def _prior(cfg):
    return PriorSpec(**cfg.get("inference", {}).get("prior", {}))


def _atomic_path(path):
    """Write via temp file + rename so partial output never lands."""
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_semisub_")
    os.close(fd)
    return tmp


def _atomic_finish(tmp, path):
    os.replace(tmp, path)


def _out_dir(cfg, args):
    out = args.out or cfg.get("out_dir", ".")
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands

def cmd_simulate(args):
    cfg = load_config(args.config, args.set or ())
    out = _out_dir(cfg, args)
    if args.reps == 0:
        print("warning: reps=0, nothing to do")
        return EXIT_OK
    for rep in range(args.reps):
        ds, theta_star = _build_dataset(cfg, seed_shift=rep)
        base = os.path.join(out, f"dataset_{rep:03d}")
        tmp = _atomic_path(base + ".csv")
        tmps = _atomic_path(base + ".json")
        save_csv(ds, tmp, sidecar_path=tmps)
        _atomic_finish(tmp, base + ".csv")
        _atomic_finish(tmps, base + ".json")
        print(f"wrote {base}.csv and sidecar")
    return EXIT_OK


def _load_data_arg(cfg, args):
    if args.data:
        over = copy.deepcopy(cfg)
        over["data"] = {"csv": dict(over.get("data", {}).get("csv", {}))}
        over["data"]["csv"].setdefault("y_col", "y")
        model = over.get("model", {})
        p = model.get("p", 2)
        q = model.get("arch", {}).get("input_dim", 1)
        over["data"]["csv"].setdefault("x_cols", [f"x_{j+1}" for j in range(p)])
        over["data"]["csv"].setdefault("u_cols", [f"u_{j+1}" for j in range(q)])
        over["data"]["csv"].setdefault("split_col", "split")
        over["data"]["csv"].setdefault("standardize_u", False)
        over["data"]["csv"]["path"] = args.data
        return _build_dataset(over)
    return _build_dataset(cfg)


def cmd_train_subspace(args):
    cfg = load_config(args.config, args.set or ())
    out = _out_dir(cfg, args)
    model = _build_model(cfg)
    ds, _ = _load_data_arg(cfg, args)
    k = cfg.get("subspace", {}).get("k", 2)
    naive = bool(cfg.get("subspace", {}).get("naive", False)) or args.naive
    tc = _train_config(cfg)
    result = train_subspace(model, ds, k, tc, include_theta=naive)
    sub = subspace_from_training(result, meta={
        "k": k, "naive": naive, "seed": tc.seed,
        "arch": {"input_dim": model.arch.input_dim,
                 "hidden_layers": [list(h) for h in model.arch.hidden_layers]},
        "p": model.p, "head": model.head.family,
    })
    path = os.path.join(out, "subspace.json")
    tmp = _atomic_path(path)
    save_checkpoint(sub, tmp)
    _atomic_finish(tmp, path)
    print(f"train NLL {result.train_nll:.4f}  val NLL {result.val_nll:.4f}  "
          f"selected epoch {result.best_epoch}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_sample(args):
    cfg = load_config(args.config, args.set or ())
    out = _out_dir(cfg, args)
    model = _build_model(cfg)
    ds, _ = _load_data_arg(cfg, args)
    inf = cfg.get("inference", {})
    sampler = inf.get("sampler", "hmc")
    hc = _hmc_config(cfg)
    if args.chains:
        hc = HmcConfig(**{**hc.__dict__, "n_chains": args.chains})
    if args.keep:
        hc = HmcConfig(**{**hc.__dict__, "n_samples": args.keep})
    prior = _prior(cfg)

    if args.full_space:
        samples = sample_full_space(model, prior, ds, hc)
    else:
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required unless --full-space is given")
        sub = load_checkpoint(args.checkpoint)
        if args.naive and not sub.include_theta:
            raise ConfigError("--naive requires a checkpoint trained with subspace.naive=true")
        sampler_cfg = hc if sampler == "hmc" else _ess_config(cfg)
        samples = sample_semi_subspace(model, sub, prior, ds, sampler_cfg, sampler=sampler)

    path = os.path.join(out, "samples.csv")
    tmp = _atomic_path(path)
    samples.to_csv(tmp)
    _atomic_finish(tmp, path)
    if samples.stats.get("accept_rate"):
        print(f"mean acceptance {np.mean(samples.stats['accept_rate']):.3f}  "
              f"divergences {samples.stats.get('divergences', 0)}")
    print(f"wrote {path} ({samples.n} rows)")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = load_config(args.config, args.set or ())
    out = _out_dir(cfg, args)
    model = _build_model(cfg)
    ds, _ = _load_data_arg(cfg, args)
    y, X, U = ds.subset("test")
    if len(y) == 0:
        raise ConfigError("evaluation requires a non-empty test split")
    samples = PosteriorSamples.from_csv(args.samples)
    sub = load_checkpoint(args.checkpoint) if args.checkpoint else None
    value, se = dx.lppd(samples, model, sub, y, X, U)
    params = [f"theta_{j+1}" for j in range(model.p)] if "theta_1" in samples.columns else []
    moments = dx.moments_table(samples, params)
    auc_val = None
    if model.head.family == "bernoulli":
        logdens = dx.pointwise_log_density(model, sub, samples, np.ones_like(y), X, U)
        # mean predicted P(y=1) per point from the per-draw densities
        scores = np.exp(logdens).mean(axis=0)
        auc_val = dx.auc(y, scores)
    report = dx.DiagnosticsReport(lppd=value, lppd_se=se, posterior_moments=moments,
                                  auc=auc_val)
    path = os.path.join(out, "report.json")
    tmp = _atomic_path(path)
    report.to_json(tmp)
    _atomic_finish(tmp, path)
    if ds.q == 1:
        bands = dx.predictive_bands(model, sub, samples, X, U,
                                    rng=np.random.default_rng(cfg.get("seed", 0)))
        bpath = os.path.join(out, "predictive_bands.csv")
        tmpb = _atomic_path(bpath)
        dx.write_bands_csv(bands, U[:, 0], tmpb)
        _atomic_finish(tmpb, bpath)
        print(f"wrote {bpath}")
    print(f"lppd {value:.4f} (se {se:.4f})")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_coverage_study(args):
    cfg = load_config(args.config, args.set or ())
    out = _out_dir(cfg, args)
    model = _build_model(cfg)
    study = cfg.get("study", {})
    reps = args.reps or study.get("reps", 10)
    k_grid = study.get("k_grid", [2, 16])
    alphas = study.get("alphas", [0.1, 0.3, 0.5, 0.7, 0.9])
    param = study.get("param", "theta_1")
    tc = _train_config(cfg)
    hc = _hmc_config(cfg)
    prior = _prior(cfg)

    runs = {k: [] for k in k_grid}
    runs["full"] = []
    moment_rows = []
    timing_rows = []
    failures = 0
    for rep in range(reps):
        try:
            ds, theta_star = _build_dataset(cfg, seed_shift=rep)
            if theta_star is None:
                raise ConfigError("coverage-study needs a sim data source with known truth")
            full = sample_full_space(model, prior, ds, hc)
            j = int(param.split("_")[1]) - 1
            runs["full"].append((full.column(param), theta_star[j]))
            for k in k_grid:
                t0 = time.time()
                res = train_subspace(model, ds, k, tc)
                train_secs = time.time() - t0
                sub = subspace_from_training(res)
                samples = sample_semi_subspace(model, sub, prior, ds, hc, sampler="hmc")
                runs[k].append((samples.column(param), theta_star[j]))
                if args.timing:
                    timing_rows.append({"rep": rep, "k": k, "epochs": tc.max_epochs,
                                        "train_seconds": train_secs,
                                        "seconds_per_epoch": train_secs / max(tc.max_epochs, 1)})
                for moment in (1, 2):
                    moment_rows.append({
                        "rep": rep, "k": k, "param": param, "moment": moment,
                        "diff_vs_full": dx.posterior_moment_diff(samples, full, param, moment),
                    })
        except (SamplingError, TrainingDivergedError, DataError) as exc:
            failures += 1
            print(f"rep {rep} failed: {exc}", file=sys.stderr)

    import csv as _csv
    cpath = os.path.join(out, "coverage.csv")
    tmp = _atomic_path(cpath)
    with open(tmp, "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=[
            "k", "alpha", "empirical", "wilson_low", "wilson_high", "n_trials"])
        writer.writeheader()
        for key, rr in runs.items():
            if len(rr) >= 2:
                table = dx.coverage_study(rr, alphas)
                for row in table.rows:
                    writer.writerow({"k": key, **row})
    _atomic_finish(tmp, cpath)

    mpath = os.path.join(out, "moment_diffs.csv")
    tmp = _atomic_path(mpath)
    with open(tmp, "w", newline="") as fh:
        writer = _csv.DictWriter(fh, fieldnames=["rep", "k", "param", "moment", "diff_vs_full"])
        writer.writeheader()
        writer.writerows(moment_rows)
    _atomic_finish(tmp, mpath)
    print(f"wrote {cpath} and {mpath}")

    if args.timing and timing_rows:
        tpath = os.path.join(out, "timing.csv")
        tmp = _atomic_path(tpath)
        with open(tmp, "w", newline="") as fh:
            writer = _csv.DictWriter(fh, fieldnames=[
                "rep", "k", "epochs", "train_seconds", "seconds_per_epoch"])
            writer.writeheader()
            writer.writerows(timing_rows)
        _atomic_finish(tmp, tpath)
        print(f"wrote {tpath}")

    return EXIT_PARTIAL if failures else EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="semisub",
        description="Semi-structured subspace inference pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config entry")

    p = sub.add_parser("simulate", help="generate seeded synthetic datasets")
    common(p)
    p.add_argument("--reps", type=int, default=1)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train-subspace", help="fit the curve and write a checkpoint")
    common(p)
    p.add_argument("--data", default=None, help="dataset CSV (default: config data source)")
    p.add_argument("--naive", action="store_true",
                   help="fold structured coefficients into the curve")
    p.set_defaults(fn=cmd_train_subspace)

    p = sub.add_parser("sample", help="draw from the posterior")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--checkpoint", default=None, help="subspace checkpoint JSON")
    p.add_argument("--full-space", action="store_true", help="sample all parameters by HMC")
    p.add_argument("--naive", action="store_true")
    p.add_argument("--chains", type=int, default=None)
    p.add_argument("--keep", type=int, default=None, help="kept draws per chain")
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("evaluate", help="predictive density and moment report")
    common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--samples", required=True, help="samples CSV")
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("coverage-study", help="repeated-simulation coverage and moment study")
    common(p)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--timing", action="store_true", help="record per-epoch wall clock per k")
    p.set_defaults(fn=cmd_coverage_study)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.seed is not None:
            args.set = (args.set or []) + [f"seed={args.seed}"]
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SamplingError, TrainingDivergedError, DataError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
