"""Command line entry points.

Subcommands: gen-data, train, predict, evaluate, dump-features. Exit codes:
0 success, 2 configuration problem, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io as mio
from .errors import ConfigError, NumericalError
from .features import Standardizer, registry_uses_pca
from .grids import MacroCellPartition
from .prediction import SurrogateModel, evaluate, free_dof_mask, predict, \
    estimate_var_uf
from .training import train, rng_for

_STREAM_PREDICT = 11


def _say(args, msg):
    if not args.quiet:
        print(msg)


def _parse_bc(text):
    parts = text.split(",")
    if len(parts) != 4:
        raise ConfigError("--bc expects four comma-separated numbers")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"--bc could not parse {text!r}")


def _check_dataset(ds, setup):
    if ds.lam_f.shape[1] != setup.fine.n_elements:
        raise ConfigError(
            f"dataset has {ds.lam_f.shape[1]} elements per sample but the "
            f"configured fine grid has {setup.fine.n_elements}")
    if ds.u_f.shape[1] != setup.fine.n_nodes:
        raise ConfigError(
            f"dataset has {ds.u_f.shape[1]} dofs per sample but the "
            f"configured fine grid has {setup.fine.n_nodes}")


def cmd_gen_data(args):
    cfg = mio.load_config(args.config)
    setup = mio.build_problem(cfg)
    n = args.n if args.n is not None else cfg.data.n_samples
    seed = args.seed if args.seed is not None else cfg.data.seed
    bc_a = _parse_bc(args.bc) if args.bc else setup.bc_a
    ds = mio.generate_dataset(setup.fine, setup.phases, setup.grf, bc_a, n,
                              seed, start_id=args.start_id,
                              threads=args.threads,
                              meta={"config_hash": cfg.hash})
    mio.save_dataset(args.out, ds)
    _say(args, f"wrote {n} samples to {args.out} "
               f"(grid {setup.fine.nel_per_axis}, seed {seed})")
    return 0


def _prepare_features(cfg, setup, ds, args, say):
    """PCA bases, design matrices, and the standardizer for a dataset."""
    local_pca = global_pca = None
    uses_local, uses_global = registry_uses_pca(setup.registry)
    if uses_local or uses_global:
        n_fit = cfg.features.pca_fit_samples
        if n_fit < 2:
            raise ConfigError(
                "registry uses principal components; set "
                "features.pca_fit_samples to at least 2")
        say(f"fitting principal bases on {n_fit} fresh draws")
        local_pca, global_pca = mio.fit_pca_bases(
            setup.fine, setup.coarse, setup.phases, setup.grf,
            setup.registry, n_fit, cfg.features.pca_seed)
    partition = MacroCellPartition.build(setup.coarse, setup.fine)
    from .features import build_design_matrix
    raw = np.asarray([
        build_design_matrix(ds.lam_f[i], partition, setup.registry,
                            setup.phases, local_pca, global_pca)
        for i in range(ds.n_samples)])
    standardizer = None
    if cfg.features.standardize:
        standardizer = Standardizer.fit(raw.reshape(-1, raw.shape[2]),
                                        setup.registry)
        Phis = standardizer.apply(raw)
    else:
        Phis = raw
    return local_pca, global_pca, standardizer, Phis


def cmd_train(args):
    cfg = mio.load_config(args.config)
    setup = mio.build_problem(cfg)
    ds = mio.load_dataset(args.data)
    _check_dataset(ds, setup)
    if args.n_train is not None:
        if args.n_train > ds.n_samples:
            raise ConfigError(f"--n-train {args.n_train} exceeds dataset "
                              f"size {ds.n_samples}")
        ds = ds.subset(np.arange(args.n_train))
    tcfg = cfg.training
    if args.threads is not None:
        from dataclasses import replace
        tcfg = replace(tcfg, threads=args.threads)

    local_pca, global_pca, standardizer, Phis = _prepare_features(
        cfg, setup, ds, args, lambda m: _say(args, m))

    os.makedirs(args.out, exist_ok=True)
    trace_path = os.path.join(args.out, "trace.ndjson")
    with open(trace_path, "w", encoding="utf-8") as trace_fh:
        def on_epoch(rec):
            trace_fh.write(json.dumps(rec, sort_keys=True) + "\n")
            trace_fh.flush()
            _say(args, f"epoch {rec['epoch']:4d}  bound {rec['elbo']:.4e} "
                       f"(se {rec['elbo_se']:.2e})  active {rec['n_active']}")

        bundle, trace = train(ds.training_data(), setup.fine, setup.coarse,
                              setup.registry, setup.phases, setup.link, tcfg,
                              cfg.train_seed, standardizer=standardizer,
                              local_pca=local_pca, global_pca=global_pca,
                              Phis=Phis, on_epoch=on_epoch)

    model = SurrogateModel(
        setup.fine, setup.coarse, setup.registry, setup.phases, setup.link,
        bundle.encoder, bundle.decoder, standardizer, local_pca, global_pca,
        meta={"config_hash": cfg.hash, "train_seed": cfg.train_seed,
              "n_train": ds.n_samples, "n_epochs": len(trace),
              "final_elbo": trace[-1]["elbo"] if trace else None,
              "n_active": int(bundle.encoder.active.sum())})
    mio.save_model(args.out, model)
    _say(args, f"model written to {args.out}: {len(trace)} epochs, "
               f"{int(bundle.encoder.active.sum())} active features")
    return 0


def cmd_predict(args):
    model = mio.load_model(args.model)
    ds = mio.load_dataset(args.data)
    rng = rng_for(args.seed, _STREAM_PREDICT)
    mus, vars_ = [], []
    for i in range(ds.n_samples):
        mu, var = predict(model, ds.lam_f[i], ds.bc_a[i],
                          n_draws=args.n_draws, rng=rng, mode=args.mode)
        mus.append(mu)
        vars_.append(var)
    os.makedirs(args.out, exist_ok=True)
    arrays = mio._save_array_map(args.out, {
        "mu_pred": np.asarray(mus), "var_pred": np.asarray(vars_)})
    mio.atomic_write_text(os.path.join(args.out, "manifest.json"),
                          mio.canonical_json({
                              "kind": "predictions", "format_version": 1,
                              "arrays": arrays,
                              "ids": [int(i) for i in ds.ids],
                              "n_draws": args.n_draws, "mode": args.mode,
                              "seed": args.seed}))
    _say(args, f"wrote predictions for {ds.n_samples} samples to {args.out}")
    return 0


def cmd_evaluate(args):
    model = mio.load_model(args.model)
    ds = mio.load_dataset(args.data)
    mask = free_dof_mask(model.fine)
    if args.ref_data:
        ref = mio.load_dataset(args.ref_data)
        var_uf = estimate_var_uf(ref.u_f)
        var_source = f"{args.ref_data} ({ref.n_samples} draws)"
    else:
        var_uf = estimate_var_uf(ds.u_f)
        var_source = f"test set itself ({ds.n_samples} draws)"
    u_f_train = None
    if args.train_data:
        u_f_train = mio.load_dataset(args.train_data).u_f
    rng = rng_for(args.seed, _STREAM_PREDICT)
    metrics = evaluate(model, ds.lam_f, ds.u_f, ds.bc_a, var_uf, mask,
                       n_draws=args.n_draws, rng=rng, mode=args.mode,
                       u_f_train=u_f_train)
    metrics["variance_reference"] = var_source
    metrics["model"] = os.path.abspath(args.model)
    metrics["data"] = os.path.abspath(args.data)
    text = json.dumps(metrics, sort_keys=True, indent=2)
    if args.out:
        mio.atomic_write_text(args.out, text + "\n")
        _say(args, f"metrics written to {args.out}")
        _say(args, f"e = {metrics['e']:.4g}   L = {metrics['L']:.4g}"
                   + (f"   L_data = {metrics['L_data']:.4g}"
                      if "L_data" in metrics else ""))
    else:
        print(text)
    return 0


def cmd_dump_features(args):
    cfg = mio.load_config(args.config)
    setup = mio.build_problem(cfg)
    ds = mio.load_dataset(args.data)
    _check_dataset(ds, setup)
    local_pca, global_pca, standardizer, Phis = _prepare_features(
        cfg, setup, ds, args, lambda m: _say(args, m))
    os.makedirs(args.out, exist_ok=True)
    arrays = mio._save_array_map(args.out, {"Phi": Phis})
    mio.atomic_write_text(os.path.join(args.out, "manifest.json"),
                          mio.canonical_json({
                              "kind": "features", "format_version": 1,
                              "arrays": arrays,
                              "ids": [int(i) for i in ds.ids],
                              "feature_ids": [f.id for f in setup.registry],
                              "standardized": standardizer is not None}))
    _say(args, f"wrote design matrices {Phis.shape} to {args.out}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(
        prog="microrom",
        description="Probabilistic coarse-grained surrogates for two-phase "
                    "diffusion problems")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--quiet", action="store_true",
                       help="suppress progress output")

    p = sub.add_parser("gen-data", help="draw microstructures and solve the "
                                        "reference problem")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None,
                   help="override data.n_samples")
    p.add_argument("--seed", type=int, default=None,
                   help="override data.seed")
    p.add_argument("--bc", default=None,
                   help="override boundary vector, e.g. '0,1,1,0'")
    p.add_argument("--start-id", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit a surrogate on a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=None,
                   help="use only the first N samples")
    p.add_argument("--threads", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="posterior-predictive summaries for a "
                                       "dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-draws", type=int, default=64)
    p.add_argument("--mode", choices=("laplace", "map"), default="laplace")
    p.add_argument("--seed", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="accuracy metrics on a test dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--train-data", default=None,
                   help="training dataset for the reference density baseline")
    p.add_argument("--ref-data", default=None,
                   help="dataset whose solutions estimate the per-dof "
                        "solution variance")
    p.add_argument("--out", default=None, help="write metrics JSON here")
    p.add_argument("--n-draws", type=int, default=64)
    p.add_argument("--mode", choices=("laplace", "map"), default="laplace")
    p.add_argument("--seed", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("dump-features", help="write design matrices for a "
                                             "dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_dump_features)

    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
