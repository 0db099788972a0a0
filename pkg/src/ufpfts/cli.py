"""Command-line interface: ``ufpfts simulate | fit | summarize | dic | diagnose``."""
import argparse
import glob
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import kernels
from .config import ConfigError, load_config
from .data import DataError, load_dataset, validate, write_csv
from .design import FIXED_VARIANTS, RANDOM_JUMP_VARIANTS, parse_variant
from .io import atomic_open, load_fit, write_draws, write_metadata, write_table
from .mcmc import ChainDraws, SamplerError, run_chains
from .posterior import (dic, mode_trajectory, predictive_curve, residuals,
                        trend_components, variance_curves)
from .synthetic import desk_truth, simulate_dataset, write_truth

log = logging.getLogger("ufpfts")


def _qname(q):
    return "q" + f"{100 * q:g}".replace(".", "_").zfill(2)


def _tlabel(t):
    t = float(t)
    return str(int(t)) if t == int(t) else f"{t:g}"


# -- simulate ---------------------------------------------------------------

def cmd_simulate(args):
    truth = desk_truth(seed=args.seed, variant=args.variant, knot=args.knot,
                       n_runs=args.runs, n_bins=args.bins, K=args.K, L=args.L,
                       theta=args.theta)
    ds, latent = simulate_dataset(truth)
    os.makedirs(args.out, exist_ok=True)
    data_path = os.path.join(args.out, "data.csv")
    with atomic_open(data_path) as fh:
        write_csv(ds, fh)
    write_truth(os.path.join(args.out, "truth.json"), truth, latent)
    with atomic_open(os.path.join(args.out, "fit.ini")) as fh:
        fh.write("[data]\npath = data.csv\n\n[model]\n"
                 f"variant = {args.variant}\nK = {args.K}\nL = {args.L}\n\n"
                 "[sampler]\niterations = 2000\nburn_in = 500\nthin = 2\nchains = 2\n"
                 f"seed = {args.seed}\n\n[output]\ndir = fit-out\n")
    print(f"wrote {data_path} ({ds.n_runs} runs, {ds.n_bins} bins), truth.json, fit.ini")
    return 0


# -- fit --------------------------------------------------------------------

def _fit_one(cfg, ds, variant, knot, settings, n_chains, out_dir):
    spec = cfg.model_spec(ds.n_bins, variant, knot)
    try:
        spec.check_data(ds)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    t0 = time.time()
    chains = run_chains(spec, ds, settings, n_chains)
    elapsed = time.time() - t0
    os.makedirs(out_dir, exist_ok=True)
    for c, dr in enumerate(chains):
        fname = f"chain{c}.csv"
        write_draws(os.path.join(out_dir, fname), dr, spec)
        write_metadata(os.path.join(out_dir, f"chain{c}.meta.json"), spec, dr.settings,
                       {"draws_file": fname, "data_path": os.path.abspath(cfg.data_path),
                        "n_runs": ds.n_runs, "n_bins": ds.n_bins, "chain": c,
                        "backend": kernels.BACKEND})
    draws = ChainDraws.concat(chains)
    rep = dic(draws, spec, ds)
    return spec, draws, rep, elapsed


def _report_text(spec, ds, draws, rep, settings, n_chains, elapsed):
    v = validate(ds)
    lo, med, hi = np.quantile(draws.theta, [0.025, 0.5, 0.975])
    lines = [
        f"model: {spec.label} ({spec.name}), spec hash {spec.hash()}",
        f"data: {ds.n_runs} runs, {ds.n_bins} size bins",
        "validation: " + ("passed" if v.ok else f"{len(v.violations)} violation(s)"),
    ]
    lines += [f"  {x}" for x in v.violations]
    lines += [
        f"sampler: {n_chains} chain(s) x {settings.iterations} iterations, burn-in "
        f"{settings.burn_in}, thin {settings.thin}, seed {settings.seed}, "
        f"{draws.n_draws} stored draws, {elapsed:.1f} s ({kernels.BACKEND} kernels)",
        f"AR parameter theta: posterior median {med:.3f}, 95% interval ({lo:.3f}, {hi:.3f})",
        f"DIC {rep.dic:.1f}   DIC bar {rep.d_bar:.1f}   pD {rep.p_d:.1f}",
    ]
    return "\n".join(lines) + "\n"


def cmd_fit(args):
    cfg = load_config(args.config)
    settings = cfg.sampler
    if args.seed is not None:
        settings = replace(settings, seed=args.seed)
    n_chains = args.chains or cfg.chains
    out = args.out or cfg.out_dir
    ds, _ = load_dataset(cfg.data_path, n_bins=cfg.n_bins)
    variant = args.variant or cfg.variant
    knot = args.knot
    if not args.sweep:
        spec, draws, rep, el = _fit_one(cfg, ds, variant, knot, settings, n_chains, out)
        text = _report_text(spec, ds, draws, rep, settings, n_chains, el)
        with atomic_open(os.path.join(out, "report.txt")) as fh:
            fh.write(text)
        write_table(os.path.join(out, "dic.csv"), ["model", "dic", "d_bar", "p_d"],
                    [[rep.label, rep.dic, rep.d_bar, rep.p_d]])
        print(text, end="")
        return 0
    variants = list(FIXED_VARIANTS)
    if args.sweep == "all":
        variants += list(RANDOM_JUMP_VARIANTS)
    # validate every variant before any sampling
    for v in variants:
        spec = cfg.model_spec(ds.n_bins, v)
        try:
            spec.check_data(ds)
        except ValueError as exc:
            raise ConfigError(f"{v}: {exc}") from exc
    rows = []
    for v in variants:
        spec, draws, rep, el = _fit_one(cfg, ds, v, None, settings, n_chains,
                                        os.path.join(out, v))
        text = _report_text(spec, ds, draws, rep, settings, n_chains, el)
        with atomic_open(os.path.join(out, v, "report.txt")) as fh:
            fh.write(text)
        rows.append([rep.label, rep.dic, rep.d_bar, rep.p_d])
        print(f"{rep.label:<24} DIC {rep.dic:>12.1f}  DIC bar {rep.d_bar:>12.1f}  "
              f"pD {rep.p_d:>8.1f}")
    write_table(os.path.join(out, "dic_comparison.csv"), ["model", "dic", "d_bar", "p_d"], rows)
    return 0


# -- loading fits -------------------------------------------------------------

def _load_fit_dir(fit_dir, config=None, data=None):
    metas = sorted(glob.glob(os.path.join(fit_dir, "chain*.meta.json")))
    if not metas:
        raise ConfigError(f"no chain*.meta.json files in {fit_dir}")
    loaded = [load_fit(m) for m in metas]
    spec, _, meta = loaded[0]
    hashes = {m["spec_hash"] for _, _, m in loaded}
    if len(hashes) > 1:
        raise ConfigError("chains in the fit directory have different spec hashes")
    ds, _ = load_dataset(data or meta["data_path"], n_bins=meta["n_bins"])
    if config is not None:
        cfg = load_config(config)
        want = cfg.model_spec(ds.n_bins).hash()
        if want != meta["spec_hash"]:
            raise ConfigError(f"spec hash mismatch: draws {meta['spec_hash']}, "
                              f"config {want}")
    draws = ChainDraws.concat(d for _, d, _ in loaded)
    return spec, draws, ds


# -- summarize --------------------------------------------------------------

def cmd_summarize(args):
    spec, draws, ds = _load_fit_dir(args.fit, args.config, args.data)
    cfg_times, cfg_q, cfg_z, cfg_tt = (5, 10, 15, 20), (0.05, 0.5, 0.95), (0, 1), 15.0
    if args.config:
        cfg = load_config(args.config)
        cfg_times, cfg_q, cfg_z, cfg_tt = cfg.times, cfg.quantiles, cfg.windows, cfg.trend_time
    times = args.times or cfg_times
    qs = tuple(args.quantiles or cfg_q)
    windows = args.windows or cfg_z
    trend_t = args.trend_time if args.trend_time is not None else cfg_tt
    out = args.out or os.path.join(args.fit, "summary")
    qcols = [_qname(q) for q in qs]
    written = []

    all_rows = []
    for z in windows:
        for t in times:
            mu = predictive_curve(draws, spec, t, z)
            qv = np.quantile(mu, qs, axis=0)
            rows = [[z, t, s + 1] + list(qv[:, s]) for s in range(spec.n_bins)]
            all_rows += rows
            p = os.path.join(out, "predictive", f"z{z}_t{_tlabel(t)}.csv")
            write_table(p, ["z", "t", "s"] + qcols, rows)
            written.append(p)
    p = os.path.join(out, "predictive_curves.csv")
    write_table(p, ["z", "t", "s"] + qcols, all_rows)
    written.append(p)

    rows = []
    for z in windows:
        comp = trend_components(draws, spec, trend_t, z)
        for j, name in enumerate(spec.trend.component_names):
            qv = np.quantile(comp[:, j], qs, axis=0)
            rows += [[z, trend_t, name, s + 1] + list(qv[:, s]) for s in range(spec.n_bins)]
    p = os.path.join(out, "trend_components.csv")
    write_table(p, ["z", "t", "component", "s"] + qcols, rows)
    written.append(p)

    mode_times = np.unique(np.concatenate([r.times for r in ds.runs]))
    rows = []
    for z in windows:
        sm = mode_trajectory(draws, spec, z, mode_times).summary(0.95)
        for k, t in enumerate(mode_times):
            rows.append([z, int(t)] + [sm[c][k] for c in
                                       ("s_med", "s_lo", "s_hi", "h_med", "h_lo", "h_hi")])
    p = os.path.join(out, "mode_trajectory.csv")
    write_table(p, ["z", "t", "s_med", "s_lo", "s_hi", "h_med", "h_lo", "h_hi"], rows)
    written.append(p)

    lo, med, hi = np.quantile(draws.sigma_sq, [0.025, 0.5, 0.975], axis=0)
    p = os.path.join(out, "variance_curve.csv")
    write_table(p, ["s", "sigma_sq_med", "lo", "hi"],
                [[s + 1, med[s], lo[s], hi[s]] for s in range(spec.n_bins)])
    written.append(p)
    lam, rho, zeta = variance_curves(draws, spec)
    p = os.path.join(out, "predictive_variance.csv")
    write_table(p, ["s", "lambda_sq_med", "rho_med", "zeta_sq_med"],
                [[s + 1, float(np.median(lam[:, s])), float(np.median(rho[:, s])),
                  float(np.median(zeta[:, s]))] for s in range(spec.n_bins)])
    written.append(p)

    res = residuals(draws, spec, ds)
    for order in ("time", "size"):
        p = os.path.join(out, f"residuals_by_{order}.csv")
        write_table(p, ["i", "s", "t", "e_bar"], res.records(order))
        written.append(p)
    print(f"wrote {len(written)} files to {out}")
    return 0


# -- dic / diagnose ---------------------------------------------------------

def cmd_dic(args):
    spec, draws, ds = _load_fit_dir(args.fit, args.config, args.data)
    rep = dic(draws, spec, ds)
    out = args.out or os.path.join(args.fit, "dic.csv")
    write_table(out, ["model", "dic", "d_bar", "p_d"], [[rep.label, rep.dic, rep.d_bar, rep.p_d]])
    print(f"{rep.label}: DIC {rep.dic:.1f}  DIC bar {rep.d_bar:.1f}  pD {rep.p_d:.1f}")
    return 0


def split_rhat(x, chain_index):
    """Split-chain potential scale reduction for one scalar parameter."""
    parts = []
    for c in np.unique(chain_index):
        xc = x[chain_index == c]
        h = xc.size // 2
        if h < 2:
            continue
        parts += [xc[:h], xc[h:2 * h]]
    if len(parts) < 2:
        return float("nan")
    n = min(p.size for p in parts)
    a = np.stack([p[:n] for p in parts])
    w = a.var(axis=1, ddof=1).mean()
    b = n * a.mean(axis=1).var(ddof=1)
    var = (n - 1) / n * w + b / n
    return float(np.sqrt(var / w)) if w > 0 else float("nan")


def cmd_diagnose(args):
    spec, draws, ds = _load_fit_dir(args.fit, args.config, args.data)
    out = args.out or os.path.join(args.fit, "diagnostics")
    res = residuals(draws, spec, ds)
    write_table(os.path.join(out, "residual_profiles.csv"), ["s", "i", "t", "e_bar"],
                [[s, i, t, e] for i, s, t, e in res.records("size")])
    rows = []
    for s in range(1, spec.n_bins + 1):
        vals = np.concatenate([e[s - 1] for e in res.e_bar])
        vals = vals[~np.isnan(vals)]
        num = den = 0.0
        for e in res.e_bar:
            x = e[s - 1] - np.nanmean(e[s - 1])
            num += np.nansum(x[1:] * x[:-1])
            den += np.nansum(x * x)
        rows.append([s, float(vals.mean()), float(vals.std()), num / den if den else float("nan")])
    write_table(os.path.join(out, "residual_bin_summary.csv"),
                ["s", "mean", "sd", "lag1_autocorrelation"], rows)
    v = validate(ds)
    lines = [v.to_text(), "",
             f"pooled lag-1 residual autocorrelation: {res.lag1_autocorrelation():.3f}",
             f"split R-hat theta: {split_rhat(draws.theta, draws.chain_index):.3f}",
             f"split R-hat deviance: {split_rhat(draws.deviance, draws.chain_index):.3f}"]
    for c in np.unique(draws.chain_index):
        th = draws.theta[draws.chain_index == c]
        lines.append(f"chain {c}: theta median {np.median(th):.3f}")
    with atomic_open(os.path.join(out, "diagnostics.txt")) as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines[2:]))
    return 0


# -- entry point ------------------------------------------------------------

def _variant_arg(text):
    try:
        parse_variant(text, knot=10)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))
    return text


def build_parser():
    p = argparse.ArgumentParser(prog="ufpfts", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a desk-scale dataset")
    s.add_argument("--out", default="sim-out")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--variant", type=_variant_arg, default="jump-quadratic")
    s.add_argument("--knot", type=int, choices=(8, 10, 12))
    s.add_argument("--runs", type=int, default=6)
    s.add_argument("--bins", type=int, default=40)
    s.add_argument("--K", type=int, default=5)
    s.add_argument("--L", type=int, default=4)
    s.add_argument("--theta", type=float, default=0.4)
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a model by MCMC")
    f.add_argument("--config", required=True)
    f.add_argument("--seed", type=int)
    f.add_argument("--chains", type=int)
    f.add_argument("--out")
    f.add_argument("--variant", type=_variant_arg)
    f.add_argument("--knot", type=int, choices=(8, 10, 12))
    f.add_argument("--sweep", nargs="?", const="fixed", choices=("fixed", "all"),
                   help="fit the 8 fixed-trend variants ('all' adds the 4 random-jump ones)")
    f.set_defaults(func=cmd_fit)

    for name, func, helptext in (("summarize", cmd_summarize, "emit posterior summaries"),
                                 ("dic", cmd_dic, "compute DIC for a fit"),
                                 ("diagnose", cmd_diagnose, "residual profiles and checks")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--fit", required=True, help="fit output directory")
        c.add_argument("--config", help="config whose model must match the draws")
        c.add_argument("--data", help="override the data path recorded at fit time")
        c.add_argument("--out")
        if name == "summarize":
            c.add_argument("--times", type=float, nargs="+")
            c.add_argument("--windows", type=int, nargs="+", choices=(0, 1))
            c.add_argument("--quantiles", type=float, nargs="+")
            c.add_argument("--trend-time", type=float)
        c.set_defaults(func=func)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ConfigError, DataError, SamplerError, ValueError, OSError) as exc:
        print(f"ufpfts {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
