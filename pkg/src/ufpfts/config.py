"""Run configuration files.

INI format, every key optional except ``data.path``::

    [data]
    path = runs.csv            ; relative to the config file
    n_bins = 102               ; default: largest size_bin in the file

    [model]
    variant = jump-quadratic   ; quadratic | knotN | jump-quadratic | jump-knotN
                               ; | random-jump-quadratic | random-jump-knotN
    knot =                     ; overrides the knot time in the variant name
    K = 7
    L = 6
    mean_knots =               ; comma-separated interior knots (bin units)
    var_knots =
    random_intercepts = yes
    first_obs = stationary     ; stationary | conditional

    [priors]
    tau_alpha_sq = 1e4
    tau_delta_sq = 1e4
    mu_theta = 0
    sigma_theta_sq = 1
    theta_upper = 0.9
    n_D =                      ; default K + 2
    M =                        ; CSV file holding a KxK matrix; default identity
    W_df =                     ; default G*K + 1
    eta_sd =                   ; default solved from the (0.2, 0.7) 95% rule
    tau_eta_sq = 0.01

    [sampler]
    iterations = 5000
    burn_in = 1000
    thin = 5
    chains = 1
    seed = 1

    [output]
    dir = fit-out

    [summaries]
    times = 5, 10, 15, 20
    quantiles = 0.05, 0.5, 0.95
    windows = 0, 1
    trend_time = 15
"""
import configparser
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .design import ModelSpec
from .mcmc import SamplerSettings
from .priors import PriorConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data_path: str
    n_bins: int | None = None
    variant: str = "jump-quadratic"
    knot: int | None = None
    K: int = 7
    L: int = 6
    mean_knots: list | None = None
    var_knots: list | None = None
    random_intercepts: bool = True
    first_obs: str = "stationary"
    priors: PriorConfig = field(default_factory=PriorConfig)
    sampler: SamplerSettings = field(default_factory=lambda: SamplerSettings(thin=5, seed=1))
    chains: int = 1
    out_dir: str = "fit-out"
    times: tuple = (5, 10, 15, 20)
    quantiles: tuple = (0.05, 0.5, 0.95)
    windows: tuple = (0, 1)
    trend_time: float = 15

    def model_spec(self, n_bins, variant=None, knot=None) -> ModelSpec:
        try:
            return ModelSpec.build(
                n_bins, variant or self.variant, knot if knot is not None else self.knot,
                K=self.K, L=self.L, mean_knots=self.mean_knots, var_knots=self.var_knots,
                priors=self.priors, random_intercepts=self.random_intercepts,
                first_obs=self.first_obs)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _floats(text):
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _opt(sec, key, conv):
    if sec is None or key not in sec or not sec[key].strip():
        return None
    try:
        return conv(sec[key].strip())
    except ValueError as exc:
        raise ConfigError(f"[{sec.name}] {key}: {exc}") from exc


def load_config(path) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not cp.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read config file {path}")
    base = os.path.dirname(os.path.abspath(path))

    def rel(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    data = cp["data"] if cp.has_section("data") else None
    dpath = _opt(data, "path", str)
    if dpath is None:
        raise ConfigError("[data] path is required")
    cfg = RunConfig(data_path=rel(dpath), n_bins=_opt(data, "n_bins", int))

    m = cp["model"] if cp.has_section("model") else None
    for key, conv in (("variant", str), ("knot", int), ("K", int), ("L", int),
                      ("first_obs", str)):
        v = _opt(m, key, conv)
        if v is not None:
            setattr(cfg, key, v)
    cfg.mean_knots = _opt(m, "mean_knots", _floats)
    cfg.var_knots = _opt(m, "var_knots", _floats)
    if m is not None and m.get("random_intercepts", "").strip():
        cfg.random_intercepts = m.getboolean("random_intercepts")

    p = cp["priors"] if cp.has_section("priors") else None
    kw = {}
    for key in ("tau_alpha_sq", "tau_delta_sq", "mu_theta", "sigma_theta_sq",
                "theta_lower", "theta_upper", "n_D", "W_df", "eta_mean", "eta_sd",
                "tau_eta_sq"):
        v = _opt(p, key, float)
        if v is not None:
            kw[key] = v
    mpath = _opt(p, "M", str)
    if mpath is not None:
        kw["M"] = np.loadtxt(rel(mpath), delimiter=",", ndmin=2)
    wpath = _opt(p, "W_scale", str)
    if wpath is not None:
        kw["W_scale"] = np.loadtxt(rel(wpath), delimiter=",", ndmin=2)
    cfg.priors = PriorConfig(**kw)

    s = cp["sampler"] if cp.has_section("sampler") else None
    skw = {}
    for key in ("iterations", "burn_in", "thin", "seed"):
        v = _opt(s, key, int)
        if v is not None:
            skw[key] = v
    for key in ("slice_width_eta", "slice_width_w"):
        v = _opt(s, key, float)
        if v is not None:
            skw[key] = v
    try:
        cfg.sampler = replace(cfg.sampler, **skw)
    except ValueError as exc:
        raise ConfigError(f"[sampler] {exc}") from exc
    cfg.chains = _opt(s, "chains", int) or cfg.chains

    o = cp["output"] if cp.has_section("output") else None
    out = _opt(o, "dir", str)
    if out is not None:
        cfg.out_dir = rel(out)

    q = cp["summaries"] if cp.has_section("summaries") else None
    for key, conv in (("times", lambda t: tuple(_floats(t))),
                      ("quantiles", lambda t: tuple(_floats(t))),
                      ("windows", lambda t: tuple(int(v) for v in _floats(t))),
                      ("trend_time", float)):
        v = _opt(q, key, conv)
        if v is not None:
            setattr(cfg, key, v)
    return cfg
