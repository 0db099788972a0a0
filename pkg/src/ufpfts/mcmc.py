"""Blocked Gibbs sampler for the functional time-series model.

Scan order per iteration: alpha, Delta_0, Delta_1, all gamma_i, all
Upsilon_i, theta, D, W, then (eta, w). The per-run blocks are conditionally
independent given everything else, so they are drawn in one batched step.

AR(1) residuals are whitened along each run/size series; a masked cell
breaks the series and the next observed cell starts a new one. The first
cell of a series either enters with the stationary variance
(``first_obs="stationary"``, innovation scaled by ``sqrt(1 - theta**2)``) or
is conditioned on and dropped from the likelihood (``"conditional"``).
"""
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import linalg
from scipy.special import log_ndtr, ndtri_exp
from scipy.stats import invwishart

from . import kernels
from .design import ModelSpec
from .priors import PriorConfig

__all__ = [
    "ChainDraws", "ChainState", "PriorConfig", "SamplerError", "SamplerSettings",
    "Panel", "whiten", "truncnorm_rvs", "sample_inv_wishart", "initial_state",
    "gibbs_scan", "run_chain", "run_chains", "conditional_deviance",
]

log = logging.getLogger(__name__)


class SamplerError(RuntimeError):
    """A Gibbs block failed (non-SPD precision, invalid covariance, ...)."""


@dataclass
class ChainState:
    alpha: np.ndarray
    Delta: np.ndarray       # (2, J, K)
    gamma: np.ndarray       # (R, K)
    Upsilon: np.ndarray     # (R, G, K)
    theta: float
    D: np.ndarray           # (K, K)
    W: np.ndarray           # (G*K, G*K)
    eta: np.ndarray         # (L,)
    w: np.ndarray           # (S,)
    sigma_sq: np.ndarray    # (S,) = exp(Berr @ eta + w)

    def copy(self) -> "ChainState":
        return ChainState(**{f.name: np.copy(getattr(self, f.name)) if f.name != "theta"
                             else float(self.theta) for f in fields(self)})


_ARRAY_FIELDS = ("alpha", "Delta", "gamma", "Upsilon", "theta", "D", "W",
                 "eta", "w", "sigma_sq")


@dataclass
class SamplerSettings:
    iterations: int = 5000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    chain: int = 0
    slice_width_eta: float = 1.0
    slice_width_w: float | None = None   # default 3 * tau_eta
    slice_max_steps: int = 32

    def __post_init__(self):
        if self.iterations <= 0 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("need iterations > 0, burn_in >= 0, thin >= 1")
        if self.iterations <= self.burn_in:
            raise ValueError("iterations must exceed burn_in")

    @property
    def n_stored(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def rng(self) -> np.random.Generator:
        """Independent stream for ``(seed, chain)``."""
        return np.random.default_rng(np.random.SeedSequence([self.seed, self.chain]))


@dataclass
class ChainDraws:
    """Stored (thinned, post burn-in) draws of one or more chains."""

    alpha: np.ndarray
    Delta: np.ndarray
    gamma: np.ndarray
    Upsilon: np.ndarray
    theta: np.ndarray
    D: np.ndarray
    W: np.ndarray
    eta: np.ndarray
    w: np.ndarray
    sigma_sq: np.ndarray
    deviance: np.ndarray
    settings: SamplerSettings | None = None
    spec_hash: str = ""
    chain_index: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.chain_index is None:
            c = self.settings.chain if self.settings is not None else 0
            self.chain_index = np.full(self.theta.shape[0], c, dtype=int)

    @property
    def n_draws(self) -> int:
        return int(self.theta.shape[0])

    def state(self, i) -> ChainState:
        return ChainState(**{k: (float(self.theta[i]) if k == "theta" else getattr(self, k)[i])
                             for k in _ARRAY_FIELDS})

    def select(self, idx) -> "ChainDraws":
        kw = {k: getattr(self, k)[idx] for k in _ARRAY_FIELDS + ("deviance",)}
        return ChainDraws(**kw, settings=self.settings, spec_hash=self.spec_hash,
                          chain_index=self.chain_index[idx])

    @classmethod
    def concat(cls, chains) -> "ChainDraws":
        chains = list(chains)
        if not chains:
            raise ValueError("no chains to combine")
        hashes = {c.spec_hash for c in chains}
        if len(hashes) > 1:
            raise ValueError("chains were fitted under different model definitions")
        kw = {k: np.concatenate([getattr(c, k) for c in chains])
              for k in _ARRAY_FIELDS + ("deviance",)}
        return cls(**kw, settings=chains[0].settings, spec_hash=chains[0].spec_hash,
                   chain_index=np.concatenate([c.chain_index for c in chains]))

    def split(self):
        """One :class:`ChainDraws` per chain index."""
        return [self.select(self.chain_index == c) for c in np.unique(self.chain_index)]


class Panel:
    """Padded ``(run, bin, time)`` arrays for one dataset under one model."""

    def __init__(self, spec: ModelSpec, data):
        spec.check_data(data)
        self.spec = spec
        R, S = data.n_runs, data.n_bins
        T = max(r.times.size for r in data.runs)
        self.R, self.S, self.T = R, S, T
        self.y = np.zeros((R, S, T))
        self.obs = np.zeros((R, S, T), dtype=bool)
        self.times = np.zeros((R, T))
        self.valid_t = np.zeros((R, T), dtype=bool)
        for r, run in enumerate(data.runs):
            n = run.times.size
            m = data.observed[r]
            self.y[r, :, :n] = np.where(m, data.y[r], 0.0)
            self.obs[r, :, :n] = m
            self.times[r, :n] = run.times
            self.valid_t[r, :n] = True
        self.z = data.windows
        self.F = spec.trend.matrix(self.times) * self.valid_t[..., None]
        self.Gm = spec.random_trend.matrix(self.times) * self.valid_t[..., None]
        prev = np.zeros_like(self.obs)
        prev[:, :, 1:] = self.obs[:, :, 1:] & self.obs[:, :, :-1]
        self.prev = prev
        self.first = self.obs & ~prev
        self.n_first = int(self.first.sum())
        self.B = spec.B
        self.Berr = spec.Berr
        self.BB = np.einsum("sk,sl->skl", self.B, self.B)
        self.run_sets = [np.flatnonzero(self.z == zz) for zz in (0, 1)]
        self.stationary = spec.first_obs == "stationary"
        self._theta = None

    # -- whitening -----------------------------------------------------------
    def set_theta(self, theta):
        """Cache whitening weights and whitened time features for ``theta``."""
        if self._theta == theta:
            return
        if not -1.0 < theta < 1.0:
            raise SamplerError(f"AR parameter {theta} outside (-1, 1)")
        first_w = math.sqrt(1.0 - theta * theta) if self.stationary else 0.0
        self.c_cur = np.where(self.first, first_w, 1.0) * self.obs
        self.c_prev = theta * self.prev
        self.incl = self.obs if self.stationary else self.prev
        # whitened design scalar for blocks with a constant time feature
        self.a1 = self.c_cur - self.c_prev
        self.phiF = self._whiten_features(self.F)
        self.phiG = self._whiten_features(self.Gm)
        self._theta = theta

    def _whiten_features(self, X):
        # X: (R, T, P) -> (R, S, T, P)
        Xs = np.zeros_like(X)
        Xs[:, 1:] = X[:, :-1]
        return self.c_cur[..., None] * X[:, None] - self.c_prev[..., None] * Xs[:, None]

    def whiten(self, u):
        """Innovations of an ``(R, S, T)`` residual array at the cached theta."""
        us = np.zeros_like(u)
        us[:, :, 1:] = u[:, :, :-1]
        return self.c_cur * u - self.c_prev * us

    # -- mean ----------------------------------------------------------------
    def coef_curves(self, st: ChainState):
        spec = self.spec
        C = np.broadcast_to(st.alpha, (self.R, self.T, spec.K)).copy()
        if spec.random_intercepts:
            C += st.gamma[:, None, :]
        C += np.matmul(self.F, st.Delta[self.z])
        if spec.G:
            C += np.matmul(self.Gm, st.Upsilon)
        return C

    def mean(self, st: ChainState):
        return np.matmul(self.coef_curves(st), self.B.T).transpose(0, 2, 1)

    def residual(self, st: ChainState):
        return (self.y - self.mean(st)) * self.obs

    def suff_stats(self, u):
        """Per-bin innovation counts and sums of squares."""
        eps = self.whiten(u)
        n = self.incl.sum(axis=(0, 2)).astype(float)
        sse = np.einsum("rst,rst->s", eps * self.incl, eps)
        return n, sse


def whiten(u, theta, observed=None, first_rule="stationary"):
    """Whiten one residual series ``u`` under AR(1) parameter ``theta``.

    Returns ``(innovations, weights)``. ``weights`` is 1 where an innovation
    enters the likelihood and 0 otherwise (masked cells, and series starts
    under ``first_rule="conditional"``). A masked cell restarts the series.
    """
    if not -1.0 < theta < 1.0:
        raise ValueError(f"|theta| must be < 1, got {theta}")
    u = np.asarray(u, dtype=float)
    obs = np.ones(u.shape, dtype=bool) if observed is None else np.asarray(observed, bool)
    eps = np.zeros_like(u)
    wts = np.zeros_like(u)
    started = False
    for t in range(u.size):
        if not obs[t]:
            started = False
            continue
        if started:
            eps[t] = u[t] - theta * u[t - 1]
            wts[t] = 1.0
        else:
            if first_rule == "stationary":
                eps[t] = u[t] * math.sqrt(1.0 - theta * theta)
                wts[t] = 1.0
            elif first_rule != "conditional":
                raise ValueError(f"unknown first-observation rule {first_rule!r}")
            started = True
    return eps, wts


def truncnorm_rvs(rng, mean, sd, lower, upper, size=None):
    """Inverse-CDF draws from ``N(mean, sd**2)`` truncated to ``(lower, upper)``.

    Works in log-CDF space on whichever tail keeps the lower standardized
    bound non-positive, so it stays accurate far into the tails.
    """
    a = (lower - mean) / sd
    b = (upper - mean) / sd
    sign = 1.0
    if a > 0:
        a, b, sign = -b, -a, -1.0
    la = log_ndtr(a)
    lb = log_ndtr(b)
    u = rng.random(size)
    r = np.exp(la - lb)
    logp = lb + np.log(r + u * (1.0 - r))
    x = np.clip(ndtri_exp(np.minimum(logp, 0.0)), a, b)
    out = mean + sd * sign * x
    lo_in = np.nextafter(lower, upper)
    hi_in = np.nextafter(upper, lower)
    out = np.clip(out, lo_in, hi_in)
    return float(out) if size is None else out


def sample_inv_wishart(rng, df, scale):
    """One inverse-Wishart draw, symmetrized and checked for definiteness."""
    scale = 0.5 * (scale + scale.T)
    evals = np.linalg.eigvalsh(scale)
    if evals.min() < -1e-8:
        raise SamplerError(f"inverse-Wishart scale not PSD (min eigenvalue {evals.min():.3g})")
    draw = np.atleast_2d(invwishart.rvs(df=df, scale=scale, random_state=rng))
    draw = 0.5 * (draw + draw.T)
    if np.linalg.eigvalsh(draw).min() <= 0:
        raise SamplerError("inverse-Wishart draw is not positive definite")
    return draw


def _gaussian_draw(rng, prec, lin):
    """Draw from ``N(prec^-1 lin, prec^-1)``."""
    try:
        L = linalg.cholesky(prec, lower=True)
    except linalg.LinAlgError as exc:
        raise SamplerError("conditional precision is not positive definite") from exc
    mean = linalg.cho_solve((L, True), lin)
    z = rng.standard_normal(lin.shape[0])
    return mean + linalg.solve_triangular(L, z, lower=True, trans="T")


def _gaussian_draw_batch(rng, prec, lin):
    try:
        L = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise SamplerError("conditional precision is not positive definite") from exc
    mean = np.linalg.solve(prec, lin[..., None])[..., 0]
    z = rng.standard_normal(lin.shape)
    dev = np.linalg.solve(np.swapaxes(L, -1, -2), z[..., None])[..., 0]
    return mean + dev


def _block_system(pan, ph, target, inv_var):
    """Likelihood precision and linear term for coefficient matrices (P, K)
    multiplying whitened time features ``ph`` (..., S, T, P); leading axes
    beyond (S, T, P) are summed over."""
    P, K = ph.shape[-1], pan.B.shape[1]
    S = pan.S
    phs = np.moveaxis(ph, -3, 0).reshape(S, -1, P)            # (S, N, P)
    ts = np.moveaxis(target, -2, 0).reshape(S, -1)             # (S, N)
    Q = np.matmul(np.swapaxes(phs, 1, 2), phs) * inv_var[:, None, None]
    prec = (Q.reshape(S, P * P).T @ pan.BB.reshape(S, K * K))
    prec = prec.reshape(P, P, K, K).transpose(0, 2, 1, 3).reshape(P * K, P * K)
    m = np.matmul(np.swapaxes(phs, 1, 2), ts[..., None])[..., 0] * inv_var[:, None]
    lin = (m.T @ pan.B).reshape(P * K)
    return prec, lin


def _shared_block_system(pan, phi, target, inv_var, runs):
    return _block_system(pan, phi[runs], target[runs], inv_var)


def _run_block_system(pan, phi, target, inv_var):
    out = [_block_system(pan, phi[r], target[r], inv_var) for r in range(pan.R)]
    return np.stack([o[0] for o in out]), np.stack([o[1] for o in out])


def _alpha_system(pan, st):
    pr = pan.spec.priors
    inv_var = 1.0 / st.sigma_sq
    own = pan.B @ st.alpha
    target = pan.whiten(pan.residual(st)) + pan.a1 * own[None, :, None]
    prec, lin = _shared_block_system(pan, pan.a1[..., None], target, inv_var,
                                     np.arange(pan.R))
    prec += np.eye(prec.shape[0]) / pr.tau_alpha_sq
    return prec, lin


def alpha_conditional(pan, st):
    """Mean and covariance of the Gaussian full conditional of ``alpha``."""
    pan.set_theta(st.theta)
    prec, lin = _alpha_system(pan, st)
    cov = np.linalg.inv(prec)
    return cov @ lin, cov


def update_alpha(pan, st, rng):
    prec, lin = _alpha_system(pan, st)
    st.alpha = _gaussian_draw(rng, prec, lin)


def update_delta(pan, st, rng, z):
    pr = pan.spec.priors
    runs = pan.run_sets[z]
    J, K = st.Delta.shape[1:]
    if runs.size == 0:
        st.Delta[z] = rng.standard_normal((J, K)) * math.sqrt(pr.tau_delta_sq)
        return
    inv_var = 1.0 / st.sigma_sq
    own = st.Delta[z] @ pan.B.T                       # (J, S)
    target = pan.whiten(pan.residual(st)) + np.einsum("rstj,js->rst", pan.phiF, own)
    prec, lin = _shared_block_system(pan, pan.phiF, target, inv_var, runs)
    prec += np.eye(J * K) / pr.tau_delta_sq
    st.Delta[z] = _gaussian_draw(rng, prec, lin).reshape(J, K)


def update_gamma(pan, st, rng):
    inv_var = 1.0 / st.sigma_sq
    own = st.gamma @ pan.B.T                          # (R, S)
    target = pan.whiten(pan.residual(st)) + pan.a1 * own[:, :, None]
    prec, lin = _run_block_system(pan, pan.a1[..., None], target, inv_var)
    prec += np.linalg.inv(st.D)[None]
    st.gamma = _gaussian_draw_batch(rng, prec, lin)


def update_upsilon(pan, st, rng):
    inv_var = 1.0 / st.sigma_sq
    G, K = st.Upsilon.shape[1:]
    own = np.einsum("rgk,sk->rgs", st.Upsilon, pan.B)
    target = pan.whiten(pan.residual(st)) + np.einsum("rstg,rgs->rst", pan.phiG, own)
    prec, lin = _run_block_system(pan, pan.phiG, target, inv_var)
    prec += np.linalg.inv(st.W)[None]
    st.Upsilon = _gaussian_draw_batch(rng, prec, lin).reshape(pan.R, G, K)


def theta_conditional(pan, st, u=None):
    """Mean and sd of the untruncated normal conditional of theta built from
    consecutive observed residual pairs."""
    pr = pan.spec.priors
    if u is None:
        u = pan.residual(st)
    us = np.zeros_like(u)
    us[:, :, 1:] = u[:, :, :-1]
    inv_var = (1.0 / st.sigma_sq)[None, :, None]
    wp = pan.prev * inv_var
    a = float(np.sum(wp * us * us))
    b = float(np.sum(wp * us * u))
    prec = 1.0 / pr.sigma_theta_sq + a
    mean = (pr.mu_theta / pr.sigma_theta_sq + b) / prec
    return mean, 1.0 / math.sqrt(prec)


def _first_obs_logfactor(pan, st, u, theta):
    q = float(np.sum(pan.first * u * u / st.sigma_sq[None, :, None]))
    one_m = 1.0 - theta * theta
    return 0.5 * pan.n_first * math.log(one_m) - 0.5 * one_m * q


def update_theta(pan, st, rng):
    """Truncated-normal draw for theta.

    Under the stationary first-observation rule the series starts add a
    factor the normal conditional omits; it is corrected with an
    independence Metropolis-Hastings step using the truncated normal as
    proposal.
    """
    pr = pan.spec.priors
    u = pan.residual(st)
    mean, sd = theta_conditional(pan, st, u)
    prop = truncnorm_rvs(rng, mean, sd, pr.theta_lower, pr.theta_upper)
    if pan.stationary and pan.n_first:
        log_r = (_first_obs_logfactor(pan, st, u, prop)
                 - _first_obs_logfactor(pan, st, u, st.theta))
        if math.log(1.0 - rng.random()) >= log_r:
            return
    st.theta = prop


def update_D(pan, st, rng):
    pr = pan.spec.priors
    scale = pr.D_scale + st.gamma.T @ st.gamma
    st.D = sample_inv_wishart(rng, pr.n_D + pan.R, scale)


def update_W(pan, st, rng):
    pr = pan.spec.priors
    v = st.Upsilon.reshape(pan.R, -1)
    st.W = sample_inv_wishart(rng, pr.W_df + pan.R, pr.W_scale + v.T @ v)


def update_log_variance(pan, st, rng, settings):
    pr = pan.spec.priors
    n, sse = pan.suff_stats(pan.residual(st))
    tau = math.sqrt(pr.tau_eta_sq)
    width_w = settings.slice_width_w or 3.0 * tau
    eta = np.ascontiguousarray(st.eta, dtype=float)
    w = np.ascontiguousarray(st.w, dtype=float)
    kernels.slice_logvar(rng, eta, w, pan.Berr, n, sse, pr.eta_mean, pr.eta_sd, tau,
                         settings.slice_width_eta, width_w, settings.slice_max_steps)
    st.eta, st.w = eta, w
    st.sigma_sq = np.exp(pan.Berr @ eta + w)
    return n, sse


def conditional_deviance(pan, theta, sigma_sq, n=None, sse=None, state=None):
    """-2 log p(Y | all means, random effects, theta, sigma^2)."""
    if n is None:
        pan.set_theta(theta)
        n, sse = pan.suff_stats(pan.residual(state))
    dev = float(np.sum(n * np.log(2.0 * math.pi * sigma_sq) + sse / sigma_sq))
    if pan.stationary:
        dev -= pan.n_first * math.log(1.0 - theta * theta)
    return dev


def gibbs_scan(pan, st, rng, settings):
    """One systematic scan; updates ``st`` in place and returns its deviance."""
    spec = pan.spec
    pan.set_theta(st.theta)
    update_alpha(pan, st, rng)
    update_delta(pan, st, rng, 0)
    update_delta(pan, st, rng, 1)
    if spec.random_intercepts:
        update_gamma(pan, st, rng)
    if spec.G:
        update_upsilon(pan, st, rng)
    update_theta(pan, st, rng)
    pan.set_theta(st.theta)
    if spec.random_intercepts:
        update_D(pan, st, rng)
    if spec.G:
        update_W(pan, st, rng)
    n, sse = update_log_variance(pan, st, rng, settings)
    return conditional_deviance(pan, st.theta, st.sigma_sq, n, sse)


def initial_state(spec: ModelSpec, data, pan=None) -> ChainState:
    """Start near a plausible mode: baseline bin means projected onto the basis."""
    pan = pan or Panel(spec, data)
    K, J, G, L, S, R = spec.K, spec.J, spec.G, spec.L, spec.n_bins, pan.R
    pre = pan.obs & (pan.times[:, None, :] < 0)
    cnt = pre.sum(axis=(0, 2))
    tot = (pan.y * pre).sum(axis=(0, 2))
    if np.all(cnt == 0):
        cnt = pan.obs.sum(axis=(0, 2))
        tot = (pan.y * pan.obs).sum(axis=(0, 2))
    have = cnt > 0
    alpha = np.linalg.lstsq(pan.B[have], tot[have] / cnt[have], rcond=None)[0]
    pr = spec.priors
    eta = np.linalg.lstsq(pan.Berr, np.full(S, pr.eta_mean), rcond=None)[0]
    w = np.zeros(S)
    return ChainState(
        alpha=alpha,
        Delta=np.zeros((2, J, K)),
        gamma=np.zeros((R, K)),
        Upsilon=np.zeros((R, G, K)),
        theta=0.0,
        D=pr.M.copy(),
        W=pr.W_scale.copy() if G else np.zeros((0, 0)),
        eta=eta,
        w=w,
        sigma_sq=np.exp(pan.Berr @ eta + w),
    )


def run_chain(spec: ModelSpec, data, settings: SamplerSettings, init=None) -> ChainDraws:
    """Run one chain; deterministic given ``settings.seed`` and ``settings.chain``."""
    pan = Panel(spec, data)
    st = (init.copy() if init is not None else initial_state(spec, data, pan))
    rng = settings.rng()
    n = settings.n_stored
    store = {k: np.empty((n,) + np.shape(getattr(st, k))) for k in _ARRAY_FIELDS}
    dev = np.empty(n)
    j = 0
    for it in range(1, settings.iterations + 1):
        try:
            d = gibbs_scan(pan, st, rng, settings)
        except (SamplerError, np.linalg.LinAlgError, ValueError) as exc:
            raise SamplerError(f"iteration {it}: {exc}") from exc
        if it > settings.burn_in and (it - settings.burn_in) % settings.thin == 0 and j < n:
            for k in _ARRAY_FIELDS:
                store[k][j] = getattr(st, k)
            dev[j] = d
            j += 1
    return ChainDraws(**store, deviance=dev, settings=settings, spec_hash=spec.hash())


def _run_chain_job(args):
    return run_chain(*args)


def run_chains(spec, data, settings: SamplerSettings, n_chains=1, max_workers=None):
    """Run ``n_chains`` chains with streams ``(seed, 0..n_chains-1)``.

    Chains run in worker processes when more than one CPU is available.
    Returns a list of :class:`ChainDraws`.
    """
    jobs = [(spec, data, replace(settings, chain=c)) for c in range(n_chains)]
    workers = max_workers or min(n_chains, os.cpu_count() or 1)
    if workers <= 1 or n_chains == 1:
        return [_run_chain_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_chain_job, jobs))
