"""Derived posterior quantities: predictive curves, modes, residuals, DIC."""
from dataclasses import dataclass

import numpy as np

from .design import ModelSpec
from .mcmc import ChainDraws, ChainState, Panel, conditional_deviance


def marginal_variance(draw: ChainState, spec: ModelSpec, s: int):
    """Stationary AR variance, random-curve variance and their sum at bin ``s``.

    Returns ``(lambda_sq, rho, zeta_sq)``. ``rho`` includes ``W`` only for
    random-jump models and ``D`` only when run intercepts are modeled.
    """
    theta = float(draw.theta)
    if not -1.0 < theta < 1.0:
        raise ValueError(f"|theta| must be < 1, got {theta}")
    lam = float(draw.sigma_sq[s - 1]) / (1.0 - theta * theta)
    b = spec.B[s - 1]
    rho = 0.0
    if spec.random_intercepts:
        rho += float(b @ draw.D @ b)
    if spec.G:
        rho += float(b @ draw.W @ b)
    return lam, rho, lam + rho


def variance_curves(draws: ChainDraws, spec: ModelSpec):
    """Vectorized :func:`marginal_variance` over draws and bins: ``(n, S)`` each."""
    B = spec.B
    lam = draws.sigma_sq / (1.0 - draws.theta[:, None] ** 2)
    rho = np.zeros_like(lam)
    if spec.random_intercepts:
        rho += np.einsum("sk,nkl,sl->ns", B, draws.D, B)
    if spec.G:
        rho += np.einsum("sk,nkl,sl->ns", B, draws.W, B)
    return lam, rho, lam + rho


def psi(draws: ChainDraws, spec: ModelSpec, t, z):
    """Population mean log counts ``alpha'B(s) + f(t)'Delta_z B(s)``, shape ``(n, S)``."""
    f = spec.trend.matrix(np.asarray(float(t)))
    coef = draws.alpha + np.einsum("j,njk->nk", f, draws.Delta[:, z])
    return coef @ spec.B.T


def predictive_curve(draws: ChainDraws, spec: ModelSpec, t, z):
    """Back-transformed mean counts ``exp(psi + zeta^2 / 2)``, shape ``(n, S)``."""
    _, _, zeta = variance_curves(draws, spec)
    return np.exp(psi(draws, spec, t, z) + 0.5 * zeta)


def predict_mu(draws: ChainDraws, spec: ModelSpec, s, t, z):
    """Posterior draws of the predicted mean count at bin ``s``, time ``t``."""
    return predictive_curve(draws, spec, t, z)[:, s - 1]


def trend_components(draws: ChainDraws, spec: ModelSpec, t, z):
    """Per-component engine-on effects ``f_j(t) Delta_zj' B(s)``, shape ``(n, J, S)``.

    Summing over components gives ``psi - alpha'B(s)``.
    """
    f = spec.trend.matrix(np.asarray(float(t)))
    return f[None, :, None] * (draws.Delta[:, z] @ spec.B.T)


def quantile_summary(x, levels=(0.05, 0.5, 0.95), axis=0):
    """Equal-tailed quantiles along ``axis``; returns shape ``(len(levels), ...)``."""
    return np.quantile(x, levels, axis=axis)


@dataclass
class ModeTrajectory:
    z: int
    times: np.ndarray
    s: np.ndarray      # (n, T) modal bin per draw, 1-based
    h: np.ndarray      # (n, T) modal count per draw

    def summary(self, level=0.95):
        a = (1.0 - level) / 2.0
        qs = (a, 0.5, 1.0 - a)
        s_lo, s_med, s_hi = np.quantile(self.s, qs, axis=0)
        h_lo, h_med, h_hi = np.quantile(self.h, qs, axis=0)
        return {"t": self.times, "s_med": s_med, "s_lo": s_lo, "s_hi": s_hi,
                "h_med": h_med, "h_lo": h_lo, "h_hi": h_hi}


def mode_trajectory(draws: ChainDraws, spec: ModelSpec, z, times) -> ModeTrajectory:
    """Modal size bin and its predicted count at each time, per draw.

    Ties resolve to the smallest bin.
    """
    times = np.asarray(times)
    S_ = np.empty((draws.n_draws, times.size), dtype=int)
    H = np.empty((draws.n_draws, times.size))
    for k, t in enumerate(times):
        mu = predictive_curve(draws, spec, t, z)
        idx = np.argmax(mu, axis=1)
        S_[:, k] = idx + 1
        H[:, k] = mu[np.arange(mu.shape[0]), idx]
    return ModeTrajectory(int(z), times, S_, H)


@dataclass
class ResidualGrid:
    """Posterior-mean residuals; NaN marks masked cells."""

    run_ids: tuple
    times: tuple
    e_bar: tuple          # per run, (S, T_i)

    def records(self, order="time"):
        """Long-format rows ``(i, s, t, e_bar)`` sorted by time or by size."""
        rows = []
        for rid, times, e in zip(self.run_ids, self.times, self.e_bar):
            for s in range(e.shape[0]):
                for k, t in enumerate(times):
                    rows.append((rid, s + 1, int(t), float(e[s, k])))
        key = (lambda r: (r[2], r[1], r[0])) if order == "time" else (lambda r: (r[1], r[2], r[0]))
        return sorted(rows, key=key)

    def profiles(self, s):
        """Residual series over time for bin ``s`` (1-based), one per run."""
        return {rid: (np.asarray(times), e[s - 1])
                for rid, times, e in zip(self.run_ids, self.times, self.e_bar)}

    def lag1_autocorrelation(self):
        """Pooled lag-1 autocorrelation of residuals within run/bin series."""
        num = den = 0.0
        for e in self.e_bar:
            ec = e - np.nanmean(e, axis=1, keepdims=True)
            pair = ec[:, 1:] * ec[:, :-1]
            num += np.nansum(pair)
            den += np.nansum(ec * ec)
        return num / den


def residuals(draws: ChainDraws, spec: ModelSpec, data) -> ResidualGrid:
    """Posterior mean of ``y - (fixed + random effects)``; AR error is kept."""
    out = []
    B = spec.B
    for i, run in enumerate(data.runs):
        t = run.times.astype(float)
        coef = np.broadcast_to(draws.alpha[:, None, :], (draws.n_draws, t.size, spec.K)).copy()
        if spec.random_intercepts:
            coef += draws.gamma[:, i][:, None, :]
        coef += np.einsum("tj,njk->ntk", spec.trend.matrix(t), draws.Delta[:, run.window])
        if spec.G:
            coef += np.einsum("tg,ngk->ntk", spec.random_trend.matrix(t), draws.Upsilon[:, i])
        mean = np.einsum("sk,ntk->st", B, coef) / draws.n_draws
        e = np.where(data.observed[i], data.y[i] - mean, np.nan)
        out.append(e)
    return ResidualGrid(tuple(r.id for r in data.runs), tuple(r.times for r in data.runs),
                        tuple(out))


@dataclass
class DicReport:
    dic: float
    d_bar: float
    p_d: float
    label: str = ""


def posterior_mean_state(draws: ChainDraws) -> ChainState:
    """Plug-in state: posterior means, with ``sigma_sq`` the mean of its draws."""
    st = ChainState(**{k: getattr(draws, k).mean(axis=0) for k in
                       ("alpha", "Delta", "gamma", "Upsilon", "D", "W", "eta", "w",
                        "sigma_sq")}, theta=float(draws.theta.mean()))
    return st


def dic(draws: ChainDraws, spec: ModelSpec, data, label="") -> DicReport:
    """Deviance information criterion with deviance conditional on random effects."""
    if draws.n_draws == 0:
        raise ValueError("DIC needs at least one stored draw")
    d_bar = float(np.mean(draws.deviance))
    st = posterior_mean_state(draws)
    pan = Panel(spec, data)
    d_hat = conditional_deviance(pan, st.theta, st.sigma_sq, state=st)
    p_d = d_bar - d_hat
    return DicReport(d_bar + p_d, d_bar, p_d, label or spec.label)


def recompute_deviance(draws: ChainDraws, spec: ModelSpec, data):
    """Per-draw conditional deviance evaluated from scratch (diagnostic)."""
    pan = Panel(spec, data)
    return np.array([conditional_deviance(pan, draws.theta[i], draws.sigma_sq[i],
                                          state=draws.state(i))
                     for i in range(draws.n_draws)])

