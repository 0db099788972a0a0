"""Forward simulation from the model and brute-force test oracles."""
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .data import Dataset, Run, inverse_outcome
from .design import ModelSpec, mean_grid
from .priors import PriorConfig


@dataclass
class TruthConfig:
    """Generating parameters and run layout for one synthetic dataset.

    ``w``, ``gamma`` and ``Upsilon`` are drawn from their model distributions
    when left as ``None``.
    """

    spec: ModelSpec
    alpha: np.ndarray
    Delta: np.ndarray
    theta: float
    eta: np.ndarray
    D: np.ndarray
    W: np.ndarray
    windows: tuple
    times: tuple
    seed: int = 0
    w: np.ndarray | None = None
    gamma: np.ndarray | None = None
    Upsilon: np.ndarray | None = None
    run_ids: tuple | None = None

    def __post_init__(self):
        spec = self.spec
        K, J, G, L = spec.K, spec.J, spec.G, spec.L
        self.alpha = np.asarray(self.alpha, float)
        self.Delta = np.asarray(self.Delta, float)
        self.eta = np.asarray(self.eta, float)
        self.D = np.asarray(self.D, float)
        self.W = np.asarray(self.W, float).reshape(G * K, G * K)
        if self.alpha.shape != (K,) or self.Delta.shape != (2, J, K) or self.eta.shape != (L,):
            raise ValueError("truth coefficients do not match the model dimensions")
        if self.D.shape != (K, K):
            raise ValueError(f"D must be {K}x{K}")
        if not -1.0 < self.theta < 0.9:
            raise ValueError("theta must lie in (-1, 0.9)")
        if len(self.windows) != len(self.times):
            raise ValueError("need one window label per run time grid")
        if self.run_ids is None:
            self.run_ids = tuple(range(1, len(self.windows) + 1))


@dataclass
class Latent:
    """Everything drawn while simulating, for scoring recovery."""

    gamma: np.ndarray
    Upsilon: np.ndarray
    w: np.ndarray
    sigma_sq: np.ndarray
    mean: list = field(default_factory=list)
    u: list = field(default_factory=list)
    y: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma.tolist(),
            "Upsilon": self.Upsilon.tolist(),
            "w": self.w.tolist(),
            "sigma_sq": self.sigma_sq.tolist(),
        }


def _mvn(rng, cov, size):
    cov = np.asarray(cov, float)
    if cov.size == 0:
        return np.zeros((size, 0))
    return rng.multivariate_normal(np.zeros(cov.shape[0]), cov, size=size, method="eigh")


def simulate_ar1(n, theta, sigma_sq, rng, size=()):
    """Stationary AR(1) paths of length ``n`` with innovation variance ``sigma_sq``.

    ``sigma_sq`` broadcasts against ``size``; paths run along the last axis.
    """
    shape = tuple(np.atleast_1d(size)) if size != () else ()
    sd = np.sqrt(np.asarray(sigma_sq, float))
    if np.ndim(sd):
        sd = sd[..., None]
    e = rng.standard_normal(shape + (n,)) * sd
    e[..., 0] /= math.sqrt(1.0 - theta * theta)
    return lfilter([1.0], [1.0, -theta], e, axis=-1)


def simulate_dataset(truth: TruthConfig):
    """Draw random effects, AR(1) residuals and counts from the model.

    Returns ``(Dataset, Latent)``. Counts are ``max(0, exp(y) - 10)``, so
    outcomes below ``ln 10`` are clamped.
    """
    spec = truth.spec
    rng = np.random.default_rng(truth.seed)
    R, S, K, G = len(truth.windows), spec.n_bins, spec.K, spec.G
    gamma = (np.asarray(truth.gamma, float) if truth.gamma is not None
             else _mvn(rng, truth.D, R))
    if truth.Upsilon is not None:
        Ups = np.asarray(truth.Upsilon, float).reshape(R, G, K)
    else:
        Ups = _mvn(rng, truth.W, R).reshape(R, G, K)
    tau = math.sqrt(spec.priors.tau_eta_sq)
    w = (np.asarray(truth.w, float) if truth.w is not None
         else rng.standard_normal(S) * tau)
    sigma_sq = np.exp(spec.Berr @ truth.eta + w)
    state = _TruthState(truth.alpha, truth.Delta, gamma, Ups)
    latent = Latent(gamma, Ups, w, sigma_sq)
    runs, grids = [], []
    for i, (z, times) in enumerate(zip(truth.windows, truth.times)):
        times = np.asarray(times, dtype=int)
        mu = mean_grid(spec, state, i, times, int(z))
        u = simulate_ar1(times.size, truth.theta, sigma_sq, rng, size=S)
        y = mu + u
        raw = np.maximum(0.0, inverse_outcome(y))
        latent.mean.append(mu)
        latent.u.append(u)
        latent.y.append(y)
        runs.append(Run(int(truth.run_ids[i]), int(z), times))
        grids.append(raw)
    return Dataset(tuple(runs), S, tuple(grids)), latent


@dataclass
class _TruthState:
    alpha: np.ndarray
    Delta: np.ndarray
    gamma: np.ndarray
    Upsilon: np.ndarray


# Engine-on effect curves (rows: jump, linear, quadratic) on a 5-function basis.
_DESK_DELTA = np.array([
    [[0.10, 0.30, 0.40, 0.20, 0.05],
     [0.010, 0.030, 0.040, 0.020, 0.000],
     [-0.0002, -0.0008, -0.0010, -0.0005, 0.0]],
    [[0.30, 0.80, 1.00, 0.50, 0.10],
     [0.020, 0.060, 0.080, 0.040, 0.010],
     [-0.0005, -0.0020, -0.0025, -0.0010, 0.0]],
])


def _ar_corr(K, rho=0.5):
    idx = np.arange(K)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def _interp_rows(rows, K):
    # resample 5-coefficient rows onto K coefficients
    if K == rows.shape[-1]:
        return rows.copy()
    x0 = np.linspace(0, 1, rows.shape[-1])
    x1 = np.linspace(0, 1, K)
    return np.apply_along_axis(lambda r: np.interp(x1, x0, r), -1, rows)


def default_delta(spec: ModelSpec) -> np.ndarray:
    """Plausible engine-on coefficients for ``spec``'s trend variant."""
    base = _interp_rows(_DESK_DELTA, spec.K)
    jump, lin, quad = base[:, 0], base[:, 1], base[:, 2]
    if spec.trend.is_bent_line:
        rows = [lin, -0.5 * lin]
    else:
        rows = [lin, quad]
    if spec.trend.is_jump:
        rows = [jump] + rows
    return np.stack(rows, axis=1)


def desk_truth(seed=0, variant="jump-quadratic", knot=None, n_runs=6, n_bins=40, K=5, L=4,
               theta=0.4, times=None, d_scale=0.15, w_scale=0.15, priors=None,
               random_intercepts=True, first_obs="stationary") -> TruthConfig:
    """Desk-scale truth: ``n_runs`` runs split evenly between window positions,
    times -10..14 every 2 minutes, residual variances roughly in [0.1, 0.6]."""
    spec = ModelSpec.build(n_bins, variant, knot, K=K, L=L, priors=priors or PriorConfig(),
                           random_intercepts=random_intercepts, first_obs=first_obs)
    alpha = _interp_rows(np.array([6.0, 7.5, 8.5, 7.5, 6.0]), K)
    eta = _interp_rows(np.log(np.array([0.5, 0.2, 0.12, 0.2, 0.35])), L)
    if times is None:
        times = np.arange(-10, 15, 2)
    windows = tuple(int(i >= n_runs // 2) for i in range(n_runs))
    G = spec.G
    W = np.kron(np.eye(G), w_scale * _ar_corr(K)) if G else np.zeros((0, 0))
    return TruthConfig(spec=spec, alpha=alpha, Delta=default_delta(spec), theta=theta,
                       eta=eta, D=d_scale * _ar_corr(K), W=W, windows=windows,
                       times=tuple(np.asarray(times) for _ in range(n_runs)), seed=seed)


def truth_to_dict(truth: TruthConfig, latent: Latent | None = None) -> dict:
    d = {
        "spec": truth.spec.to_dict(),
        "alpha": truth.alpha.tolist(),
        "Delta": truth.Delta.tolist(),
        "theta": truth.theta,
        "eta": truth.eta.tolist(),
        "D": truth.D.tolist(),
        "W": truth.W.tolist(),
        "windows": list(truth.windows),
        "times": [np.asarray(t).tolist() for t in truth.times],
        "seed": truth.seed,
        "run_ids": list(truth.run_ids),
    }
    if latent is not None:
        d["latent"] = latent.to_dict()
    return d


def write_truth(path, truth: TruthConfig, latent: Latent | None = None):
    from .io import atomic_open
    with atomic_open(path) as fh:
        json.dump(truth_to_dict(truth, latent), fh, indent=1)


def grid_posterior_oracle(log_density, bounds, n_points=401):
    """Posterior mean and covariance by trapezoid quadrature on a dense grid.

    Parameters
    ----------
    log_density : callable
        Maps an ``(N, d)`` array of points to ``N`` unnormalized log densities.
    bounds : sequence of (lo, hi)
        Integration box, one pair per dimension (at most 3).
    n_points : int
        Grid points per dimension (at least 400 recommended).

    Returns
    -------
    mean : ndarray, shape (d,)
    cov : ndarray, shape (d, d)
    """
    d = len(bounds)
    if d < 1 or d > 3:
        raise ValueError(f"grid quadrature supports 1-3 dimensions, got {d}")
    axes = [np.linspace(lo, hi, n_points) for lo, hi in bounds]
    wts = []
    for ax in axes:
        h = ax[1] - ax[0]
        wt = np.full(n_points, h)
        wt[[0, -1]] *= 0.5
        wts.append(wt)
    # evaluate slab by slab along the first axis to bound memory
    rest = list(itertools.product(*axes[1:])) if d > 1 else [()]
    rest = np.array(rest, dtype=float).reshape(len(rest), d - 1)
    rest_w = np.ones(len(rest))
    if d > 1:
        rest_w = np.prod(np.array(list(itertools.product(*wts[1:]))), axis=1)
    logs = np.empty((n_points, len(rest)))
    for i, x0 in enumerate(axes[0]):
        pts = np.column_stack([np.full(len(rest), x0), rest])
        logs[i] = log_density(pts)
    logs -= logs.max()
    p = np.exp(logs) * wts[0][:, None] * rest_w[None, :]
    p /= p.sum()
    first = axes[0][:, None] * np.ones((1, len(rest)))
    coords = [first] + [np.broadcast_to(rest[:, j], first.shape) for j in range(d - 1)]
    mean = np.array([np.sum(p * c) for c in coords])
    cov = np.empty((d, d))
    for a in range(d):
        for b in range(a, d):
            cov[a, b] = cov[b, a] = np.sum(p * (coords[a] - mean[a]) * (coords[b] - mean[b]))
    return mean, cov
