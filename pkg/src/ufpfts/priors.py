"""Prior hyperparameters for the functional time-series model."""
import math
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

ETA_CENTER = 0.4


def solve_eta_sd(lo=0.2, hi=0.7, center=ETA_CENTER, mass=0.95):
    """Lognormal scale ``g`` putting ``mass`` prior probability on ``(lo, hi)``.

    The log variance is ``N(log(center), g**2)``.
    """
    a = math.log(lo / center)
    b = math.log(hi / center)

    def excess(g):
        return norm.cdf(b / g) - norm.cdf(a / g) - mass

    return brentq(excess, 1e-6, 100.0, xtol=1e-14)


@dataclass(frozen=True, eq=False)
class PriorConfig:
    """Hyperparameters. ``None`` entries are filled by :meth:`resolve`.

    Defaults: ``n_D = K + 2`` and ``M = I`` so the prior mean of ``D`` is
    ``M``; ``W ~ InvW(G*K + 1, I)``; ``eta_sd`` is solved so that 95% of the
    prior residual variance lies in (0.2, 0.7).
    """

    tau_alpha_sq: float = 1e4
    tau_delta_sq: float = 1e4
    mu_theta: float = 0.0
    sigma_theta_sq: float = 1.0
    theta_lower: float = -1.0
    theta_upper: float = 0.9
    n_D: float | None = None
    M: np.ndarray | None = None
    W_df: float | None = None
    W_scale: np.ndarray | None = None
    eta_mean: float = math.log(ETA_CENTER)
    eta_sd: float | None = None
    tau_eta_sq: float = 0.01

    def resolve(self, K: int, G: int) -> "PriorConfig":
        GK = G * K
        M = np.eye(K) if self.M is None else np.array(self.M, dtype=float)
        Ws = np.eye(GK) if self.W_scale is None else np.array(self.W_scale, dtype=float)
        out = replace(
            self,
            n_D=float(K + 2) if self.n_D is None else float(self.n_D),
            M=M,
            W_df=float(GK + 1) if self.W_df is None else float(self.W_df),
            W_scale=Ws,
            eta_sd=solve_eta_sd() if self.eta_sd is None else float(self.eta_sd),
        )
        out.check(K, G)
        return out

    def check(self, K, G):
        for name in ("tau_alpha_sq", "tau_delta_sq", "sigma_theta_sq", "tau_eta_sq", "eta_sd"):
            if not getattr(self, name) > 0:
                raise ValueError(f"prior {name} must be positive")
        if not -1.0 <= self.theta_lower < self.theta_upper < 1.0:
            raise ValueError("theta bounds must satisfy -1 <= lower < upper < 1")
        if self.M.shape != (K, K) or not _is_spd(self.M):
            raise ValueError(f"M must be a {K}x{K} SPD matrix")
        if not self.n_D > K + 1:
            raise ValueError(f"n_D must exceed K + 1 = {K + 1}")
        if G:
            if self.W_scale.shape != (G * K, G * K) or not _is_spd(self.W_scale):
                raise ValueError(f"W_scale must be a {G * K}x{G * K} SPD matrix")
            if not self.W_df > G * K - 1:
                raise ValueError(f"W_df must exceed {G * K - 1}")

    @property
    def D_scale(self):
        """Inverse-Wishart scale ``(n_D - K - 1) M``."""
        K = self.M.shape[0]
        return (self.n_D - K - 1) * self.M

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("M", "W_scale"):
            if d[k] is not None:
                d[k] = np.asarray(d[k]).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PriorConfig":
        d = dict(d)
        for k in ("M", "W_scale"):
            if d.get(k) is not None:
                d[k] = np.array(d[k], dtype=float)
        return cls(**d)


def _is_spd(a):
    if not np.allclose(a, a.T):
        return False
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return False
    return True
