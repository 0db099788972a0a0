"""Trend variants and the mean structure of the functional time-series model.

The mean for run ``i``, size bin ``s`` and time ``t`` is::

    B(s)' (alpha + gamma_i + Delta_z' f(t) + Upsilon_i' g(t))

where ``f`` and ``g`` vanish before engine-on (``t < 0``).
"""
import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np

from .priors import PriorConfig
from .splines import BSplineBasis, basis_matrix, bin_basis

TREND_VARIANTS = ("quadratic", "bent-line", "jump-quadratic", "jump-bent-line")
KNOT_TIMES = (8, 10, 12)
FIRST_OBS_RULES = ("stationary", "conditional")


@dataclass(frozen=True)
class TrendSpec:
    variant: str
    knot: int | None = None

    def __post_init__(self):
        if self.variant not in TREND_VARIANTS:
            raise ValueError(f"unknown trend variant {self.variant!r}")
        if self.is_bent_line:
            if self.knot is None or int(self.knot) != self.knot or self.knot <= 0:
                raise ValueError(f"{self.variant} needs a positive integer knot time")
            object.__setattr__(self, "knot", int(self.knot))
        elif self.knot is not None:
            raise ValueError(f"{self.variant} takes no knot time")

    @property
    def is_jump(self) -> bool:
        return self.variant.startswith("jump")

    @property
    def is_bent_line(self) -> bool:
        return self.variant.endswith("bent-line")

    @property
    def J(self) -> int:
        return 3 if self.is_jump else 2

    @property
    def component_names(self) -> tuple:
        tail = ("linear", "bend") if self.is_bent_line else ("linear", "quadratic")
        return ("jump",) + tail if self.is_jump else tail

    @property
    def label(self) -> str:
        base = f"Knot {self.knot}" if self.is_bent_line else "Quadratic"
        return f"Jump {base}" if self.is_jump else base

    def engine_on(self, t):
        """Component values ``m_j(t)`` for engine-on times, shape ``(..., J)``."""
        t = np.asarray(t, dtype=float)
        cols = []
        if self.is_jump:
            cols.append(np.ones_like(t))
        cols.append(t)
        if self.is_bent_line:
            cols.append(np.maximum(0.0, t - self.knot))
        else:
            cols.append(t * t)
        return np.stack(cols, axis=-1)

    def matrix(self, times):
        """``f(t)`` for each time, shape ``(len(times), J)``; zero rows for ``t < 0``."""
        t = np.asarray(times, dtype=float)
        return np.where((t >= 0)[..., None], self.engine_on(t), 0.0)


@dataclass(frozen=True)
class RandomTrendSpec:
    random_jump: bool = False

    @property
    def G(self) -> int:
        return 1 if self.random_jump else 0

    def matrix(self, times):
        t = np.asarray(times, dtype=float)
        if not self.random_jump:
            return np.zeros(t.shape + (0,))
        return (t >= 0).astype(float)[..., None]


def time_basis(trend: TrendSpec, t) -> np.ndarray:
    """Fixed-effect time functions ``f(t)`` (length ``J``)."""
    return trend.matrix(np.asarray(float(t)))


def random_time_basis(rt: RandomTrendSpec, t) -> np.ndarray:
    """Random-effect time functions ``g(t)`` (length ``G``)."""
    return rt.matrix(np.asarray(float(t)))


_VARIANT_RE = re.compile(r"^(random-)?(jump-)?(quadratic|knot|bent-line)-?(\d+)?$")


def parse_variant(name: str, knot=None):
    """Parse names like ``quadratic``, ``knot8``, ``jump-knot10`` or
    ``random-jump-quadratic`` into ``(TrendSpec, RandomTrendSpec)``.

    ``knot`` overrides any knot time embedded in the name.
    """
    m = _VARIANT_RE.match(name.strip().lower().replace("_", "-").replace(" ", "-"))
    if not m:
        raise ValueError(f"unknown model variant {name!r}")
    rand, jump, form, k = m.groups()
    if rand and not jump:
        raise ValueError("random jumps are only defined for jump models")
    bent = form in ("knot", "bent-line")
    if knot is not None:
        k = knot
    if bent and k is None:
        raise ValueError(f"variant {name!r} needs a knot time")
    if not bent and knot is None and k is not None:
        raise ValueError(f"quadratic variant {name!r} takes no knot time")
    variant = ("jump-" if jump else "") + ("bent-line" if bent else "quadratic")
    trend = TrendSpec(variant, int(k) if bent else None)
    return trend, RandomTrendSpec(bool(rand))


def variant_name(trend: TrendSpec, rt: RandomTrendSpec) -> str:
    base = f"knot{trend.knot}" if trend.is_bent_line else "quadratic"
    if trend.is_jump:
        base = "jump-" + base
    return ("random-" if rt.random_jump else "") + base


FIXED_VARIANTS = ("quadratic", "knot8", "knot10", "knot12",
                  "jump-quadratic", "jump-knot8", "jump-knot10", "jump-knot12")
RANDOM_JUMP_VARIANTS = tuple("random-" + v for v in FIXED_VARIANTS[4:])


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Complete model definition: trend, random effects, bases and priors."""

    trend: TrendSpec
    random_trend: RandomTrendSpec
    mean_basis: BSplineBasis
    var_basis: BSplineBasis
    priors: PriorConfig = PriorConfig()
    random_intercepts: bool = True
    first_obs: str = "stationary"

    def __post_init__(self):
        if self.mean_basis.domain != self.var_basis.domain:
            raise ValueError("mean and variance bases must share a domain")
        lo, hi = self.mean_basis.domain
        if lo != 1 or hi != int(hi) or hi < 2:
            raise ValueError("bases must span size bins [1, S]")
        if self.first_obs not in FIRST_OBS_RULES:
            raise ValueError(f"first_obs must be one of {FIRST_OBS_RULES}")
        object.__setattr__(self, "priors", self.priors.resolve(self.K, self.G))
        B = basis_matrix(self.mean_basis, np.arange(1, self.n_bins + 1))
        Be = basis_matrix(self.var_basis, np.arange(1, self.n_bins + 1))
        B.setflags(write=False)
        Be.setflags(write=False)
        object.__setattr__(self, "_B", B)
        object.__setattr__(self, "_Berr", Be)

    @classmethod
    def build(cls, n_bins, variant="jump-quadratic", knot=None, K=7, L=6,
              mean_knots=None, var_knots=None, priors=None, random_intercepts=True,
              first_obs="stationary"):
        trend, rt = parse_variant(variant, knot)
        return cls(trend, rt,
                   bin_basis(n_bins, K, 3, mean_knots),
                   bin_basis(n_bins, L, 2, var_knots),
                   priors or PriorConfig(), random_intercepts, first_obs)

    @property
    def n_bins(self) -> int:
        return int(self.mean_basis.domain[1])

    @property
    def K(self) -> int:
        return self.mean_basis.n_basis

    @property
    def L(self) -> int:
        return self.var_basis.n_basis

    @property
    def J(self) -> int:
        return self.trend.J

    @property
    def G(self) -> int:
        return self.random_trend.G

    @property
    def B(self) -> np.ndarray:
        """Mean basis evaluated at bins ``1..S``, shape ``(S, K)``."""
        return self._B

    @property
    def Berr(self) -> np.ndarray:
        """Variance basis evaluated at bins ``1..S``, shape ``(S, L)``."""
        return self._Berr

    @property
    def name(self) -> str:
        return variant_name(self.trend, self.random_trend)

    @property
    def label(self) -> str:
        return ("Random " if self.random_trend.random_jump else "") + self.trend.label

    def check_data(self, ds):
        """Raise ``ValueError`` if the dataset cannot support this model."""
        if ds.n_bins != self.n_bins:
            raise ValueError(f"model has {self.n_bins} size bins, data has {ds.n_bins}")
        if self.trend.is_bent_line:
            t_end = min(r.t_max for r in ds.runs)
            if not 0 < self.trend.knot < t_end:
                raise ValueError(f"knot time {self.trend.knot} must lie in (0, {t_end}), "
                                 "the shortest run's engine-on span")

    def to_dict(self) -> dict:
        return {
            "trend": {"variant": self.trend.variant, "knot": self.trend.knot},
            "random_jump": self.random_trend.random_jump,
            "mean_basis": self.mean_basis.to_dict(),
            "var_basis": self.var_basis.to_dict(),
            "priors": self.priors.to_dict(),
            "random_intercepts": self.random_intercepts,
            "first_obs": self.first_obs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(TrendSpec(d["trend"]["variant"], d["trend"]["knot"]),
                   RandomTrendSpec(bool(d["random_jump"])),
                   BSplineBasis.from_dict(d["mean_basis"]),
                   BSplineBasis.from_dict(d["var_basis"]),
                   PriorConfig.from_dict(d["priors"]),
                   bool(d["random_intercepts"]), d["first_obs"])

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def coefficient_curves(spec: ModelSpec, state, i, times, z):
    """Per-time K-vectors ``alpha + gamma_i + Delta_z' f(t) + Upsilon_i' g(t)``."""
    times = np.asarray(times, dtype=float)
    c = np.broadcast_to(state.alpha, times.shape + (spec.K,)).copy()
    if spec.random_intercepts:
        c += state.gamma[i]
    c += spec.trend.matrix(times) @ state.Delta[z]
    if spec.G:
        c += spec.random_trend.matrix(times) @ state.Upsilon[i]
    return c


def mean_grid(spec: ModelSpec, state, i, times, z):
    """Means for run index ``i`` at all bins and ``times``, shape ``(S, T)``."""
    return spec.B @ coefficient_curves(spec, state, i, times, z).T


def mean_at(spec: ModelSpec, state, i, s, t, z) -> float:
    """Model mean at run index ``i`` (0-based), size bin ``s`` (1-based),
    time ``t`` (minutes) and window position ``z``."""
    if not 1 <= s <= spec.n_bins:
        raise IndexError(f"size bin {s} outside 1..{spec.n_bins}")
    _check_dims(spec, state)
    b = spec.B[s - 1]
    return float(b @ coefficient_curves(spec, state, i, [t], z)[0])


def _check_dims(spec, state):
    K, J, G = spec.K, spec.J, spec.G
    if np.shape(state.alpha) != (K,):
        raise ValueError(f"alpha has shape {np.shape(state.alpha)}, expected ({K},)")
    if np.shape(state.Delta) != (2, J, K):
        raise ValueError(f"Delta has shape {np.shape(state.Delta)}, expected (2, {J}, {K})")
    if spec.random_intercepts and np.shape(state.gamma)[1:] != (K,):
        raise ValueError("gamma does not match the mean basis")
    if G and np.shape(state.Upsilon)[1:] != (G, K):
        raise ValueError(f"Upsilon entries must be ({G}, {K})")
