"""Bivariate Archimedean copulas with rotations, fitting and sampling.

Families and parameter spaces::

    frank    phi(u) = -ln[(e^{-t u} - 1) / (e^{-t} - 1)]     t != 0
    joe      phi(u) = -ln[1 - (1 - u)^t]                      t >= 1
    clayton  phi(u) = (u^{-t} - 1) / t                        t > 0
    gumbel   phi(u) = (-ln u)^t                               t >= 1
    amh      phi(u) = ln[(1 - t (1 - u)) / u]                 -1 <= t < 1

``C(u, v) = phi^{-1}(phi(u) + phi(v))``; all five generators are strict, so
the pseudo-inverse is the ordinary inverse. Densities are closed-form mixed
partials, evaluated on the log scale.

Rotations act on the density as ``c90(u, v) = c(v, 1-u)``,
``c180(u, v) = c(1-u, 1-v)`` and ``c270(u, v) = c(1-v, u)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, stats

from .errors import FitError, InvalidInputError
from .margins import MarginFit

FAMILIES = ("frank", "joe", "clayton", "gumbel", "amh")
ROTATIONS = (0, 90, 180, 270)
EPS = 1e-12
THETA_MAX = 50.0
AMH_MAX = 1.0 - 1e-9
# search intervals used by fit_theta; frank is fitted on both signs
FIT_BOUNDS = {
    "frank": [(-THETA_MAX, -1e-6), (1e-6, THETA_MAX)],
    "joe": [(1.0, THETA_MAX)],
    "clayton": [(1e-6, THETA_MAX)],
    "gumbel": [(1.0, THETA_MAX)],
    "amh": [(-1.0, AMH_MAX)],
}


def check_theta(family: str, theta: float) -> float:
    theta = float(theta)
    ok = {
        "frank": theta != 0.0,
        "joe": theta >= 1.0,
        "clayton": theta > 0.0,
        "gumbel": theta >= 1.0,
        "amh": -1.0 <= theta < 1.0,
    }
    if family not in ok:
        raise InvalidInputError(f"unknown copula family {family!r}")
    if not (math.isfinite(theta) and ok[family]):
        raise InvalidInputError(f"theta={theta} outside the {family} parameter space")
    return theta


def _clamp(u):
    return np.clip(np.asarray(u, dtype=float), EPS, 1.0 - EPS)


# ---------------------------------------------------------------- generators

def generator(family: str, theta: float, u):
    t = check_theta(family, theta)
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u > 1)):
        raise InvalidInputError("generator argument must lie in (0, 1]")
    with np.errstate(divide="ignore"):
        if family == "frank":
            return -np.log(np.expm1(-t * u) / np.expm1(-t))
        if family == "joe":
            return -np.log1p(-((1.0 - u) ** t))
        if family == "clayton":
            return np.expm1(-t * np.log(u)) / t
        if family == "gumbel":
            return (-np.log(u)) ** t
        return np.log1p(-t * (1.0 - u)) - np.log(u)


def generator_pinv(family: str, theta: float, x):
    t = check_theta(family, theta)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise InvalidInputError("pseudo-inverse argument must be >= 0")
    with np.errstate(over="ignore"):
        if family == "frank":
            return -np.log1p(np.exp(-x) * np.expm1(-t)) / t
        if family == "joe":
            return 1.0 - (-np.expm1(-x)) ** (1.0 / t)
        if family == "clayton":
            return np.exp(-np.log1p(t * x) / t)
        if family == "gumbel":
            return np.exp(-(x ** (1.0 / t)))
        return (1.0 - t) / (np.exp(x) - t)


def _log_neg_dgen(family, t, u):
    """log(-phi'(u)), the log of the generator's negative derivative."""
    if family == "frank":
        return np.log(t / np.expm1(t * u))
    if family == "joe":
        return math.log(t) + (t - 1.0) * np.log1p(-u) - np.log(-np.expm1(t * np.log1p(-u)))
    if family == "clayton":
        return (-t - 1.0) * np.log(u)
    if family == "gumbel":
        return math.log(t) + (t - 1.0) * np.log(-np.log(u)) - np.log(u)
    return math.log(1.0 - t) - np.log(u) - np.log1p(-t * (1.0 - u))


# ---------------------------------------------------------------- base copulas

def _base_cdf(family, t, u, v):
    if family == "frank":
        return -np.log1p(np.expm1(-t * u) * np.expm1(-t * v) / np.expm1(-t)) / t
    if family == "joe":
        a, b = (1.0 - u) ** t, (1.0 - v) ** t
        return 1.0 - (a + b * (1.0 - a)) ** (1.0 / t)
    if family == "clayton":
        return np.exp(-_clayton_logA(t, u, v) / t)
    if family == "gumbel":
        x, y = -np.log(u), -np.log(v)
        return np.exp(-np.exp(np.logaddexp(t * np.log(x), t * np.log(y)) / t))
    return u * v / (1.0 - t * (1.0 - u) * (1.0 - v))


def _clayton_logA(t, u, v):
    # log(u^-t + v^-t - 1) without overflow
    a, b = -t * np.log(u), -t * np.log(v)
    m = np.maximum(a, b)
    return m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))


def _base_logpdf(family, t, u, v):
    if family == "frank":
        if t < 0:
            # reflection: c_{-t}(u, v) = c_t(u, 1 - v)
            return _base_logpdf("frank", -t, u, 1.0 - v)
        ea, eb = np.exp(-t * u), np.exp(-t * v)
        # D = e^{-tu}(1 - e^{-t(1-u)}) + e^{-tv}(1 - e^{-tu}), a sum of positives
        D = ea * (-np.expm1(-t * (1.0 - u))) + eb * (-np.expm1(-t * u))
        return math.log(t) + math.log(-math.expm1(-t)) - t * (u + v) - 2.0 * np.log(D)
    if family == "joe":
        lu, lv = np.log1p(-u), np.log1p(-v)
        a, b = np.exp(t * lu), np.exp(t * lv)
        s = a + b * (1.0 - a)
        return (1.0 / t - 2.0) * np.log(s) + (t - 1.0) * (lu + lv) + np.log(t - 1.0 + s)
    if family == "clayton":
        return (math.log1p(t) - (t + 1.0) * (np.log(u) + np.log(v))
                - (2.0 + 1.0 / t) * _clayton_logA(t, u, v))
    if family == "gumbel":
        x, y = -np.log(u), -np.log(v)
        logA = np.logaddexp(t * np.log(x), t * np.log(y))
        Ainv = np.exp(-logA / t)        # A^{-1/t}
        return (-np.exp(logA / t) + (t - 1.0) * (np.log(x) + np.log(y)) + x + y
                + (2.0 / t - 2.0) * logA + np.log1p((t - 1.0) * Ainv))
    # numerator and denominator regrouped around s = 1 - t so that nothing
    # cancels when t approaches 1 near the origin
    s = 1.0 - t
    num = s * s + t * s * (u + v) + t * (1.0 + t) * u * v
    den = s + t * (u + v * (1.0 - u))
    return np.log(num) - 3.0 * np.log(den)


def _base_h(family, t, u, v):
    """Conditional cdf P(V <= v | U = u) = phi'(u) / phi'(C(u, v))."""
    c = np.clip(_base_cdf(family, t, u, v), 1e-300, 1.0)
    return np.exp(_log_neg_dgen(family, t, u) - _log_neg_dgen(family, t, c))


def rotate_coords(u, v, rotation: int):
    """Arguments at which the base density is read for a rotated density."""
    if rotation == 0:
        return u, v
    if rotation == 90:
        return v, 1.0 - u
    if rotation == 180:
        return 1.0 - u, 1.0 - v
    if rotation == 270:
        return 1.0 - v, u
    raise InvalidInputError(f"rotation must be one of {ROTATIONS}")


def rotate_density(c, rotation: int):
    """Rotated version of a density callable ``c(u, v)``."""
    if rotation not in ROTATIONS:
        raise InvalidInputError(f"rotation must be one of {ROTATIONS}")

    def rotated(u, v):
        return c(*rotate_coords(np.asarray(u, float), np.asarray(v, float), rotation))
    return rotated


# ---------------------------------------------------------------- fits

@dataclass
class CopulaFit:
    family: str
    rotation: int
    theta: float
    log_likelihood: float = float("nan")
    n: int = 0
    at_boundary: bool = False

    def __post_init__(self):
        self.theta = check_theta(self.family, self.theta)
        if self.rotation not in ROTATIONS:
            raise InvalidInputError(f"rotation must be one of {ROTATIONS}")
        self.rotation = int(self.rotation)

    def logpdf(self, u, v):
        a, b = rotate_coords(_clamp(u), _clamp(v), self.rotation)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            return _base_logpdf(self.family, self.theta, _clamp(a), _clamp(b))

    def pdf(self, u, v):
        return np.exp(self.logpdf(u, v))

    def cdf(self, u, v):
        u, v = _clamp(u), _clamp(v)
        C = lambda a, b: _base_cdf(self.family, self.theta, _clamp(a), _clamp(b))  # noqa: E731
        if self.rotation == 0:
            return C(u, v)
        if self.rotation == 90:
            return v - C(v, 1.0 - u)
        if self.rotation == 180:
            return u + v - 1.0 + C(1.0 - u, 1.0 - v)
        return u - C(1.0 - v, u)

    def loglik(self, u, v) -> float:
        return float(np.sum(self.logpdf(u, v)))

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """Conditional inversion on the base copula, then the rotation map."""
        if n < 1:
            raise InvalidInputError("n must be >= 1")
        a = _clamp(rng.uniform(size=n))
        w = rng.uniform(size=n)
        lo, hi = np.zeros(n), np.ones(n)
        with np.errstate(all="ignore"):
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                below = _base_h(self.family, self.theta, a, _clamp(mid)) < w
                lo = np.where(below, mid, lo)
                hi = np.where(below, hi, mid)
        b = _clamp(0.5 * (lo + hi))
        if self.rotation == 0:
            return a, b
        if self.rotation == 90:
            return 1.0 - b, a
        if self.rotation == 180:
            return 1.0 - a, 1.0 - b
        return b, 1.0 - a

    def kendall_tau(self) -> float:
        tau = kendall_tau_theta(self.family, self.theta)
        return -tau if self.rotation in (90, 270) else tau

    def to_dict(self) -> dict:
        return {"family": self.family, "rotation": self.rotation, "theta": self.theta,
                "loglik": self.log_likelihood, "n": self.n, "at_boundary": self.at_boundary}

    @classmethod
    def from_dict(cls, d) -> "CopulaFit":
        return cls(d["family"], d["rotation"], d["theta"], d.get("loglik", float("nan")),
                   d.get("n", 0), d.get("at_boundary", False))


def kendall_tau_theta(family: str, theta: float) -> float:
    """Population tau of the unrotated copula, ``1 + 4 * int_0^1 phi / phi' du``."""
    t = check_theta(family, theta)
    if family == "clayton":
        return t / (t + 2.0)
    if family == "gumbel":
        return 1.0 - 1.0 / t

    def ratio(u):
        phi = float(generator(family, t, u))
        return -phi / math.exp(float(_log_neg_dgen(family, t, np.float64(u))))
    val, _ = integrate.quad(ratio, 0.0, 1.0, limit=200, epsabs=1e-12)
    return 1.0 + 4.0 * val


def empirical_kendall_tau(u, v) -> float:
    """Tau-b of paired samples."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if len(u) != len(v) or len(u) < 2:
        raise InvalidInputError("need at least two pairs of equal length")
    if np.ptp(u) == 0 or np.ptp(v) == 0:
        raise InvalidInputError("tau undefined when a coordinate is constant")
    return float(stats.kendalltau(u, v).statistic)


def _theta_grid(lo, hi, k=48):
    if lo < 0 < hi:
        return np.linspace(lo, hi, k)
    if lo >= 1.0 or (lo > 0 and hi > 10):
        base = 1.0 if lo >= 1.0 else 0.0
        return base + np.geomspace(max(lo - base, 1e-6), hi - base, k)
    if hi <= -1e-6:
        return -np.geomspace(-hi, -lo, k)[::-1]
    return np.linspace(lo, hi, k)


def fit_theta(family: str, rotation: int, u, v) -> CopulaFit:
    """Maximize the copula log-likelihood in theta (margins held fixed).

    A coarse scan picks the bracket, bounded Brent refinement polishes it to
    1e-8 in theta. Fits ending on an interval bound are flagged.
    """
    if family not in FAMILIES:
        raise InvalidInputError(f"unknown copula family {family!r}")
    if rotation not in ROTATIONS:
        raise InvalidInputError(f"rotation must be one of {ROTATIONS}")
    u, v = _clamp(u), _clamp(v)
    if len(u) != len(v) or len(u) < 5:
        raise InvalidInputError("need at least 5 pairs")

    def nll(t):
        ll = CopulaFit(family, rotation, t).loglik(u, v)
        return -ll if math.isfinite(ll) else 1e300

    best = None
    for lo, hi in FIT_BOUNDS[family]:
        grid = _theta_grid(lo, hi)
        vals = np.array([nll(t) for t in grid])
        i = int(np.argmin(vals))
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
        r = optimize.minimize_scalar(nll, bounds=(a, b), method="bounded",
                                     options={"xatol": 1e-8})
        t, f = (float(r.x), float(r.fun)) if r.fun <= vals[i] else (float(grid[i]), float(vals[i]))
        edge = min(abs(t - lo), abs(t - hi)) < 1e-6 * max(1.0, abs(t))
        if best is None or f < best[1]:
            best = (t, f, edge)
    if best[1] >= 1e300:
        raise FitError(f"{family} likelihood is not finite on the data")
    return CopulaFit(family, rotation, best[0], -best[1], len(u), best[2])


@dataclass
class CopulaSelection:
    family: str
    rotation: int
    fits: dict      # t -> CopulaFit
    totals: dict    # (family, rotation) -> summed log-likelihood


def all_candidates():
    return [(f, r) for f in FAMILIES for r in ROTATIONS]


def select_copula(per_time_pairs: dict, candidates=None) -> CopulaSelection:
    """Candidate with the largest log-likelihood summed over time steps.

    Ties keep the earlier candidate (families in ``FAMILIES`` order, then
    rotations ascending).
    """
    candidates = list(candidates) if candidates is not None else all_candidates()
    if not per_time_pairs:
        raise InvalidInputError("no time steps")
    totals, fits = {}, {}
    for fam, rot in candidates:
        try:
            f = {t: fit_theta(fam, rot, uv[0], uv[1]) for t, uv in per_time_pairs.items()}
        except FitError:
            continue
        totals[(fam, rot)] = sum(x.log_likelihood for x in f.values())
        fits[(fam, rot)] = f
    if not totals:
        raise FitError("every copula candidate failed")
    best = None
    for c in candidates:
        if c in totals and (best is None or totals[c] > totals[best]):
            best = c
    return CopulaSelection(best[0], best[1], fits[best], totals)


# ---------------------------------------------------------------- bivariate models

@dataclass
class BivariateModel:
    """Margins for diameter and solidity joined by a copula (``None`` = independence)."""

    margin_d: MarginFit
    margin_s: MarginFit
    copula: CopulaFit | None = None

    def pseudo_obs(self, xd, xs):
        return _clamp(self.margin_d.cdf(xd)), _clamp(self.margin_s.cdf(xs))

    def pdf(self, xd, xs):
        f = self.margin_d.pdf(xd) * self.margin_s.pdf(xs)
        if self.copula is None:
            return f
        u, v = self.pseudo_obs(xd, xs)
        return np.where(f > 0, self.copula.pdf(u, v) * f, 0.0)

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        if self.copula is None:
            u, v = _clamp(rng.uniform(size=n)), _clamp(rng.uniform(size=n))
        else:
            u, v = self.copula.sample(n, rng)
        return self.margin_d.quantile(u), self.margin_s.quantile(v)

    def parameter_vector(self) -> tuple:
        th = () if self.copula is None else (self.copula.theta,)
        return tuple(self.margin_d.params) + tuple(self.margin_s.params) + th


def joint_density(model: BivariateModel, xd, xs):
    return model.pdf(xd, xs)


def sample_bivariate(model: BivariateModel, n: int, rng):
    return model.sample(n, rng)
