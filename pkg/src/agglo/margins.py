"""Truncated univariate families fitted by maximum likelihood.

Parameter conventions (``MarginFit.params``):

* ``normal``: ``(mu, sigma)``
* ``lognormal``: ``(shape, scale)``, i.e. ``ln X ~ N(ln scale, shape^2)``
* ``gamma``: ``(alpha, beta)`` with ``beta`` the scale

Every fit carries a support ``(lo, hi)``; densities are renormalized to it.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special, stats

from .errors import FitError, InvalidInputError

FAMILIES = ("normal", "lognormal", "gamma")
SUPPORTS = {"diameter": (0.0, math.inf), "solidity": (0.0, 1.0)}


def _frozen(family, params):
    a, b = params
    if family == "normal":
        return stats.norm(loc=a, scale=b)
    if family == "lognormal":
        return stats.lognorm(s=a, scale=b)
    if family == "gamma":
        return stats.gamma(a=a, scale=b)
    raise InvalidInputError(f"unknown family {family!r}")


def _check_params(family, params):
    a, b = (float(p) for p in params)
    ok = b > 0 and math.isfinite(a) and math.isfinite(b)
    if family != "normal":
        ok = ok and a > 0
    if not ok:
        raise InvalidInputError(f"parameters {params} outside the {family} parameter space")
    return a, b


@dataclass
class MarginFit:
    family: str
    params: tuple[float, float]
    support: tuple[float, float] = (-math.inf, math.inf)
    log_likelihood: float = float("nan")
    n: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown family {self.family!r}")
        self.params = _check_params(self.family, self.params)
        lo, hi = (float(s) for s in self.support)
        if not lo < hi:
            raise InvalidInputError("support must satisfy lo < hi")
        self.support = (lo, hi)

    @property
    def dist(self):
        return _frozen(self.family, self.params)

    @property
    def _mass(self):
        lo, hi = self.support
        d = self.dist
        return d.cdf(hi) - d.cdf(lo)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        inside = (x >= lo) & (x <= hi)
        return np.where(inside, self.dist.pdf(x) / self._mass, 0.0)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        inside = (x >= lo) & (x <= hi)
        with np.errstate(divide="ignore"):
            return np.where(inside, self.dist.logpdf(x) - math.log(self._mass), -np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        d = self.dist
        return (d.cdf(np.clip(x, lo, hi)) - d.cdf(lo)) / self._mass

    def quantile(self, u):
        u = np.asarray(u, dtype=float)
        if np.any((u <= 0) | (u >= 1)):
            raise InvalidInputError("quantile level must lie in (0, 1)")
        lo, hi = self.support
        d = self.dist
        flo, fhi = d.cdf(lo), d.cdf(hi)
        # invert through the survival function in the upper half for accuracy
        q_low = d.ppf(flo + u * (fhi - flo))
        q_high = d.isf(d.sf(hi) + (1.0 - u) * (fhi - flo))
        return np.clip(np.where(u < 0.5, q_low, q_high), lo, hi)

    def mean(self) -> float:
        """Mean of the truncated distribution, from closed-form partial moments."""
        lo, hi = self.support
        a, b = self.params
        mass = math.exp(_log_mass(self.family, a, b, lo, hi))
        if self.family == "normal":
            zl, zh = (lo - a) / b, (hi - a) / b
            phi = lambda z: 0.0 if math.isinf(z) else math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)  # noqa: E731
            return a + b * (phi(zl) - phi(zh)) / mass
        # E[X; X <= c] for the lognormal and gamma base distributions
        if self.family == "lognormal":
            def partial(c):
                if c <= 0:
                    return 0.0
                if math.isinf(c):
                    return 1.0
                return special.ndtr((math.log(c) - math.log(b)) / a - a)
            scale = b * math.exp(0.5 * a * a)
        else:
            def partial(c):
                if c <= 0:
                    return 0.0
                return 1.0 if math.isinf(c) else special.gammainc(a + 1.0, c / b)
            scale = a * b
        return scale * (partial(hi) - partial(lo)) / mass

    def sample(self, n, rng) -> np.ndarray:
        u = rng.uniform(size=n)
        u = np.clip(u, 1e-16, 1 - 1e-16)
        return self.quantile(u)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": list(self.params),
                "support": [_num(s) for s in self.support],
                "loglik": self.log_likelihood, "n": self.n}

    @classmethod
    def from_dict(cls, d) -> "MarginFit":
        sup = tuple(math.inf if s is None and i else -math.inf if s is None else s
                    for i, s in enumerate(d["support"]))
        return cls(d["family"], tuple(d["params"]), sup, d.get("loglik", float("nan")), d.get("n", 0))


def _num(v):
    return None if math.isinf(v) else float(v)


def _log_mass(family, a, b, lo, hi) -> float:
    """log of the base-distribution probability of ``[lo, hi]``."""
    if family == "normal":
        zl, zh = (lo - a) / b, (hi - a) / b
        if zl > 0:
            # upper tail: use the mirrored lower tail for accuracy
            zl, zh = -zh, -zl
        mass = special.ndtr(zh) - special.ndtr(zl)
        return math.log(mass) if mass > 0 else -math.inf
    if family == "lognormal":
        cl = special.ndtr((math.log(lo) - math.log(b)) / a) if lo > 0 else 0.0
        ch = special.ndtr((math.log(hi) - math.log(b)) / a) if math.isfinite(hi) else 1.0
    else:
        cl = special.gammainc(a, lo / b) if lo > 0 else 0.0
        ch = special.gammainc(a, hi / b) if math.isfinite(hi) else 1.0
    mass = ch - cl
    return math.log(mass) if mass > 0 else -math.inf


class _Stats:
    """Sufficient statistics of a sample for the three families."""

    def __init__(self, x):
        self.n = len(x)
        self.sx = float(np.sum(x))
        self.sxx = float(np.sum((x - x.mean()) ** 2))
        self.mean = float(x.mean())
        pos = np.all(x > 0)
        lx = np.log(x) if pos else None
        self.sl = float(np.sum(lx)) if pos else math.nan
        self.lmean = float(lx.mean()) if pos else math.nan
        self.sll = float(np.sum((lx - lx.mean()) ** 2)) if pos else math.nan


def _loglik_stats(family, a, b, st: _Stats, lo, hi) -> float:
    n = st.n
    if family == "normal":
        ss = st.sxx + n * (st.mean - a) ** 2
        ll = -0.5 * n * math.log(2 * math.pi) - n * math.log(b) - ss / (2 * b * b)
    elif family == "lognormal":
        ss = st.sll + n * (st.lmean - math.log(b)) ** 2
        ll = -0.5 * n * math.log(2 * math.pi) - n * math.log(a) - st.sl - ss / (2 * a * a)
    else:
        ll = (-n * special.gammaln(a) - n * a * math.log(b) + (a - 1) * st.sl - st.sx / b)
    return ll - n * _log_mass(family, a, b, lo, hi)


def truncated_loglik(family, params, x, support) -> float:
    """Log-likelihood of ``x`` under the family truncated to ``support``."""
    try:
        a, b = _check_params(family, params)
    except InvalidInputError:
        return -math.inf
    x = np.asarray(x, dtype=float)
    lo, hi = support
    if np.any(x < lo) or np.any(x > hi):
        return -math.inf
    ll = _loglik_stats(family, a, b, _Stats(x), lo, hi)
    return ll if math.isfinite(ll) else -math.inf


def _gamma_start(x):
    # closed-form approximation to the untruncated MLE of the shape
    s = math.log(x.mean()) - np.mean(np.log(x))
    alpha = (3 - s + math.sqrt((s - 3) ** 2 + 24 * s)) / (12 * s)
    # two Newton steps on log(alpha) - digamma(alpha) = s
    for _ in range(2):
        alpha -= (math.log(alpha) - special.digamma(alpha) - s) / (1 / alpha - special.polygamma(1, alpha))
    return alpha, x.mean() / alpha


def _starts(family, x):
    m, sd = x.mean(), x.std()
    if family == "normal":
        return [(m, sd), (np.median(x), 1.2 * sd)]
    lx = np.log(x)
    if family == "lognormal":
        return [(lx.std(), math.exp(lx.mean())), (sd / m, m)]
    g = _gamma_start(x)
    return [g, ((m / sd) ** 2, sd * sd / m)]


def _fit_untruncated(x, family, support) -> MarginFit:
    if family == "lognormal":
        lx = np.log(x)
        params = (float(lx.std()), math.exp(lx.mean()))
    else:
        alpha, _ = _gamma_start(x)
        s = math.log(x.mean()) - np.mean(np.log(x))
        for _ in range(50):
            step = (math.log(alpha) - special.digamma(alpha) - s) / (1 / alpha - special.polygamma(1, alpha))
            # Newton in log(alpha) would also do; damp to stay positive
            alpha = max(alpha - step, alpha / 10)
            if abs(step) <= 1e-15 * alpha:
                break
        params = (alpha, float(x.mean()) / alpha)
    ll = _loglik_stats(family, *params, _Stats(x), *support)
    if not math.isfinite(ll):
        raise FitError(f"{family} likelihood is not finite")
    return MarginFit(family, params, support, ll, len(x))


def fit_mle(samples, family: str, support=(-math.inf, math.inf)) -> MarginFit:
    """Maximize the truncated log-likelihood of ``family`` on ``samples``.

    Nelder-Mead runs from several starts in an unconstrained parametrization;
    the best simplex result is polished with BFGS.
    """
    x = np.asarray(samples, dtype=float).ravel()
    lo, hi = (float(s) for s in support)
    if family not in FAMILIES:
        raise InvalidInputError(f"unknown family {family!r}")
    if len(x) < 3:
        raise InvalidInputError("need at least 3 samples")
    if not np.all(np.isfinite(x)) or np.any(x < lo) or np.any(x > hi):
        raise InvalidInputError("samples outside the support")
    if np.ptp(x) == 0:
        raise InvalidInputError("degenerate samples (zero variance)")
    if family != "normal" and np.any(x <= 0):
        raise InvalidInputError(f"{family} needs strictly positive samples")
    if family != "normal" and lo <= 0 and math.isinf(hi):
        # truncation to the positive axis is void for these families
        return _fit_untruncated(x, family, (lo, hi))
    m0, s0 = x.mean(), x.std()

    if family == "normal":
        def unpack(p):
            return (m0 + s0 * p[0], s0 * math.exp(p[1]))

        def pack(w):
            return np.array([(w[0] - m0) / s0, math.log(w[1] / s0)])
    elif family == "lognormal":
        def unpack(p):
            return (math.exp(p[0]), math.exp(p[1]))

        def pack(w):
            return np.log(np.asarray(w, dtype=float))
    else:
        # (log shape, log mean) is far less correlated than (log shape, log scale)
        def unpack(p):
            alpha = math.exp(p[0])
            return (alpha, math.exp(p[1]) / alpha)

        def pack(w):
            return np.array([math.log(w[0]), math.log(w[0] * w[1])])

    st = _Stats(x)

    def nll(p):
        if not np.all(np.isfinite(p)) or np.any(np.abs(p) > 50):
            return 1e300
        a, b = unpack(p)
        with np.errstate(all="ignore"):
            ll = _loglik_stats(family, a, b, st, lo, hi)
        return -ll if math.isfinite(ll) else 1e300

    best = None
    for w in _starts(family, x):
        if not (w[1] > 0 and (family == "normal" or w[0] > 0)):
            continue
        p0 = pack(w)
        ftol = 1e-13 * max(1.0, abs(nll(p0)))   # absolute tolerance below this is unreachable
        r = optimize.minimize(nll, p0, method="Nelder-Mead",
                              options={"xatol": 1e-10, "fatol": ftol, "maxiter": 4000})
        if best is None or r.fun < best.fun:
            best = r
    if best is None or best.fun >= 1e300:
        raise FitError(f"{family} likelihood could not be evaluated")
    with warnings.catch_warnings():
        # a flat line search at the optimum divides 0 by 0 inside scipy; harmless
        warnings.simplefilter("ignore", RuntimeWarning)
        r = optimize.minimize(nll, best.x, method="BFGS", options={"gtol": 1e-10})
    if r.fun <= best.fun:
        best = r
    params = unpack(best.x)
    return MarginFit(family, params, (lo, hi), -float(best.fun), len(x))


@dataclass
class FamilySelection:
    family: str
    fits: dict          # t -> MarginFit for the selected family
    totals: dict        # family -> summed log-likelihood (failed families absent)


def select_family(per_time_samples: dict, support=(-math.inf, math.inf), families=FAMILIES) -> FamilySelection:
    """Family with the largest log-likelihood summed over time steps.

    A family is dropped if any of its per-step fits fails; ties keep the
    earlier family in ``families``.
    """
    if not per_time_samples:
        raise InvalidInputError("no time steps")
    for t, xs in per_time_samples.items():
        if len(xs) == 0:
            raise InvalidInputError(f"time step {t} has no samples")
    totals, all_fits = {}, {}
    for fam in families:
        try:
            fits = {t: fit_mle(xs, fam, support) for t, xs in per_time_samples.items()}
        except (InvalidInputError, FitError):
            continue
        totals[fam] = sum(f.log_likelihood for f in fits.values())
        all_fits[fam] = fits
    if not totals:
        raise FitError("every candidate family failed")
    best = None
    for fam in families:
        if fam in totals and (best is None or totals[fam] > totals[best]):
            best = fam
    return FamilySelection(best, all_fits[best], totals)
