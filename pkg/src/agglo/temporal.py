"""Saturating-exponential trajectories over process time.

Class-size fractions and distribution parameters are regressed on time with

    zeta(t) = c1 - c2 * exp(-c3 * t),   c3 >= 0

so ``c1`` is the asymptote, ``c1 - c2`` the value at ``t = 0`` and ``c3``
the rate. Chain-like fractions are the complement of the primary and
raspberry curves, which keeps the three modeled fractions summing to one.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .copula import FIT_BOUNDS, BivariateModel, CopulaFit, select_copula
from .errors import InvalidInputError
from .margins import FAMILIES, SUPPORTS, MarginFit, fit_mle, select_family

log = logging.getLogger(__name__)

N_CLASSES = 3
PRIMARY, CHAIN, RASPBERRY = 0, 1, 2
TIME_RANGE = (10.0, 120.0)
SCHEMA_VERSION = 1
C3_STARTS = (0.01, 0.03, 0.1, 0.3)


class FractionRangeWarning(UserWarning):
    """A modeled fraction left [0, 1]."""


class ExtrapolationWarning(UserWarning):
    """A model was evaluated outside the fitted time range."""


def zeta(t, c1, c2, c3):
    return c1 - c2 * np.exp(-c3 * np.asarray(t, dtype=float))


@dataclass
class RegressionCurve:
    c1: float
    c2: float
    c3: float
    weighted: bool = False
    sse: float = 0.0

    def __post_init__(self):
        self.c1, self.c2, self.c3 = float(self.c1), float(self.c2), float(self.c3)
        if not self.c3 >= 0:
            raise InvalidInputError("c3 must be >= 0")

    def __call__(self, t):
        return zeta(t, self.c1, self.c2, self.c3)

    @classmethod
    def constant(cls, value) -> "RegressionCurve":
        return cls(value, 0.0, 0.0)

    def to_dict(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "c3": self.c3,
                "weighted": self.weighted, "sse": self.sse}

    @classmethod
    def from_dict(cls, d) -> "RegressionCurve":
        return cls(d["c1"], d["c2"], d["c3"], d.get("weighted", False), d.get("sse", 0.0))


def _check_points(t, y):
    if len(t) < 3:
        raise InvalidInputError("need at least 3 points")
    if len(np.unique(t)) < 2:
        raise InvalidInputError("need at least 2 distinct time values")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise InvalidInputError("non-finite points")
    if np.any(t < 0):
        raise InvalidInputError("time must be >= 0")


def _fit(t, y, w):
    """Minimize sum((w * (zeta(t) - y))^2) from the deterministic start grid."""
    order = np.argsort(t, kind="stable")
    c1 = y[order[-1]]
    c2 = c1 - y[order[0]]

    def resid(p):
        return w * (zeta(t, *p) - y)

    def jac(p):
        e = np.exp(-p[2] * t)
        return w[:, None] * np.column_stack([np.ones_like(t), -e, p[1] * t * e])

    best = None
    for c3 in C3_STARTS:
        p0 = np.array([c1, c2, c3])
        # trust-region reflective is a damped Gauss-Newton that honours c3 >= 0
        r = optimize.least_squares(resid, p0, jac=jac, method="trf",
                                   bounds=([-np.inf, -np.inf, 0.0], np.inf),
                                   xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        loss = float(np.sum(resid(r.x) ** 2))
        if best is None or loss < best[1]:
            best = (r.x, loss)
    return best


def fit_curve(points) -> RegressionCurve:
    """Least-squares fit of ``zeta`` to ``(t, y)`` pairs; ``sse`` holds the MSE."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    t, y = pts[:, 0], pts[:, 1]
    _check_points(t, y)
    p, loss = _fit(t, y, np.ones_like(t))
    return RegressionCurve(*p, weighted=False, sse=loss / len(t))


def fit_curve_weighted(points, square_weights: bool = True) -> RegressionCurve:
    """Fit to ``(t, value, n_t)`` triples.

    By default the loss is ``sum(((value - zeta(t)) * n_t)^2)``, the weight
    sitting inside the square. ``square_weights=False`` gives the usual
    weighted least squares ``sum(n_t * (value - zeta(t))^2)``.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    t, y, n = pts[:, 0], pts[:, 1], pts[:, 2]
    _check_points(t, y)
    if np.any(n <= 0) or not np.all(np.isfinite(n)):
        raise InvalidInputError("weights must be positive")
    w = n if square_weights else np.sqrt(n)
    p, loss = _fit(t, y, w)
    return RegressionCurve(*p, weighted=True, sse=loss)


# ---------------------------------------------------------------- class fractions

@dataclass
class ClassFractionSeries:
    times: tuple
    fractions: np.ndarray   # (len(times), 3), rows sum to 1

    def points(self, k: int) -> list:
        return [(t, float(f[k])) for t, f in zip(self.times, self.fractions)]


def class_fractions(per_time: dict) -> ClassFractionSeries:
    """Area-weighted class fractions per time step.

    ``per_time`` maps ``t`` to ``(labels, areas)``.
    """
    times, rows = [], []
    for t in sorted(per_time):
        labels, areas = (np.asarray(a) for a in per_time[t])
        if len(labels) == 0:
            raise InvalidInputError(f"time step {t} has no objects")
        if len(labels) != len(areas) or np.any(areas <= 0):
            raise InvalidInputError("areas must be positive and match the labels")
        if np.any((labels < 0) | (labels >= N_CLASSES)):
            raise InvalidInputError("labels must lie in {0, 1, 2}")
        per_class = np.bincount(labels.astype(int), weights=areas.astype(float), minlength=N_CLASSES)
        times.append(t)
        rows.append(per_class / per_class.sum())
    return ClassFractionSeries(tuple(times), np.array(rows))


def chain_complement(primary: RegressionCurve, raspberry: RegressionCurve, t):
    """``1 - g1(t) - g2(t)``; values outside [0, 1] are kept and warned about."""
    val = 1.0 - primary(t) - raspberry(t)
    if np.any((val < 0) | (val > 1)):
        warnings.warn("chain fraction outside [0, 1]", FractionRangeWarning, stacklevel=2)
    return val


@dataclass
class FractionModel:
    primary: RegressionCurve
    raspberry: RegressionCurve

    def __call__(self, t):
        """(..., 3) array of modeled primary, chain and raspberry fractions."""
        g1, g2 = self.primary(t), self.raspberry(t)
        return np.stack([g1, chain_complement(self.primary, self.raspberry, t), g2], axis=-1)

    def to_dict(self) -> dict:
        return {"primary": self.primary.to_dict(), "raspberry": self.raspberry.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "FractionModel":
        return cls(RegressionCurve.from_dict(d["primary"]), RegressionCurve.from_dict(d["raspberry"]))


def fit_fraction_model(series: ClassFractionSeries) -> FractionModel:
    return FractionModel(fit_curve(series.points(PRIMARY)), fit_curve(series.points(RASPBERRY)))


# ---------------------------------------------------------------- distribution trajectories

@dataclass
class ClassTimeModel:
    """Time-dependent bivariate model of (diameter, solidity) for one class.

    ``copula_family is None`` means independence. With ``constant`` set the
    margin curves are flat at the per-step parameter means.
    """

    family_d: str
    curves_d: tuple            # one curve per margin parameter
    family_s: str
    curves_s: tuple
    copula_family: str | None = None
    copula_rotation: int = 0
    curve_theta: RegressionCurve | None = None
    constant: bool = False
    times: tuple = ()
    support_d: tuple = SUPPORTS["diameter"]
    support_s: tuple = SUPPORTS["solidity"]

    def __post_init__(self):
        if len(self.curves_d) != 2 or len(self.curves_s) != 2:
            raise InvalidInputError("each margin needs two parameter curves")
        if (self.copula_family is None) != (self.curve_theta is None):
            raise InvalidInputError("copula family and theta curve must be given together")

    def to_dict(self) -> dict:
        sup = lambda s: [None if math.isinf(x) else x for x in s]  # noqa: E731
        return {
            "family_d": self.family_d, "curves_d": [c.to_dict() for c in self.curves_d],
            "family_s": self.family_s, "curves_s": [c.to_dict() for c in self.curves_s],
            "copula_family": self.copula_family, "copula_rotation": self.copula_rotation,
            "curve_theta": None if self.curve_theta is None else self.curve_theta.to_dict(),
            "constant": self.constant, "times": list(self.times),
            "support_d": sup(self.support_d), "support_s": sup(self.support_s),
        }

    @classmethod
    def from_dict(cls, d) -> "ClassTimeModel":
        def sup(s):
            return (-math.inf if s[0] is None else s[0], math.inf if s[1] is None else s[1])
        th = d.get("curve_theta")
        return cls(d["family_d"], tuple(RegressionCurve.from_dict(c) for c in d["curves_d"]),
                   d["family_s"], tuple(RegressionCurve.from_dict(c) for c in d["curves_s"]),
                   d.get("copula_family"), d.get("copula_rotation", 0),
                   None if th is None else RegressionCurve.from_dict(th),
                   d.get("constant", False), tuple(d.get("times", ())),
                   sup(d["support_d"]), sup(d["support_s"]))


@dataclass
class TimeSeriesModel:
    """Per (experiment, class) trajectories plus optional class-fraction curves."""

    classes: dict = field(default_factory=dict)      # (experiment, class) -> ClassTimeModel
    fractions: dict = field(default_factory=dict)    # experiment -> FractionModel

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION,
                "classes": [{"experiment": e, "class": k, "model": m.to_dict()}
                            for (e, k), m in sorted(self.classes.items())],
                "fractions": {e: f.to_dict() for e, f in sorted(self.fractions.items())}}

    @classmethod
    def from_dict(cls, d) -> "TimeSeriesModel":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported schema version {d.get('schema_version')}")
        classes = {(c["experiment"], int(c["class"])): ClassTimeModel.from_dict(c["model"])
                   for c in d["classes"]}
        fr = {e: FractionModel.from_dict(f) for e, f in d.get("fractions", {}).items()}
        return cls(classes, fr)


def clamp_theta(family: str, theta: float) -> float:
    """Move ``theta`` into the fitting range of ``family`` if it left it."""
    intervals = FIT_BOUNDS[family]
    for lo, hi in intervals:
        if lo <= theta <= hi:
            return theta
    # nearest admissible point
    cands = [min(max(theta, lo), hi) for lo, hi in intervals]
    out = min(cands, key=lambda c: abs(c - theta))
    log.warning("theta %.6g clamped to %.6g for %s", theta, out, family)
    return out


def model_at_time(model: ClassTimeModel, t: float) -> BivariateModel:
    """Bivariate model with every parameter curve evaluated at ``t``."""
    t = float(t)
    if not TIME_RANGE[0] <= t <= TIME_RANGE[1]:
        warnings.warn(f"t={t} outside the fitted range {TIME_RANGE}", ExtrapolationWarning, stacklevel=2)
    pd_ = tuple(float(c(t)) for c in model.curves_d)
    ps = tuple(float(c(t)) for c in model.curves_s)
    md = MarginFit(model.family_d, pd_, model.support_d)
    ms = MarginFit(model.family_s, ps, model.support_s)
    cop = None
    if model.copula_family is not None:
        theta = clamp_theta(model.copula_family, float(model.curve_theta(t)))
        cop = CopulaFit(model.copula_family, model.copula_rotation, theta)
    return BivariateModel(md, ms, cop)


@dataclass
class ClassFitReport:
    """Per-step fits behind a ClassTimeModel."""

    model: ClassTimeModel
    margins_d: dict      # t -> MarginFit
    margins_s: dict
    copulas: dict        # t -> CopulaFit (empty for independence)
    counts: dict         # t -> number of objects


def _param_curves(fits: dict, counts: dict, constant: bool, square_weights: bool):
    ts = sorted(fits)
    params = np.array([fits[t].params for t in ts])
    if constant:
        return tuple(RegressionCurve.constant(params[:, i].mean()) for i in range(2))
    return tuple(fit_curve_weighted([(t, params[j, i], counts[t]) for j, t in enumerate(ts)],
                                     square_weights=square_weights) for i in range(2))


def fit_class_time_model(per_time: dict, primary: bool = False, family_d: str | None = None,
                         family_s: str | None = None, copula=None, constant: bool | None = None,
                         square_weights: bool = True, support_d=SUPPORTS["diameter"],
                         support_s=SUPPORTS["solidity"]) -> ClassFitReport:
    """Two-stage fit of a class observed at several time steps.

    ``per_time`` maps ``t`` to ``(d, s)`` sample arrays. Margin families are
    selected over all steps unless given; the copula (``(family, rotation)``
    or ``None`` to select) is fitted on pseudo-observations of the per-step
    margins. Primary particles use independence and, unless ``constant`` is
    set to False, time-constant margins.
    """
    if len(per_time) < 1:
        raise InvalidInputError("no time steps")
    ts = sorted(per_time)
    ds = {t: np.asarray(per_time[t][0], dtype=float) for t in ts}
    ss = {t: np.asarray(per_time[t][1], dtype=float) for t in ts}
    counts = {t: len(ds[t]) for t in ts}
    if constant is None:
        constant = primary
    if not constant and len(ts) < 3:
        raise InvalidInputError("time regression needs at least 3 time steps")

    def margins(data, fam, support):
        if fam is None:
            sel = select_family(data, support)
            return sel.family, sel.fits
        if fam not in FAMILIES:
            raise InvalidInputError(f"unknown family {fam!r}")
        return fam, {t: fit_mle(x, fam, support) for t, x in data.items()}

    fam_d, fits_d = margins(ds, family_d, support_d)
    fam_s, fits_s = margins(ss, family_s, support_s)
    curves_d = _param_curves(fits_d, counts, constant, square_weights)
    curves_s = _param_curves(fits_s, counts, constant, square_weights)

    cop_fam, cop_rot, curve_th, cops = None, 0, None, {}
    if not primary:
        pairs = {t: BivariateModel(fits_d[t], fits_s[t]).pseudo_obs(ds[t], ss[t]) for t in ts}
        sel = select_copula(pairs, None if copula is None else [tuple(copula)])
        cop_fam, cop_rot, cops = sel.family, sel.rotation, sel.fits
        if len(ts) >= 3:
            curve_th = fit_curve_weighted([(t, cops[t].theta, counts[t]) for t in ts],
                                          square_weights=square_weights)
        else:
            curve_th = RegressionCurve.constant(np.mean([cops[t].theta for t in ts]))
    model = ClassTimeModel(fam_d, curves_d, fam_s, curves_s, cop_fam, cop_rot, curve_th,
                           constant, tuple(ts), tuple(support_d), tuple(support_s))
    return ClassFitReport(model, fits_d, fits_s, cops, counts)
