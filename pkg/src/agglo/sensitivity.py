"""Bootstrap sensitivity of the bivariate fit to the number of objects.

For each sub-sample size ``n_b`` the data are resampled with replacement,
the margins and the copula parameter are refitted with the reference
families held fixed, and the refit is compared with the reference through
the relative error of the margin means and the L1 distance of the copula
densities.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .copula import BivariateModel, CopulaFit, fit_theta, select_copula
from .errors import AggloError, InvalidInputError
from .margins import SUPPORTS, fit_mle, select_family

DEFAULT_GRID = tuple(range(5, 141, 15))      # 5, 20, ..., 140
DEFAULT_REPLICATES = 1000
L1_NODES = 128
L1_EPS = 1e-6
DROP_LIMIT = 0.05
METRICS = ("ape_d", "ape_s", "l1")


def bootstrap_sample(d, s, n_b: int, rng):
    """``n_b`` pairs drawn uniformly with replacement."""
    d = np.asarray(d, dtype=float)
    s = np.asarray(s, dtype=float)
    if len(d) == 0 or len(d) != len(s):
        raise InvalidInputError("data must be non-empty pairs")
    if n_b < 1:
        raise InvalidInputError("n_b must be >= 1")
    idx = rng.integers(0, len(d), size=n_b)
    return d[idx], s[idx]


def ape(reference: float, value: float) -> float:
    if reference == 0:
        raise InvalidInputError("reference mean is zero")
    return abs(value - reference) / abs(reference)


def ape_margins(reference: BivariateModel, refit: BivariateModel) -> tuple[float, float]:
    return (ape(reference.margin_d.mean(), refit.margin_d.mean()),
            ape(reference.margin_s.mean(), refit.margin_s.mean()))


def _gl_grid(n=L1_NODES, eps=L1_EPS):
    x, w = np.polynomial.legendre.leggauss(n)
    half = (1 - 2 * eps) / 2
    return eps + half * (x + 1), w * half


def copula_l1(reference: CopulaFit | None, refit: CopulaFit | None, n: int = L1_NODES,
              eps: float = L1_EPS) -> float:
    """``int int |c - c~|`` over the unit square (``None`` is the independence copula).

    Tensor Gauss-Legendre on ``[eps, 1 - eps]^2``; the strip left out has
    area below ``4 * eps`` times the density there.
    """
    x, w = _gl_grid(n, eps)
    U, V = np.meshgrid(x, x, indexing="ij")
    a = np.ones_like(U) if reference is None else reference.pdf(U, V)
    b = np.ones_like(U) if refit is None else refit.pdf(U, V)
    return float(np.sum(np.abs(a - b) * np.outer(w, w)))


def refit(reference: BivariateModel, d, s) -> BivariateModel:
    """Refit parameters on ``(d, s)`` keeping the families of ``reference``."""
    md = fit_mle(d, reference.margin_d.family, reference.margin_d.support)
    ms = fit_mle(s, reference.margin_s.family, reference.margin_s.support)
    cop = None
    if reference.copula is not None:
        u, v = BivariateModel(md, ms).pseudo_obs(d, s)
        cop = fit_theta(reference.copula.family, reference.copula.rotation, u, v)
    return BivariateModel(md, ms, cop)


def fit_reference(d, s, primary: bool = False, family_d=None, family_s=None, copula=None,
                  support_d=SUPPORTS["diameter"], support_s=SUPPORTS["solidity"]) -> BivariateModel:
    """Reference model on the full data; families not given are selected."""
    md = fit_mle(d, family_d, support_d) if family_d else select_family({0: d}, support_d).fits[0]
    ms = fit_mle(s, family_s, support_s) if family_s else select_family({0: s}, support_s).fits[0]
    cop = None
    if not primary:
        u, v = BivariateModel(md, ms).pseudo_obs(d, s)
        sel = select_copula({0: (u, v)}, None if copula is None else [tuple(copula)])
        cop = sel.fits[0]
    return BivariateModel(md, ms, cop)


@dataclass
class SensitivityReport:
    seed: int
    replicates: int
    grid: tuple
    rows: list = field(default_factory=list)    # dicts: class, n_b, metric, mean, std, n_dropped
    flagged: list = field(default_factory=list)  # (class, n_b) with too many failed refits

    def series(self, cls, metric) -> np.ndarray:
        """Mean of ``metric`` along the grid for one class."""
        return np.array([r["mean"] for r in self.rows if r["class"] == cls and r["metric"] == metric])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# agglo sensitivity v1 replicates={self.replicates} seed={self.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "n_b", "metric", "mean", "std", "n_dropped"])
        for r in self.rows:
            w.writerow([r["class"], r["n_b"], r["metric"], repr(r["mean"]), repr(r["std"]), r["n_dropped"]])
        return buf.getvalue()


def _replicate_seed(seed, cls_index, n_b, rep):
    return np.random.SeedSequence([seed, cls_index, n_b, rep])


def _run_block(args):
    """Scores for a block of replicates; failures come back as ``None``."""
    reference, d, s, n_b, seed, cls_index, reps = args
    out = []
    for rep in reps:
        rng = np.random.default_rng(_replicate_seed(seed, cls_index, n_b, rep))
        db, sb = bootstrap_sample(d, s, n_b, rng)
        try:
            m = refit(reference, db, sb)
        except AggloError:
            out.append(None)
            continue
        ad, as_ = ape_margins(reference, m)
        l1 = copula_l1(reference.copula, m.copula) if reference.copula is not None else math.nan
        out.append((ad, as_, l1))
    return out


def sensitivity_sweep(data: dict, references: dict, grid=DEFAULT_GRID,
                      replicates: int = DEFAULT_REPLICATES, seed: int = 0,
                      threads: int = 1) -> SensitivityReport:
    """Bootstrap sweep over ``grid`` for every class in ``data``.

    ``data`` maps a class name to ``(d, s)`` arrays and ``references`` maps
    it to the model fitted on all of them. Classes whose reference has no
    copula skip the L1 score. Every replicate draws from its own seed
    derived from ``(seed, class, n_b, replicate)``, so the result does not
    depend on ``threads``.
    """
    grid = tuple(int(g) for g in grid)
    if replicates < 1 or not grid or min(grid) < 1:
        raise InvalidInputError("need replicates >= 1 and a grid of positive sizes")
    jobs, keys = [], []
    for ci, name in enumerate(sorted(data)):
        d, s = (np.asarray(a, dtype=float) for a in data[name])
        if len(d) < max(grid):
            raise InvalidInputError(f"class {name!r} has {len(d)} objects, fewer than n_b={max(grid)}")
        for n_b in grid:
            blocks = np.array_split(np.arange(replicates), max(1, min(threads, replicates)))
            for b in blocks:
                jobs.append((references[name], d, s, n_b, seed, ci, b.tolist()))
                keys.append((name, n_b))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_run_block, jobs))
    else:
        results = [_run_block(j) for j in jobs]

    collected = {}
    for key, res in zip(keys, results):
        collected.setdefault(key, []).extend(res)
    report = SensitivityReport(seed, replicates, grid)
    for name in sorted(data):
        with_copula = references[name].copula is not None
        for n_b in grid:
            res = collected[(name, n_b)]
            ok = np.array([r for r in res if r is not None]).reshape(-1, 3)
            dropped = len(res) - len(ok)
            if dropped > DROP_LIMIT * len(res):
                report.flagged.append((name, n_b))
            for j, metric in enumerate(METRICS):
                if metric == "l1" and not with_copula:
                    continue
                col = ok[:, j]
                mean = float(col.mean()) if len(col) else math.nan
                std = float(col.std()) if len(col) else math.nan
                report.rows.append({"class": name, "n_b": n_b, "metric": metric, "mean": mean,
                                    "std": std, "n_dropped": dropped})
    return report
