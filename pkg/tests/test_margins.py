import json
import math

import numpy as np
import pytest
from scipy import integrate, stats

from agglo.errors import FitError, InvalidInputError
from agglo.margins import (FAMILIES, SUPPORTS, MarginFit, fit_mle, select_family,
                           truncated_loglik)

CASES = [
    ("normal", (215.3, 29.01), SUPPORTS["diameter"]),
    ("normal", (0.96, 0.01), SUPPORTS["solidity"]),
    ("normal", (0.87, 0.07), SUPPORTS["solidity"]),
    ("gamma", (33.53, 8.45), SUPPORTS["diameter"]),
    ("lognormal", (0.2, 468.71), SUPPORTS["diameter"]),
    ("lognormal", (0.1, 0.9), SUPPORTS["solidity"]),
    ("gamma", (40.0, 0.02), SUPPORTS["solidity"]),
]


class TestDensity:
    def test_normal_peak(self):
        f = MarginFit("normal", (215.3, 29.01))
        assert f.pdf(215.3) == pytest.approx(1 / (29.01 * math.sqrt(2 * math.pi)), rel=1e-12)

    @pytest.mark.parametrize("family,params,support", CASES)
    def test_quantile_inverts_cdf(self, family, params, support):
        f = MarginFit(family, params, support)
        for u in (0.01, 0.5, 0.99):
            assert f.cdf(f.quantile(u)) == pytest.approx(u, abs=1e-8)

    @pytest.mark.parametrize("family,params,support", CASES)
    def test_integrates_to_one(self, family, params, support):
        f = MarginFit(family, params, support)
        lo, hi = support
        # integrate over the bulk where the density lives, split at the quantiles
        pts = [max(lo, float(f.quantile(1e-12))), float(f.quantile(0.5)), min(hi, float(f.quantile(1 - 1e-12)))]
        total = sum(integrate.quad(f.pdf, a, b, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
                    for a, b in zip(pts[:-1], pts[1:]))
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_truncated_solidity_normal(self):
        f = MarginFit("normal", (0.96, 0.01), (0.0, 1.0))
        val = integrate.quad(f.pdf, 0.0, 1.0, points=[0.9, 0.96, 0.99], epsabs=1e-12)[0]
        assert val == pytest.approx(1.0, abs=1e-6)
        assert f.pdf(1.0001) == 0.0 and f.pdf(-0.1) == 0.0

    def test_bad_quantile(self):
        f = MarginFit("gamma", (2.0, 1.0))
        for u in (0.0, 1.0, -0.2):
            with pytest.raises(InvalidInputError):
                f.quantile(u)

    def test_bad_params(self):
        with pytest.raises(InvalidInputError):
            MarginFit("normal", (1.0, 0.0))
        with pytest.raises(InvalidInputError):
            MarginFit("lognormal", (-1.0, 2.0))
        with pytest.raises(InvalidInputError):
            MarginFit("weibull", (1.0, 1.0))

    @pytest.mark.parametrize("family,params,support", CASES)
    def test_loglik_matches_pointwise_density(self, family, params, support):
        f = MarginFit(family, params, support)
        x = f.sample(300, np.random.default_rng(4))
        assert truncated_loglik(family, params, x, support) == pytest.approx(
            float(np.sum(np.log(f.pdf(x)))), rel=1e-10)

    def test_truncated_mean(self):
        f = MarginFit("normal", (0.9, 0.1), (0.0, 1.0))
        a, b = (0 - 0.9) / 0.1, (1 - 0.9) / 0.1
        assert f.mean() == pytest.approx(stats.truncnorm(a, b, loc=0.9, scale=0.1).mean(), rel=1e-8)

    @pytest.mark.parametrize("family,params,support", CASES + [("gamma", (2.0, 0.4), (0.0, 1.0)),
                                                             ("lognormal", (0.5, 0.6), (0.0, 1.0))])
    def test_mean_matches_quadrature(self, family, params, support):
        f = MarginFit(family, params, support)
        lo, hi = max(support[0], float(f.quantile(1e-13))), min(support[1], float(f.quantile(1 - 1e-13)))
        val = integrate.quad(lambda x: x * f.pdf(x), lo, hi, points=[float(f.quantile(0.5))],
                             epsabs=0, epsrel=1e-12, limit=200)[0]
        assert f.mean() == pytest.approx(val, rel=1e-9)

    def test_dict_roundtrip(self):
        f = MarginFit("lognormal", (0.2, 470.0), SUPPORTS["diameter"], -12.5, 40)
        g = MarginFit.from_dict(json.loads(json.dumps(f.to_dict())))
        assert g == f


class TestFit:
    def test_degenerate(self):
        with pytest.raises(InvalidInputError):
            fit_mle([3.0] * 10, "normal")

    def test_outside_support(self):
        with pytest.raises(InvalidInputError):
            fit_mle([0.5, 0.7, 1.2], "normal", SUPPORTS["solidity"])

    def test_too_few(self):
        with pytest.raises(InvalidInputError):
            fit_mle([1.0, 2.0], "gamma")

    def test_untruncated_normal_is_closed_form(self):
        x = np.random.default_rng(0).normal(3.0, 2.0, 400)
        f = fit_mle(x, "normal")
        assert f.params[0] == pytest.approx(x.mean(), rel=1e-7)
        assert f.params[1] == pytest.approx(x.std(), rel=1e-7)

    def test_untruncated_lognormal_is_closed_form(self):
        x = np.random.default_rng(1).lognormal(5.0, 0.3, 400)
        f = fit_mle(x, "lognormal", SUPPORTS["diameter"])
        assert f.params[0] == pytest.approx(np.log(x).std(), rel=1e-7)
        assert f.params[1] == pytest.approx(np.exp(np.log(x).mean()), rel=1e-7)

    def test_gamma_exponential_data(self):
        x = np.random.default_rng(2).exponential(1.0, 5000)
        f = fit_mle(x, "gamma", SUPPORTS["diameter"])
        assert abs(f.params[0] - 1) < 0.1

    @pytest.mark.parametrize("family,params,support", CASES)
    def test_is_local_maximum(self, family, params, support):
        x = MarginFit(family, params, support).sample(2000, np.random.default_rng(7))
        f = fit_mle(x, family, support)
        base = truncated_loglik(family, f.params, x, support)
        assert base == pytest.approx(f.log_likelihood, rel=1e-12)
        for i in range(2):
            for step in (1e-3, -1e-3):
                p = list(f.params)
                p[i] *= 1 + step
                assert truncated_loglik(family, p, x, support) <= base + 1e-9

    @pytest.mark.parametrize("family,params,support", CASES[:5])
    def test_recovery_at_ten_thousand(self, family, params, support):
        # 5 % at n = 1e4 over 20 seeds, at least 19 passes
        g = MarginFit(family, params, support)
        ok = 0
        for seed in range(20):
            f = fit_mle(g.sample(10_000, np.random.default_rng(1000 + seed)), family, support)
            ok += np.all(np.abs(np.array(f.params) / np.array(params) - 1) <= 0.05)
        assert ok >= 19


class TestSelect:
    def _per_t(self, family, params, support, n=2000, seed=0):
        rng = np.random.default_rng(seed)
        g = MarginFit(family, params, support)
        return {t: g.sample(n, rng) for t in (10, 20, 30)}

    @pytest.mark.parametrize("family,params,support", [
        ("normal", (0.87, 0.07), SUPPORTS["solidity"]),
        ("gamma", (4.0, 50.0), SUPPORTS["diameter"]),
        ("lognormal", (0.5, 300.0), SUPPORTS["diameter"]),
    ])
    def test_self_consistency(self, family, params, support):
        sel = select_family(self._per_t(family, params, support), support)
        assert sel.family == family
        assert all(sel.totals[family] >= v for v in sel.totals.values())
        assert set(sel.fits) == {10, 20, 30}

    def test_single_step_is_best_single_fit(self):
        x = MarginFit("gamma", (3.0, 10.0)).sample(500, np.random.default_rng(3))
        sel = select_family({10: x}, SUPPORTS["diameter"])
        lls = {fam: fit_mle(x, fam, SUPPORTS["diameter"]).log_likelihood for fam in FAMILIES}
        assert sel.family == max(lls, key=lls.get)

    def test_failing_family_removed(self):
        # zero is admissible for the normal but not for the positive families
        x = np.array([0.0, 1.0, 2.0, 1.5, 0.7])
        sel = select_family({1: x}, (0.0, math.inf))
        assert sel.family == "normal" and set(sel.totals) == {"normal"}

    def test_all_fail(self):
        with pytest.raises(FitError):
            select_family({1: np.array([-1.0, 0.0, 2.0])}, (-5.0, 5.0), families=("gamma",))

    def test_empty_step(self):
        with pytest.raises(InvalidInputError):
            select_family({1: []})
