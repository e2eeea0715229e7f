import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agglo.copula import CopulaFit, joint_density
from agglo.errors import InvalidInputError
from agglo.margins import SUPPORTS, MarginFit
from agglo.temporal import (C3_STARTS, ClassTimeModel, ExtrapolationWarning, FractionModel,
                            FractionRangeWarning, RegressionCurve, TimeSeriesModel,
                            chain_complement, class_fractions, clamp_theta, fit_class_time_model,
                            fit_curve, fit_curve_weighted, fit_fraction_model, model_at_time, zeta)

T = np.arange(10.0, 130.0, 10.0)
# raspberry-like solidity mean per step, experiment A
RASP_A_MU_S = [0.89, 0.87, 0.86, 0.88, 0.87, 0.86, 0.87, 0.87, 0.86, 0.87, 0.87, 0.87]


def mse(curve, t, y):
    return float(np.mean((curve(t) - y) ** 2))


class TestCurve:
    def test_noiseless_recovery(self):
        c = fit_curve(list(zip(T, zeta(T, 0.4, 0.3, 0.05))))
        assert np.allclose([c.c1, c.c2, c.c3], [0.4, 0.3, 0.05], atol=1e-4)
        assert c.sse < 1e-20

    @pytest.mark.parametrize("c1,c2,c3", [(0.1, -0.5, 0.02), (468.0, 50.0, 0.1), (1.8, 1.0, 0.2)])
    def test_noiseless_recovery_other(self, c1, c2, c3):
        c = fit_curve(list(zip(T, zeta(T, c1, c2, c3))))
        assert np.allclose(c(T), zeta(T, c1, c2, c3), rtol=1e-8, atol=1e-10)

    def test_constant(self):
        c = fit_curve([(t, 0.5) for t in T])
        assert np.allclose(c(np.linspace(0, 200, 50)), 0.5, atol=1e-6) and c.sse == 0.0

    def test_noisy(self):
        y = zeta(T, 0.4, 0.3, 0.05) + 0.02 * np.random.default_rng(0).normal(size=T.size)
        c = fit_curve(list(zip(T, y)))
        grid = np.linspace(10, 120, 111)
        assert np.max(np.abs(c(grid) - zeta(grid, 0.4, 0.3, 0.05))) < 0.05

    def test_optimum_beats_every_start(self):
        y = zeta(T, 0.4, 0.3, 0.05) + 0.02 * np.random.default_rng(1).normal(size=T.size)
        c = fit_curve(list(zip(T, y)))
        c1 = y[-1]
        for c3 in C3_STARTS:
            assert c.sse <= mse(RegressionCurve(c1, c1 - y[0], c3), T, y)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-5, 5), st.integers(0, 10_000))
    def test_shift_equivariance(self, delta, seed):
        y = zeta(T, 0.4, 0.3, 0.05) + 0.02 * np.random.default_rng(seed).normal(size=T.size)
        a = fit_curve(list(zip(T, y)))
        b = fit_curve(list(zip(T, y + delta)))
        assert b.c1 == pytest.approx(a.c1 + delta, abs=1e-6)
        assert b.c2 == pytest.approx(a.c2, abs=1e-6)
        assert b.c3 == pytest.approx(a.c3, abs=1e-6)

    def test_rasp_a_solidity_asymptote(self):
        c = fit_curve(list(zip(T, RASP_A_MU_S)))
        assert 0.855 <= c.c1 <= 0.875
        c = fit_curve_weighted([(t, y, 1.0) for t, y in zip(T, RASP_A_MU_S)])
        assert abs(c.c1 - 0.865) <= 0.01

    def test_uniform_weights_match_unweighted(self):
        y = zeta(T, 0.4, 0.3, 0.05) + 0.02 * np.random.default_rng(2).normal(size=T.size)
        a = fit_curve(list(zip(T, y)))
        b = fit_curve_weighted([(t, v, 7.0) for t, v in zip(T, y)])
        assert np.allclose([a.c1, a.c2, a.c3], [b.c1, b.c2, b.c3], atol=1e-7)
        assert b.sse == pytest.approx(49 * T.size * a.sse, rel=1e-6)

    def test_dominant_weight(self):
        y = zeta(T, 0.4, 0.3, 0.05) + 0.02 * np.random.default_rng(3).normal(size=T.size)
        n = np.ones(T.size)
        n[4] = 1e6
        for sq in (True, False):
            c = fit_curve_weighted(list(zip(T, y, n)), square_weights=sq)
            assert abs(c(T[4]) - y[4]) < 1e-3

    def test_weight_placement(self):
        y = zeta(T, 0.4, 0.3, 0.05) + 0.02 * np.random.default_rng(4).normal(size=T.size)
        n = np.arange(1.0, T.size + 1)
        c = fit_curve_weighted(list(zip(T, y, n)))
        assert c.sse == pytest.approx(np.sum(((c(T) - y) * n) ** 2), rel=1e-12)
        c = fit_curve_weighted(list(zip(T, y, n)), square_weights=False)
        assert c.sse == pytest.approx(np.sum(n * (c(T) - y) ** 2), rel=1e-12)

    @pytest.mark.parametrize("pts", [[(10, 1.0), (20, 2.0)], [(10, 1.0), (10, 2.0), (10, 3.0)]])
    def test_degenerate(self, pts):
        with pytest.raises(InvalidInputError):
            fit_curve(pts)

    def test_bad_weights(self):
        with pytest.raises(InvalidInputError):
            fit_curve_weighted([(10, 1.0, 1), (20, 2.0, 0), (30, 2.0, 1)])

    def test_negative_rate_rejected(self):
        with pytest.raises(InvalidInputError):
            RegressionCurve(1.0, 1.0, -0.1)


class TestFractions:
    def test_single_class(self):
        s = class_fractions({10: ([2, 2, 2], [5.0, 1.0, 3.0])})
        assert np.array_equal(s.fractions[0], [0.0, 0.0, 1.0])

    def test_two_objects(self):
        s = class_fractions({10: ([0, 2], [4.0, 4.0])})
        assert np.array_equal(s.fractions[0], [0.5, 0.0, 0.5])

    def test_sums_to_one(self):
        rng = np.random.default_rng(5)
        s = class_fractions({t: (rng.integers(0, 3, 40), rng.uniform(1, 100, 40)) for t in T})
        assert np.allclose(s.fractions.sum(axis=1), 1.0, atol=1e-12)
        assert s.times == tuple(T)

    def test_empty_step(self):
        with pytest.raises(InvalidInputError):
            class_fractions({10: ([], [])})

    def test_complement(self):
        g1, g2 = RegressionCurve.constant(0.3), RegressionCurve.constant(0.5)
        assert chain_complement(g1, g2, 40.0) == pytest.approx(0.2, abs=1e-15)

    def test_complement_warns(self):
        g1, g2 = RegressionCurve.constant(0.7), RegressionCurve.constant(0.5)
        with pytest.warns(FractionRangeWarning):
            assert chain_complement(g1, g2, 40.0) == pytest.approx(-0.2)

    def test_model_sums_to_one(self):
        fm = FractionModel(RegressionCurve(0.2, -0.4, 0.05), RegressionCurve(0.45, 0.4, 0.08))
        f = fm(np.linspace(10, 120, 200))
        assert np.max(np.abs(f.sum(axis=-1) - 1.0)) <= 2e-16

    def test_planted_fractions(self):
        # objects of equal area so fractions are counts; planted from known curves
        g1, g2 = RegressionCurve(0.2, -0.4, 0.05), RegressionCurve(0.45, 0.4, 0.08)
        n, per_t = 2000, {}
        for t in T:
            k1 = round(n * float(g1(t)))
            k2 = round(n * float(g2(t)))
            per_t[t] = (np.array([0] * k1 + [2] * k2 + [1] * (n - k1 - k2)), np.ones(n))
        s = class_fractions(per_t)
        assert np.max(np.abs(s.fractions[:, 0] - g1(T))) <= 0.5 / n
        fm = fit_fraction_model(s)
        direct = fit_curve(s.points(1))
        grid = np.linspace(10, 120, 45)
        assert np.max(np.abs(fm(grid)[:, 1] - direct(grid))) < 0.05
        assert np.max(np.abs(fm(grid)[:, 0] - g1(grid))) < 1e-3


def rasp_truth():
    """Noise-free parameter trajectories for a raspberry-like class."""
    return {"shape": RegressionCurve(0.2, 0.08, 0.15), "scale": RegressionCurve(470.0, 60.0, 0.12),
            "mu": RegressionCurve(0.87, -0.03, 0.1), "sigma": RegressionCurve(0.065, 0.02, 0.1),
            "theta": RegressionCurve(1.8, 1.0, 0.1)}


class TestModelAtTime:
    def _model(self):
        tr = rasp_truth()
        return ClassTimeModel("lognormal", (tr["shape"], tr["scale"]), "normal", (tr["mu"], tr["sigma"]),
                              "clayton", 270, tr["theta"], times=tuple(T))

    def test_showcase_unmeasured_step(self):
        bm = model_at_time(self._model(), 75.0)
        assert bm.copula.family == "clayton" and bm.copula.rotation == 270
        assert bm.margin_d.params[1] == pytest.approx(float(rasp_truth()["scale"](75.0)))
        assert bm.copula.kendall_tau() < 0

    def test_noiseless_curves_reproduce_steps(self):
        tr = rasp_truth()
        rows = {t: [float(tr[k](t)) for k in ("shape", "scale", "mu", "sigma", "theta")] for t in T}
        curves = [fit_curve_weighted([(t, rows[t][i], 100.0) for t in T]) for i in range(5)]
        m = ClassTimeModel("lognormal", tuple(curves[:2]), "normal", tuple(curves[2:4]),
                           "clayton", 270, curves[4])
        for t in T:
            assert np.allclose(model_at_time(m, t).parameter_vector(), rows[t], rtol=1e-6)

    def test_primary_independent(self):
        m = ClassTimeModel("normal", (RegressionCurve.constant(220.0), RegressionCurve.constant(29.0)),
                           "normal", (RegressionCurve.constant(0.96), RegressionCurve.constant(0.01)),
                           constant=True)
        for t in (10.0, 55.0, 120.0):
            bm = model_at_time(m, t)
            d, s = np.meshgrid(np.linspace(150, 300, 7), np.linspace(0.92, 0.99, 7))
            assert np.allclose(joint_density(bm, d, s), bm.margin_d.pdf(d) * bm.margin_s.pdf(s))

    def test_continuity(self):
        m = self._model()
        jumps = []
        for n in (111, 1101):
            grid = np.linspace(10, 120, n)
            vec = np.array([model_at_time(m, t).parameter_vector() for t in grid])
            jumps.append(np.max(np.abs(np.diff(vec, axis=0)) / np.abs(vec).max(axis=0)))
        # jumps shrink in proportion to the step
        assert jumps[1] < 5e-3 and jumps[0] / jumps[1] == pytest.approx(10, rel=0.1)

    def test_theta_clamped(self, caplog):
        m = self._model()
        m.curve_theta = RegressionCurve(-0.5, 0.0, 0.0)
        with caplog.at_level("WARNING"):
            assert model_at_time(m, 50.0).copula.theta == pytest.approx(1e-6)
        assert "clamped" in caplog.text
        assert clamp_theta("gumbel", 0.4) == 1.0
        assert abs(clamp_theta("frank", 0.0)) == pytest.approx(1e-6)
        assert clamp_theta("amh", 1.3) == pytest.approx(1 - 1e-9)

    def test_invalid_margin_after_evaluation(self):
        m = self._model()
        m.curves_s = (m.curves_s[0], RegressionCurve(-0.1, 0.0, 0.0))
        with pytest.raises(InvalidInputError):
            model_at_time(m, 50.0)

    def test_extrapolation_flagged(self):
        with pytest.warns(ExtrapolationWarning):
            model_at_time(self._model(), 150.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            model_at_time(self._model(), 120.0)

    def test_json_round_trip(self):
        tsm = TimeSeriesModel({("A", 2): self._model()},
                              {"A": FractionModel(RegressionCurve(0.2, -0.4, 0.05),
                                                  RegressionCurve(0.45, 0.4, 0.08))})
        back = TimeSeriesModel.from_dict(json.loads(json.dumps(tsm.to_dict())))
        assert back == tsm
        bad = tsm.to_dict()
        bad["schema_version"] = 99
        with pytest.raises(InvalidInputError):
            TimeSeriesModel.from_dict(bad)


class TestFitClassTimeModel:
    def test_synthetic_raspberry(self):
        tr = rasp_truth()
        rng = np.random.default_rng(6)
        ts = T[::2]
        per_t = {}
        for t in ts:
            bm_t = (MarginFit("lognormal", (float(tr["shape"](t)), float(tr["scale"](t))), SUPPORTS["diameter"]),
                    MarginFit("normal", (float(tr["mu"](t)), float(tr["sigma"](t))), SUPPORTS["solidity"]),
                    CopulaFit("clayton", 270, float(tr["theta"](t))))
            u, v = bm_t[2].sample(1500, rng)
            per_t[t] = (bm_t[0].quantile(u), bm_t[1].quantile(v))
        rep = fit_class_time_model(per_t, copula=("clayton", 270))
        m = rep.model
        assert (m.family_d, m.family_s) == ("lognormal", "normal")
        assert set(rep.copulas) == set(ts)
        bm = model_at_time(m, 75.0)
        truth = [float(tr[k](75.0)) for k in ("shape", "scale", "mu", "sigma", "theta")]
        assert np.allclose(bm.parameter_vector(), truth, rtol=0.12)

    def test_primary_constant(self):
        rng = np.random.default_rng(7)
        g = MarginFit("normal", (220.0, 29.0), SUPPORTS["diameter"])
        h = MarginFit("normal", (0.96, 0.01), SUPPORTS["solidity"])
        per_t = {t: (g.sample(500, rng), h.sample(500, rng)) for t in T[:4]}
        rep = fit_class_time_model(per_t, primary=True, family_d="normal", family_s="normal")
        assert rep.model.copula_family is None and rep.model.constant
        mean_mu = np.mean([f.params[0] for f in rep.margins_d.values()])
        assert rep.model.curves_d[0](10.0) == pytest.approx(mean_mu)
        assert rep.model.curves_d[0](120.0) == pytest.approx(mean_mu)
