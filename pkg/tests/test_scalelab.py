"""Parabola fits, power-law fits, extrapolation, exponent checks, comparison."""

import numpy as np
import pytest

from ditscale.errors import ConcaveFitError, ConfigError, NumericalError
from ditscale.fixtures import (BENCHMARK_EXPONENTS, REFERENCE_BUDGETS,
                               REFERENCE_LAWS, benchmark_report, law_points,
                               reference_report)
from ditscale.scalelab import (IsoFlopPoint, ScalingReport, build_report,
                               compare_configs, exponent_sum_check,
                               fit_parabola, fit_power_law, predict,
                               report_from_series)


def points_on_parabola(xs, budget=1e9, noise=0.0, rng=None):
    pts = []
    for x in xs:
        y = (x - 2.0) ** 2 + 1.0
        if noise:
            y += (rng.random() * 2 - 1) * noise
        pts.append(IsoFlopPoint(c=budget, n=int(round(10.0**x)), d=1, loss=y))
    return pts


class TestFitParabola:
    def test_exact_quadratic(self):
        fit = fit_parabola(points_on_parabola([1.0, 2.0, 3.0]))
        assert fit.x_star == pytest.approx(2.0, abs=1e-9)
        assert fit.l_opt == pytest.approx(1.0, abs=1e-9)
        assert fit.residual_rms < 1e-9
        assert fit.n_opt == pytest.approx(100.0, rel=1e-6)

    def test_noisy_vertex_recovery(self):
        rng = np.random.default_rng(0)
        xs = np.linspace(1.0, 3.0, 7)
        fit = fit_parabola(points_on_parabola(xs, noise=0.01, rng=rng))
        assert abs(fit.x_star - 2.0) <= 0.05

    def test_collinear_rejected(self):
        pts = [IsoFlopPoint(c=1e9, n=10**k, d=1, loss=float(k)) for k in (1, 2, 3)]
        with pytest.raises(ConcaveFitError):
            fit_parabola(pts)

    def test_concave_rejected(self):
        pts = [IsoFlopPoint(c=1e9, n=10, d=1, loss=1.0),
               IsoFlopPoint(c=1e9, n=100, d=1, loss=2.0),
               IsoFlopPoint(c=1e9, n=1000, d=1, loss=1.0)]
        with pytest.raises(ConcaveFitError):
            fit_parabola(pts)

    def test_vertex_guard(self):
        # convex but vertex far to the right of the swept range
        pts = [IsoFlopPoint(c=1e9, n=n, d=1, loss=(np.log10(n) - 5.0) ** 2)
               for n in (10, 16, 25)]
        with pytest.raises(NumericalError):
            fit_parabola(pts)

    def test_needs_three_distinct_sizes(self):
        pts = [IsoFlopPoint(c=1e9, n=100, d=1, loss=1.0),
               IsoFlopPoint(c=1e9, n=100, d=1, loss=1.1),
               IsoFlopPoint(c=1e9, n=200, d=1, loss=1.2)]
        with pytest.raises(ConfigError):
            fit_parabola(pts)

    def test_mixed_budgets_rejected(self):
        pts = points_on_parabola([1.0, 2.0]) + points_on_parabola([3.0], budget=2e9)
        with pytest.raises(ConfigError):
            fit_parabola(pts)

    def test_order_invariance(self):
        xs = [1.0, 1.5, 2.0, 2.5, 3.0]
        a = fit_parabola(points_on_parabola(xs))
        b = fit_parabola(points_on_parabola(list(reversed(xs))))
        assert a.x_star == pytest.approx(b.x_star, rel=1e-12)

    def test_d_opt_consistency(self):
        fit = fit_parabola(points_on_parabola([1.0, 2.0, 3.0], budget=6e8))
        assert 6.0 * fit.n_opt * fit.d_opt == pytest.approx(6e8, rel=1e-12)


class TestFitPowerLaw:
    @pytest.mark.parametrize("name", sorted(REFERENCE_LAWS))
    def test_exact_recovery(self, name):
        k, e = REFERENCE_LAWS[name]
        fit = fit_power_law(law_points(k, e))
        assert fit.k == pytest.approx(k, rel=1e-6)
        assert fit.exponent == pytest.approx(e, rel=1e-6)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-9)

    def test_rejects_few_points(self):
        with pytest.raises(ConfigError):
            fit_power_law([(1e17, 1.0), (1e18, 2.0)])

    def test_rejects_nonpositive(self):
        with pytest.raises(ConfigError):
            fit_power_law([(1e17, 1.0), (1e18, -2.0), (1e19, 3.0)])

    def test_noise_robust_exponent(self):
        # 1% multiplicative lognormal noise across 6 budgets: exponent
        # recovered within +-0.01 in at least 95 of 100 seeds
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            pairs = [(c, 0.1 * c**0.5 * np.exp(rng.normal(0, 0.01)))
                     for c in REFERENCE_BUDGETS]
            fit = fit_power_law(pairs)
            hits += abs(fit.exponent - 0.5) <= 0.01
        assert hits >= 95

    def test_domain_recorded(self):
        fit = fit_power_law(law_points(1.0, 0.5))
        assert fit.c_min == pytest.approx(min(REFERENCE_BUDGETS))
        assert fit.c_max == pytest.approx(max(REFERENCE_BUDGETS))


class TestPredict:
    def test_reference_extrapolation(self):
        report = reference_report()
        with pytest.warns(UserWarning):
            n = predict(report.n_law, 1.5e21)
        assert n == pytest.approx(958.3e6, rel=0.02)
        with pytest.warns(UserWarning):
            d = predict(report.d_law, 1.5e21)
        assert 6.0 * n * d == pytest.approx(1.5e21, rel=0.02)

    def test_loss_extrapolation(self):
        report = reference_report()
        with pytest.warns(UserWarning):
            loss = predict(report.l_law, 1.5e21)
        assert loss == pytest.approx(2.3943 * 1.5e21 ** -0.0273, rel=1e-9)
        assert loss == pytest.approx(0.633, abs=5e-3)

    def test_monotonicity(self):
        report = reference_report()
        cs = np.logspace(17, 18.5, 12)
        n_vals = [predict(report.n_law, c) for c in cs]
        l_vals = [predict(report.l_law, c) for c in cs]
        assert all(a < b for a, b in zip(n_vals, n_vals[1:]))   # e > 0 rises
        assert all(a > b for a, b in zip(l_vals, l_vals[1:]))   # e < 0 falls

    def test_inside_domain_no_warning(self):
        import warnings
        report = reference_report()
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            predict(report.n_law, 5e17)


class TestExponentChecks:
    def test_reference_sum(self):
        diag = exponent_sum_check(reference_report())
        assert diag.exponent_sum == pytest.approx(1.0, abs=1e-4)
        assert diag.data_to_model_ratio == pytest.approx(0.4319 / 0.5681, abs=1e-4)
        assert diag.consistent

    def test_consistent_by_construction(self):
        # synthetic optima satisfying C = 6 N D exactly: exponents sum to 1
        budgets = [1e15, 1e16, 1e17, 1e18]
        n = [0.01 * c**0.55 for c in budgets]
        d = [c / (6 * ni) for c, ni in zip(budgets, n)]
        loss = [3.0 * c**-0.05 for c in budgets]
        report = report_from_series(budgets, n, d, loss)
        diag = exponent_sum_check(report)
        assert abs(diag.exponent_sum - 1.0) < 1e-9
        assert diag.consistent

    def test_perturbed_flagged(self):
        budgets = [1e15, 1e16, 1e17, 1e18]
        n = [0.01 * c**0.55 for c in budgets]
        d = [c**0.50 for c in budgets]  # deliberately off by 0.05
        loss = [3.0 * c**-0.05 for c in budgets]
        report = report_from_series(budgets, n, d, loss)
        assert not exponent_sum_check(report).consistent


class TestBuildReport:
    @staticmethod
    def synthetic_points(rng=None, budgets=(1e9, 1e10, 1e11, 1e12), noise=0.0):
        # losses from an explicit quadratic valley whose vertex drifts like a
        # power law in budget
        pts = []
        for c in budgets:
            x_opt = 0.5 * np.log10(c) - 2.0
            for x in np.linspace(x_opt - 1.0, x_opt + 1.0, 5):
                y = 0.4 * (x - x_opt) ** 2 + 3.0 * c**-0.02
                if noise:
                    y += (rng.random() * 2 - 1) * noise
                pts.append(IsoFlopPoint(c=c, n=int(round(10.0**x)), d=1,
                                        loss=float(y)))
        return pts

    def test_noiseless_recovery(self):
        report = build_report(self.synthetic_points())
        assert len(report.parabolas) == 4
        assert not report.excluded
        assert report.n_law.exponent == pytest.approx(0.5, abs=2e-3)
        assert report.l_law.exponent == pytest.approx(-0.02, abs=1e-3)
        diag = exponent_sum_check(report)
        assert diag.consistent

    def test_bad_budget_excluded(self):
        pts = self.synthetic_points()
        # poison one budget with a concave pattern
        pts = [p for p in pts if p.c != 1e9]
        pts += [IsoFlopPoint(c=1e9, n=10, d=1, loss=1.0),
                IsoFlopPoint(c=1e9, n=100, d=1, loss=2.0),
                IsoFlopPoint(c=1e9, n=1000, d=1, loss=1.5)]
        report = build_report(pts)
        assert 1e9 in report.excluded
        assert len(report.parabolas) == 3

    def test_too_few_budgets_raises(self):
        pts = self.synthetic_points(budgets=(1e9, 1e10))
        with pytest.raises(NumericalError):
            build_report(pts)

    def test_consistency_across_domain(self):
        report = build_report(self.synthetic_points())
        for c in np.logspace(9.2, 11.8, 7):
            n = predict(report.n_law, c)
            d = predict(report.d_law, c)
            assert 6.0 * n * d == pytest.approx(c, rel=0.02)

    def test_fid_law(self):
        pts = self.synthetic_points()
        fid = {c: 1e4 * c**-0.2 for c in (1e9, 1e10, 1e11, 1e12)}
        report = build_report(pts, fid_by_budget=fid)
        assert report.fid_law is not None
        assert report.fid_law.exponent == pytest.approx(-0.2, abs=1e-6)


class TestReportSerialization:
    def test_round_trip(self, tmp_path):
        report = build_report(TestBuildReport.synthetic_points())
        path = tmp_path / "report.json"
        report.save(path)
        clone = ScalingReport.load(path)
        assert clone.n_law == report.n_law
        assert clone.l_law == report.l_law
        assert set(clone.parabolas) == set(report.parabolas)
        b = sorted(report.parabolas)[0]
        assert clone.parabolas[b] == report.parabolas[b]

    def test_optima_csv_bitwise(self):
        report = build_report(TestBuildReport.synthetic_points())
        lines = report.optima_csv().strip().splitlines()[1:]
        for line, b in zip(lines, sorted(report.parabolas)):
            c_str, n_str, d_str, l_str = line.split(",")
            assert float(c_str) == b
            assert float(n_str) == report.parabolas[b].n_opt
            assert float(d_str) == report.parabolas[b].d_opt
            assert float(l_str) == report.parabolas[b].l_opt


class TestCompare:
    def test_benchmark_table(self):
        a = benchmark_report("in_context")
        b = benchmark_report("cross_attention")
        comparison = compare_configs(a, b, "in_context", "cross_attention")
        (ra, rb) = comparison.rows
        assert (round(ra.model_exponent, 2), round(ra.data_exponent, 2),
                round(ra.loss_exponent, 4)) == BENCHMARK_EXPONENTS["in_context"]
        assert (round(rb.model_exponent, 2), round(rb.data_exponent, 2),
                round(rb.loss_exponent, 4)) == BENCHMARK_EXPONENTS["cross_attention"]
        text = comparison.as_text()
        assert "favors cross_attention" in text

    def test_identical_reports(self):
        a = benchmark_report("in_context")
        comparison = compare_configs(a, a, "x", "y")
        assert any("indistinguishable" in v for v in comparison.verdicts)

    def test_mismatched_domains_rejected(self):
        a = benchmark_report("in_context")
        b = benchmark_report("cross_attention", budgets=(1e18, 1e19, 1e20))
        with pytest.raises(ConfigError):
            compare_configs(a, b)
