import numpy as np
import pytest

from perclang.analysis import (
    Curve,
    DegenerateCurveError,
    NoOverlapError,
    bilinear_fit,
    collapse_scan,
    powerlaw_fit,
)


def knee(u_lo=1.5, u_hi=4.5, n=800, knot=3.0, slope=0.2, sigma=0.01, seed=0):
    rng = np.random.default_rng(seed)
    u = np.linspace(u_lo, u_hi, n)
    y = np.where(u < knot, 0.0, slope * (u - knot)) + rng.normal(0, sigma, u.size)
    return Curve(10.0**u, y, 1.0)


class TestBilinearFit:
    def test_exact_piecewise_linear_recovers_knot_and_zero_mse(self):
        u = np.linspace(1, 5, 41)
        y = np.where(u < 3, 0.1, 0.1 + 0.5 * (u - 3))
        fit = bilinear_fit(Curve(10.0**u, y, 1.0))
        assert fit.breakpoint == pytest.approx(1000.0, rel=1e-6)
        assert fit.mse < 1e-20
        assert fit.left_slope == pytest.approx(0.0, abs=1e-9)
        assert fit.right_slope == pytest.approx(0.5, rel=1e-9)

    def test_noisy_knee_within_five_percent(self):
        fit = bilinear_fit(knee(seed=0))
        assert abs(fit.breakpoint - 1000) / 1000 < 0.05

    def test_constant_curve_rejected(self):
        u = np.linspace(1, 4, 30)
        with pytest.raises(DegenerateCurveError):
            bilinear_fit(Curve(10.0**u, np.full(30, 0.7), 1.0))

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            bilinear_fit(Curve(np.geomspace(1, 10, 5), np.arange(5.0), 1.0))

    def test_never_worse_than_single_line(self):
        for seed in range(8):
            curve = knee(n=120, seed=seed, sigma=0.05)
            fit = bilinear_fit(curve)
            u = np.log10(curve.x)
            line = np.polyfit(u, curve.y, 1)
            line_mse = float(np.mean((curve.y - np.polyval(line, u)) ** 2))
            assert fit.mse <= line_mse + 1e-15

    def test_breakpoint_strictly_inside_range(self):
        fit = bilinear_fit(knee())
        assert knee().x[0] < fit.breakpoint < knee().x[-1]


class TestPowerLawFit:
    def test_exact_recovery(self):
        pts = [(x, 2.0 * x**1.5) for x in np.geomspace(0.5, 500, 12)]
        fit = powerlaw_fit(pts)
        assert fit.exponent == pytest.approx(1.5, abs=1e-12)
        assert fit.prefactor == pytest.approx(2.0, rel=1e-9)
        assert fit.residual < 1e-18

    def test_noisy_recovery_within_tolerance(self):
        rng = np.random.default_rng(7)
        pts = [
            (x, 3.0 * x**0.5 * float(np.exp(rng.normal(0, 0.05))))
            for x in np.geomspace(1, 1e4, 25)
        ]
        fit = powerlaw_fit(pts)
        assert abs(fit.exponent - 0.5) < 0.05

    def test_nonpositive_point_rejected(self):
        with pytest.raises(ValueError):
            powerlaw_fit([(1.0, 1.0), (2.0, -1.0), (3.0, 2.0)])

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            powerlaw_fit([(1.0, 1.0), (2.0, 2.0)])


def sigmoid_family(alpha, beta=0.0, labels=(50, 80, 120, 200, 320, 500)):
    curves = []
    for k in labels:
        x = np.geomspace(10, 1e8, 120)
        y = 1.0 / (1.0 + np.exp(-2.0 * np.log10(x / k**alpha)))
        curves.append(Curve(x, y * k**beta, float(k)))
    return curves


class TestCollapseScan:
    def test_recovers_generating_exponent(self):
        for alpha_true in (0.5, 1.5):
            res = collapse_scan(sigmoid_family(alpha_true))
            assert abs(res.alpha - alpha_true) <= 0.1

    def test_identical_curves_prefer_zero(self):
        curves = [
            Curve(np.geomspace(1, 1e6, 60), np.linspace(0, 1, 60), float(k))
            for k in (10, 100, 1000)
        ]
        res = collapse_scan(curves)
        assert res.alpha == 0.0

    def test_y_rescaling_recovery(self):
        res = collapse_scan(
            sigmoid_family(1.0, beta=0.5),
            alpha_grid=np.arange(0, 2.51, 0.25),
            beta_grid=np.arange(0, 1.01, 0.25),
        )
        assert res.alpha == pytest.approx(1.0, abs=0.25)
        assert res.beta == pytest.approx(0.5, abs=1e-12)

    def test_score_invariant_to_curve_order_and_joint_x_scaling(self):
        curves = sigmoid_family(1.5)
        res_a = collapse_scan(curves)
        res_b = collapse_scan(list(reversed(curves)))
        assert res_a.alpha == res_b.alpha
        assert res_a.score == pytest.approx(res_b.score, rel=1e-12)
        scaled = [Curve(c.x * 7.3, c.y, c.label) for c in curves]
        res_c = collapse_scan(scaled)
        assert res_c.alpha == res_a.alpha
        assert res_c.score == pytest.approx(res_a.score, rel=1e-9)

    def test_no_overlap_raises(self):
        a = Curve(np.array([1.0, 2.0, 3.0]), np.zeros(3), 10.0)
        b = Curve(np.array([1.0, 2.0, 3.0]), np.zeros(3), 1e6)
        with pytest.raises(NoOverlapError):
            collapse_scan([a, b], alpha_grid=[2.0, 2.5])

    def test_infeasible_cells_marked_infinite(self):
        curves = sigmoid_family(0.5, labels=(10, 10000))
        res = collapse_scan(curves, alpha_grid=[0.0, 0.5, 2.5])
        table = {alpha: score for alpha, _, score in res.table}
        assert np.isinf(table[2.5])
        assert np.isfinite(table[0.5])

    def test_needs_distinct_labels(self):
        c = sigmoid_family(0.5)[0]
        with pytest.raises(ValueError):
            collapse_scan([c, c])
