import math

import numpy as np
import pytest

from nsdet.errors import ConfigurationError, DegenerateSystemError
from nsdet.geometry import (
    build_rectangle,
    check_geometry_identities,
    circle_curve,
    ellipse_curve,
    frenet_closed_form,
    frenet_consistency_residual,
    frenet_solve,
    rectangle_curve,
    solve_trace_system,
)


def _u_smooth(x, y):
    return np.sin(x) * np.cos(2 * y) + x**3 * y


def _grad_smooth(x, y):
    return np.cos(x) * np.cos(2 * y) + 3 * x**2 * y, -2 * np.sin(x) * np.sin(2 * y) + x**3


def _hess_smooth(x, y):
    uxx = -np.sin(x) * np.cos(2 * y) + 6 * x * y
    uxy = -2 * np.cos(x) * np.sin(2 * y) + 3 * x**2
    uyy = -4 * np.sin(x) * np.cos(2 * y)
    return uxx, uxy, uyy


class TestRectangle:
    def test_unit_square(self):
        d = build_rectangle(64, 64, 1.0, 1.0)
        assert d.hx == 1 / 64 and d.hy == 1 / 64
        assert d.area == 1.0

    def test_anisotropic(self):
        d = build_rectangle(8, 16, 2.0, 1.0)
        assert d.hx == 0.25 and d.hy == 0.0625

    @pytest.mark.parametrize("args", [(4, 4, 1.0, 1.0), (8, 8, 0.0, 1.0), (8, 8, 1.0, -2.0), (7, 64, 1.0, 1.0)])
    def test_rejects(self, args):
        with pytest.raises(ConfigurationError):
            build_rectangle(*args)


class TestCircle:
    @pytest.mark.parametrize("R", [1.0, 2.0, 0.3])
    def test_curvature_length_turning(self, R):
        c = circle_curve(R, 256)
        assert np.allclose(c.curvature, 1 / R)
        assert c.length == pytest.approx(2 * math.pi * R)
        assert c.total_turning() == pytest.approx(2 * math.pi, abs=1e-12)

    def test_frame_invariants(self):
        c = circle_curve(1.5, 200)
        assert np.max(np.abs(np.linalg.norm(c.tangent, axis=1) - 1)) <= 1e-12
        assert np.max(np.abs(np.linalg.norm(c.normal, axis=1) - 1)) <= 1e-12
        assert np.max(np.abs(np.sum(c.tangent * c.normal, axis=1))) <= 1e-12
        assert np.array_equal(c.normal, np.column_stack([-c.tangent[:, 1], c.tangent[:, 0]]))

    def test_clockwise_outer_normal(self):
        c = circle_curve(1.0, 64)
        assert c.orientation == "clockwise"
        # outer normal points away from the centre
        assert np.all(np.sum(c.normal * c.points, axis=1) > 0)

    def test_rejects_bad_input(self):
        with pytest.raises(ConfigurationError):
            circle_curve(1.0, 8)
        with pytest.raises(ConfigurationError):
            circle_curve(-1.0, 64)


def test_ellipse_turning_and_frame():
    c = ellipse_curve(1.0, 0.5, 512)
    assert c.total_turning() == pytest.approx(2 * math.pi, rel=1e-4)
    assert np.max(np.abs(np.linalg.norm(c.tangent, axis=1) - 1)) <= 1e-12
    assert np.max(np.abs(np.sum(c.tangent * c.normal, axis=1))) <= 1e-12


def test_ellipse_curvature_matches_tangent_rotation():
    # kappa = -(d tau / ds) . n under the clockwise convention
    c = ellipse_curve(1.0, 0.6, 1024)
    dtau = (np.roll(c.tangent, -1, axis=0) - np.roll(c.tangent, 1, axis=0)) / (2 * c.ds)
    kappa_fd = -np.sum(dtau * c.normal, axis=1)
    assert np.max(np.abs(kappa_fd - c.curvature)) < 1e-3


def test_rectangle_curve_corners_excluded():
    d = build_rectangle(16, 16, 2.0, 1.0)
    c = rectangle_curve(d, per_unit=32)
    assert c.length == pytest.approx(6.0)
    assert np.all(c.curvature[c.mask] == 0.0)
    assert c.excluded.sum() > 0
    assert np.max(np.abs(np.linalg.norm(c.tangent, axis=1) - 1)) <= 1e-12


class TestFrenet:
    def test_circle_matches_closed_form(self):
        c = circle_curve(1.0, 256)
        num = frenet_solve(c, 1.0, 0.0, step=1e-3)
        assert np.max(np.abs(num.X - np.cos(c.s))) <= 1e-6
        # the system X' = kappa Y, Y' = -kappa X turns the pair clockwise
        assert np.max(np.abs(num.Y + np.sin(c.s))) <= 1e-6

    def test_closed_form_agrees(self):
        c = circle_curve(2.0, 128)
        num = frenet_solve(c, 0.7, 0.4, step=1e-3)
        ex = frenet_closed_form(c, 0.7, 0.4)
        assert np.max(np.abs(num.X - ex.X)) <= 1e-6
        assert np.max(np.abs(num.Y - ex.Y)) <= 1e-6

    def test_zero_data(self):
        c = circle_curve(1.0, 64)
        sol = frenet_solve(c, 0.0, 1.3)
        assert np.all(sol.X == 0) and np.all(sol.Y == 0)

    @pytest.mark.parametrize("curve", [circle_curve(1.0, 128), ellipse_curve(1.0, 0.4, 256)])
    def test_first_integral(self, curve):
        sol = frenet_solve(curve, 1.3, 0.2, step=1e-3)
        assert np.max(np.abs(sol.X**2 + sol.Y**2 - 1.3**2)) <= 1e-10

    def test_tangent_reproduced(self):
        # with R0 = 1 and theta0 = -pi/2 the pair (X, Y) is the unit tangent
        c = circle_curve(1.0, 128)
        sol = frenet_solve(c, 1.0, -math.pi / 2, step=1e-3)
        assert np.max(np.abs(sol.X - c.tangent[:, 0])) <= 1e-6
        assert np.max(np.abs(sol.Y - c.tangent[:, 1])) <= 1e-6


class TestIdentities:
    def test_circle_vanishing_function(self):
        R = 1.3
        c = circle_curve(R, 256)
        rep = check_geometry_identities(
            c,
            lambda x, y: x**2 + y**2 - R**2,
            lambda x, y: (2 * x, 2 * y),
            lambda x, y: (2.0 + 0 * x, 0 * x, 2.0 + 0 * x),
        )
        assert rep.tangential <= 1e-12
        assert rep.tangential_of_normal <= 1e-3

    def test_constant_function(self):
        c = circle_curve(1.0, 128)
        z = lambda x, y: 0 * x
        rep = check_geometry_identities(c, lambda x, y: 3.0 + 0 * x, lambda x, y: (z(x, y), z(x, y)),
                                        lambda x, y: (z(x, y), z(x, y), z(x, y)))
        assert rep.tangential == rep.second_tangential == rep.tangential_of_normal == 0.0

    def test_linear_function_refinement(self):
        reps = []
        for m in (128, 256):
            c = circle_curve(1.0, m)
            one = lambda x, y: 1.0 + 0 * x
            zero = lambda x, y: 0 * x
            reps.append(check_geometry_identities(c, lambda x, y: x, lambda x, y: (one(x, y), zero(x, y)),
                                                  lambda x, y: (zero(x, y),) * 3))
        for name in ("tangential", "second_tangential", "tangential_of_normal"):
            ratio = getattr(reps[0], name) / getattr(reps[1], name)
            assert ratio == pytest.approx(4.0, rel=0.05)

    @pytest.mark.parametrize("curve_fn", [lambda m: circle_curve(0.8, m), lambda m: ellipse_curve(1.0, 0.6, m)])
    def test_second_order(self, curve_fn):
        r = [check_geometry_identities(curve_fn(m), _u_smooth, _grad_smooth, _hess_smooth) for m in (256, 512)]
        assert r[0].second_tangential / r[1].second_tangential == pytest.approx(4.0, rel=0.3)
        assert r[0].tangential_of_normal / r[1].tangential_of_normal == pytest.approx(4.0, rel=0.3)

    def test_frenet_consistency_second_order(self):
        r1 = frenet_consistency_residual(ellipse_curve(1.0, 0.5, 256))
        r2 = frenet_consistency_residual(ellipse_curve(1.0, 0.5, 512))
        assert r1 / r2 == pytest.approx(4.0, rel=0.3)

    def test_csv_export(self, tmp_path):
        c = circle_curve(1.0, 32)
        rep = check_geometry_identities(c, _u_smooth, _grad_smooth, _hess_smooth)
        c.to_csv(tmp_path / "c.csv", rep.pointwise)
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0].split(",")[:6] == ["s", "x", "y", "tx", "ty", "kappa"]
        assert len(lines) == 33


class TestTraceSystem:
    def test_worked_example(self):
        sol = solve_trace_system((1.0, 0.0), 1.0, 1.0, 0.0)
        assert sol.A == pytest.approx(0.0, abs=1e-15)
        assert sol.B == pytest.approx(-1.0)

    def test_homogeneous(self):
        sol = solve_trace_system((0.6, 0.8), 2.0, 0.0, 0.0)
        assert sol.A == 0.0 and sol.B == 0.0

    def test_determinant_and_back_substitution(self, rng):
        for th in rng.uniform(0, 2 * math.pi, 50):
            t = (math.cos(th), math.sin(th))
            kappa, dv, dw = rng.normal(size=3)
            sol = solve_trace_system(t, kappa, dv, dw)
            assert abs(-sol.det - 1.0) <= 1e-12
            xp, yp = t
            a = yp**2 - xp**2
            b = 2 * xp * yp
            assert a * sol.B + b * sol.A == pytest.approx(kappa * dv, abs=1e-12)
            assert b * sol.B - a * sol.A == pytest.approx(kappa * dw, abs=1e-12)

    def test_rejects_non_unit(self):
        with pytest.raises(DegenerateSystemError):
            solve_trace_system((1.0, 1e-3), 1.0, 1.0, 1.0)
