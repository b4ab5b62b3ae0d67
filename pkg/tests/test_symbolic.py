"""Symbolic oracles for the identities the numerics rely on."""

import numpy as np
import pytest
import sympy as sp

x, y, s = sp.symbols("x y s", real=True)


def _velocity(psi):
    return sp.diff(psi, y), -sp.diff(psi, x)


@pytest.mark.parametrize("psi", [
    sp.sin(sp.pi * x) ** 2 * sp.sin(sp.pi * y) ** 2,
    x**3 * y**2 - sp.exp(x) * sp.cos(2 * y),
    sp.Function("Psi")(x, y),
])
def test_pressure_source_is_twice_hessian_determinant(psi):
    u1, u2 = _velocity(psi)
    adv1 = u1 * sp.diff(u1, x) + u2 * sp.diff(u1, y)
    adv2 = u1 * sp.diff(u2, x) + u2 * sp.diff(u2, y)
    div_adv = sp.diff(adv1, x) + sp.diff(adv2, y)
    trace = sp.diff(u1, x) ** 2 + 2 * sp.diff(u1, y) * sp.diff(u2, x) + sp.diff(u2, y) ** 2
    det = sp.diff(psi, x, 2) * sp.diff(psi, y, 2) - sp.diff(psi, x, y) ** 2
    assert sp.simplify(div_adv - trace) == 0
    assert sp.simplify(trace + 2 * det) == 0
    # so Laplace(p) = -div((u.grad)u) = 2 det(D^2 psi), not det(D^2 psi)
    assert sp.simplify(-div_adv - det) != 0


def test_curl_of_streamfunction_velocity():
    psi = sp.Function("Psi")(x, y)
    u1, u2 = _velocity(psi)
    curl = sp.diff(u1, y) - sp.diff(u2, x)
    assert sp.simplify(curl - (sp.diff(psi, x, 2) + sp.diff(psi, y, 2))) == 0


def test_frenet_closed_form_solves_system():
    R0, th0 = sp.symbols("R0 theta0", real=True)
    kappa = sp.Function("kappa")(s)
    Theta = sp.Integral(kappa, (s, 0, s))
    X = R0 * sp.cos(th0 - Theta)
    Y = R0 * sp.sin(th0 - Theta)
    assert sp.simplify(sp.diff(X, s) - kappa * Y) == 0
    assert sp.simplify(sp.diff(Y, s) + kappa * X) == 0
    assert sp.simplify(X.subs(s, 0) - R0 * sp.cos(th0)) == 0


def test_trace_system_determinant():
    xp, yp = sp.symbols("xp yp", real=True)
    a = yp**2 - xp**2
    b = 2 * xp * yp
    M = sp.Matrix([[a, b], [b, -a]])
    assert sp.expand(M.det() + (xp**2 + yp**2) ** 2) == 0


def test_worked_trace_example_symbolically():
    A, B = sp.symbols("A B")
    xp, yp, kappa, dv, dw = 1, 0, 1, 1, 0
    sol = sp.solve([(yp**2 - xp**2) * B + 2 * xp * yp * A - kappa * dv,
                    2 * xp * yp * B - (yp**2 - xp**2) * A - kappa * dw], [A, B])
    assert sol == {A: 0, B: -1}


def test_numeric_source_matches_symbolic():
    from nsdet.fields import advect, divergence, velocity_from_streamfunction
    from nsdet.geometry import build_rectangle

    psi = sp.sin(sp.pi * x) ** 2 * sp.sin(sp.pi * y) ** 2
    det = sp.diff(psi, x, 2) * sp.diff(psi, y, 2) - sp.diff(psi, x, y) ** 2
    f = sp.lambdify((x, y), 2 * det, "numpy")
    errs = []
    for n in (64, 128):
        d = build_rectangle(n, n)
        X, Y = d.nodes()
        u = velocity_from_streamfunction(sp.lambdify((x, y), psi, "numpy")(X, Y), d)
        xc, yc = d.cell_centers()
        errs.append(np.max(np.abs(-divergence(advect(u)).values - f(xc, yc))[4:-4, 4:-4]))
    assert errs[0] / errs[1] > 3.0
