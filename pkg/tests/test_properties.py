import math

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nsdet.experiments import covering_counts
from nsdet.fields import ScalarField, VelocityField, divergence, gradient, inner, norm, vector_laplacian
from nsdet.functionals import dimension_bound, grashof_number, required_functional_count
from nsdet.geometry import build_rectangle, solve_trace_system
from nsdet.io import decode_field, encode_field
from nsdet.pressure import inertial_pressure
from nsdet.solver import project, scaled_divergence

D = build_rectangle(12, 8, 1.5, 1.0)
floats = st.floats(-10, 10, allow_nan=False, width=64)
SETTINGS = dict(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])


def velocity(seed_arr_u, seed_arr_v):
    return VelocityField(seed_arr_u, seed_arr_v, D)


u_arrays = arrays(np.float64, (13, 8), elements=floats)
v_arrays = arrays(np.float64, (12, 9), elements=floats)
c_arrays = arrays(np.float64, (12, 8), elements=floats)


@settings(**SETTINGS)
@given(u_arrays, v_arrays)
def test_projection_idempotent(u, v):
    w = velocity(u, v)
    p1, _ = project(w)
    p2, _ = project(p1)
    scale = max(w.max_abs(), 1.0)
    assert scaled_divergence(p1) <= 1e-8 or p1.max_abs() <= 1e-12 * scale
    assert np.max(np.abs(p2.u - p1.u)) <= 1e-10 * scale
    assert norm(p1) <= norm(w.with_zero_normal()) * (1 + 1e-12) + 1e-12


@settings(**SETTINGS)
@given(c_arrays, u_arrays, v_arrays)
def test_adjointness(c, u, v):
    phi = ScalarField(c, D)
    w = velocity(u, v).with_zero_normal()
    lhs, rhs = inner(gradient(phi), w), -inner(phi, divergence(w))
    assert abs(lhs - rhs) <= 1e-12 * (norm(gradient(phi)) * norm(w) + norm(phi) * norm(divergence(w)) + 1e-300)


@settings(**SETTINGS)
@given(u_arrays, v_arrays, u_arrays, v_arrays, floats, floats)
def test_operators_linear(u1, v1, u2, v2, a, b):
    w1, w2 = velocity(u1, v1), velocity(u2, v2)
    combo = w1 * a + w2 * b
    for op in (divergence,):
        lhs = op(combo).values
        rhs = a * op(w1).values + b * op(w2).values
        assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * (1 + np.max(np.abs(lhs))))
    lhs = vector_laplacian(combo).u
    rhs = a * vector_laplacian(w1).u + b * vector_laplacian(w2).u
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * (1 + np.max(np.abs(lhs))))


@settings(**SETTINGS)
@given(u_arrays, v_arrays, st.sampled_from([2.0, 3.0, 0.5, -1.0]))
def test_inertial_pressure_quadratic(u, v, alpha):
    w, _ = project(velocity(u, v))
    base = inertial_pressure(w)
    scaled = inertial_pressure(w * alpha)
    ref = norm(base)
    assert norm(scaled - base * alpha**2) <= 1e-10 * alpha**2 * ref + 1e-13


@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(1e-3, 10))
def test_dimension_bound_monotone(g1, g2, clt):
    lo, hi = sorted((g1, g2))
    assert dimension_bound(lo, clt) <= dimension_bound(hi, clt)
    assert dimension_bound(hi, clt) <= dimension_bound(hi, clt * 2)


@given(st.floats(0, 1e6))
def test_required_count_strict(dbound):
    c = required_functional_count(dbound)
    d = c.n_pressure // 2
    assert c.n_pressure % 2 == 0 and d > dbound and d - 1 <= dbound + 1e-6


@settings(**SETTINGS)
@given(u_arrays, v_arrays, st.floats(1e-3, 10), st.floats(1e-3, 10))
def test_grashof_monotone_in_inverse_nu(u, v, nu1, nu2):
    g = velocity(u, v)
    lo, hi = sorted((nu1, nu2))
    assert grashof_number(g, hi, D) <= grashof_number(g, lo, D)


@given(st.floats(0, 2 * math.pi), floats, floats, floats)
def test_trace_determinant(theta, kappa, dv, dw):
    sol = solve_trace_system((math.cos(theta), math.sin(theta)), kappa, dv, dw)
    assert abs(-sol.det - 1.0) <= 1e-12


@settings(**SETTINGS)
@given(arrays(np.float64, (13, 8)), arrays(np.float64, (12, 9)))
def test_dfld_round_trip_any_bits(u, v):
    w = VelocityField.__new__(VelocityField)
    w.u, w.v, w.domain = u, v, D
    back, end = decode_field(encode_field(w), Lx=1.5, Ly=1.0)
    assert back.u.tobytes() == u.tobytes() and back.v.tobytes() == v.tobytes()


@settings(**SETTINGS)
@given(arrays(np.float64, (60, 2), elements=st.floats(-5, 5)), st.data())
def test_covering_monotone_under_deletion(X, data):
    keep = data.draw(st.lists(st.booleans(), min_size=60, max_size=60))
    sub = X[np.array(keep)]
    if sub.shape[0] == 0:
        return
    scales = [0.1, 0.5, 1.0, 2.0]
    for method in ("grid",):
        full, part = covering_counts(X, scales, method), covering_counts(sub, scales, method)
        assert all(p <= f for p, f in zip(part, full))
