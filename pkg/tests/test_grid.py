import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_fields
from inls.grid import (GridMismatchError, NonFiniteFieldError, RadialField, default_radius, h1_inner, h1_norm,
                       integrate_weighted, l2_inner, laplacian_radial, make_grid, sphere_area)
from inls.model import ParameterError

PI32 = math.pi**1.5


@pytest.mark.parametrize(
    "N,R,a,expected",
    [(3, 1.0, 0.0, 4 * math.pi / 3), (3, 1.0, 1.0, math.pi), (2, 2.0, 0.0, 4 * math.pi)],
)
def test_constant_integrals(N, R, a, expected):
    g = make_grid(N, R, 2048)
    assert integrate_weighted(g, np.ones(g.M), a) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("N", range(2, 13))
def test_ball_volume_all_dimensions(N):
    g = make_grid(N, 3.0, 64)
    vol = sphere_area(N) * 3.0**N / N
    assert abs(integrate_weighted(g, np.ones(g.M)) - vol) <= 1e-10 * vol


@pytest.mark.parametrize("k", [0, 1, 2, 3, 4])
def test_power_weights_exact(k):
    g = make_grid(3, 2.0, 37)
    exact = 4 * math.pi * 2.0 ** (3 + k) / (3 + k)
    assert integrate_weighted(g, np.ones(g.M), float(k)) == pytest.approx(exact, rel=1e-12)


def test_weights_nonnegative():
    g = make_grid(4, 5.0, 100)
    for a in (0.0, 0.5, 1.0, 2.0, 7.3):
        assert np.all(g.quad_weights(a) >= 0)
    with pytest.raises(ParameterError):
        g.quad_weights(-1.0)


@pytest.mark.parametrize(
    "f,a,expected",
    [(lambda r: np.exp(-r * r), 0.0, PI32), (lambda r: np.exp(-2 * r * r), 1.0, math.pi / 2),
     (lambda r: 0.0 * r, 0.0, 0.0)],
)
def test_gaussian_integrals(f, a, expected):
    g = make_grid(3, 12.0, 4096)
    assert integrate_weighted(g, f(np.asarray(g.nodes)), a) == pytest.approx(expected, rel=1e-5, abs=1e-14)


def test_nonfinite_integrand_rejected():
    g = make_grid(3, 1.0, 32)
    v = np.ones(g.M)
    v[3] = np.nan
    with pytest.raises(NonFiniteFieldError):
        integrate_weighted(g, v)


@pytest.mark.parametrize("kw", [dict(N=1, R=1.0, M=32), dict(N=3, R=0.0, M=32), dict(N=3, R=1.0, M=15),
                                dict(N=13, R=1.0, M=32), dict(N=3, R=float("inf"), M=32)])
def test_grid_domain_errors(kw):
    with pytest.raises(ParameterError):
        make_grid(**kw)


def test_default_radius():
    assert default_radius(1.0) == 12.0
    assert default_radius(0.25) == 20.0
    assert default_radius(100.0) == 12.0


def test_laplacian_of_paraboloid_interior():
    R = 4.0
    g = make_grid(3, R, 400)
    u = RadialField.from_function(g, lambda r: 1 - r**2 / R**2)
    lap = laplacian_radial(u).values
    interior = np.asarray(g.nodes) < 0.9 * R
    assert np.allclose(lap[interior], -2 * 3 / R**2, rtol=1e-10)


def _gauss_lap_error(M):
    g = make_grid(3, 12.0, M)
    r = np.asarray(g.nodes)
    u = RadialField.from_function(g, lambda s: np.exp(-0.5 * s * s))
    return np.max(np.abs(u.laplacian().values - (r * r - 3) * np.exp(-0.5 * r * r)))


def test_laplacian_gaussian_second_order():
    e1, e2 = _gauss_lap_error(1024), _gauss_lap_error(2048)
    assert e1 < 1e-3
    assert 3.6 < e1 / e2 < 4.4


def test_laplacian_negative_and_adjoint():
    g = make_grid(3, 8.0, 512)
    fields = random_fields(g, 20, seed=1)
    for u in fields:
        assert np.real(l2_inner(laplacian_radial(u), u)) <= 0
    for u, v in zip(fields[:-1], fields[1:]):
        lhs = l2_inner(laplacian_radial(u), v)
        rhs = l2_inner(u, laplacian_radial(v))
        assert abs(lhs - rhs) <= 1e-8 * h1_norm(u) * h1_norm(v)


def test_gradient_norm_matches_laplacian_pairing():
    g = make_grid(3, 8.0, 512)
    for u in random_fields(g, 5, seed=2, complex_=True):
        k = g.gradient_norm_sq(u.values)
        assert abs(-l2_inner(laplacian_radial(u), u) - k) <= 1e-10 * abs(k)


def test_h1_inner_examples():
    g = make_grid(3, 12.0, 4096)
    u = RadialField.from_function(g, lambda r: np.exp(-0.5 * r * r))
    assert h1_inner(u, u).real == pytest.approx(2.5 * PI32, rel=1e-5)
    assert h1_inner(u, u).real >= 0
    fs = random_fields(g, 6, seed=3, complex_=True)
    for a, b in zip(fs[:-1], fs[1:]):
        assert h1_inner(a, b) == pytest.approx(np.conj(h1_inner(b, a)), rel=1e-13)


def test_grid_mismatch():
    u = RadialField(make_grid(3, 1.0, 32), np.ones(32))
    v = RadialField(make_grid(3, 2.0, 32), np.ones(32))
    with pytest.raises(GridMismatchError):
        h1_inner(u, v)
    with pytest.raises(GridMismatchError):
        u + v


def test_field_is_immutable_and_checked():
    g = make_grid(3, 1.0, 32)
    raw = np.ones(32)
    u = RadialField(g, raw)
    raw[0] = 5.0
    assert u.values[0] == 1.0
    with pytest.raises(ValueError):
        u.values[0] = 2.0
    with pytest.raises(ValueError):
        RadialField(g, np.ones(31))
    bad = RadialField(g, np.full(32, np.inf))
    assert not bad.is_finite
    with pytest.raises(NonFiniteFieldError):
        bad.require_finite()


def test_csv_round_trip_exact():
    g = make_grid(3, 7.3, 64)
    rng = np.random.default_rng(0)
    u = RadialField(g, rng.standard_normal(64) + 1j * rng.standard_normal(64))
    text = u.to_csv()
    assert text.splitlines()[0] == "r,re,im"
    back = RadialField.from_csv(io.StringIO(text), 3)
    assert back.grid.M == 64 and back.grid.R == pytest.approx(7.3, rel=1e-15)
    assert np.array_equal(back.values, u.values)


def test_dilated_grid_scales_functionals_exactly():
    g = make_grid(3, 10.0, 256)
    u = random_fields(g, 1, seed=4)[0]
    mu = 1.37
    v = RadialField(g.dilated(mu), u.values)
    assert np.sum(v.grid.volumes * np.abs(v.values) ** 2) == pytest.approx(
        mu**-3 * np.sum(g.volumes * np.abs(u.values) ** 2), rel=1e-13)
    assert v.grid.gradient_norm_sq(v.values) == pytest.approx(mu**-1 * g.gradient_norm_sq(u.values), rel=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.floats(0.1, 50.0), st.integers(16, 300), st.floats(0.0, 4.0))
def test_quadrature_exact_for_constants(N, R, M, a):
    g = make_grid(N, R, M)
    exact = sphere_area(N) * R ** (N + a) / (N + a)
    assert integrate_weighted(g, np.ones(M), a) == pytest.approx(exact, rel=1e-10)
