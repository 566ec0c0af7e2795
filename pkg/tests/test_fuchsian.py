import math

import numpy as np
import pytest

from cyclharm.eigen import middle_solution
from cyclharm.fuchsian import (SeparatedSolution, SolutionState, SolverError, connection_coeffs, count_zeros,
                               endpoint_mismatch, eval_series, frobenius_series, ode_residual, propagate,
                               series_wronskian_scale, shoot, trust_radius, wronskian_mod, wronskian_weight)
from cyclharm.geometry import DomainError, Params


def series_data(sol, tau):
    """(w, w', w'') of a Frobenius series at distance tau > 0 from its center, summed term by term."""
    rho = 0.5 * sol.parity
    k = np.arange(sol.coeffs.size) + rho
    c = sol.coeffs
    w = np.sum(c * tau**k)
    dw = np.sum(c * k * tau ** (k - 1))
    ddw = np.sum(c * k * (k - 1) * tau ** (k - 2))
    return w, dw, ddw


def residual_scale(s, w, dw, ddw, lam, a):
    P = np.prod([s - v for v in a])
    inv = sum(1 / (s - v) for v in a)
    return abs(P * ddw) + abs(0.5 * P * inv * dw) + abs((3 / 16 * s * s + lam[0] * s + lam[1]) * w)


def test_trivial_residual(params):
    assert ode_residual(0.37, 0.0, 0.0, 0.0, (3.0, -1.0), params) == 0.0
    with pytest.raises(DomainError):
        ode_residual(1.0, 1.0, 0.0, 0.0, (0, 0), params)


def test_series_example_residual(params):
    sol = frobenius_series(0, 0, (0.0, 0.0), params, K=40)
    w, dw, ddw = series_data(sol, 0.1)
    assert abs(ode_residual(0.1, w, dw, ddw, (0.0, 0.0), params)) <= 1e-12


@pytest.mark.parametrize("j", [0, 1, 2, 3])
@pytest.mark.parametrize("parity", [0, 1])
def test_series_residual_at_trust_fraction(params, j, parity):
    lam = (1.7, -3.2)
    sol = frobenius_series(j, parity, lam, params)
    assert sol.coeffs[0] == 1.0
    assert sol.trust_radius <= 0.25 * min(abs(params.a[k] - params.a[j]) for k in range(4) if k != j)
    tau = 0.4 * sol.trust_radius
    w, dw, ddw = series_data(sol, tau)
    s = params.a[j] + tau
    res = ode_residual(s, w, dw, ddw, lam, params)
    assert abs(res) <= 1e-12 * residual_scale(s, w, dw, ddw, lam, params.a)


def test_series_tail_bound(params):
    sol = frobenius_series(1, 1, (4.0, -9.0), params)
    R = sol.trust_radius
    mags = np.abs(sol.coeffs) * R ** np.arange(sol.coeffs.size)
    assert mags[-1] <= 1e-16 * mags.max()


def test_series_rejects_small_order(params):
    with pytest.raises(ValueError):
        frobenius_series(0, 0, (0, 0), params, K=4)


def test_affine_image_solves_mapped_equation():
    a = Params((1.0, 3.0, 5.0, 7.0))
    b = Params((0.0, 1.0, 2.0, 3.0))
    lam = (0.8, -2.5)
    lt = ((lam[0] + 3 / 8) / 2, (lam[1] + lam[0] + 3 / 16) / 4)
    sa = frobenius_series(0, 0, lam, a)
    sb = frobenius_series(0, 0, lt, b)
    for sigma in (0.05, 0.12, 0.2):
        w, dw, ddw = series_data(sa, 2 * sigma)
        v, dv, ddv = series_data(sb, sigma)
        # v(sigma) = w(2 sigma + 1)
        assert v == pytest.approx(w, rel=1e-13)
        assert dv == pytest.approx(2 * dw, rel=1e-12)
        res = ode_residual(sigma, w, 2 * dw, 4 * ddw, lt, b)
        assert abs(res) <= 1e-12 * residual_scale(sigma, w, 2 * dw, 4 * ddw, lt, b.a)


def test_eval_series_at_center(params):
    lam = (0.3, 0.4)
    for j in range(4):
        assert eval_series(frobenius_series(j, 1, lam, params), params.a[j], params).w == 0.0
        assert eval_series(frobenius_series(j, 0, lam, params), params.a[j], params).w == 1.0


def test_parity_one_weighted_derivative_limit(params):
    lam = (0.3, 0.4)
    for j, side in ((0, 1), (1, 1), (2, -1), (3, -1)):
        sol = frobenius_series(j, 1, lam, params, side=side)
        s = params.a[j] + side * 1e-9
        st = eval_series(sol, s, params)
        lim = wronskian_weight(s, params) * st.dw
        assert math.isfinite(lim) and lim != 0.0
        assert lim == pytest.approx(series_wronskian_scale(j, params, side), rel=1e-6)


def test_eval_series_derivative_matches_differences(params):
    sol = frobenius_series(2, 1, (1.1, -0.7), params)
    s = params.a[2] + 0.15
    h = 1e-6
    st = eval_series(sol, s, params)
    fd = (eval_series(sol, s + h, params).w - eval_series(sol, s - h, params).w) / (2 * h)
    assert fd == pytest.approx(st.dw, abs=1e-8)


def test_eval_series_outside_trust_radius(params):
    sol = frobenius_series(0, 0, (0, 0), params)
    with pytest.raises(DomainError):
        eval_series(sol, 0.9, params)


def test_propagate_zero_state(params):
    out = propagate(SolutionState(0.2, 0.0, 0.0), 0.7, (2.0, 1.0), params)
    assert out.w == 0.0 and out.dw == 0.0


def test_propagate_round_trip(params):
    lam = (-3.0, 5.5)
    start = SolutionState(0.1, 1.0, -0.4)
    there = propagate(start, 0.9, lam, params)
    back = propagate(there, 0.1, lam, params)
    scale = math.exp(back.log_scale)
    assert abs(back.w * scale - 1.0) <= 1e-10
    assert abs(back.dw * scale + 0.4) <= 1e-10 * 0.4 + 1e-10


def test_propagate_rejects_crossing(params):
    with pytest.raises(DomainError):
        propagate(SolutionState(0.5, 1.0, 0.0), 1.5, (0, 0), params)


def test_propagate_deterministic(params):
    st = SolutionState(2.2, 0.3, 1.0)
    assert propagate(st, 2.8, (1.0, 2.0), params) == propagate(st, 2.8, (1.0, 2.0), params)


@pytest.mark.parametrize("interval", [1, 2, 3])
def test_propagated_wronskian_constant(params, interval):
    lam = (2.4, -6.1)
    al, ar = params.interval(interval)
    s0 = al + 0.1 * (ar - al)
    u = SolutionState(s0, 1.0, 0.0)
    v = SolutionState(s0, 0.0, 1.0)
    w0 = wronskian_mod(u, v, params)
    for x in np.linspace(al + 0.15 * (ar - al), ar - 0.1 * (ar - al), 6):
        W = wronskian_mod(propagate(u, x, lam, params), propagate(v, x, lam, params), params)
        assert abs(W - w0) <= 1e-11 * abs(w0)


def test_wronskian_weight(params):
    assert wronskian_weight(1.5, params) == pytest.approx(0.75, abs=1e-15)
    for v in params.a:
        assert wronskian_weight(v, params) == 0.0
    s = np.linspace(0.01, 2.99, 50)
    s = s[np.all(np.abs(s[:, None] - np.array(params.a)) > 1e-6, axis=1)]
    assert np.all(wronskian_weight(s, params) > 0)


def test_wronskian_mod_trivial_cases(params):
    u = SolutionState(0.4, 1.2, -0.3)
    v = SolutionState(0.4, -0.5, 2.0)
    assert wronskian_mod(u, u, params) == 0.0
    assert wronskian_mod(u, v, params) == -wronskian_mod(v, u, params)
    with pytest.raises(ValueError):
        wronskian_mod(u, SolutionState(0.5, 1.0, 1.0), params)


def test_wronskian_of_connection_pair(params):
    lam = (0.9, -1.3)
    mu = series_wronskian_scale(0, params, 1)
    for s in (1e-6, 1e-3, 0.2):
        P, _ = shoot(0, 0, s, lam, params)
        Q, _ = shoot(0, 1, s, lam, params)
        Q = SolutionState(Q.s, Q.w / mu, Q.dw / mu, Q.log_scale)
        assert wronskian_mod(P, Q, params) == pytest.approx(1.0, abs=1e-9)


def test_connection_of_frobenius_solutions(params):
    lam = (0.9, -1.3)
    mu = series_wronskian_scale(0, params, 1)
    pts = (0.4, 0.6)
    P = [shoot(0, 0, s, lam, params)[0] for s in pts]
    Q = [shoot(0, 1, s, lam, params)[0] for s in pts]
    Q = [SolutionState(q.s, q.w / mu, q.dw / mu, q.log_scale) for q in Q]
    with pytest.raises(SolverError):
        connection_coeffs(P, 0, lam, params)
    cp = connection_coeffs(P, 0, lam, params, allow_degenerate=True)
    assert (cp.a_coef, cp.b_coef) == pytest.approx((1.0, 0.0), abs=1e-10)
    cq = connection_coeffs(Q, 0, lam, params, allow_degenerate=True)
    assert (cq.a_coef, cq.b_coef) == pytest.approx((0.0, 1.0), abs=1e-10)


def test_connection_reconstruction_kind1(params, catalog):
    rec = catalog.get(1, (0, 0), (0, 0, 0))
    E = middle_solution(1, rec.p, rec.lam, params)
    pts = [0.4, 0.6]
    w, dw = E.state(np.array(pts))
    con = connection_coeffs([SolutionState(s, a, b) for s, a, b in zip(pts, w, dw)], 0, rec.lam, params)
    assert con.c_coef == pytest.approx(-1 / (2 * con.a_coef * con.b_coef), rel=1e-15)
    assert con.spread <= 1e-8
    mu = series_wronskian_scale(0, params, 1)
    grid = np.linspace(0.05, 0.95, 10)
    Ew, _ = E.state(grid)
    recon = []
    for s in grid:
        P, _ = shoot(0, 0, s, rec.lam, params)
        Q, _ = shoot(0, 1, s, rec.lam, params)
        recon.append(con.a_coef * P.w + con.b_coef * Q.w / mu)
    assert np.max(np.abs(Ew - recon)) <= 1e-8 * np.max(np.abs(Ew))


def test_connection_requires_adjacent_interval(params):
    with pytest.raises(DomainError):
        connection_coeffs([SolutionState(1.5, 1.0, 0.0)], 0, (0, 0), params)


def test_endpoint_mismatch_antisymmetric(params):
    lam = (0.5, -0.25)
    al, ar = params.interval(2)
    m = 0.5 * (al + ar)
    left, _ = shoot(1, 0, m, lam, params)
    right, _ = shoot(2, 1, m, lam, params)
    val = endpoint_mismatch(2, lam, 0, 1, params)
    assert val == pytest.approx(wronskian_mod(left, right, params), rel=1e-14)
    assert wronskian_mod(right, left, params) == -wronskian_mod(left, right, params)


def test_endpoint_mismatch_vanishes_at_eigenpair(params, catalog):
    rec = catalog.get(2, (1, 0), (1, 0, 0, 1))
    for iv, pl, pr in ((1, 1, 0), (3, 0, 1)):
        for frac in (0.4, 0.5, 0.6):
            al, ar = params.interval(iv)
            val = endpoint_mismatch(iv, rec.lam, pl, pr, params, at=al + frac * (ar - al), relative=True)
            assert abs(val) <= 1e-10
    # away from the eigenpair both abscissae see a clear mismatch
    off = (rec.lam[0] + 0.3, rec.lam[1])
    for frac in (0.4, 0.6):
        assert abs(endpoint_mismatch(1, off, 1, 0, params, at=frac, relative=True)) > 1e-4


def test_count_zeros_lowest_kind2(params, catalog):
    rec = catalog.get(2, (0, 0), (0, 0, 0, 0))
    assert count_zeros(1, rec.lam, 0, params) == 0
    assert count_zeros(3, rec.lam, 0, params) == 0
    # a parity-1 left end forces w(a_0) = 0, which is not an interior zero
    rec1 = catalog.get(2, (0, 0), (1, 1, 1, 1))
    assert count_zeros(1, rec1.lam, 1, params) == 0
    assert count_zeros(1, catalog.get(2, (2, 0), (1, 1, 1, 1)).lam, 1, params) == 2


def test_exponent_dichotomy(params):
    lam = (1.3, -2.1)
    for iv in (1, 2, 3):
        al, ar = params.interval(iv)
        for end, e0, sign in (("left", al, 1), ("right", ar, -1)):
            for par in (0, 1):
                sol = SeparatedSolution.launch(iv, lam, params, end, par)
                w1 = abs(sol.state(e0 + sign * 1e-6)[0][0])
                w2 = abs(sol.state(e0 + sign * 1e-8)[0][0])
                slope = math.log(w1 / w2) / math.log(1e-6 / 1e-8)
                assert abs(slope - 0.5 * par) <= 0.01


def test_trust_radius(params):
    assert trust_radius(0, params) == 0.25
    assert trust_radius(1, Params((0.0, 0.5, 2.0, 3.0))) == 0.125
