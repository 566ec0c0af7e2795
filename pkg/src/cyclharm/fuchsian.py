"""Solutions of the separated Fuchsian equation

    P(s) [w'' + 1/2 sum_j w'/(s - a_j)] + (3/16 s^2 + lam1 s + lam2) w = 0,
    P(s) = prod_j (s - a_j),

with regular singular points a_0..a_3 (exponents 0 and 1/2) and infinity.

Three representations are used:

* Frobenius series |s - a_j|^(p/2) sum_k c_k (s - a_j)^k at a singular point,
* an adaptive DOP853 integrator for (w, w') strictly inside an interval,
* ``SeparatedSolution``: a dense piecewise representation built from both,
  used by the harmonic evaluators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numba as nb
import numpy as np
from scipy.integrate._ivp import dop853_coefficients as _dop

from .geometry import DomainError, Params


class SolverError(RuntimeError):
    """A numerical procedure failed to reach its accuracy target."""


class LambdaPair(NamedTuple):
    lambda1: float
    lambda2: float


class SolutionState(NamedTuple):
    """Value and derivative of a solution at ``s``.

    The true values are ``(w, dw) * exp(log_scale)``; ``log_scale`` is nonzero
    only when propagation had to renormalize a rapidly growing solution.
    """

    s: float
    w: float
    dw: float
    log_scale: float = 0.0


@dataclass(frozen=True)
class SeriesSolution:
    center: int
    parity: int
    coeffs: np.ndarray
    trust_radius: float
    side: int = 1  # +1: series used on the right of the center, -1: on the left


@dataclass(frozen=True)
class ConnectionData:
    a_coef: float
    b_coef: float
    c_coef: float
    spread: float = 0.0  # disagreement between the two evaluation abscissae


SERIES_TAIL = 1e-17
SERIES_KMAX = 200
RK_RTOL = 1e-12

# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

_A = np.ascontiguousarray(_dop.A[:12, :12])
_B = np.ascontiguousarray(_dop.B)
_C = np.ascontiguousarray(_dop.C[:12])
_E3 = np.ascontiguousarray(_dop.E3)
_E5 = np.ascontiguousarray(_dop.E5)


@nb.njit(cache=True)
def _local_coeffs(center, a, lam1, lam2):
    """Coefficients of P and Q as polynomials in tau = s - center."""
    p = np.zeros(5)
    p[0] = 1.0
    for j in range(4):
        d = center - a[j]
        for m in range(4, 0, -1):
            p[m] = p[m] * d + p[m - 1]
        p[0] = p[0] * d
    q = np.empty(3)
    q[0] = 0.1875 * center * center + lam1 * center + lam2
    q[1] = 0.375 * center + lam1
    q[2] = 0.1875
    return p, q


@nb.njit(cache=True)
def _singular_series(j, rho, a, lam1, lam2, radius, kmax, tail):
    """Frobenius coefficients at a_j for exponent rho, with c_0 = 1."""
    p, q = _local_coeffs(a[j], a, lam1, lam2)
    p[0] = 0.0
    c = np.zeros(kmax + 1)
    c[0] = 1.0
    peak = 1.0
    small = 0
    K = kmax
    rk = 1.0
    for n in range(1, kmax + 1):
        acc = 0.0
        for m in range(2, 5):
            k = n + 1 - m
            if k >= 0:
                acc += p[m] * (k + rho) * (k + rho - 1.0 + 0.5 * m) * c[k]
        for m in range(3):
            k = n - 1 - m
            if k >= 0:
                acc += q[m] * c[k]
        c[n] = -acc / (p[1] * (n + rho) * (n + rho - 0.5))
        rk *= radius
        term = abs(c[n]) * rk
        if term > peak:
            peak = term
        if term <= tail * peak:
            small += 1
            if small >= 3:
                K = n
                break
        else:
            small = 0
    return c[: K + 1]


@nb.njit(cache=True)
def _taylor_series(center, w0, dw0, a, lam1, lam2, radius, kmax, tail):
    """Taylor coefficients of the solution through (w0, dw0) at a regular point."""
    p, q = _local_coeffs(center, a, lam1, lam2)
    c = np.zeros(kmax + 1)
    c[0] = w0
    c[1] = dw0
    peak = max(abs(w0), abs(dw0) * radius)
    if peak == 0.0:
        return c[:2]
    small = 0
    K = kmax
    rk = radius
    for n in range(2, kmax + 1):
        acc = 0.0
        for m in range(1, 5):
            k = n - m
            if k >= 0:
                acc += p[m] * k * (k - 1.0 + 0.5 * m) * c[k]
        for m in range(3):
            k = n - 2 - m
            if k >= 0:
                acc += q[m] * c[k]
        c[n] = -acc / (p[0] * n * (n - 1.0))
        rk *= radius
        term = abs(c[n]) * rk
        if term > peak:
            peak = term
        if term <= tail * peak:
            small += 1
            if small >= 3:
                K = n
                break
        else:
            small = 0
    return c[: K + 1]


@nb.njit(cache=True)
def _poly_and_deriv(c, t):
    s = 0.0
    ds = 0.0
    for k in range(c.shape[0] - 1, -1, -1):
        ds = ds * t + s
        s = s * t + c[k]
    return s, ds


@nb.njit(cache=True)
def _rhs(s, w, dw, a, lam1, lam2):
    inv = 0.0
    P = 1.0
    for j in range(4):
        d = s - a[j]
        inv += 1.0 / d
        P *= d
    Q = 0.1875 * s * s + lam1 * s + lam2
    return dw, -0.5 * inv * dw - Q * w / P


@nb.njit(cache=True)
def _hmax(s, a, lam1, lam2, length):
    P = 1.0
    for j in range(4):
        P *= s - a[j]
    Q = 0.1875 * s * s + lam1 * s + lam2
    freq = math.sqrt(abs(Q / P))
    h = length / 8.0
    if freq * h > 0.5:
        h = 0.5 / freq
    return h


@nb.njit(cache=True)
def _dop853(s0, w0, dw0, s1, a, lam1, lam2, rtol, hfloor, span):
    """Integrate from s0 to s1.  Returns (w, dw, log_scale, sign_changes, steps, status)."""
    y0 = w0
    y1 = dw0
    s = s0
    log_scale = 0.0
    zeros = 0
    steps = 0
    if s1 == s0:
        return y0, y1, log_scale, zeros, steps, 0
    direction = 1.0 if s1 > s0 else -1.0
    ref0 = abs(y0)
    ref1 = abs(y1)
    if ref0 == 0.0 and ref1 == 0.0:
        return 0.0, 0.0, 0.0, 0, 0, 0
    K0 = np.empty(13)
    K1 = np.empty(13)
    h = min(_hmax(s, a, lam1, lam2, span), 0.01 * abs(s1 - s0))
    rejected = False
    while True:
        remaining = (s1 - s) * direction
        if remaining <= 0.0:
            break
        hm = _hmax(s, a, lam1, lam2, span)
        if h > hm:
            h = hm
        last = False
        if h >= remaining:
            h = remaining
            last = True
        hs = h * direction
        K0[0], K1[0] = _rhs(s, y0, y1, a, lam1, lam2)
        for i in range(1, 12):
            d0 = 0.0
            d1 = 0.0
            for jj in range(i):
                d0 += _A[i, jj] * K0[jj]
                d1 += _A[i, jj] * K1[jj]
            K0[i], K1[i] = _rhs(s + _C[i] * hs, y0 + hs * d0, y1 + hs * d1, a, lam1, lam2)
        n0 = 0.0
        n1 = 0.0
        for jj in range(12):
            n0 += _B[jj] * K0[jj]
            n1 += _B[jj] * K1[jj]
        ny0 = y0 + hs * n0
        ny1 = y1 + hs * n1
        snew = s1 if last else s + hs
        K0[12], K1[12] = _rhs(snew, ny0, ny1, a, lam1, lam2)
        e50 = 0.0
        e51 = 0.0
        e30 = 0.0
        e31 = 0.0
        for jj in range(13):
            e50 += _E5[jj] * K0[jj]
            e51 += _E5[jj] * K1[jj]
            e30 += _E3[jj] * K0[jj]
            e31 += _E3[jj] * K1[jj]
        sc0 = rtol * (max(abs(y0), abs(ny0)) + 1e-3 * ref0) + 1e-300
        sc1 = rtol * (max(abs(y1), abs(ny1)) + 1e-3 * ref1) + 1e-300
        e5 = (e50 / sc0) ** 2 + (e51 / sc1) ** 2
        e3 = (e30 / sc0) ** 2 + (e31 / sc1) ** 2
        if e5 == 0.0 and e3 == 0.0:
            err = 0.0
        else:
            err = h * e5 / math.sqrt((e5 + 0.01 * e3) * 2.0)
        if not np.isfinite(err):
            err = 1e10
        if err < 1.0:
            if err == 0.0:
                factor = 10.0
            else:
                factor = min(10.0, 0.9 * err ** (-0.125))
            if rejected:
                factor = min(1.0, factor)
            if y0 != 0.0 and ny0 * y0 < 0.0:
                zeros += 1
            elif y0 != 0.0 and ny0 == 0.0 and not last:
                zeros += 1
            y0 = ny0
            y1 = ny1
            s = snew
            steps += 1
            m = max(abs(y0), abs(y1))
            if m > 1e100:
                y0 /= m
                y1 /= m
                ref0 /= m
                ref1 /= m
                log_scale += math.log(m)
            ref0 = max(ref0, abs(y0))
            ref1 = max(ref1, abs(y1))
            rejected = False
            h = h * factor
            if last:
                break
        else:
            factor = max(0.2, 0.9 * err ** (-0.125))
            h = h * factor
            rejected = True
            if h < hfloor:
                return y0, y1, log_scale, zeros, steps, -1
    return y0, y1, log_scale, zeros, steps, 0


@nb.njit(cache=True)
def _series_sign_changes(c, rho, side, trust, npts):
    """Sign changes of the series solution on (0, trust] along the working side."""
    count = 0
    prev = 0.0
    for k in range(1, npts + 1):
        t = trust * (k / npts) ** 2
        v, _ = _poly_and_deriv(c, side * t)
        if prev != 0.0 and v * prev < 0.0:
            count += 1
        if v != 0.0:
            prev = v
    return count


@nb.njit(cache=True)
def _series_state(c, rho, tau):
    """(w, dw) of |tau|^rho * sum c_k tau^k at tau != 0."""
    S, dS = _poly_and_deriv(c, tau)
    at = abs(tau)
    f = at**rho
    return f * S, f * (dS + rho * S / tau)


@nb.njit(cache=True)
def _shoot(j, parity, m, a, lam1, lam2, rtol):
    """Launch the parity Frobenius solution at a_j and carry it to m.

    Returns (w, dw, log_scale, zero_count, status); zero_count counts sign
    changes in the open range between a_j and m.
    """
    rad = 1e300
    for k in range(4):
        if k != j:
            d = abs(a[k] - a[j])
            if d < rad:
                rad = d
    trust = 0.25 * rad
    rho = 0.5 * parity
    side = 1.0 if m > a[j] else -1.0
    dist = abs(m - a[j])
    c = _singular_series(j, rho, a, lam1, lam2, trust, 200, 1e-17)
    if dist <= trust:
        w, dw = _series_state(c, rho, side * dist)
        zeros = _series_sign_changes(c, rho, side, dist, 64)
        return w, dw, 0.0, zeros, 0
    w, dw = _series_state(c, rho, side * trust)
    zeros = _series_sign_changes(c, rho, side, trust, 64)
    lo = min(a[j], m)
    span = 0.0
    for k in range(3):
        if a[k] <= lo + 0.5 * dist <= a[k + 1]:
            span = a[k + 1] - a[k]
    s0 = a[j] + side * trust
    w1, dw1, ls, z, steps, status = _dop853(s0, w, dw, m, a, lam1, lam2, rtol, 1e-13 * span, span)
    return w1, dw1, ls, zeros + z, status


# ---------------------------------------------------------------------------
# public scalar API
# ---------------------------------------------------------------------------

def _lam(lam) -> tuple[float, float]:
    l1, l2 = float(lam[0]), float(lam[1])
    if not (np.isfinite(l1) and np.isfinite(l2)):
        raise ValueError("separation constants must be finite")
    return l1, l2


def interval_of(s: float, params: Params) -> int:
    """Index of the open interval containing s: 1..3 between singular points,
    0 below a0 and 4 above a3 (the two halves of the interval through infinity)."""
    a = params.a
    if s < a[0]:
        return 0
    if s > a[3]:
        return 4
    for i in (1, 2, 3):
        if a[i - 1] < s < a[i]:
            return i
    raise DomainError(f"s={s} is not strictly inside an interval between singular points")


def ode_residual(s, w, dw, ddw, lam, params: Params) -> float:
    """Left-hand side of the Fuchsian equation for given (w, w', w'')."""
    a = params.a
    if any(s == aj for aj in a):
        raise DomainError(f"s={s} is a singular point of the equation")
    l1, l2 = _lam(lam)
    P = (s - a[0]) * (s - a[1]) * (s - a[2]) * (s - a[3])
    inv = sum(1.0 / (s - aj) for aj in a)
    return P * (ddw + 0.5 * inv * dw) + (0.1875 * s * s + l1 * s + l2) * w


def trust_radius(j: int, params: Params) -> float:
    a = params.a
    return 0.25 * min(abs(a[k] - a[j]) for k in range(4) if k != j)


def frobenius_series(j: int, parity: int, lam, params: Params, K: int | None = None,
                     side: int | None = None) -> SeriesSolution:
    """Frobenius solution at a_j belonging to exponent parity/2, with c_0 = 1.

    ``K`` is a lower bound on the number of coefficients; more are added until
    the tail bound |c_K| R^K <= 1e-16 max_k |c_k| R^k holds (cap 200).
    """
    if j not in (0, 1, 2, 3):
        raise ValueError(f"singularity index must be 0..3, got {j}")
    if parity not in (0, 1):
        raise ValueError("parity must be 0 or 1")
    if K is not None and K < 8:
        raise ValueError("series order K must be at least 8")
    l1, l2 = _lam(lam)
    R = trust_radius(j, params)
    c = _singular_series(j, 0.5 * parity, params.arr, l1, l2, R, SERIES_KMAX, SERIES_TAIL)
    if K is not None and c.size < K + 1:
        c = _singular_series(j, 0.5 * parity, params.arr, l1, l2, R, K, 0.0)
    if side is None:
        side = 1 if j < 3 else -1
    return SeriesSolution(j, parity, np.array(c), R, side)


def eval_series(sol: SeriesSolution, s: float, params: Params) -> SolutionState:
    """Value and derivative of a Frobenius series solution at s."""
    aj = params.a[sol.center]
    tau = s - aj
    if abs(tau) > sol.trust_radius * (1 + 1e-12):
        raise DomainError(f"s={s} lies outside the series trust radius {sol.trust_radius}")
    rho = 0.5 * sol.parity
    if tau == 0.0:
        if sol.parity == 1:
            return SolutionState(s, 0.0, math.inf * sol.side)
        return SolutionState(s, float(sol.coeffs[0]), float(sol.coeffs[1]) if sol.coeffs.size > 1 else 0.0)
    w, dw = _series_state(sol.coeffs, rho, tau)
    return SolutionState(float(s), float(w), float(dw))


def propagate(state: SolutionState, s_target: float, lam, params: Params,
              tol: float = RK_RTOL) -> SolutionState:
    """Carry (w, w') from state.s to s_target with adaptive DOP853 steps."""
    l1, l2 = _lam(lam)
    i = interval_of(state.s, params)
    if interval_of(s_target, params) != i:
        raise DomainError("propagation must stay inside one interval")
    if i in (0, 4):
        span = params.span
    else:
        span = params.interval(i)[1] - params.interval(i)[0]
    w, dw, ls, _, _, status = _dop853(float(state.s), float(state.w), float(state.dw),
                                      float(s_target), params.arr, l1, l2, float(tol),
                                      1e-13 * span, span)
    if status != 0:
        raise SolverError("step size underflow during propagation; hand off to a series")
    return SolutionState(float(s_target), float(w), float(dw), float(ls + state.log_scale))


def wronskian_weight(s, params: Params):
    """omega(s) = |prod_j (s - a_j)|^(1/2)."""
    a = params.arr
    s_arr = np.asarray(s, dtype=float)
    val = np.sqrt(np.abs(np.prod(s_arr[..., None] - a, axis=-1)))
    return float(val) if np.ndim(s) == 0 else val


def wronskian_mod(u: SolutionState, v: SolutionState, params: Params) -> float:
    """omega(s) (u v' - v u') for two states at the same abscissa."""
    if u.s != v.s:
        raise ValueError("modified Wronskian needs both states at the same abscissa")
    om = wronskian_weight(u.s, params)
    val = om * (u.w * v.dw - v.w * u.dw)
    return float(val * math.exp(u.log_scale + v.log_scale)) if (u.log_scale or v.log_scale) else float(val)


def series_wronskian_scale(j: int, params: Params, side: int) -> float:
    """lim omega(s) d/ds of the parity-1 Frobenius solution at a_j (c_0 = 1)."""
    a = params.a
    prod = 1.0
    for k in range(4):
        if k != j:
            prod *= abs(a[j] - a[k])
    return 0.5 * math.sqrt(prod) * (1.0 if side > 0 else -1.0)


def shoot(j: int, parity: int, m: float, lam, params: Params, tol: float = RK_RTOL):
    """Frobenius solution launched at a_j, carried to m: (state, sign_changes)."""
    l1, l2 = _lam(lam)
    w, dw, ls, zeros, status = _shoot(j, parity, float(m), params.arr, l1, l2, float(tol))
    if status != 0:
        raise SolverError("propagation failed while shooting from a singular point")
    return SolutionState(float(m), float(w), float(dw), float(ls)), int(zeros)


def relative_mismatch(left: SolutionState, right: SolutionState, params: Params) -> float:
    """Modified Wronskian of two states scaled by their (u, omega w') norms."""
    om = wronskian_weight(left.s, params)
    uL, vL = left.w, om * left.dw
    uR, vR = right.w, om * right.dw
    den = math.hypot(uL, vL) * math.hypot(uR, vR)
    if den == 0.0:
        raise SolverError("trivial solution in mismatch evaluation")
    return (uL * vR - uR * vL) / den


def endpoint_mismatch(interval: int, lam, parity_left: int, parity_right: int, params: Params,
                      at: float | None = None, relative: bool = False) -> float:
    """Modified Wronskian at ``at`` (default: midpoint) of the two end-launched solutions.

    Vanishes exactly when a solution is Frobenius with the given parities at
    both ends of the interval.  With ``relative=True`` the value is divided by
    the norms of the two (w, omega w') vectors.
    """
    al, ar = params.interval(interval)
    m = 0.5 * (al + ar) if at is None else float(at)
    if not (al < m < ar):
        raise DomainError("matching abscissa must lie inside the interval")
    left, _ = shoot(interval - 1, parity_left, m, lam, params)
    right, _ = shoot(interval, parity_right, m, lam, params)
    if relative:
        return relative_mismatch(left, right, params)
    return wronskian_mod(left, right, params)


def prufer_phase(state: SolutionState, zeros: int, params: Params, from_left: bool) -> float:
    """Continuous angle atan2(w, omega w') reconstructed from its value mod pi."""
    om = wronskian_weight(state.s, params)
    psi = math.atan2(state.w, om * state.dw) % math.pi
    if psi >= math.pi:
        psi = 0.0
    return psi + math.pi * zeros if from_left else psi - math.pi * zeros


# ---------------------------------------------------------------------------
# dense solution representation
# ---------------------------------------------------------------------------

def _horner(c: np.ndarray, t: np.ndarray):
    s = np.zeros_like(t)
    ds = np.zeros_like(t)
    for k in range(c.size - 1, -1, -1):
        ds = ds * t + s
        s = s * t + c[k]
    return s, ds


def _horner_rows(C: np.ndarray, t: np.ndarray):
    """Horner evaluation with one coefficient row per point."""
    s = np.zeros_like(t)
    ds = np.zeros_like(t)
    for k in range(C.shape[1] - 1, -1, -1):
        ds = ds * t + s
        s = s * t + C[:, k]
    return s, ds


@dataclass
class _EndSeries:
    """Both Frobenius solutions at one end and the solution's coefficients in that basis."""

    center: float
    side: float  # +1 if the interval is to the right of the center
    trust: float
    c0: np.ndarray
    c1: np.ndarray
    coef0: float
    coef1: float

    def parts(self, t):
        """Analytic factors: w = coef0 * S0(tau) + coef1 * |tau|^(1/2) * S1(tau)."""
        tau = self.side * t
        S0, dS0 = _horner(self.c0, tau)
        S1, dS1 = _horner(self.c1, tau)
        return S0, dS0, S1, dS1


class SeparatedSolution:
    """A solution of the Fuchsian equation on one interval, evaluable everywhere in it.

    Near each end the solution is stored as a combination of the two Frobenius
    series there; in between as Taylor expansions about nodes whose data come
    from DOP853 propagation.  ``hat`` divides out the end factors
    (s - a_left)^(el/2) (a_right - s)^(er/2) analytically.
    """

    def __init__(self, interval: int, lam, params: Params, left: _EndSeries, right: _EndSeries,
                 centers: np.ndarray, bounds: np.ndarray, taylor: np.ndarray):
        self.interval = interval
        self.lam = LambdaPair(*_lam(lam))
        self.params = params
        self.left = left
        self.right = right
        self.centers = centers
        self.bounds = bounds
        self.taylor = taylor
        self.match_defect = 0.0

    # construction -------------------------------------------------------

    @classmethod
    def launch(cls, interval: int, lam, params: Params, end: str, parity: int) -> "SeparatedSolution":
        """Frobenius solution with c_0 = 1 launched from one end and continued across."""
        al, ar = params.interval(interval)
        jl, jr = interval - 1, interval
        l1, l2 = _lam(lam)
        a = params.arr
        left = _end_series(jl, +1.0, params, l1, l2)
        right = _end_series(jr, -1.0, params, l1, l2)
        centers, bounds = _node_layout(al + left.trust, ar - right.trust, a)
        if end == "left":
            left.coef0, left.coef1 = (1.0, 0.0) if parity == 0 else (0.0, 1.0)
            start = _end_state(left, left.trust)
            seq = list(range(len(centers)))
            target_end = right
        elif end == "right":
            right.coef0, right.coef1 = (1.0, 0.0) if parity == 0 else (0.0, 1.0)
            start = _end_state(right, right.trust)
            seq = list(range(len(centers) - 1, -1, -1))
            target_end = left
        else:
            raise ValueError("end must be 'left' or 'right'")
        states = _propagate_nodes(start, centers, seq, a, l1, l2, ar - al)
        taylor = _node_taylor(centers, states, a, l1, l2)
        last = (ar - right.trust) if end == "left" else (al + left.trust)
        s_last, w_last, dw_last = _chain_to(states, centers, seq, last, a, l1, l2, ar - al)
        _fit_end(target_end, s_last, w_last, dw_last)
        return cls(interval, (l1, l2), params, left, right, centers, bounds, taylor)

    @classmethod
    def eigen(cls, interval: int, lam, params: Params, pl: int, pr: int) -> "SeparatedSolution":
        """Doubly-Frobenius solution: left-launched, with the right half replaced by
        the right-launched solution matched at the midpoint."""
        L = cls.launch(interval, lam, params, "left", pl)
        R = cls.launch(interval, lam, params, "right", pr)
        m = 0.5 * sum(params.interval(interval))
        grid = np.linspace(m - 0.05 * (params.interval(interval)[1] - params.interval(interval)[0]),
                           m + 0.05 * (params.interval(interval)[1] - params.interval(interval)[0]), 7)
        wl, _ = L.state(grid)
        wr, _ = R.state(grid)
        k = float(np.dot(wl, wr) / np.dot(wr, wr))
        tl, tr = _pad(L.taylor, R.taylor)
        right_nodes = L.centers > m
        tl[right_nodes] = k * tr[right_nodes]
        right = _EndSeries(R.right.center, R.right.side, R.right.trust, R.right.c0, R.right.c1,
                           k * R.right.coef0, k * R.right.coef1)
        out = cls(interval, lam, params, L.left, right, L.centers, L.bounds, tl)
        out.match_defect = float(np.max(np.abs(wl - k * wr)) / max(np.max(np.abs(wl)), 1e-300))
        return out

    def scaled(self, factor: float) -> "SeparatedSolution":
        out = SeparatedSolution(self.interval, self.lam, self.params,
                                _EndSeries(**{**self.left.__dict__}), _EndSeries(**{**self.right.__dict__}),
                                self.centers, self.bounds, self.taylor * factor)
        out.left.coef0 *= factor
        out.left.coef1 *= factor
        out.right.coef0 *= factor
        out.right.coef1 *= factor
        return out

    def combine(self, alpha: float, other: "SeparatedSolution", beta: float) -> "SeparatedSolution":
        """alpha * self + beta * other (same interval, lambda and node layout)."""
        if other.interval != self.interval or other.lam != self.lam:
            raise ValueError("can only combine solutions of the same equation and interval")
        out = self.scaled(alpha)
        for mine, theirs in ((out.left, other.left), (out.right, other.right)):
            mine.coef0 += beta * theirs.coef0
            mine.coef1 += beta * theirs.coef1
        mine, theirs = _pad(out.taylor, other.taylor)
        out.taylor = mine + beta * theirs
        return out

    # evaluation ---------------------------------------------------------

    def _regions(self, s):
        al, ar = self.params.interval(self.interval)
        tl = s - al
        tr = ar - s
        near_l = tl <= self.left.trust
        near_r = (tr <= self.right.trust) & ~near_l
        mid = ~(near_l | near_r)
        return tl, tr, near_l, near_r, mid

    def state(self, s):
        """Value and s-derivative of the solution at points inside the interval."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        al, ar = self.params.interval(self.interval)
        if np.any(s < al) or np.any(s > ar):
            raise DomainError("evaluation point outside the solution's interval")
        w = np.empty_like(s)
        dw = np.empty_like(s)
        tl, tr, nl, nr, mid = self._regions(s)
        for mask, end, t in ((nl, self.left, tl), (nr, self.right, tr)):
            if np.any(mask):
                tt = t[mask]
                S0, dS0, S1, dS1 = end.parts(tt)
                rt = np.sqrt(tt)
                with np.errstate(divide="ignore", invalid="ignore"):
                    w[mask] = end.coef0 * S0 + end.coef1 * rt * S1
                    # d/ds of |tau|^(1/2) is side / (2 sqrt t) with side = +1 on the left end
                    dhalf = end.side * np.where(tt > 0, 0.5 / rt, np.inf)
                    dw[mask] = end.coef0 * dS0 + end.coef1 * (rt * dS1 + (dhalf * S1 if end.coef1 else 0.0))
        if np.any(mid):
            sm = s[mid]
            idx = np.clip(np.searchsorted(self.bounds, sm, side="right") - 1, 0, len(self.centers) - 1)
            ww, dd = _horner_rows(self.taylor[idx], sm - self.centers[idx])
            w[mid] = ww
            dw[mid] = dd
        return w, dw

    def hat(self, s, el: int, er: int):
        """w(s) / ((s - a_left)^(el/2) (a_right - s)^(er/2))."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        al, ar = self.params.interval(self.interval)
        if np.any(s < al) or np.any(s > ar):
            raise DomainError("evaluation point outside the solution's interval")
        return self.hat_gaps(s - al, ar - s, el, er)

    def hat_gaps(self, tl, tr, el: int, er: int):
        """``hat`` for points given by their distances to both interval ends.

        Supplying the gaps directly keeps full relative accuracy close to the
        ends, where s itself cannot resolve them.
        """
        tl = np.atleast_1d(np.asarray(tl, dtype=float))
        tr = np.atleast_1d(np.asarray(tr, dtype=float))
        if np.any(tl < 0) or np.any(tr < 0):
            raise DomainError("evaluation point outside the solution's interval")
        al, _ = self.params.interval(self.interval)
        out = np.empty_like(tl)
        nl = tl <= self.left.trust
        nr = (tr <= self.right.trust) & ~nl
        mid = ~(nl | nr)
        with np.errstate(divide="ignore", invalid="ignore"):
            for mask, end, t, e_here, t_other, e_other in (
                (nl, self.left, tl, el, tr, er),
                (nr, self.right, tr, er, tl, el),
            ):
                if not np.any(mask):
                    continue
                tt = t[mask]
                S0, _, S1, _ = end.parts(tt)
                rt = np.sqrt(tt)
                if e_here:
                    part0 = end.coef0 * S0 / rt if end.coef0 != 0.0 else 0.0
                    val = part0 + end.coef1 * S1
                else:
                    val = end.coef0 * S0 + end.coef1 * rt * S1
                if e_other:
                    val = val / np.sqrt(t_other[mask])
                out[mask] = val
            if np.any(mid):
                w, _ = self.state(al + tl[mid])
                fac = np.ones_like(w)
                if el:
                    fac *= np.sqrt(tl[mid])
                if er:
                    fac *= np.sqrt(tr[mid])
                out[mid] = w / fac
        return out


def _pad(A: np.ndarray, B: np.ndarray):
    K = max(A.shape[1], B.shape[1])
    out = []
    for M in (A, B):
        P = np.zeros((M.shape[0], K))
        P[:, : M.shape[1]] = M
        out.append(P)
    return out


def _end_series(j: int, side: float, params: Params, l1: float, l2: float) -> _EndSeries:
    a = params.arr
    R = trust_radius(j, params)
    c0 = _singular_series(j, 0.0, a, l1, l2, R, SERIES_KMAX, SERIES_TAIL)
    c1 = _singular_series(j, 0.5, a, l1, l2, R, SERIES_KMAX, SERIES_TAIL)
    return _EndSeries(float(a[j]), side, R, np.array(c0), np.array(c1), 0.0, 0.0)


def _end_state(end: _EndSeries, t: float):
    S0, dS0, S1, dS1 = (float(v[0]) for v in end.parts(np.array([t])))
    rt = math.sqrt(t)
    w = end.coef0 * S0 + end.coef1 * rt * S1
    dw = end.coef0 * dS0 + end.coef1 * (rt * dS1 + end.side * 0.5 / rt * S1)
    return end.center + end.side * t, w, dw


def _fit_end(end: _EndSeries, s: float, w: float, dw: float):
    t = abs(s - end.center)
    S0, dS0, S1, dS1 = (float(v[0]) for v in end.parts(np.array([t])))
    rt = math.sqrt(t)
    f0, g0 = S0, dS0
    f1, g1 = rt * S1, rt * dS1 + end.side * 0.5 / rt * S1
    det = f0 * g1 - f1 * g0
    end.coef0 = (w * g1 - f1 * dw) / det
    end.coef1 = (f0 * dw - w * g0) / det


def _node_layout(x0: float, x1: float, a: np.ndarray):
    """Taylor centres covering [x0, x1]; node k serves [bounds[k], bounds[k+1])."""
    def dist(x):
        return float(np.min(np.abs(a - x)))

    centers = []
    bounds = [x0]
    x = x0
    while True:
        c = x + 0.15 * dist(x)
        nxt = c + 0.2 * dist(c)
        centers.append(c)
        if nxt >= x1:
            bounds.append(x1)
            break
        bounds.append(nxt)
        x = nxt
    return np.array(centers), np.array(bounds)


def _propagate_nodes(start, centers, seq, a, l1, l2, span):
    s, w, dw = start
    states = {}
    for k in seq:
        c = centers[k]
        w, dw, ls, _, _, status = _dop853(s, w, dw, c, a, l1, l2, RK_RTOL, 1e-13 * span, span)
        if status != 0:
            raise SolverError("propagation failed while building a dense solution")
        if ls != 0.0:
            raise SolverError("solution overflow while building a dense solution")
        states[k] = (w, dw)
        s = c
    return states


def _node_taylor(centers, states, a, l1, l2):
    rows = []
    for k, c in enumerate(centers):
        R = 0.2 * float(np.min(np.abs(a - c)))
        w, dw = states[k]
        rows.append(_taylor_series(c, w, dw, a, l1, l2, R, 120, SERIES_TAIL))
    K = max(r.size for r in rows)
    out = np.zeros((len(rows), K))
    for k, r in enumerate(rows):
        out[k, : r.size] = r
    return out


def _chain_to(states, centers, seq, target, a, l1, l2, span):
    k = seq[-1]
    w, dw = states[k]
    w, dw, ls, _, _, status = _dop853(centers[k], w, dw, target, a, l1, l2, RK_RTOL, 1e-13 * span, span)
    if status != 0 or ls != 0.0:
        raise SolverError("propagation failed while building a dense solution")
    return target, w, dw


def connection_coeffs(E_states, which_end: int, lam, params: Params, *,
                      allow_degenerate: bool = False) -> ConnectionData:
    """Coefficients (a, b) of E = a P + b Q at an outer singular point, c = -1/(2ab).

    ``which_end`` is 0 (a_0, first interval) or 3 (a_3, last interval).  P is
    the exponent-0 Frobenius solution with P(a_j) = 1 and Q the exponent-1/2
    solution with lim omega Q' = 1.  The Wronskians W[E, Q] and W[P, E] are
    taken at each supplied abscissa and averaged.  A vanishing coefficient
    raises unless ``allow_degenerate`` is set, in which case c is NaN.
    """
    if which_end not in (0, 3):
        raise ValueError("connection coefficients are defined at a_0 or a_3")
    side = 1 if which_end == 0 else -1
    interval = 1 if which_end == 0 else 3
    mu = series_wronskian_scale(which_end, params, side)
    avals, bvals = [], []
    for st in E_states:
        if interval_of(st.s, params) != interval:
            raise DomainError("E must be sampled inside the interval adjacent to the chosen end")
        P, _ = shoot(which_end, 0, st.s, lam, params)
        Qr, _ = shoot(which_end, 1, st.s, lam, params)
        Q = SolutionState(Qr.s, Qr.w / mu, Qr.dw / mu, Qr.log_scale)
        avals.append(wronskian_mod(st, Q, params))
        bvals.append(wronskian_mod(P, st, params))
    a_coef = float(np.mean(avals))
    b_coef = float(np.mean(bvals))
    scale = max(abs(a_coef), abs(b_coef), 1e-300)
    spread = max(np.ptp(avals), np.ptp(bvals)) / scale if len(avals) > 1 else 0.0
    if abs(a_coef) < 1e-10 * scale or abs(b_coef) < 1e-10 * scale:
        if not allow_degenerate:
            raise SolverError("degenerate connection: E is (nearly) a Frobenius solution at the end")
        return ConnectionData(a_coef, b_coef, math.nan, float(spread))
    return ConnectionData(a_coef, b_coef, -1.0 / (2.0 * a_coef * b_coef), float(spread))


def count_zeros(interval: int, lam, parity_left: int, params: Params, *, max_nodes: int = 2**16) -> int:
    """Sign changes of the left-launched Frobenius solution inside the open interval."""
    sol = SeparatedSolution.launch(interval, lam, params, "left", parity_left)
    return count_sign_changes(sol, max_nodes=max_nodes)


def count_sign_changes(sol: SeparatedSolution, *, max_nodes: int = 2**16) -> int:
    al, ar = sol.params.interval(sol.interval)
    L = ar - al
    prev = None
    n = 256
    while n <= max_nodes:
        k = np.arange(1, n)
        s = al + 0.5 * L * (1.0 - np.cos(np.pi * k / n))
        w, _ = sol.state(s)
        sg = np.sign(w)
        sg = sg[sg != 0]
        count = int(np.sum(sg[1:] != sg[:-1]))
        if prev is not None and count == prev:
            return count
        prev = count
        n *= 2
    raise SolverError("zero count did not stabilise under mesh refinement")
