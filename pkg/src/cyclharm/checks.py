"""Invariant check suites, one per module, used by ``cyclharm check``.

Every check returns a CheckResult; the names follow the invariant lists of
the modules so a failure names the violated property.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .eigen import Catalog, enumerate_eigen, orders, parity_vectors, solve_eigen
from .expansion import (NOMINAL_CONSTANT, SurfaceQuadrature, functional_matrix,
                        external_via_integral, reciprocal_expansion, spherical_expansion)
from .fuchsian import (SeparatedSolution, SolutionState, eval_series, frobenius_series, propagate,
                       trust_radius, wronskian_mod)
from .geometry import (OctantFlags, Params, apply_symmetry, chi_values, from_cyclidic, gaps_from_coords,
                       quadruple_squares, sample_points, scale_factor, to_cyclidic)
from .harmonics import SingularSurfaceError, pair_from_record


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.suite}.{self.name}: {self.detail}"


def random_points(rng: np.random.Generator, n: int, radius: float = 1.5) -> np.ndarray:
    """Points away from the symmetry planes and the unit sphere."""
    out = []
    while len(out) < n:
        p = rng.uniform(-radius, radius, 3)
        if np.min(np.abs(p)) > 0.02 and abs(np.linalg.norm(p) - 1) > 0.02:
            out.append(p)
    return np.array(out)


def fd_laplacian(f: Callable, p: np.ndarray, h: float = 1e-3) -> tuple[float, float]:
    """(Laplacian, largest |second partial|) by central differences."""
    f0 = f(p)
    parts = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        parts.append((f(p + e) - 2 * f0 + f(p - e)) / (h * h))
    return sum(parts), max(abs(v) for v in parts)


def fd_gradient(f: Callable, p: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.empty(3)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[k] = (f(p + e) - f(p - e)) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------

def geometry_suite(params: Params, rng: np.random.Generator) -> list[CheckResult]:
    S = "geometry"
    out = []
    a = params.arr
    pts = random_points(rng, 1000)
    cs = sample_points(pts, params)
    s = cs.s
    ok = bool(np.all(s >= a[:3]) and np.all(s <= a[1:]))
    out.append(CheckResult(S, "interlacing", ok, f"{len(pts)} points"))

    flags = [OctantFlags(*np.sign(p).astype(int), inside=bool(np.dot(p, p) < 1)) for p in pts[:200]]
    back = np.array([from_cyclidic(si, f, params) for si, f in zip(s[:200], flags)])
    err = float(np.max(np.abs(back - pts[:200])))
    out.append(CheckResult(S, "round_trip", err <= 1e-9, f"max error {err:.3g}"))

    lo, hi = gaps_from_coords(s, params)
    q = quadruple_squares(lo, hi, params)
    dev = float(np.max(np.abs(q.sum(axis=1) - 1)))
    out.append(CheckResult(S, "quadruple_identity", dev <= 1e-13, f"max |sum x_j^2 - 1| {dev:.3g}"))

    worst = 0.0
    for j in range(4):
        img = np.array([apply_symmetry(j, p) for p in pts])
        worst = max(worst, float(np.max(np.abs(sample_points(img, params).s - s))))
    out.append(CheckResult(S, "sigma_invariance", worst <= 1e-10, f"max deviation {worst:.3g}"))

    chi = chi_values(cs)
    ok = True
    for i in range(4):
        img = np.array([apply_symmetry(i, p) for p in pts])
        ci = chi_values(sample_points(img, params))
        for j in range(4):
            expect = -chi[:, j] if i == j else chi[:, j]
            ok &= bool(np.allclose(ci[:, j], expect, rtol=1e-10, atol=1e-12))
    out.append(CheckResult(S, "chi_symmetry_table", ok, "4x4 table"))

    pp = random_points(rng, 100)
    worst = 0.0
    for r, rp in zip(pts[:100], pp):
        lhs = np.linalg.norm(r - rp)
        rhs = np.linalg.norm(r) * np.linalg.norm(rp) * np.linalg.norm(apply_symmetry(0, r) - apply_symmetry(0, rp))
        worst = max(worst, abs(lhs - rhs) / lhs)
    out.append(CheckResult(S, "inversion_distance", worst <= 1e-12, f"max rel deviation {worst:.3g}"))

    worst = 0.0
    for p in pts[:100]:
        for i in (1, 2, 3):
            g = fd_gradient(lambda x: to_cyclidic(x, params)[i - 1], p)
            worst = max(worst, abs(scale_factor(i, p, params) * np.linalg.norm(g) - 1))
    out.append(CheckResult(S, "scale_factor", worst <= 1e-5, f"max |h |grad s| - 1| {worst:.3g}"))
    return out


# ---------------------------------------------------------------------------
# fuchsian
# ---------------------------------------------------------------------------

def wronskian_drift(interval: int, lam, params: Params, samples: int = 9) -> float:
    """Relative drift of the modified Wronskian of the two end-launched solutions."""
    al, ar = params.interval(interval)
    u = SeparatedSolution.launch(interval, lam, params, "left", 0)
    v = SeparatedSolution.launch(interval, lam, params, "right", 0)
    xs = al + (ar - al) * np.linspace(0.1, 0.9, samples)
    vals = []
    for x in xs:
        (uw, udw), (vw, vdw) = u.state(x), v.state(x)
        vals.append(wronskian_mod(SolutionState(x, uw[0], udw[0]), SolutionState(x, vw[0], vdw[0]), params))
    vals = np.array(vals)
    return float(np.max(np.abs(vals - vals[0])) / max(np.max(np.abs(vals)), 1e-300))


def fuchsian_suite(params: Params, rng: np.random.Generator) -> list[CheckResult]:
    S = "fuchsian"
    out = []
    worst = 0.0
    for _ in range(5):
        lam = (rng.uniform(-20, 20), rng.uniform(-40, 40))
        for iv in (1, 2, 3):
            worst = max(worst, wronskian_drift(iv, lam, params))
    out.append(CheckResult(S, "wronskian_constancy", worst <= 1e-10, f"max relative drift {worst:.3g}"))

    worst = 0.0
    lam = (1.3, -2.1)
    for j in range(4):
        for par in (0, 1):
            ser = frobenius_series(j, par, lam, params)
            R = trust_radius(j, params)
            for side in ((1,) if j == 0 else (-1,) if j == 3 else (-1, 1)):
                near = params.a[j] + side * 0.3 * R
                far = params.a[j] + side * 0.9 * R
                st = eval_series(ser, near, params)
                ref = eval_series(ser, far, params)
                prop = propagate(st, far, lam, params, 1e-13)
                scale = math.exp(prop.log_scale)
                worst = max(worst, abs(prop.w * scale - ref.w) / max(abs(ref.w), 1e-300))
    out.append(CheckResult(S, "series_propagation_agreement", worst <= 1e-10, f"max rel difference {worst:.3g}"))

    alpha, beta = 2.0, 1.0
    p2 = Params(tuple(alpha * v + beta for v in params.a))
    r1 = solve_eigen(2, (0, 0), (0, 0, 0, 0), params, normalize=False)
    r2 = solve_eigen(2, (0, 0), (0, 0, 0, 0), p2, normalize=False)
    l1, l2 = r2.lam
    t1 = (l1 + 3 / 8 * beta) / alpha
    t2 = (l2 + l1 * beta + 3 / 16 * beta**2) / alpha**2
    dev = max(abs(t1 - r1.lam[0]), abs(t2 - r1.lam[1]))
    out.append(CheckResult(S, "affine_covariance", dev <= 1e-8, f"max deviation {dev:.3g}"))

    worst = 0.0
    for iv in (1, 2, 3):
        al, ar = params.interval(iv)
        for end, a0, sign in (("left", al, 1), ("right", ar, -1)):
            for par in (0, 1):
                sol = SeparatedSolution.launch(iv, lam, params, end, par)
                d1, d2 = 1e-6, 1e-8
                w1 = abs(sol.state(a0 + sign * d1)[0][0])
                w2 = abs(sol.state(a0 + sign * d2)[0][0])
                slope = (math.log(w1) - math.log(w2)) / (math.log(d1) - math.log(d2))
                worst = max(worst, abs(slope - 0.5 * par))
    out.append(CheckResult(S, "exponent_dichotomy", worst <= 0.01, f"max slope deviation {worst:.3g}"))
    return out


# ---------------------------------------------------------------------------
# eigen
# ---------------------------------------------------------------------------

def eigen_suite(params: Params, catalog: Catalog) -> list[CheckResult]:
    S = "eigen"
    out = []
    for kind in (1, 2, 3):
        enumerate_eigen(kind, 1, params, catalog=catalog)
    recs = [r for r in catalog.sorted() if r.n[0] + r.n[1] <= 1]
    worst = max(max(r.residuals) for r in recs)
    counts = all(tuple(r.zero_counts) == tuple(r.n) for r in recs)
    out.append(CheckResult(S, "eigen_residual", worst <= 1e-10 and counts,
                           f"{len(recs)} records, max residual {worst:.3g}, zero counts {'match' if counts else 'differ'}"))
    mind = math.inf
    for kind in (1, 2, 3):
        for p in parity_vectors(kind):
            lams = [np.array(catalog.get(kind, n, p).lam) for n in orders(1)]
            for i in range(len(lams)):
                for j in range(i):
                    mind = min(mind, float(np.linalg.norm(lams[i] - lams[j])))
    out.append(CheckResult(S, "interlacing_growth", mind > 1e-8, f"min pairwise distance {mind:.3g}"))
    r1 = solve_eigen(2, (1, 0), (1, 0, 1, 0), params, normalize=False)
    r2 = solve_eigen(2, (1, 0), (1, 0, 1, 0), params, normalize=False)
    out.append(CheckResult(S, "determinism", r1.lam == r2.lam, "repeated solve is bit-identical"))
    return out


# ---------------------------------------------------------------------------
# harmonics
# ---------------------------------------------------------------------------

def _symmetry_table(kind: int, p):
    """(symmetry index, factor kind) pairs the built harmonics obey: factor is
    the sign, with 'norm' meaning an extra factor |r|."""
    bits = dict(zip({1: (1, 2, 3), 2: (0, 1, 2, 3), 3: (0, 1, 2)}[kind], p))
    table = [(j, (-1) ** bits[j], j == 0) for j in bits]
    return table


def harmonics_suite(params: Params, catalog: Catalog, rng: np.random.Generator) -> list[CheckResult]:
    S = "harmonics"
    out = []
    pts = random_points(rng, 12, 1.4)
    sym_worst, lap_worst = 0.0, 0.0
    for kind in (1, 2, 3):
        for p in parity_vectors(kind)[:3]:
            pair = pair_from_record(catalog.require(kind, (0, 0), p), params)
            for role in ("internal", "external"):
                f = getattr(pair, role)
                for r in pts:
                    try:
                        v = f(r)
                        for j, sign, kelvin in _symmetry_table(kind, p):
                            w = f(apply_symmetry(j, r))
                            expect = sign * (np.linalg.norm(r) if kelvin else 1.0) * v
                            sym_worst = max(sym_worst, abs(w - expect) / max(abs(expect), 1e-12))
                        lap, sc = fd_laplacian(f, r)
                        lap_worst = max(lap_worst, abs(lap) / max(sc, 1e-12))
                    except SingularSurfaceError:
                        continue
    out.append(CheckResult(S, "symmetries", sym_worst <= 1e-9, f"max rel deviation {sym_worst:.3g}"))
    out.append(CheckResult(S, "harmonicity", lap_worst <= 1e-4, f"max scaled FD Laplacian {lap_worst:.3g}"))

    # formulas on R agree: the global and single-product routes
    worst = 0.0
    for kind in (1, 3):
        pair = pair_from_record(catalog.require(kind, (0, 0), parity_vectors(kind)[1]), params)
        I = pair.building_block("I", pts[:4] * 0.5 + 0.05)
        J = pair.building_block("J", pts[:4] * 0.5 + 0.05)
        G = pair.internal(pts[:4] * 0.5 + 0.05)
        if kind == 3:
            mask = (pts[:4, 2] * 0.5 + 0.05) > 0
        else:
            mask = np.ones(4, bool)
        comb = pair.triple.a_coef * I + pair.triple.b_coef * J
        worst = max(worst, float(np.max(np.abs(comb[mask] - G[mask]) / np.abs(G[mask]))))
    out.append(CheckResult(S, "formula_consistency", worst <= 1e-9, f"max rel deviation {worst:.3g}"))

    ok = True
    for kind in (1, 2, 3):
        pair = pair_from_record(catalog.require(kind, (0, 0), parity_vectors(kind)[0]), params)
        direction = np.array([0.3, 0.5, 0.8]) / np.linalg.norm([0.3, 0.5, 0.8])
        vals = [abs(pair.external(direction * R)) * R for R in (10.0, 100.0, 1000.0)]
        ok &= max(vals) <= 10 * max(vals[0], 1e-300)
    out.append(CheckResult(S, "external_decay", ok, "|r| |H| bounded up to |r| = 1e3"))

    # continuity across K1 (in the plane x = 0) and K2 (in the plane y = 0)
    worst = 0.0
    for kind, q, axis in ((1, np.array([0.0, 0.1, 0.1]), 0), (3, np.array([0.1, 0.0, 2.0]), 1)):
        pair = pair_from_record(catalog.require(kind, (0, 0), parity_vectors(kind)[0]), params)
        for h in (1e-6, 1e-8):
            e = np.zeros(3)
            e[axis] = h
            g1, g2 = pair.internal(q + e), pair.internal(q - e)
            worst = max(worst, abs(g1 - g2) / max(abs(g1), 1e-300))
    out.append(CheckResult(S, "continuity_across_K", worst <= 1e-7, f"max two-sided difference {worst:.3g}"))
    return out


# ---------------------------------------------------------------------------
# expansion
# ---------------------------------------------------------------------------

ACCEPTANCE_PAIRS = {
    2: ((0.1, 0.8, 0.1), (0.8, 0.1, 0.1)),
    1: ((0.1, 0.1, 0.1), (0.5, 0.4, 0.3)),
    3: ((0.1, 0.2, 0.8), (0.3, 0.2, -0.3)),
}


def expansion_suite(params: Params, catalog: Catalog) -> list[CheckResult]:
    S = "expansion"
    out = []
    for kind in (1, 2, 3):
        enumerate_eigen(kind, 4, params, catalog=catalog)
    # biorthogonality on the order-1 kind-2 block
    al, ar = params.interval(2)
    quad = SurfaceQuadrature(2, 0.5 * (al + ar), params, 48)
    recs = [r for r in catalog.sorted(2) if r.n[0] + r.n[1] <= 1]
    pairs = [pair_from_record(r, params) for r in recs]
    M = functional_matrix(pairs, quad)
    dev = float(np.max(np.abs(M - np.eye(len(pairs)))))
    out.append(CheckResult(S, "biorthogonality", dev <= 1e-5, f"{len(pairs)}x{len(pairs)} max deviation {dev:.3g}"))

    worst = 0.0
    ext = {2: (0.9, 0.1, 0.1), 1: (1.2, 0.5, 0.7), 3: (0.4, 0.3, -0.6)}
    for kind in (1, 2, 3):
        al, ar = params.interval(kind)
        d = 0.5 * (al + ar)
        quad = SurfaceQuadrature(kind, d, params, 48)
        for rec in catalog.sorted(kind)[:5]:
            ref = pair_from_record(rec, params).external(ext[kind])
            val = external_via_integral(kind, d, rec, ext[kind], quad)
            worst = max(worst, abs(val - ref) / abs(ref))
    out.append(CheckResult(S, "integral_representation", worst <= 1e-4, f"max rel deviation {worst:.3g}"))

    for kind, (r, rp) in ACCEPTANCE_PAIRS.items():
        rep = reciprocal_expansion(kind, r, rp, 4, catalog)
        errs = rep.rel_errors
        mono = all(errs[k + 1] <= errs[k] for k in range(2, len(errs) - 1))
        out.append(CheckResult(S, f"expansion_kind{kind}", mono and errs[-1] <= 1e-2,
                               f"rel errors {', '.join(f'{e:.2e}' for e in errs)}"))
        c = rep.fitted_constant()
        nominal = NOMINAL_CONSTANT[kind]
        out.append(CheckResult(S, f"constant_kind{kind}", abs(c - nominal) <= 5e-3 * nominal,
                               f"fitted {c:.10g} vs {nominal:.10g}"))
    rep = spherical_expansion((0, 0, 0.5), (0, 0, 1), 10)
    out.append(CheckResult(S, "spherical_on_axis", abs(rep.rows[-1][2] - (2 - 2**-10)) <= 1e-12,
                           f"partial sum {rep.rows[-1][2]!r}"))
    return out


SUITES = ("geometry", "fuchsian", "eigen", "harmonics", "expansion")


def run_suite(name: str, params: Params, catalog: Catalog, seed: int = 12345) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    if name == "geometry":
        return geometry_suite(params, rng)
    if name == "fuchsian":
        return fuchsian_suite(params, rng)
    if name == "eigen":
        return eigen_suite(params, catalog)
    if name == "harmonics":
        return harmonics_suite(params, catalog, rng)
    if name == "expansion":
        return expansion_suite(params, catalog)
    raise ValueError(f"unknown check suite {name!r}; choose from {', '.join(SUITES)} or all")
