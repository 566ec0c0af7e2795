"""Surface integrals over coordinate surfaces and expansions of 1/|r - r'|.

The coefficient functional of kind k assigns to a function f, harmonic near
the closed coordinate region bounded by s_k = d, its coefficient along the
internal harmonic G:

    (1 / (c_k omega(d) E(d)^2)) * surface integral of G f / h_k,

with c_2 = 4 and c_1 = c_3 = 2, E the kind's remaining (non-eigen) solution
and h_k the metric coefficient of s_k.  The same integral with f replaced by
the kernel 1/|r - r'| and prefactor 1/(4 pi omega(d) E(d)^2) reproduces the
external harmonic H(r') up to the orientation sign ORIENTATION[k].

Orientation: Green's representation of a harmonic function decaying at
infinity, taken over the exterior of the region, gives
H(r') = integral of (H dv/dn - v dH/dn) with n the outward normal of the
region.  With the Wronskian of (E, F) fixed to +1 this equals -1 times the
integral above when the outward normal points to increasing s_k (kinds 2 and
3) and +1 times it when it points to decreasing s_k (kind 1, whose region
s_1 > d lies inside the surface).  The same sign multiplies the constants of
the reciprocal-distance expansions.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .eigen import Catalog, EigenRecord, check_kind, orders, parity_vectors
from .fuchsian import wronskian_weight
from .geometry import (CoordSample, DomainError, Params, apply_symmetry, chart_patches, chart_sample,
                       sample_points, scale_factor)
from .harmonics import HarmonicPair, pair_from_record

FUNCTIONAL_CONSTANT = {1: 2.0, 2: 4.0, 3: 2.0}
ORIENTATION = {1: 1.0, 2: -1.0, 3: -1.0}
NOMINAL_CONSTANT = {1: 2.0 * math.pi, 2: math.pi, 3: 2.0 * math.pi}
EXPANSION_CONSTANT = {k: ORIENTATION[k] * c for k, c in NOMINAL_CONSTANT.items()}


class InapplicableCase(DomainError):
    """No expansion theorem covers the given pair of points."""


class MissingRecords(KeyError):
    """The catalog lacks records needed for a partial sum."""


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _gauss_unit(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


class SurfaceQuadrature:
    """Tensor Gauss-Legendre rule on the closed coordinate surface s_kind = d.

    Patches are the preimage words of the kind's surface (16 for kind 2, the 8
    inside the unit ball for kind 1, the 8 in z > 0 for kind 3), each charted
    over the unit square by the sin^2 substitution of both free coordinates.
    """

    def __init__(self, kind: int, d: float, params: Params, order: int = 48):
        check_kind(kind)
        if order < 8:
            raise ValueError("quadrature order must be at least 8")
        al, ar = params.interval(kind)
        if not (al < d < ar):
            raise DomainError(f"surface value d={d} must lie strictly inside ({al}, {ar})")
        self.kind = kind
        self.d = float(d)
        self.params = params
        self.order = order
        self.patches = chart_patches(kind)
        x, w = _gauss_unit(order)
        U, V = np.meshgrid(x, x, indexing="ij")
        WW = np.outer(w, w).ravel()
        samples, weights = [], []
        for flags in self.patches:
            cs, area = chart_sample(kind, d, U.ravel(), V.ravel(), flags, params)
            samples.append(cs)
            weights.append(WW * area)
        self.patch_size = order * order
        self.sample = CoordSample(np.vstack([c.r for c in samples]), np.vstack([c.s for c in samples]),
                                  np.vstack([c.lo for c in samples]), np.vstack([c.hi for c in samples]),
                                  params)
        self.weights = np.concatenate(weights)
        self.h = scale_factor(kind, None, params, sample=self.sample)

    @property
    def points(self) -> np.ndarray:
        return self.sample.r

    def integrate(self, values: np.ndarray) -> float:
        """Sum of weights * values, patch by patch in fixed order, compensated."""
        terms = self.weights * values
        partial = [math.fsum(terms[k:k + self.patch_size]) for k in range(0, terms.size, self.patch_size)]
        return math.fsum(partial)


def _prefactor(pair: HarmonicPair, d: float) -> float:
    E = float(pair.middle.state(d)[0][0])
    if abs(E) < 1e-300:
        raise DomainError("remaining solution vanishes at the surface value d")
    return wronskian_weight(d, pair.params) * E * E


def coefficient_functional_sample(pair: HarmonicPair, quad: SurfaceQuadrature, fvals: np.ndarray,
                                  G: np.ndarray | None = None) -> float:
    """Coefficient functional of a function given by its values at the quadrature nodes.

    ``G`` may carry the pair's own internal harmonic at the nodes when the
    caller already has it.
    """
    if G is None:
        G = pair.internal_sample(quad.sample)
    integral = quad.integrate(G * fvals / quad.h)
    return integral / (FUNCTIONAL_CONSTANT[pair.kind] * _prefactor(pair, quad.d))


def functional_matrix(pairs: list[HarmonicPair], quad: SurfaceQuadrature) -> np.ndarray:
    """M[i, j] = functional of pair i applied to the internal harmonic of pair j."""
    Gs = [pair.internal_sample(quad.sample) for pair in pairs]
    M = np.empty((len(pairs), len(pairs)))
    for i, pair in enumerate(pairs):
        w = Gs[i] / (quad.h * FUNCTIONAL_CONSTANT[pair.kind] * _prefactor(pair, quad.d))
        for j, g in enumerate(Gs):
            M[i, j] = quad.integrate(w * g)
    return M


def coefficient_functional(kind: int, d: float, f: Callable, rec: EigenRecord, quad: SurfaceQuadrature,
                           *, verify: bool = False) -> float:
    """Coefficient of G_rec in the expansion of a harmonic f, via the surface s_kind = d.

    ``f`` maps an (N, 3) array of points to N values.  With ``verify`` the
    value is recomputed at twice the quadrature order and must agree to 1e-7.
    """
    if rec.kind != kind or quad.kind != kind or quad.d != d:
        raise ValueError("kind/d of record, quadrature and call must agree")
    pair = pair_from_record(rec, quad.params)
    val = coefficient_functional_sample(pair, quad, np.asarray(f(quad.points), dtype=float))
    if verify:
        fine = SurfaceQuadrature(kind, d, quad.params, 2 * quad.order)
        val2 = coefficient_functional_sample(pair, fine, np.asarray(f(fine.points), dtype=float))
        if abs(val2 - val) > 1e-7 * max(abs(val2), 1e-300) and abs(val2 - val) > 1e-12:
            raise ArithmeticError(f"surface quadrature not converged: {val} vs {val2}")
    return val


def inside_region(kind: int, d: float, point, params: Params) -> bool:
    """Whether a point lies in the closed coordinate region bounded by s_kind = d."""
    cs = sample_points(np.atleast_2d(point), params)
    s = cs.s[0]
    if kind == 2:
        return bool(s[1] <= d)
    if kind == 1:
        return bool(cs.rr[0] <= 1.0 and s[0] >= d)
    return bool(cs.r[0, 2] >= 0.0 and s[2] <= d)


def external_via_integral(kind: int, d: float, rec: EigenRecord, r_prime, quad: SurfaceQuadrature) -> float:
    """External harmonic at r' from the surface integral of G / (h |r - r'|)."""
    if rec.kind != kind or quad.kind != kind or quad.d != d:
        raise ValueError("kind/d of record, quadrature and call must agree")
    rp = np.asarray(r_prime, dtype=float)
    if inside_region(kind, d, rp, quad.params):
        raise DomainError("r' must lie outside the closed coordinate region")
    pair = pair_from_record(rec, quad.params)
    G = pair.internal_sample(quad.sample)
    dist = np.linalg.norm(quad.points - rp, axis=1)
    integral = quad.integrate(G / (quad.h * dist))
    return ORIENTATION[kind] * integral / (4.0 * math.pi * _prefactor(pair, d))


# ---------------------------------------------------------------------------
# expansions
# ---------------------------------------------------------------------------

class CaseLabel(enum.Enum):
    A = "A"
    B = "B"
    C = "C"
    INAPPLICABLE = "inapplicable"


def applicable_case(kind: int, r, r_prime, params: Params) -> CaseLabel:
    """Which hypothesis of the kind's expansion theorem the pair (r, r') meets."""
    check_kind(kind)
    r = np.asarray(r, dtype=float)
    rp = np.asarray(r_prime, dtype=float)
    if np.array_equal(r, rp):
        return CaseLabel.INAPPLICABLE
    cs = sample_points(np.vstack([r, rp]), params)
    s, sp = cs.s[0], cs.s[1]
    if kind == 2:
        return CaseLabel.A if s[1] < sp[1] else CaseLabel.INAPPLICABLE
    if kind == 1:
        n, n_p = math.sqrt(cs.rr[0]), math.sqrt(cs.rr[1])
        if n <= 1 and n_p <= 1 and s[0] > sp[0]:
            return CaseLabel.A
        if n < 1 < n_p:
            return CaseLabel.B
        if n >= 1 and n_p >= 1 and s[0] < sp[0]:
            return CaseLabel.C
        return CaseLabel.INAPPLICABLE
    z, zp = r[2], rp[2]
    if z >= 0 and zp >= 0 and s[2] < sp[2]:
        return CaseLabel.A
    if zp < 0 < z:
        return CaseLabel.B
    if z <= 0 and zp <= 0 and sp[2] < s[2]:
        return CaseLabel.C
    return CaseLabel.INAPPLICABLE


@dataclass
class ConvergenceReport:
    kind: int | str
    reference: float
    rows: list = field(default_factory=list)  # (order, terms, partial_sum, abs_err, rel_err)
    case: CaseLabel | None = None
    constant: float = 1.0

    HEADER = ("order", "terms", "partial_sum", "abs_err", "rel_err")

    def add(self, order: int, terms: int, partial: float):
        err = abs(partial - self.reference)
        self.rows.append((order, terms, partial, err, err / abs(self.reference)))

    @property
    def rel_errors(self) -> list[float]:
        return [row[4] for row in self.rows]

    def fitted_constant(self, order: int | None = None) -> float:
        """Constant C for which C * (partial sum without constant) equals the reference."""
        row = self.rows[-1] if order is None else next(r for r in self.rows if r[0] == order)
        return self.reference / (row[2] / self.constant)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.HEADER)
        for order, terms, partial, err, rel in self.rows:
            w.writerow([order, terms, fmt(partial), fmt(err), fmt(rel)])
        return buf.getvalue()


def fmt(x: float) -> str:
    """17 significant digits."""
    return f"{float(x):.17g}"


def _terms_for(kind: int, r, rp, case: CaseLabel, catalog: Catalog, max_order: int, solve: bool):
    params = catalog.params
    if case is CaseLabel.C:
        # reduction of the proof: swap the points and map both by the symmetry
        # that carries case C into case A
        j = 0 if kind == 1 else 3
        g_pt, h_pt = apply_symmetry(j, rp), apply_symmetry(j, r)
        if kind == 1:
            factor = 1.0 / (np.linalg.norm(r) * np.linalg.norm(rp))
        else:
            factor = 1.0
    else:
        g_pt, h_pt, factor = r, rp, 1.0
    out = []
    for n in orders(max_order):
        vals = []
        for p in parity_vectors(kind):
            rec = catalog.get(kind, n, p)
            if rec is None:
                if not solve:
                    raise MissingRecords(f"catalog has no record for kind {kind}, n={n}, p={p}")
                rec = catalog.require(kind, n, p)
            pair = pair_from_record(rec, params)
            vals.append(pair.internal(g_pt) * pair.external(h_pt))
        out.append((n, math.fsum(vals) * factor, len(vals)))
    return out


def reciprocal_expansion(kind: int, r, r_prime, max_order: int, catalog: Catalog, *,
                         solve: bool = False) -> ConvergenceReport:
    """Partial sums of the kind's expansion of 1/|r - r'| for orders 0..max_order."""
    r = np.asarray(r, dtype=float)
    rp = np.asarray(r_prime, dtype=float)
    case = applicable_case(kind, r, rp, catalog.params)
    if case is CaseLabel.INAPPLICABLE:
        raise InapplicableCase(f"no expansion theorem of kind {kind} covers this pair of points")
    C = EXPANSION_CONSTANT[kind]
    report = ConvergenceReport(kind, 1.0 / float(np.linalg.norm(r - rp)), case=case, constant=C)
    terms = _terms_for(kind, r, rp, case, catalog, max_order, solve)
    acc: list[float] = []
    count = 0
    for order in range(max_order + 1):
        for n, val, k in terms:
            if n[0] + n[1] == order:
                acc.append(val)
                count += k
        report.add(order, count, C * math.fsum(acc))
    return report


# ---------------------------------------------------------------------------
# spherical baseline
# ---------------------------------------------------------------------------

def ferrers_p(l: int, m: int, x: float) -> float:
    """Ferrers function of the first kind P_l^m(x) on [-1, 1] (Condon-Shortley phase)."""
    if l < 0 or abs(m) > l:
        raise ValueError(f"need l >= 0 and |m| <= l, got l={l}, m={m}")
    if not -1.0 <= x <= 1.0:
        raise DomainError("Ferrers functions are evaluated on [-1, 1]")
    if m < 0:
        mm = -m
        ratio = math.exp(math.lgamma(l - mm + 1) - math.lgamma(l + mm + 1))
        return (-1) ** mm * ratio * ferrers_p(l, mm, x)
    return float(_ferrers_column(l, m, x)[l - m])


def _ferrers_column(lmax: int, m: int, x: float) -> np.ndarray:
    """P_m^m, P_{m+1}^m, ..., P_lmax^m by the upward recurrence in l."""
    out = np.zeros(lmax - m + 1)
    pmm = 1.0
    somx2 = math.sqrt(max(0.0, (1.0 - x) * (1.0 + x)))
    fact = 1.0
    for _ in range(m):
        pmm *= -fact * somx2
        fact += 2.0
    out[0] = pmm
    if lmax == m:
        return out
    out[1] = x * (2 * m + 1) * pmm
    for l in range(m + 2, lmax + 1):
        out[l - m] = (x * (2 * l - 1) * out[l - m - 1] - (l + m - 1) * out[l - m - 2]) / (l - m)
    return out


def spherical_expansion(r, r_prime, L_max: int) -> ConvergenceReport:
    """Partial sums of the spherical expansion of 1/|r - r'| for |r| < |r'|."""
    r = np.asarray(r, dtype=float)
    rp = np.asarray(r_prime, dtype=float)
    rho, rho_p = float(np.linalg.norm(r)), float(np.linalg.norm(rp))
    if rho_p == 0.0 or not rho < rho_p:
        raise DomainError("the spherical expansion needs |r| < |r'| and r' != 0")
    report = ConvergenceReport("spherical", 1.0 / float(np.linalg.norm(r - rp)))
    ct = r[2] / rho if rho > 0 else 1.0
    ctp = rp[2] / rho_p
    dphi = math.atan2(r[1], r[0]) - math.atan2(rp[1], rp[0]) if rho > 0 else 0.0
    cols = {m: (_ferrers_column(L_max, m, ct), _ferrers_column(L_max, m, ctp)) for m in range(L_max + 1)}
    acc: list[float] = []
    count = 0
    for l in range(L_max + 1):
        radial = (rho**l if l else 1.0) / rho_p ** (l + 1)
        terms = []
        for m in range(l + 1):
            P, Pp = cols[m][0][l - m], cols[m][1][l - m]
            ratio = math.exp(math.lgamma(l - m + 1) - math.lgamma(l + m + 1))
            weight = 1.0 if m == 0 else 2.0 * math.cos(m * dphi)
            terms.append(weight * ratio * P * Pp)
        acc.append(radial * math.fsum(terms))
        count += 2 * l + 1
        report.add(l, count, math.fsum(acc))
    return report

