"""Internal and external 5-cyclidic harmonics of kinds 1, 2 and 3.

Every harmonic is a product

    (|r|^2 + 1)^(-1/2) * prod_j chi_j(r)^(p_j) * W1(s1) W2(s2) W3(s3)

where the W_i are separated solutions with their end factors divided out
("hat" functions).  The chi_j carry the square-root behaviour across the
coordinate planes and the unit sphere, so the product is analytic there.

Kind 2 uses one such product everywhere.  Kinds 1 and 3 switch to the
combination a I + b J of two building blocks on the side of the unit sphere
(kind 1) or of the plane z = 0 (kind 3) where the single product would
need the remaining solution outside its analytic range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .eigen import Catalog, EigenRecord, check_key, interval_parities, middle_solution, parity_bit
from .fuchsian import SeparatedSolution, SolverError, series_wronskian_scale, wronskian_weight
from .geometry import (CoordSample, DomainError, Params, _as_points, apply_symmetry, chi_values,
                       classify_region, sample_points)

GUARD = 1e-8  # relative width of the excluded band around singular surfaces


class SingularSurfaceError(DomainError):
    """Evaluation requested on (or too close to) a harmonic's singular surface."""

    def __init__(self, message: str, region: str):
        super().__init__(message)
        self.region = region


@dataclass(frozen=True)
class HarmonicSpec:
    kind: int
    n: tuple[int, int]
    p: tuple[int, ...]
    role: str = "internal"

    def __post_init__(self):
        check_key(self.kind, self.n, self.p)
        if self.role not in ("internal", "external"):
            raise ValueError("role must be 'internal' or 'external'")


@dataclass
class SeparatedTriple:
    """The three interval solutions of one harmonic plus the partner solutions."""

    E: dict  # interval -> SeparatedSolution (eigen intervals already normalized)
    F: SeparatedSolution | None = None  # kind 2 external solution on interval 2
    P: SeparatedSolution | None = None  # kinds 1, 3 outer-end pair
    Q: SeparatedSolution | None = None
    a_coef: float = 0.0
    b_coef: float = 0.0
    c_coef: float = 0.0


def _pow(chi: np.ndarray, bit: int) -> np.ndarray:
    return chi if bit else np.ones_like(chi)


class HarmonicPair:
    """Internal harmonic G and external harmonic H of one index (kind, n, p)."""

    def __init__(self, record: EigenRecord, params: Params):
        self.record = record
        self.params = params
        self.kind = record.kind
        self.n = record.n
        self.p = record.p
        self.guard = GUARD * params.span
        self.triple = self._build()

    # construction -------------------------------------------------------

    def _build(self) -> SeparatedTriple:
        kind, p, lam, params = self.kind, self.p, self.record.lam, self.params
        (iva, pla, pra), (ivb, plb, prb) = interval_parities(kind, p)
        Ea = SeparatedSolution.eigen(iva, lam, params, pla, pra).scaled(self.record.norm_scale)
        Eb = SeparatedSolution.eigen(ivb, lam, params, plb, prb)
        mid = middle_solution(kind, p, lam, params)
        E = {iva: Ea, ivb: Eb}
        if kind == 2:
            E[2] = mid
            raw = SeparatedSolution.launch(2, lam, params, "right", p[2])
            m = 0.5 * sum(params.interval(2))
            w, dw = mid.state(m)
            f, df = raw.state(m)
            W = wronskian_weight(m, params) * float(w[0] * df[0] - f[0] * dw[0])
            if W == 0.0:
                raise SolverError("middle solution is Frobenius at a2; no external partner exists")
            return SeparatedTriple(E, F=raw.scaled(1.0 / W))
        j = 0 if kind == 1 else 3
        iv = 1 if kind == 1 else 3
        end = "left" if kind == 1 else "right"
        side = 1 if kind == 1 else -1
        mu = series_wronskian_scale(j, params, side)
        E[iv] = mid
        Psol = SeparatedSolution.launch(iv, lam, params, end, 0)
        Qsol = SeparatedSolution.launch(iv, lam, params, end, 1).scaled(1.0 / mu)
        edge = mid.left if kind == 1 else mid.right
        a_coef = edge.coef0
        b_coef = edge.coef1 * mu
        if a_coef == 0.0 or b_coef == 0.0:
            raise SolverError("degenerate connection coefficients")
        return SeparatedTriple(E, P=Psol, Q=Qsol, a_coef=a_coef, b_coef=b_coef,
                               c_coef=-1.0 / (2.0 * a_coef * b_coef))

    @property
    def middle(self) -> SeparatedSolution:
        return self.triple.E[{1: 1, 2: 2, 3: 3}[self.kind]]

    # pieces -------------------------------------------------------------

    def _bit(self, j: int) -> int:
        return parity_bit(self.kind, self.p, j)

    def _hat(self, sol: SeparatedSolution, cs: CoordSample, i: int, el: int, er: int):
        return sol.hat_gaps(cs.lo[:, i - 1], cs.hi[:, i - 1], el, er)

    def _prefactor(self, cs: CoordSample, chi: np.ndarray, js) -> np.ndarray:
        out = 1.0 / np.sqrt(cs.rr + 1.0)
        for j in js:
            out = out * _pow(chi[:, j], self._bit(j))
        return out

    def _eigen_hats(self, cs: CoordSample, skip: int) -> np.ndarray:
        out = np.ones(len(cs))
        for i in (1, 2, 3):
            if i == skip:
                continue
            out = out * self._hat(self.triple.E[i], cs, i, self._bit(i - 1), self._bit(i))
        return out

    def _fail(self, mask, message: str, region: str):
        if np.any(mask):
            raise SingularSurfaceError(message, region)

    # kind-specific formulas ---------------------------------------------

    def internal_sample(self, cs: CoordSample) -> np.ndarray:
        chi = chi_values(cs)
        if self.kind == 2:
            self._fail(cs.hi[:, 1] <= self.guard, "internal harmonic of kind 2 is singular on L2", "L2")
            E2 = self.triple.E[2]
            return (self._prefactor(cs, chi, range(4)) * self._eigen_hats(cs, 2)
                    * self._hat(E2, cs, 2, self._bit(1), self._bit(2)))
        if self.kind == 1:
            outside = cs.rr >= 1.0
            self._fail(outside & (cs.hi[:, 0] <= self.guard) & (cs.rr > 1.0),
                       "internal harmonic of kind 1 is singular on M1", "M1")
            out = np.empty(len(cs))
            ins = ~outside
            if np.any(ins):
                sub = cs.subset(ins)
                out[ins] = (self._prefactor(sub, chi[ins], (1, 2, 3)) * self._eigen_hats(sub, 1)
                            * self._hat(self.triple.E[1], sub, 1, 0, self._bit(1)))
            if np.any(outside):
                sub = cs.subset(outside)
                I, J = self._blocks(sub, chi[outside])
                out[outside] = self.triple.a_coef * I + self.triple.b_coef * J
            return out
        upper = cs.r[:, 2] > 0.0
        self._fail(~upper & (cs.lo[:, 2] <= self.guard) & (cs.r[:, 2] < 0.0),
                   "internal harmonic of kind 3 is singular on M2", "M2")
        out = np.empty(len(cs))
        if np.any(upper):
            sub = cs.subset(upper)
            out[upper] = (self._prefactor(sub, chi[upper], (0, 1, 2)) * self._eigen_hats(sub, 3)
                          * self._hat(self.triple.E[3], sub, 3, self._bit(2), 0))
        low = ~upper
        if np.any(low):
            sub = cs.subset(low)
            I, J = self._blocks(sub, chi[low])
            out[low] = self.triple.a_coef * I + self.triple.b_coef * J
        return out

    def _blocks(self, cs: CoordSample, chi: np.ndarray):
        """Building blocks I and J (kinds 1 and 3) on a sample."""
        t = self.triple
        if self.kind == 1:
            self._fail(cs.hi[:, 0] <= self.guard, "building blocks of kind 1 are singular on K1 and M1", "K1/M1")
            base = self._prefactor(cs, chi, (1, 2, 3)) * self._eigen_hats(cs, 1)
            I = base * self._hat(t.P, cs, 1, 0, self._bit(1))
            J = base * chi[:, 0] * self._hat(t.Q, cs, 1, 1, self._bit(1))
            return I, J
        if self.kind == 3:
            self._fail(cs.lo[:, 2] <= self.guard, "building blocks of kind 3 are singular on K2 and M2", "K2/M2")
            base = self._prefactor(cs, chi, (0, 1, 2)) * self._eigen_hats(cs, 3)
            I = base * self._hat(t.P, cs, 3, self._bit(2), 0)
            J = base * chi[:, 3] * self._hat(t.Q, cs, 3, self._bit(2), 1)
            return I, J
        raise ValueError("building blocks exist for kinds 1 and 3 only")

    def external_sample(self, cs: CoordSample) -> np.ndarray:
        if self.kind == 2:
            self._fail(cs.lo[:, 1] <= self.guard, "external harmonic of kind 2 is singular on L1", "L1")
            chi = chi_values(cs)
            return (self._prefactor(cs, chi, range(4)) * self._eigen_hats(cs, 2)
                    * self._hat(self.triple.F, cs, 2, self._bit(1), self._bit(2)))
        if self.kind == 1:
            if np.any(cs.rr == 0.0):
                raise SingularSurfaceError("external harmonic of kind 1 is undefined at the origin", "K1")
            img = cs.reflected(0)
            try:
                g = self.internal_sample(img)
            except SingularSurfaceError as exc:
                raise SingularSurfaceError("external harmonic of kind 1 is singular on K1", "K1") from exc
            return self.triple.c_coef * g / np.sqrt(cs.rr)
        img = cs.reflected(3)
        try:
            g = self.internal_sample(img)
        except SingularSurfaceError as exc:
            raise SingularSurfaceError("external harmonic of kind 3 is singular on K2", "K2") from exc
        return self.triple.c_coef * g

    # point API ----------------------------------------------------------

    def internal(self, points):
        r, single = _as_points(points)
        val = self.internal_sample(sample_points(r, self.params))
        return float(val[0]) if single else val

    def external(self, points):
        r, single = _as_points(points)
        val = self.external_sample(sample_points(r, self.params))
        return float(val[0]) if single else val

    def building_block(self, which: str, points):
        r, single = _as_points(points)
        cs = sample_points(r, self.params)
        I, J = self._blocks(cs, chi_values(cs))
        val = I if which == "I" else J if which == "J" else None
        if val is None:
            raise ValueError("which must be 'I' or 'J'")
        return float(val[0]) if single else val


# ---------------------------------------------------------------------------
# module-level API
# ---------------------------------------------------------------------------

_CACHE: dict = {}


def pair_from_record(record: EigenRecord, params: Params) -> HarmonicPair:
    key = (params.a, record.kind, record.n, record.p, tuple(record.lam), record.norm_scale)
    pair = _CACHE.get(key)
    if pair is None:
        pair = HarmonicPair(record, params)
        if len(_CACHE) > 2048:
            _CACHE.clear()
        _CACHE[key] = pair
    return pair


def build_harmonic(kind: int, n, p, params: Params, catalog: Catalog | None = None) -> HarmonicPair:
    """Internal/external pair of index (kind, n, p); solves the eigenproblem if needed."""
    n, p = check_key(kind, n, p)
    if catalog is None:
        catalog = Catalog(params)
    if catalog.params != params:
        raise ValueError("catalog parameters differ from the requested parameters")
    return pair_from_record(catalog.require(kind, n, p), params)


def eval_internal(pair: HarmonicPair, point) -> float:
    return pair.internal(point)


def eval_external(pair: HarmonicPair, point) -> float:
    return pair.external(point)


def eval_building_block(kind: int, which: str, n, p, params: Params, point,
                        catalog: Catalog | None = None) -> float:
    if kind not in (1, 3):
        raise ValueError("building blocks exist for kinds 1 and 3 only")
    return build_harmonic(kind, n, p, params, catalog).building_block(which, point)


def kelvin(field: Callable, point) -> float:
    """||r||^-1 field(sigma_0(r))."""
    r = np.asarray(point, dtype=float)
    rho = float(np.linalg.norm(r))
    if rho == 0.0:
        raise DomainError("the Kelvin transform is undefined at the origin")
    return field(apply_symmetry(0, r)) / rho


def region_of(point, params: Params) -> set[str]:
    return classify_region(point, params).sets()


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def reference_surface(kind: int, middle: SeparatedSolution, params: Params) -> float:
    """Reference value d of the kind's coordinate surface, away from zeros of E."""
    iv = {1: 1, 2: 2, 3: 3}[kind]
    al, ar = params.interval(iv)
    L = ar - al
    grid = np.linspace(al, ar, 2001)[1:-1]
    w, _ = middle.state(grid)
    peak = float(np.max(np.abs(w)))
    d0 = 0.5 * (al + ar)
    for k in range(0, 10):
        for sgn in ((1,) if k == 0 else (1, -1)):
            d = d0 + sgn * 0.05 * k * L
            if not (al < d < ar):
                continue
            if abs(float(middle.state(d)[0][0])) >= 0.05 * peak:
                return d
    raise SolverError("no reference surface clear of the zeros of the middle solution")


def normalization_scale(record: EigenRecord, params: Params, order: int = 48) -> tuple[float, float]:
    """Scale of the first eigen-interval solution making the coefficient
    functional of the internal harmonic against itself equal to 1."""
    from dataclasses import replace

    from .expansion import SurfaceQuadrature, coefficient_functional_sample

    raw = HarmonicPair(replace(record, norm_scale=1.0), params)
    d = reference_surface(record.kind, raw.middle, params)
    quad = SurfaceQuadrature(record.kind, d, params, order)
    val = coefficient_functional_sample(raw, quad, raw.internal_sample(quad.sample))
    if not (val > 0 and math.isfinite(val)):
        raise SolverError(f"normalization integral is not positive ({val}) for {record.key}")
    return 1.0 / math.sqrt(val), d
