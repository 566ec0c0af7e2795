"""5-cyclidic coordinates on R^3.

The coordinates (s1, s2, s3) of a point are the three roots of

    (|r|^2 - 1)^2/(s - a0) + 4x^2/(s - a1) + 4y^2/(s - a2) + 4z^2/(s - a3) = 0,

interlaced as a0 <= s1 <= a1 <= s2 <= a2 <= s3 <= a3.  Besides the roots
themselves we keep the distances of every root to both ends of its interval
("gaps").  Near a pole the gap is recovered from the secular equation in a
shifted variable, so it carries full relative accuracy; the sign functions
chi_j and the separated harmonics are built from these gaps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class DomainError(ValueError):
    """A point or coordinate lies outside the domain of an operation."""


@dataclass(frozen=True)
class Params:
    """The four singular points a0 < a1 < a2 < a3 of the coordinate family."""

    a: tuple[float, float, float, float] = (0.0, 1.0, 2.0, 3.0)

    def __post_init__(self):
        a = tuple(float(v) for v in self.a)
        if len(a) != 4:
            raise ValueError("Params needs exactly four singular points")
        if not all(np.isfinite(a)):
            raise ValueError("singular points must be finite")
        if not (a[0] < a[1] < a[2] < a[3]):
            raise ValueError(f"singular points must be strictly increasing, got {a}")
        object.__setattr__(self, "a", a)

    @property
    def arr(self) -> np.ndarray:
        return np.array(self.a)

    @property
    def span(self) -> float:
        return self.a[3] - self.a[0]

    def interval(self, i: int) -> tuple[float, float]:
        """End points of the i-th coordinate interval (i = 1, 2, 3)."""
        if i not in (1, 2, 3):
            raise ValueError(f"interval index must be 1, 2 or 3, got {i}")
        return self.a[i - 1], self.a[i]


class Point3(NamedTuple):
    x: float
    y: float
    z: float


class CyclidicCoords(NamedTuple):
    s1: float
    s2: float
    s3: float


@dataclass(frozen=True)
class OctantFlags:
    """Selects one of the 16 Cartesian preimages of a coordinate triple."""

    sign_x: int = 1
    sign_y: int = 1
    sign_z: int = 1
    inside: bool = True

    def __post_init__(self):
        for name in ("sign_x", "sign_y", "sign_z"):
            if getattr(self, name) not in (1, -1):
                raise ValueError(f"{name} must be +1 or -1")

    @classmethod
    def all(cls) -> list["OctantFlags"]:
        """The 16 flag words in a fixed order (inside first, then sign bits)."""
        out = []
        for inside in (True, False):
            for sx in (1, -1):
                for sy in (1, -1):
                    for sz in (1, -1):
                        out.append(cls(sx, sy, sz, inside))
        return out

    def label(self) -> str:
        signs = "".join("+" if v > 0 else "-" for v in (self.sign_x, self.sign_y, self.sign_z))
        return signs + ("i" if self.inside else "o")


@dataclass
class CoordSample:
    """Cartesian points together with their coordinates and interval gaps.

    ``lo[:, i]`` is s_{i+1} - a_i and ``hi[:, i]`` is a_{i+1} - s_{i+1}; both
    are non-negative and accurate relative to their own size.
    """

    r: np.ndarray
    s: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    params: Params
    rr: np.ndarray = field(init=False)

    def __post_init__(self):
        self.rr = np.einsum("ij,ij->i", self.r, self.r)

    def __len__(self) -> int:
        return self.r.shape[0]

    def subset(self, mask) -> "CoordSample":
        return CoordSample(self.r[mask], self.s[mask], self.lo[mask], self.hi[mask], self.params)

    def reflected(self, j: int) -> "CoordSample":
        """The sample mapped by sigma_j; coordinates are invariant."""
        return CoordSample(apply_symmetry(j, self.r), self.s, self.lo, self.hi, self.params)

    def sign_inside(self) -> np.ndarray:
        """sgn(1 - |r|), with the unit sphere detected through s1 = a0."""
        sgn = np.sign(1.0 - self.rr)
        return np.where(self.lo[:, 0] == 0.0, 0.0, sgn)


# ---------------------------------------------------------------------------
# forward map
# ---------------------------------------------------------------------------

def _as_points(p) -> tuple[np.ndarray, bool]:
    arr = np.asarray(p, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != 3:
        raise ValueError("points must have three components")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points must be finite")
    return arr, single


def _numerators(r: np.ndarray) -> np.ndarray:
    """Squared numerators N_j^2 of the defining equation, shape (N, 4)."""
    rr = np.einsum("ij,ij->i", r, r)
    n0 = rr - 1.0
    return np.column_stack([n0 * n0, 4.0 * r[:, 0] ** 2, 4.0 * r[:, 1] ** 2, 4.0 * r[:, 2] ** 2])


def cleared_cubic(s, r, params: Params) -> np.ndarray:
    """The defining equation multiplied by prod_j (s - a_j)."""
    a = params.arr
    nsq = _numerators(np.atleast_2d(r))
    s = np.asarray(s, dtype=float)
    s = s.reshape(nsq.shape[0], -1)
    total = np.zeros_like(s)
    for j in range(4):
        term = nsq[:, j : j + 1] * np.ones_like(s)
        for k in range(4):
            if k != j:
                term = term * (s - a[k])
        total += term
    return total


def _trig_roots(nsq: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Three real roots of the cleared cubic by the trigonometric method."""
    shift = a.mean()
    b = a - shift
    # prod_{k != j} (t - b_k) = t^3 - e1 t^2 + e2 t - e3
    c3 = nsq.sum(axis=1)
    c2 = np.zeros_like(c3)
    c1 = np.zeros_like(c3)
    c0 = np.zeros_like(c3)
    for j in range(4):
        others = [b[k] for k in range(4) if k != j]
        e1 = sum(others)
        e2 = others[0] * others[1] + others[0] * others[2] + others[1] * others[2]
        e3 = others[0] * others[1] * others[2]
        c2 -= nsq[:, j] * e1
        c1 += nsq[:, j] * e2
        c0 -= nsq[:, j] * e3
    B, C, D = c2 / c3, c1 / c3, c0 / c3
    p = C - B * B / 3.0
    q = 2.0 * B**3 / 27.0 - B * C / 3.0 + D
    p = np.minimum(p, -1e-300)
    m = 2.0 * np.sqrt(-p / 3.0)
    arg = np.clip(3.0 * q / (p * m), -1.0, 1.0)
    th = np.arccos(arg) / 3.0
    roots = np.stack([m * np.cos(th - 2.0 * np.pi * k / 3.0) for k in range(3)], axis=1)
    roots = np.sort(roots, axis=1) - B[:, None] / 3.0
    return roots + shift


def _polish_root(nsq: np.ndarray, a: np.ndarray, i: int, guess: np.ndarray):
    """Solve for the root in (a_{i-1}, a_i) in the gap variable of its nearer end.

    With t the distance to the nearer pole a_m, the secular equation times t
    reads h(t) = +-N_m^2 + t * S(t) = 0, S being the sum over the other three
    poles.  h has no pole at t = 0 and a single sign change on [0, L), so a
    bracketed Newton iteration converges to full relative accuracy in t.
    Returns (lo, hi) gaps.
    """
    al, ar = a[i - 1], a[i]
    L = ar - al
    g = np.clip(guess, al, ar)
    from_left = (g - al) <= (ar - g)
    t = np.where(from_left, g - al, ar - g)
    m_idx = np.where(from_left, i - 1, i)
    sgn = np.where(from_left, 1.0, -1.0)  # s = a_m + sgn * t
    npts = nsq.shape[0]
    rows = np.arange(npts)
    nm = nsq[rows, m_idx]

    am = np.where(from_left, al, ar)

    def h_and_dh(t):
        S = np.zeros(npts)
        dS = np.zeros(npts)
        for k in range(4):
            off = (am - a[k]) + sgn * t
            mask = m_idx != k
            with np.errstate(divide="ignore", invalid="ignore"):
                S = S + np.where(mask, nsq[:, k] / off, 0.0)
                dS = dS + np.where(mask, -nsq[:, k] / off**2 * sgn, 0.0)
        # F(s) = N_m^2 / (sgn t) + S, so h = sgn t F = N_m^2 + sgn t S
        h = nm + sgn * t * S
        dh = sgn * S + sgn * t * dS
        return h, dh

    # bracket on [0, L]: sign(h) = sign(F) for left ends, -sign(F) for right ends;
    # F decreases in s, so h decreases in t for either end
    lo_t = np.zeros(npts)
    hi_t = np.full(npts, L)
    for _ in range(60):
        h, dh = h_and_dh(t)
        h = np.where(np.isfinite(h), h, -np.inf)
        # h > 0 -> root at larger t
        lo_t = np.where(h > 0, np.maximum(lo_t, t), lo_t)
        hi_t = np.where(h < 0, np.minimum(hi_t, t), hi_t)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = h / dh
            t_new = t - step
        bad = ~np.isfinite(t_new) | (t_new <= lo_t) | (t_new >= hi_t)
        t_new = np.where(bad, 0.5 * (lo_t + hi_t), t_new)
        t_new = np.where(h == 0.0, t, t_new)
        done = np.abs(t_new - t) <= 4e-16 * np.maximum(t, 1e-300)
        t = t_new
        if np.all(done | (hi_t - lo_t <= 1e-300)):
            break
    # poles whose numerator vanishes may carry the root exactly
    t = np.where((nm == 0.0) & (t < 1e-300), 0.0, t)
    t = np.clip(t, 0.0, L)
    lo = np.where(from_left, t, L - t)
    hi = np.where(from_left, L - t, t)
    return lo, hi


def sample_points(points, params: Params) -> CoordSample:
    """Coordinates and gaps of an array of points, shape (N, 3)."""
    r, _ = _as_points(points)
    a = params.arr
    nsq = _numerators(r)
    # at the origin the equation degenerates to (s-a1)(s-a2)(s-a3) with N0=1
    guess = _trig_roots(nsq, a)
    lo = np.empty((r.shape[0], 3))
    hi = np.empty((r.shape[0], 3))
    for i in (1, 2, 3):
        lo[:, i - 1], hi[:, i - 1] = _polish_root(nsq, a, i, guess[:, i - 1])
    s = np.where(lo <= hi, a[:3] + lo, a[1:] - hi)
    # exact endpoint snapping for roots within root-solver tolerance
    clamp = 1e-12 * params.span
    s = np.where(lo <= clamp * 1e-4, a[:3], s)
    s = np.where(hi <= clamp * 1e-4, a[1:], s)
    return CoordSample(r, s, lo, hi, params)


def to_cyclidic(p, params: Params):
    """5-cyclidic coordinates of a point (or an (N, 3) array of points)."""
    r, single = _as_points(p)
    cs = sample_points(r, params)
    if single:
        return CyclidicCoords(*(float(v) for v in cs.s[0]))
    return cs.s


# ---------------------------------------------------------------------------
# inverse map
# ---------------------------------------------------------------------------

def quadruple_squares(lo: np.ndarray, hi: np.ndarray, params: Params) -> np.ndarray:
    """The squares x_j^2 of the unit quadruple, built from gaps (shape (N, 4))."""
    a = params.arr
    s1 = a[0] + lo[:, 0]
    s2 = a[1] + lo[:, 1]
    s3 = a[2] + lo[:, 2]
    x0 = lo[:, 0] * (s2 - a[0]) * (s3 - a[0]) / ((a[1] - a[0]) * (a[2] - a[0]) * (a[3] - a[0]))
    x1 = hi[:, 0] * lo[:, 1] * (s3 - a[1]) / ((a[1] - a[0]) * (a[2] - a[1]) * (a[3] - a[1]))
    x2 = (a[2] - s1) * hi[:, 1] * lo[:, 2] / ((a[2] - a[0]) * (a[2] - a[1]) * (a[3] - a[2]))
    x3 = (a[3] - s1) * (a[3] - s2) * hi[:, 2] / ((a[3] - a[0]) * (a[3] - a[1]) * (a[3] - a[2]))
    return np.column_stack([x0, x1, x2, x3])


def gaps_from_coords(s, params: Params) -> tuple[np.ndarray, np.ndarray]:
    s = np.atleast_2d(np.asarray(s, dtype=float))
    a = params.arr
    tol = 1e-12 * params.span
    if np.any(s < a[:3] - tol) or np.any(s > a[1:] + tol):
        raise DomainError("coordinates are not interlaced: need a0<=s1<=a1<=s2<=a2<=s3<=a3")
    s = np.clip(s, a[:3], a[1:])
    return s - a[:3], a[1:] - s


def points_from_gaps(lo, hi, signs, inside, params: Params) -> np.ndarray:
    """Cartesian points from gaps and preimage selectors (vectorised)."""
    q = quadruple_squares(lo, hi, params)
    xs = np.sqrt(np.maximum(q, 0.0))
    signs = np.broadcast_to(np.asarray(signs, dtype=float), (q.shape[0], 3))
    inside = np.broadcast_to(np.asarray(inside, dtype=bool), (q.shape[0],))
    rest = q[:, 1] + q[:, 2] + q[:, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        # 1 + x0 for the outer preimage, written without cancellation
        denom = np.where(inside, 1.0 + xs[:, 0], rest / (1.0 + xs[:, 0]))
    # the corner (a1, a2, a3) has x1 = x2 = x3 = 0; both selectors map it to the origin
    denom = np.where(rest == 0.0, 1.0, denom)
    return signs * xs[:, 1:] / denom[:, None]


def from_cyclidic(c, flags: OctantFlags, params: Params) -> Point3:
    """Cartesian point with coordinates ``c`` in the preimage selected by ``flags``."""
    lo, hi = gaps_from_coords(np.asarray(c, dtype=float), params)
    r = points_from_gaps(lo, hi, (flags.sign_x, flags.sign_y, flags.sign_z), flags.inside, params)
    return Point3(*(float(v) + 0.0 for v in r[0]))


# ---------------------------------------------------------------------------
# symmetries and auxiliary functions
# ---------------------------------------------------------------------------

def apply_symmetry(j: int, p):
    """sigma_0 (inversion at the unit sphere) or sigma_1..3 (plane reflections)."""
    arr = np.array(p, dtype=float)
    if j == 0:
        rr = np.sum(arr * arr, axis=-1, keepdims=True)
        if np.any(rr == 0.0):
            raise DomainError("inversion sigma_0 is undefined at the origin")
        return arr / rr
    if j in (1, 2, 3):
        arr[..., j - 1] = -arr[..., j - 1]
        return arr
    raise ValueError(f"symmetry index must be 0..3, got {j}")


def chi_values(cs: CoordSample) -> np.ndarray:
    """chi_0..chi_3 at every point of a sample, shape (N, 4)."""
    lo, hi = cs.lo, cs.hi
    c0 = cs.sign_inside() * np.sqrt(lo[:, 0])
    c1 = np.sign(cs.r[:, 0]) * np.sqrt(lo[:, 1] * hi[:, 0])
    c2 = np.sign(cs.r[:, 1]) * np.sqrt(lo[:, 2] * hi[:, 1])
    c3 = np.sign(cs.r[:, 2]) * np.sqrt(hi[:, 2])
    return np.column_stack([c0, c1, c2, c3])


def chi(j: int, p, params: Params):
    if j not in (0, 1, 2, 3):
        raise ValueError(f"chi index must be 0..3, got {j}")
    r, single = _as_points(p)
    vals = chi_values(sample_points(r, params))[:, j]
    return float(vals[0]) if single else vals


def _scale_factor_sample(i: int, cs: CoordSample) -> np.ndarray:
    a = cs.params.arr
    nsq = _numerators(cs.r)
    total = np.zeros(len(cs))
    with np.errstate(divide="ignore", invalid="ignore"):
        for j in range(4):
            if j == i - 1:
                off = cs.lo[:, i - 1]
            elif j == i:
                off = -cs.hi[:, i - 1]
            else:
                off = cs.s[:, i - 1] - a[j]
            term = np.where(nsq[:, j] == 0.0, 0.0, nsq[:, j] / off**2)
            total += term
    return total


def scale_factor(i: int, p, params: Params, *, sample: CoordSample | None = None):
    """Metric coefficient h_i = 1/|grad s_i|, from 16 h_i^2 = sum_j N_j^2/(s_i - a_j)^2."""
    if i not in (1, 2, 3):
        raise ValueError(f"scale factor index must be 1..3, got {i}")
    if sample is None:
        r, single = _as_points(p)
        sample = sample_points(r, params)
    else:
        single = False
    sixteen_h2 = _scale_factor_sample(i, sample)
    if np.any(~np.isfinite(sixteen_h2)) or np.any(sixteen_h2 < 1e-28):
        raise DomainError(f"scale factor h_{i} is degenerate at this point")
    h = np.sqrt(sixteen_h2) / 4.0
    return float(h[0]) if single else h


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------

def g1(y, z, params: Params):
    a = params.a
    return (y * y + z * z - 1.0) ** 2 / (a[1] - a[0]) + 4 * y * y / (a[1] - a[2]) + 4 * z * z / (a[1] - a[3])


def g2(x, z, params: Params):
    a = params.a
    return (x * x + z * z - 1.0) ** 2 / (a[2] - a[0]) + 4 * x * x / (a[2] - a[1]) + 4 * z * z / (a[2] - a[3])


@dataclass(frozen=True)
class RegionTags:
    A1: bool = False
    A2: bool = False
    K1: bool = False
    L1: bool = False
    M1: bool = False
    K2: bool = False
    L2: bool = False
    M2: bool = False
    R: bool = False
    on_plane_x: bool = False
    on_plane_y: bool = False
    on_plane_z: bool = False
    on_unit_sphere: bool = False

    def sets(self) -> set[str]:
        """Names of the named point sets containing the point."""
        names = ("A1", "A2", "K1", "L1", "M1", "K2", "L2", "M2", "R")
        return {n for n in names if getattr(self, n)}


def classify_region(p, params: Params, tol: float | None = None) -> RegionTags:
    if tol is None:
        tol = 1e-9 * params.span
    if tol <= 0:
        raise ValueError("tol must be positive")
    x, y, z = (float(v) for v in np.asarray(p, dtype=float))
    rho = float(np.sqrt(x * x + y * y + z * z))
    px, py, pz = abs(x) <= tol, abs(y) <= tol, abs(z) <= tol
    sphere = abs(rho - 1.0) <= tol
    tags = dict(on_plane_x=px, on_plane_y=py, on_plane_z=pz, on_unit_sphere=sphere)
    if px:
        g = g1(y, z, params)
        rho2 = y * y + z * z
        tags["A1"] = abs(g) <= tol
        tags["L1"] = g <= tol
        tags["K1"] = g >= -tol and rho2 < 1.0 - tol
        tags["M1"] = g >= -tol and rho2 > 1.0 + tol
    if py:
        g = g2(x, z, params)
        tags["A2"] = abs(g) <= tol
        tags["L2"] = g >= -tol
        tags["K2"] = g <= tol and z > tol
        tags["M2"] = g <= tol and z < -tol
    tags["R"] = x > tol and y > tol and z > tol and rho < 1.0 - tol
    return RegionTags(**tags)


# ---------------------------------------------------------------------------
# coordinate-surface charts
# ---------------------------------------------------------------------------

_FREE = {1: (2, 3), 2: (1, 3), 3: (1, 2)}


def chart_patches(i: int) -> list[OctantFlags]:
    """Preimage words covering the closed surface s_i = d used by the kind-i integrals."""
    if i == 2:
        return OctantFlags.all()
    if i == 1:
        return [f for f in OctantFlags.all() if f.inside]
    if i == 3:
        return [f for f in OctantFlags.all() if f.sign_z == 1]
    raise ValueError(f"surface index must be 1..3, got {i}")


def _chart_gaps(i: int, d: float, u, v, params: Params):
    a = params.arr
    al, ar = params.interval(i)
    if not (al < d < ar):
        raise DomainError(f"surface value d={d} must lie strictly inside ({al}, {ar})")
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    lo = np.empty((u.size, 3))
    hi = np.empty((u.size, 3))
    dsdt = np.empty((u.size, 2))
    lo[:, i - 1] = d - al
    hi[:, i - 1] = ar - d
    for col, (k, t) in enumerate(zip(_FREE[i], (u, v))):
        L = a[k] - a[k - 1]
        sn = np.sin(0.5 * np.pi * t)
        cn = np.cos(0.5 * np.pi * t)
        lo[:, k - 1] = L * sn * sn
        hi[:, k - 1] = L * cn * cn
        dsdt[:, col] = 0.5 * np.pi * L * np.sin(np.pi * t)
    return lo, hi, dsdt


def chart_points(i: int, d: float, u, v, flags: OctantFlags, params: Params) -> CoordSample:
    """Vectorised chart without area elements (valid on the closed unit square)."""
    return _chart_points(i, d, u, v, flags, params)[0]


def _chart_points(i, d, u, v, flags, params):
    lo, hi, dsdt = _chart_gaps(i, d, u, v, params)
    r = points_from_gaps(lo, hi, (flags.sign_x, flags.sign_y, flags.sign_z), flags.inside, params)
    a = params.arr
    s = np.where(lo <= hi, a[:3] + lo, a[1:] - hi)
    return CoordSample(r, s, lo, hi, params), dsdt


def chart_sample(i: int, d: float, u, v, flags: OctantFlags, params: Params):
    """Vectorised chart: CoordSample of the patch points and their area elements."""
    cs, dsdt = _chart_points(i, d, u, v, flags, params)
    j, k = _FREE[i]
    area = scale_factor(j, None, params, sample=cs) * scale_factor(k, None, params, sample=cs)
    area = area * np.abs(dsdt[:, 0] * dsdt[:, 1])
    return cs, area


def surface_chart(i: int, d: float, u: float, v: float, flags: OctantFlags, params: Params):
    """Point of the coordinate surface s_i = d and its area element.

    The two free coordinates run over their full intervals through
    s = a_left + (a_right - a_left) sin^2(pi t / 2), t in {u, v}.
    """
    if i == 1 and not flags.inside:
        raise DomainError("the s1 surface used for expansions lies inside the unit ball")
    if i == 3 and flags.sign_z != 1:
        raise DomainError("the s3 surface used for expansions lies in the half-space z > 0")
    cs, area = chart_sample(i, d, [u], [v], flags, params)
    return Point3(*cs.r[0]), float(area[0])
