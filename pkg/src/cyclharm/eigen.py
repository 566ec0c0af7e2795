"""Two-parameter eigenvalue problems for the separated Fuchsian equation.

For kind k two of the three coordinate intervals must carry a solution that
is Frobenius at both of its ends with prescribed exponents and a prescribed
number of interior zeros:

    kind 1: intervals 2, 3 with parities (p1, p2), (p2, p3)
    kind 2: intervals 1, 3 with parities (p0, p1), (p2, p3)
    kind 3: intervals 1, 2 with parities (p0, p1), (p1, p2)

Each single-interval condition is phrased through the Pruefer angle
theta = atan2(w, omega w') of the two end-launched solutions at the interval
midpoint.  Their difference minus n*pi vanishes exactly at an eigenvalue with
n zeros and is monotone in lambda2, so for fixed lambda1 the condition traces a
curve lambda2 = gamma(lambda1).  The two curves of a kind cross exactly once.
"""
from __future__ import annotations

import json
import math
import os
import threading
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.optimize import brentq

from .fuchsian import (ConnectionData, LambdaPair, SeparatedSolution, SolverError, connection_coeffs,
                       count_sign_changes, relative_mismatch, shoot)
from .geometry import Params

SCHEMA_VERSION = 1
RESIDUAL_MAX = 1e-10


class EigenNotFound(SolverError):
    """The search window was exhausted without locating the requested eigenpair."""


class CatalogError(ValueError):
    """A persisted catalog is stale, corrupt or violates record invariants."""


@dataclass(frozen=True)
class KindLayout:
    eigen_intervals: tuple[int, int]
    middle: int
    nbits: int
    # indices into the parity vector: (left, right) for each eigen interval
    eigen_bits: tuple[tuple[int, int], tuple[int, int]]


# parity vectors are stored as tuples over their own index ranges:
# kind 1 -> (p1, p2, p3), kind 2 -> (p0, p1, p2, p3), kind 3 -> (p0, p1, p2)
LAYOUT = {
    1: KindLayout((2, 3), 1, 3, ((0, 1), (1, 2))),
    2: KindLayout((1, 3), 2, 4, ((0, 1), (2, 3))),
    3: KindLayout((1, 2), 3, 3, ((0, 1), (1, 2))),
}


def check_kind(kind: int) -> KindLayout:
    if kind not in LAYOUT:
        raise ValueError(f"kind must be 1, 2 or 3, got {kind}")
    return LAYOUT[kind]


def check_key(kind: int, n, p) -> tuple[tuple[int, int], tuple[int, ...]]:
    lay = check_kind(kind)
    n = tuple(int(v) for v in n)
    p = tuple(int(v) for v in p)
    if len(n) != 2 or min(n) < 0:
        raise ValueError(f"zero-count index must be two non-negative integers, got {n}")
    if len(p) != lay.nbits or any(b not in (0, 1) for b in p):
        raise ValueError(f"kind {kind} needs a parity vector of {lay.nbits} bits, got {p}")
    return n, p


def parity_bit(kind: int, p, j: int) -> int:
    """The exponent bit p_j at singular point a_j (0 for points the kind does not fix)."""
    if kind == 1:
        return 0 if j == 0 else p[j - 1]
    if kind == 2:
        return p[j]
    return 0 if j == 3 else p[j]


def interval_parities(kind: int, p) -> list[tuple[int, int, int]]:
    """(interval, left parity, right parity) of the two eigen intervals."""
    lay = check_kind(kind)
    return [(iv, p[bl], p[br]) for iv, (bl, br) in zip(lay.eigen_intervals, lay.eigen_bits)]


def parity_vectors(kind: int) -> list[tuple[int, ...]]:
    """All parity vectors of a kind, ordered by their value as a binary integer."""
    return [tuple(v) for v in product((0, 1), repeat=check_kind(kind).nbits)]


def orders(max_order: int) -> list[tuple[int, int]]:
    """Zero-count indices with n1 + n2 <= max_order, ascending total then lexicographic."""
    return [(k, t - k) for t in range(max_order + 1) for k in range(t + 1)]


@dataclass(frozen=True)
class EigenRecord:
    kind: int
    n: tuple[int, int]
    p: tuple[int, ...]
    lam: LambdaPair
    norm_scale: float
    residuals: tuple[float, float]
    zero_counts: tuple[int, int]
    connection: ConnectionData | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def key(self):
        return (self.kind, self.n, self.p)


# ---------------------------------------------------------------------------
# single-interval conditions
# ---------------------------------------------------------------------------

def phase_mismatch(interval: int, lam, pl: int, pr: int, n: int, params: Params, at: float | None = None):
    """Pruefer-angle mismatch of the two end-launched solutions, minus n*pi.

    Returns (phi, relative Wronskian mismatch, left count, right count).  phi
    is oriented to increase with lambda2.
    """
    al, ar = params.interval(interval)
    m = 0.5 * (al + ar) if at is None else at
    left, kl = shoot(interval - 1, pl, m, lam, params)
    right, kr = shoot(interval, pr, m, lam, params)
    om = math.sqrt(abs((m - params.a[0]) * (m - params.a[1]) * (m - params.a[2]) * (m - params.a[3])))
    psi_l = math.atan2(left.w, om * left.dw) % math.pi
    psi_r = math.atan2(right.w, om * right.dw) % math.pi
    phi = psi_l - psi_r + math.pi * (kl + kr - n)
    if interval != 2:
        phi = -phi
    return phi, relative_mismatch(left, right, params), kl, kr


def _bracket_increasing(f, x0: float, step: float, limit: float):
    """Bracket a root of an increasing function by geometric expansion from x0."""
    f0 = f(x0)
    if f0 == 0.0:
        return x0, x0, f0, f0
    direction = -1.0 if f0 > 0 else 1.0
    lo, flo = x0, f0
    h = step
    while h <= limit:
        x1 = x0 + direction * h
        f1 = f(x1)
        if f1 == 0.0 or (f1 > 0) != (f0 > 0):
            return (x1, lo, f1, flo) if direction < 0 else (lo, x1, flo, f1)
        lo, flo = x1, f1
        h *= 2.0
    raise EigenNotFound("search window exhausted while bracketing")


def curve_point(interval: int, lam1: float, pl: int, pr: int, n: int, params: Params,
                guess: float = 0.0, window: float = 1e4) -> float:
    """lambda2 on the eigen curve of one interval for fixed lambda1."""
    def f(l2):
        return phase_mismatch(interval, (lam1, l2), pl, pr, n, params)[0]

    lo, hi, flo, fhi = _bracket_increasing(f, guess, max(1.0, 0.05 * abs(guess)), window)
    if lo == hi:
        return lo
    return brentq(f, lo, hi, xtol=1e-15 * (1 + abs(lo) + abs(hi)), rtol=1e-15, maxiter=200)


# ---------------------------------------------------------------------------
# two-parameter solve
# ---------------------------------------------------------------------------

def _window(n, params: Params) -> float:
    return 10.0 * (1 + n[0] + n[1]) * max(abs(v) for v in params.a)


def solve_eigen(kind: int, n, p, params: Params, tol: float = RESIDUAL_MAX, *,
                guess: LambdaPair | None = None, normalize: bool = True) -> EigenRecord:
    """Eigenpair (lambda1, lambda2) of index (kind, n, p) with its diagnostics.

    With ``normalize`` the record carries the self-consistency scale of the
    internal harmonic (see ``harmonics.normalization_scale``); otherwise 1.
    """
    n, p = check_key(kind, n, p)
    (iva, pla, pra), (ivb, plb, prb) = interval_parities(kind, p)
    na, nb = n
    W = _window(n, params)
    diag: dict = {"rejected": []}

    last = {"a": guess[1] if guess else 0.0, "b": guess[1] if guess else 0.0}

    def gap(l1):
        ga = curve_point(iva, l1, pla, pra, na, params, last["a"], window=64 * W * W + 1e3)
        gb = curve_point(ivb, l1, plb, prb, nb, params, last["b"], window=64 * W * W + 1e3)
        last["a"], last["b"] = ga, gb
        return ga - gb

    x0 = guess[0] if guess else 0.0
    found = None
    for attempt in range(5):
        try:
            lo, hi, flo, fhi = _bracket_increasing(gap, x0, max(0.5, 0.01 * W), W * 2**attempt)
            found = (lo, hi)
            break
        except EigenNotFound:
            continue
    if found is None:
        raise EigenNotFound(f"no eigenpair found for kind {kind}, n={n}, p={p}")
    lo, hi = found
    if lo == hi:
        l1 = lo
    else:
        l1 = brentq(gap, lo, hi, xtol=1e-15 * (1 + abs(lo) + abs(hi)), rtol=1e-15, maxiter=200)
    gap(l1)
    l2 = 0.5 * (last["a"] + last["b"])
    lam = np.array([l1, l2])
    lam, step = _newton_polish(kind, lam, (iva, pla, pra, na), (ivb, plb, prb, nb), params)
    diag["newton_step"] = step

    ra = phase_mismatch(iva, lam, pla, pra, na, params)
    rb = phase_mismatch(ivb, lam, plb, prb, nb, params)
    residuals = (abs(ra[1]), abs(rb[1]))
    if max(residuals) > tol:
        raise SolverError(f"eigen residuals {residuals} exceed tolerance for kind {kind}, n={n}, p={p}")
    lam_pair = LambdaPair(float(lam[0]), float(lam[1]))

    counts = []
    for (iv, pl, pr, nn), r in zip(((iva, pla, pra, na), (ivb, plb, prb, nb)), (ra, rb)):
        sol = SeparatedSolution.eigen(iv, lam_pair, params, pl, pr)
        c = count_sign_changes(sol)
        if c != r[2] + r[3]:
            diag["rejected"].append({"interval": iv, "dense": c, "shoot": r[2] + r[3]})
        counts.append(c)
    if tuple(counts) != n:
        raise SolverError(f"wrong zero count {tuple(counts)} for kind {kind}, n={n}, p={p}")

    diag["middle_mismatch"] = _middle_check(kind, p, lam_pair, params)
    connection = None
    if kind in (1, 3):
        connection = _connection(kind, p, lam_pair, params)
    rec = EigenRecord(kind, n, p, lam_pair, 1.0, residuals, tuple(counts), connection, diag)
    if normalize:
        from .harmonics import normalization_scale
        scale, d = normalization_scale(rec, params)
        rec = replace(rec, norm_scale=scale)
        rec.diagnostics["norm_d"] = d
    return rec


def _newton_polish(kind, lam, A, B, params, max_iter: int = 3):
    """2-D Newton on the two phase conditions with a central-difference Jacobian."""
    def F(x):
        return np.array([phase_mismatch(A[0], x, A[1], A[2], A[3], params)[0],
                         phase_mismatch(B[0], x, B[1], B[2], B[3], params)[0]])

    x = np.array(lam, dtype=float)
    fx = F(x)
    step_norm = 0.0
    for _ in range(max_iter):
        J = np.empty((2, 2))
        for k in range(2):
            h = 1e-6 * (1 + abs(x[k]))
            e = np.zeros(2)
            e[k] = h
            J[:, k] = (F(x + e) - F(x - e)) / (2 * h)
        try:
            dx = -np.linalg.solve(J, fx)
        except np.linalg.LinAlgError:
            break
        xn = x + dx
        fn = F(xn)
        step_norm = float(np.max(np.abs(dx) / (1 + np.abs(x))))
        if np.max(np.abs(fn)) <= np.max(np.abs(fx)):
            x, fx = xn, fn
        else:
            step_norm = 0.0
            break
        if step_norm <= 1e-10:
            break
    if step_norm > 1e-10:
        raise SolverError("Newton polish did not converge")
    return x, step_norm


def _middle_check(kind: int, p, lam, params: Params) -> float:
    """Smallest relative mismatch of the remaining interval's solution against
    every Frobenius exponent at its far end; must stay away from zero."""
    mid = check_kind(kind).middle
    if kind == 2:
        pl = parity_bit(kind, p, 1)
        vals = [abs(_mismatch(mid, lam, pl, parity_bit(kind, p, 2), params))]
    elif kind == 1:
        pr = parity_bit(kind, p, 1)
        vals = [abs(_mismatch(mid, lam, q, pr, params)) for q in (0, 1)]
    else:
        pl = parity_bit(kind, p, 2)
        vals = [abs(_mismatch(mid, lam, pl, q, params)) for q in (0, 1)]
    worst = min(vals)
    if worst <= 1e-6:
        raise SolverError("degenerate middle solution: the remaining interval is doubly Frobenius too")
    return worst


def _mismatch(interval, lam, pl, pr, params):
    al, ar = params.interval(interval)
    m = 0.5 * (al + ar)
    left, _ = shoot(interval - 1, pl, m, lam, params)
    right, _ = shoot(interval, pr, m, lam, params)
    return relative_mismatch(left, right, params)


def middle_solution(kind: int, p, lam, params: Params) -> SeparatedSolution:
    """Raw (c_0 = 1) Frobenius solution on the remaining interval."""
    if kind == 1:
        return SeparatedSolution.launch(1, lam, params, "right", parity_bit(kind, p, 1))
    if kind == 2:
        return SeparatedSolution.launch(2, lam, params, "left", parity_bit(kind, p, 1))
    return SeparatedSolution.launch(3, lam, params, "left", parity_bit(kind, p, 2))


def _connection(kind: int, p, lam, params: Params) -> ConnectionData:
    mid = check_kind(kind).middle
    al, ar = params.interval(mid)
    sol = middle_solution(kind, p, lam, params)
    pts = [al + 0.4 * (ar - al), al + 0.6 * (ar - al)]
    from .fuchsian import SolutionState
    w, dw = sol.state(np.array(pts))
    states = [SolutionState(s, float(a), float(b)) for s, a, b in zip(pts, w, dw)]
    return connection_coeffs(states, 0 if kind == 1 else 3, lam, params)


# ---------------------------------------------------------------------------
# catalogs
# ---------------------------------------------------------------------------

class Catalog:
    """Eigen records of one parameter set, keyed by (kind, n, p)."""

    def __init__(self, params: Params, records: Iterable[EigenRecord] = (), provenance: dict | None = None):
        self.params = params
        self.records: dict = {}
        self.provenance = dict(provenance or {})
        self._lock = threading.Lock()
        self.solves = 0
        for r in records:
            self.add(r)

    def add(self, rec: EigenRecord):
        with self._lock:
            if rec.key in self.records:
                raise CatalogError(f"duplicate catalog key {rec.key}")
            self.records[rec.key] = rec

    def get(self, kind: int, n, p) -> EigenRecord | None:
        n, p = check_key(kind, n, p)
        return self.records.get((kind, n, p))

    def require(self, kind: int, n, p, *, solve: bool = True) -> EigenRecord:
        rec = self.get(kind, n, p)
        if rec is None:
            if not solve:
                raise KeyError(f"catalog has no record for kind {kind}, n={tuple(n)}, p={tuple(p)}")
            rec = solve_eigen(kind, n, p, self.params)
            self.solves += 1
            self.add(rec)
        return rec

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.sorted())

    def sorted(self, kind: int | None = None) -> list[EigenRecord]:
        keys = sorted(k for k in self.records if kind is None or k[0] == kind)
        keys.sort(key=lambda k: (k[0], k[1][0] + k[1][1], k[1], k[2]))
        return [self.records[k] for k in keys]

    def __eq__(self, other):
        if not isinstance(other, Catalog) or other.params != self.params:
            return False
        return self.records == other.records

    # persistence --------------------------------------------------------

    def to_json(self) -> str:
        recs = []
        for r in self.sorted():
            d = {
                "kind": r.kind,
                "n": list(r.n),
                "p": list(r.p),
                "lambda1": float(r.lam[0]).hex(),
                "lambda2": float(r.lam[1]).hex(),
                "norm_scale": float(r.norm_scale).hex(),
                "residuals": [float(v).hex() for v in r.residuals],
                "zero_counts": list(r.zero_counts),
            }
            if r.connection is not None:
                d["connection"] = {"a": r.connection.a_coef.hex(), "b": r.connection.b_coef.hex(),
                                   "c": r.connection.c_coef.hex()}
            recs.append(d)
        doc = {"schema_version": SCHEMA_VERSION, "a": [float(v).hex() for v in self.params.a],
               "provenance": self.provenance, "records": recs}
        return json.dumps(doc, indent=1)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + f".tmp{os.getpid()}")
        tmp.write_text(self.to_json())
        os.replace(tmp, path)

    @classmethod
    def from_json(cls, text: str, params: Params | None = None) -> "Catalog":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CatalogError(f"corrupt catalog file: {exc}") from exc
        try:
            if doc.get("schema_version") != SCHEMA_VERSION:
                raise CatalogError(f"unsupported catalog schema version {doc.get('schema_version')}")
            file_params = Params(tuple(float.fromhex(v) for v in doc["a"]))
            if params is not None and file_params != params:
                raise CatalogError(f"catalog was built for a={file_params.a}, requested a={params.a}")
            cat = cls(file_params, provenance=doc.get("provenance", {}))
            for d in doc["records"]:
                conn = None
                if "connection" in d:
                    c = d["connection"]
                    conn = ConnectionData(float.fromhex(c["a"]), float.fromhex(c["b"]), float.fromhex(c["c"]))
                rec = EigenRecord(int(d["kind"]), tuple(d["n"]), tuple(d["p"]),
                                  LambdaPair(float.fromhex(d["lambda1"]), float.fromhex(d["lambda2"])),
                                  float.fromhex(d["norm_scale"]),
                                  tuple(float.fromhex(v) for v in d["residuals"]),
                                  tuple(d["zero_counts"]), conn)
                validate_record(rec)
                cat.add(rec)
        except CatalogError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise CatalogError(f"corrupt catalog file: {exc}") from exc
        return cat

    @classmethod
    def load(cls, path, params: Params | None = None) -> "Catalog":
        return cls.from_json(Path(path).read_text(), params)


def validate_record(rec: EigenRecord) -> None:
    """Re-check the stored invariants of a record."""
    check_key(rec.kind, rec.n, rec.p)
    if not all(np.isfinite(rec.lam)):
        raise CatalogError(f"non-finite eigenvalues in record {rec.key}")
    if len(rec.residuals) != 2 or max(rec.residuals) > RESIDUAL_MAX or min(rec.residuals) < 0:
        raise CatalogError(f"record {rec.key} has residuals {rec.residuals} above {RESIDUAL_MAX}")
    if tuple(rec.zero_counts) != tuple(rec.n):
        raise CatalogError(f"record {rec.key} has zero counts {rec.zero_counts} != n")
    if not (rec.norm_scale > 0 and np.isfinite(rec.norm_scale)):
        raise CatalogError(f"record {rec.key} has invalid normalization scale")
    if (rec.connection is not None) != (rec.kind in (1, 3)):
        raise CatalogError(f"record {rec.key}: connection data present iff kind is 1 or 3")
    if rec.connection is not None:
        c = rec.connection
        if c.a_coef * c.b_coef == 0 or not math.isclose(c.c_coef, -1.0 / (2 * c.a_coef * c.b_coef), rel_tol=1e-15):
            raise CatalogError(f"record {rec.key}: inconsistent connection coefficients")


def catalog_io(catalog: Catalog, path) -> Catalog:
    """Write a catalog and read it back (the reread copy is returned)."""
    catalog.save(path)
    return Catalog.load(path, catalog.params)


def _solve_key(args):
    kind, n, p, a = args
    return solve_eigen(kind, n, p, Params(a))


def enumerate_eigen(kind: int, max_order: int, params: Params, *, catalog: Catalog | None = None,
                    workers: int = 1) -> Catalog:
    """All records of a kind with n1 + n2 <= max_order, reusing those already in ``catalog``."""
    check_kind(kind)
    if max_order < 0:
        raise ValueError("max_order must be non-negative")
    cat = catalog if catalog is not None else Catalog(params)
    if cat.params != params:
        raise CatalogError("catalog parameters differ from the requested parameters")
    todo = [(kind, n, p) for n in orders(max_order) for p in parity_vectors(kind) if cat.get(kind, n, p) is None]
    if workers > 1 and len(todo) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_solve_key, [(k, n, p, params.a) for k, n, p in todo]))
    else:
        results = []
        for k, n, p in todo:
            try:
                results.append(solve_eigen(k, n, p, params))
            except SolverError as exc:
                raise SolverError(f"solve failed for key {(k, n, p)}: {exc}") from exc
    for rec in results:
        cat.solves += 1
        cat.add(rec)
    return cat
