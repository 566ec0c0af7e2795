"""Command-line front end."""
from __future__ import annotations

import argparse
import csv
import fcntl
import json
import math
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checks
from .eigen import Catalog, CatalogError, check_key, enumerate_eigen
from .expansion import InapplicableCase, MissingRecords, fmt, reciprocal_expansion, spherical_expansion
from .fuchsian import SolverError
from .geometry import (DomainError, OctantFlags, Params, chart_patches, chart_points, sample_points,
                       to_cyclidic, from_cyclidic)
from .harmonics import build_harmonic

EXIT_OK, EXIT_DOMAIN, EXIT_SOLVER, EXIT_USAGE, EXIT_CONFIG = 0, 2, 3, 64, 78


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def parse_real(text) -> float:
    """Decimal or hex-float real."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return float(text)
    if not isinstance(text, str):
        raise ValueError(f"not a real number: {text!r}")
    t = text.strip()
    if "0x" in t.lower():
        return float.fromhex(t)
    return float(t)


def default_cache_dir() -> Path:
    env = os.environ.get("CYCLHARM_CACHE")
    if env:
        return Path(env)
    base = os.environ.get("XDG_CACHE_HOME") or os.path.join(os.path.expanduser("~"), ".cache")
    return Path(base) / "cyclharm"


@dataclass
class Config:
    a: tuple = (0.0, 1.0, 2.0, 3.0)
    order: int = 48
    tol: float = 1e-10
    cache: str | None = None
    format: str = "csv"
    threads: int = 1
    source: dict = field(default_factory=dict, compare=False, repr=False)

    FIELDS = ("a", "order", "tol", "cache", "format", "threads")

    def validate(self):
        try:
            Params(tuple(self.a))
        except (DomainError, ValueError, TypeError) as exc:
            raise ConfigError(f"a: {exc}") from exc
        if not isinstance(self.order, int) or self.order < 8:
            raise ConfigError("order must be an integer >= 8")
        if not (0.0 < self.tol < 1e-2):
            raise ConfigError("tol must lie in (0, 1e-2)")
        if self.format not in ("csv", "json"):
            raise ConfigError("format must be csv or json")
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ConfigError("threads must be a positive integer")

    @property
    def params(self) -> Params:
        return Params(tuple(self.a))

    def cache_file(self) -> Path:
        if self.cache:
            path = Path(self.cache)
        else:
            path = default_cache_dir()
        if path.suffix == ".json":
            return path
        tag = "_".join(float(v).hex() for v in self.a).replace(".", "").replace("+", "")
        return path / f"catalog_{tag}.json"


def _coerce(name: str, value):
    if name == "a":
        if isinstance(value, str):
            value = value.split(",")
        vals = tuple(parse_real(v) for v in value)
        if len(vals) != 4:
            raise ValueError("a needs four values")
        return vals
    if name in ("order", "threads"):
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise ValueError(f"{name} must be an integer")
        return int(value)
    if name == "tol":
        return parse_real(value)
    return None if value is None else str(value)


def load_config(path: str | None, overrides: dict) -> Config:
    """Built-in defaults, then the config file, then command-line flags."""
    cfg = Config()
    for name in Config.FIELDS:
        cfg.source[name] = "default"
    file = Path(path) if path else Path("cyclharm.json")
    if path or file.exists():
        try:
            doc = json.loads(file.read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {file}") from exc
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {file}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(doc) - set(Config.FIELDS)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for name, value in doc.items():
            try:
                setattr(cfg, name, _coerce(name, value))
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"config field {name}: {exc}") from exc
            cfg.source[name] = "file"
    for name, value in overrides.items():
        if value is None:
            continue
        try:
            setattr(cfg, name, _coerce(name, value))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"option --{name}: {exc}") from exc
        cfg.source[name] = "flag"
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# cache
# ---------------------------------------------------------------------------

@contextmanager
def _locked(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path.with_suffix(path.suffix + ".lock"), "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def open_catalog(cfg: Config) -> Catalog:
    path = cfg.cache_file()
    if path.exists():
        try:
            return Catalog.load(path, cfg.params)
        except CatalogError as exc:
            raise ConfigError(f"eigenvalue cache {path} rejected: {exc}") from exc
    return Catalog(cfg.params, provenance={"generator": "cyclharm"})


def save_catalog(cfg: Config, cat: Catalog) -> None:
    if cat.solves == 0:
        return
    path = cfg.cache_file()
    with _locked(path):
        # merge with whatever another process wrote meanwhile
        if path.exists():
            try:
                other = Catalog.load(path, cfg.params)
                for rec in other.sorted():
                    if cat.get(*rec.key) is None:
                        cat.add(rec)
            except CatalogError:
                pass
        cat.save(path)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _triple(text: str) -> np.ndarray:
    try:
        vals = [parse_real(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected three comma-separated reals, got {text!r}") from exc
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated reals, got {text!r}")
    return np.array(vals)


def _index(text: str) -> tuple[int, int]:
    try:
        n = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected n1,n2, got {text!r}") from exc
    if len(n) != 2 or min(n) < 0:
        raise argparse.ArgumentTypeError(f"expected two non-negative integers n1,n2, got {text!r}")
    return n


def _bits(text: str) -> tuple[int, ...]:
    if not text or any(c not in "01" for c in text):
        raise argparse.ArgumentTypeError(f"expected a parity word such as 0101, got {text!r}")
    return tuple(int(c) for c in text)


def _flags(text: str) -> OctantFlags:
    if len(text) != 4 or any(c not in "+-" for c in text[:3]) or text[3] not in "io":
        raise argparse.ArgumentTypeError(f"expected flags like ++-i or +++o, got {text!r}")
    sx, sy, sz = (1 if c == "+" else -1 for c in text[:3])
    return OctantFlags(sx, sy, sz, text[3] == "i")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON configuration file (default ./cyclharm.json if present)")
    common.add_argument("--a", help="singular points a0,a1,a2,a3 (decimal or hex-float)")
    common.add_argument("--order", type=int, help="surface quadrature order per patch")
    common.add_argument("--tol", help="eigen residual tolerance")
    common.add_argument("--cache", help="eigenvalue cache directory or .json file")
    common.add_argument("--format", choices=("csv", "json"), help="tabular output format")
    common.add_argument("--threads", type=int, help="parallel eigen solves")
    common.add_argument("-v", "--verbose", action="store_true", help="report solver calls on stderr")

    p = _Parser(prog="cyclharm", description="5-cyclidic harmonics: coordinates, eigenvalues, "
                "harmonics and reciprocal-distance expansions.", parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    coords = sub.add_parser("coords", help="coordinate conversion", parents=[common])
    csub = coords.add_subparsers(dest="action", parser_class=_Parser)
    c_to = csub.add_parser("to", help="Cartesian -> cyclidic", parents=[common])
    c_to.add_argument("--point", type=_triple, required=True)
    c_from = csub.add_parser("from", help="cyclidic -> Cartesian", parents=[common])
    c_from.add_argument("--s", type=_triple, required=True)
    c_from.add_argument("--flags", type=_flags, default=OctantFlags(1, 1, 1, True),
                        help="signs of x, y, z and i (inside) or o (outside); default +++i")

    eig = sub.add_parser("eigen", help="eigenvalue problems", parents=[common])
    esub = eig.add_subparsers(dest="action", parser_class=_Parser)
    e_solve = esub.add_parser("solve", help="solve one index", parents=[common])
    e_solve.add_argument("--kind", type=int, choices=(1, 2, 3), required=True)
    e_solve.add_argument("--n", type=_index, required=True)
    e_solve.add_argument("--p", type=_bits, required=True)
    e_table = esub.add_parser("table", help="all indices up to an order", parents=[common])
    e_table.add_argument("--kind", type=int, choices=(1, 2, 3), required=True)
    e_table.add_argument("--max-order", type=int, required=True)

    har = sub.add_parser("harmonic", help="harmonic evaluation", parents=[common])
    hsub = har.add_subparsers(dest="action", parser_class=_Parser)
    h_eval = hsub.add_parser("eval", help="evaluate G or H", parents=[common])
    h_eval.add_argument("--kind", type=int, choices=(1, 2, 3), required=True)
    h_eval.add_argument("--n", type=_index, required=True)
    h_eval.add_argument("--p", type=_bits, required=True)
    h_eval.add_argument("--point", type=_triple, required=True)
    h_eval.add_argument("--role", choices=("internal", "external", "I", "J"), default="internal")

    exp = sub.add_parser("expand", help="reciprocal-distance expansions", parents=[common])
    xsub = exp.add_subparsers(dest="action", parser_class=_Parser)
    x_ver = xsub.add_parser("verify", help="partial sums against 1/|r - r'|", parents=[common])
    x_ver.add_argument("--kind", choices=("1", "2", "3", "spherical"), required=True)
    x_ver.add_argument("--r", type=_triple, required=True)
    x_ver.add_argument("--rp", type=_triple, required=True)
    x_ver.add_argument("--max-order", type=int, required=True)

    surf = sub.add_parser("surface", help="coordinate surfaces", parents=[common])
    ssub = surf.add_subparsers(dest="action", parser_class=_Parser)
    s_mesh = ssub.add_parser("mesh", help="export a coordinate surface as points", parents=[common])
    s_mesh.add_argument("--coord", type=int, choices=(1, 2, 3), required=True)
    s_mesh.add_argument("--d", required=True)
    s_mesh.add_argument("--resolution", type=int, default=16)
    s_mesh.add_argument("--out", help="output file (default stdout)")

    cur = sub.add_parser("curves", help="polylines of the removable sets A1, A2", parents=[common])
    cur.add_argument("--set", choices=("A1", "A2"), required=True, dest="curve_set")
    cur.add_argument("--resolution", type=int, default=181)
    cur.add_argument("--out", help="output file (default stdout)")

    chk = sub.add_parser("check", help="invariant check suites", parents=[common])
    chk.add_argument("suite", choices=checks.SUITES + ("all",))
    return p


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _record_line(rec) -> str:
    parts = [f"kind={rec.kind}", f"n={rec.n[0]},{rec.n[1]}", "p=" + "".join(map(str, rec.p)),
             f"lambda1={fmt(rec.lam[0])}", f"lambda2={fmt(rec.lam[1])}",
             f"residual1={fmt(rec.residuals[0])}", f"residual2={fmt(rec.residuals[1])}",
             f"zeros={rec.zero_counts[0]},{rec.zero_counts[1]}", f"norm_scale={fmt(rec.norm_scale)}"]
    if rec.connection is not None:
        c = rec.connection
        parts += [f"a={fmt(c.a_coef)}", f"b={fmt(c.b_coef)}", f"c={fmt(c.c_coef)}"]
    return " ".join(parts)


TABLE_HEADER = ("kind", "n1", "n2", "p", "lambda1", "lambda2", "residual1", "residual2", "norm_scale")


def _table_rows(recs):
    for r in recs:
        yield (str(r.kind), str(r.n[0]), str(r.n[1]), "".join(map(str, r.p)), fmt(r.lam[0]), fmt(r.lam[1]),
               fmt(r.residuals[0]), fmt(r.residuals[1]), fmt(r.norm_scale))


def _emit_table(out, header, rows, form: str):
    rows = list(rows)
    if form == "json":
        out.write(json.dumps([dict(zip(header, row)) for row in rows], indent=1) + "\n")
        return
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)


def _parity_check(kind: int, n, p):
    try:
        return check_key(kind, n, p)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_coords(args, cfg, out):
    params = cfg.params
    if args.action == "to":
        s = to_cyclidic(args.point, params)
        out.write("s = " + " ".join(fmt(v) for v in s) + "\n")
    else:
        r = from_cyclidic(args.s, args.flags, params)
        out.write("r = " + " ".join(fmt(v) for v in r) + "\n")


def cmd_eigen(args, cfg, out, err):
    cat = open_catalog(cfg)
    try:
        if args.action == "solve":
            n, p = _parity_check(args.kind, args.n, args.p)
            rec = cat.get(args.kind, n, p)
            if rec is None:
                from .eigen import solve_eigen
                rec = solve_eigen(args.kind, n, p, cfg.params, cfg.tol)
                cat.solves += 1
                cat.add(rec)
            out.write(_record_line(rec) + "\n")
        else:
            if args.max_order < 0:
                raise UsageError("--max-order must be non-negative")
            enumerate_eigen(args.kind, args.max_order, cfg.params, catalog=cat, workers=cfg.threads)
            recs = [r for r in cat.sorted(args.kind) if r.n[0] + r.n[1] <= args.max_order]
            _emit_table(out, TABLE_HEADER, _table_rows(recs), cfg.format)
    finally:
        save_catalog(cfg, cat)
        if args.verbose:
            err.write(f"solver calls: {cat.solves}\n")


def cmd_harmonic(args, cfg, out, err):
    n, p = _parity_check(args.kind, args.n, args.p)
    cat = open_catalog(cfg)
    try:
        pair = build_harmonic(args.kind, n, p, cfg.params, cat)
        if args.role in ("I", "J"):
            if args.kind == 2:
                raise UsageError("building blocks I and J exist for kinds 1 and 3 only")
            val = pair.building_block(args.role, args.point)
        else:
            val = getattr(pair, args.role)(args.point)
        out.write(f"{args.role} = {fmt(val)}\n")
    finally:
        save_catalog(cfg, cat)
        if args.verbose:
            err.write(f"solver calls: {cat.solves}\n")


def cmd_expand(args, cfg, out, err):
    if args.max_order < 0:
        raise UsageError("--max-order must be non-negative")
    if args.kind == "spherical":
        rep = spherical_expansion(args.r, args.rp, args.max_order)
    else:
        kind = int(args.kind)
        cat = open_catalog(cfg)
        try:
            enumerate_eigen(kind, args.max_order, cfg.params, catalog=cat, workers=cfg.threads)
            rep = reciprocal_expansion(kind, args.r, args.rp, args.max_order, cat)
        finally:
            save_catalog(cfg, cat)
            if args.verbose:
                err.write(f"solver calls: {cat.solves}\n")
        if args.verbose:
            err.write(f"case {rep.case.value}, fitted constant {fmt(rep.fitted_constant())}\n")
    if cfg.format == "json":
        _emit_table(out, rep.HEADER, ([r[0], r[1], fmt(r[2]), fmt(r[3]), fmt(r[4])] for r in rep.rows), "json")
    else:
        out.write(rep.to_csv())


MESH_HEADER = ("patch", "u", "v", "x", "y", "z")


def export_mesh(coord: int, d: float, resolution: int, params: Params, out) -> int:
    """Write the coordinate surface s_coord = d as patch,u,v,x,y,z rows; returns the row count."""
    if resolution < 8:
        raise DomainError("mesh resolution must be at least 8")
    al, ar = params.interval(coord)
    if not (al < d < ar):
        raise DomainError(f"d={d} must lie strictly inside ({al}, {ar})")
    t = np.linspace(0.0, 1.0, resolution)
    U, V = np.meshgrid(t, t, indexing="ij")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(MESH_HEADER)
    count = 0
    for flags in chart_patches(coord):
        cs = chart_points(coord, d, U.ravel(), V.ravel(), flags, params)
        check = sample_points(cs.r, params).s[:, coord - 1]
        if np.max(np.abs(check - d)) > 1e-8:
            raise ArithmeticError("mesh point failed the coordinate self-check")
        for u, v, (x, y, z) in zip(U.ravel(), V.ravel(), cs.r):
            w.writerow((flags.label(), fmt(u), fmt(v), fmt(x + 0.0), fmt(y + 0.0), fmt(z + 0.0)))
            count += 1
    return count


CURVE_HEADER = ("branch", "theta", "x", "y", "z")


def curve_points(which: str, params: Params, resolution: int):
    """Points of A1 (plane x = 0) or A2 (plane y = 0) as closed polylines.

    In polar form rho, theta in the plane, u = rho^2 solves (u - 1)^2 = k u
    with k(theta) >= 0; each admissible theta gives the two roots u+- with
    u+ u- = 1, so the outer branch is the inversion of the inner one.
    """
    a0, a1, a2, a3 = params.a
    th = np.linspace(0.0, 2 * np.pi, resolution)
    c, s = np.cos(th), np.sin(th)
    if which == "A1":
        k = 4 * (a1 - a0) * (c**2 / (a2 - a1) + s**2 / (a3 - a1))
    else:
        k = 4 * (a2 - a0) * (s**2 / (a3 - a2) - c**2 / (a2 - a1))
    rows = []
    for branch, sign in (("inner", -1.0), ("outer", 1.0)):
        for t, ct, st, kk in zip(th, c, s, k):
            if kk < 0:
                continue
            u = 1 + kk / 2 + sign * math.sqrt(kk + kk * kk / 4)
            rho = math.sqrt(u)
            if which == "A1":
                rows.append((branch, t, 0.0, rho * ct, rho * st))
            else:
                rows.append((branch, t, rho * ct, 0.0, rho * st))
    return rows


def cmd_surface(args, cfg, out):
    d = parse_real(args.d)
    if args.out:
        with open(args.out, "w") as fh:
            export_mesh(args.coord, d, args.resolution, cfg.params, fh)
    else:
        export_mesh(args.coord, d, args.resolution, cfg.params, out)


def cmd_curves(args, cfg, out):
    if args.resolution < 8:
        raise DomainError("curve resolution must be at least 8")
    rows = curve_points(args.curve_set, cfg.params, args.resolution)

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for b, t, x, y, z in rows:
            w.writerow((b, fmt(t), fmt(x + 0.0), fmt(y + 0.0), fmt(z + 0.0)))

    if args.out:
        with open(args.out, "w") as fh:
            write(fh)
    else:
        write(out)


def cmd_check(args, cfg, out, err):
    cat = open_catalog(cfg)
    names = checks.SUITES if args.suite == "all" else (args.suite,)
    failed = 0
    try:
        for name in names:
            for res in checks.run_suite(name, cfg.params, cat):
                out.write(res.line() + "\n")
                out.flush()
                failed += not res.passed
    finally:
        save_catalog(cfg, cat)
        if args.verbose:
            err.write(f"solver calls: {cat.solves}\n")
    return 1 if failed else 0


def run(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        args.verbose = getattr(args, "verbose", False)
        if getattr(args, "command", None) is None or (
                args.command in ("coords", "eigen", "harmonic", "expand", "surface")
                and getattr(args, "action", None) is None):
            raise UsageError("missing subcommand; see --help")
        overrides = {f.name: getattr(args, f.name, None) for f in fields(Config) if f.name in Config.FIELDS}
        cfg = load_config(getattr(args, "config", None), overrides)
        cmd = args.command
        if cmd == "coords":
            cmd_coords(args, cfg, out)
        elif cmd == "eigen":
            cmd_eigen(args, cfg, out, err)
        elif cmd == "harmonic":
            cmd_harmonic(args, cfg, out, err)
        elif cmd == "expand":
            cmd_expand(args, cfg, out, err)
        elif cmd == "surface":
            cmd_surface(args, cfg, out)
        elif cmd == "curves":
            cmd_curves(args, cfg, out)
        else:
            return cmd_check(args, cfg, out, err)
        return EXIT_OK
    except UsageError as exc:
        err.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except ConfigError as exc:
        err.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except (InapplicableCase, DomainError) as exc:
        err.write(f"domain error: {exc}\n")
        return EXIT_DOMAIN
    except (SolverError, MissingRecords, ArithmeticError) as exc:
        err.write(f"solver failure: {exc}\n")
        return EXIT_SOLVER
    except OSError as exc:
        err.write(f"i/o error: {exc}\n")
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
