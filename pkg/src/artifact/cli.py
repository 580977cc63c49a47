"""
Command-line front end: ``artifact verify|solve|noether CONFIG``.

Problems are described in TOML files; see ``artifact/problems`` for the
bundled ones and the README for the format.  Exit codes:

    0   conditions hold (verify, noether) or the run succeeded (solve)
    10  conditions fail
    20  inconclusive
    1   input error (unreadable file, bad expression, inconsistent dimensions)
    30  solve stopped before reaching its goal (iteration cap, stalled radius)
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .descent import DescentParams
from .descent import solve as descent_solve
from .discretize import DiscreteField, Grid
from .expr import ExprSyntaxError, IntegrandExpr, eval_expr, parse, parse_boundary
from .noether import check_energy_conservation, check_noether
from .optimality import (
    BoundarySelections,
    Certificate,
    IsoperimetricConstraint,
    PiecewiseLinear,
    RegionSelection,
    StepFunction,
    VariationalProblem,
    Verdict,
    check_boundary,
    check_cq_boundary,
    check_isoperimetric,
    check_nonholonomic_regular,
    check_unconstrained,
    convexify_nonholonomic,
    min_total_mass,
)

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

__all__ = ["ConfigError", "ProblemConfig", "bundled_problems", "load_config", "main"]

EXIT_HOLD, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_INPUT, EXIT_BUDGET = 0, 10, 20, 1, 30
# The dense simplex handles the refined re-run comfortably up to this many cells;
# larger grids need ``refine = true`` in [run].
REFINE_CELL_LIMIT = 512
VERDICT_EXIT = {Verdict.HOLD: EXIT_HOLD, Verdict.FAIL: EXIT_FAIL, Verdict.INCONCLUSIVE: EXIT_INCONCLUSIVE}


class ConfigError(ValueError):
    """Invalid problem file; the message names the file and the offending key."""


@dataclass
class ProblemConfig:
    """A parsed problem file."""

    name: str
    source: str
    problem: VariationalProblem
    candidate: DiscreteField
    candidate_fn: Optional[object]
    selections: dict
    endpoint_selections: BoundarySelections
    run: dict = field(default_factory=dict)
    mass: Optional[dict] = None


# -- loading -------------------------------------------------------------------------------------------


def bundled_problems() -> dict:
    """Names and paths of the problem files shipped with the package."""
    root = resources.files("artifact") / "problems"
    return {p.name[:-5]: Path(str(p)) for p in root.iterdir() if p.name.endswith(".toml")}


def _resolve_path(spec: str) -> Path:
    path = Path(spec)
    if path.exists():
        return path
    bundled = bundled_problems()
    if spec in bundled:
        return bundled[spec]
    raise ConfigError(f"{spec}: no such file or bundled problem (bundled: {', '.join(sorted(bundled))})")


def load_config(spec: str, cells: Optional[Sequence[int]] = None) -> ProblemConfig:
    """Read a problem file (path or bundled name); ``cells`` overrides ``[domain] cells``."""
    path = _resolve_path(spec)
    src = str(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{src}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{src}: {exc.strerror}") from None
    return _build(doc, src, path.parent, cells)


def _section(doc: dict, name: str, src: str, required: bool = False) -> dict:
    sec = doc.get(name, {})
    if required and name not in doc:
        raise ConfigError(f"{src}: missing section [{name}]")
    if not isinstance(sec, dict):
        raise ConfigError(f"{src}: [{name}] must be a table")
    return sec


def _expr(text, where: str, src: str, **kw) -> IntegrandExpr:
    if not isinstance(text, str):
        raise ConfigError(f"{src}: {where} must be a string expression")
    try:
        return parse(text, **kw)
    except ExprSyntaxError as exc:
        raise ConfigError(f"{src}: {where}: {exc} in {text!r}") from None
    except ValueError as exc:
        raise ConfigError(f"{src}: {where}: {exc}") from None


def _boundary_expr(text, where: str, src: str, m: int) -> IntegrandExpr:
    if not isinstance(text, str):
        raise ConfigError(f"{src}: {where} must be a string expression")
    try:
        return parse_boundary(text, m=m)
    except ValueError as exc:
        raise ConfigError(f"{src}: {where}: {exc} in {text!r}") from None


def _field_function(spec, where: str, src: str, d: int, m: int):
    """Callable on node coordinates from one expression per component."""
    texts = [spec] if isinstance(spec, (str, int, float)) else list(spec)
    if len(texts) != m:
        raise ConfigError(f"{src}: {where} needs {m} component expression(s), got {len(texts)}")
    exprs = [_expr(str(t), f"{where}[{i + 1}]", src, d=d, m=1) for i, t in enumerate(texts)]
    for i, e in enumerate(exprs):
        if e.depends_on("u") or e.depends_on("xi"):
            raise ConfigError(f"{src}: {where}[{i + 1}] may only use the coordinates x1..x{d}")

    def fn(x):
        x = np.asarray(x, dtype=float)
        zu = np.zeros((len(x), 1))
        zxi = np.zeros((len(x), 1, d))
        return np.stack([eval_expr(e, x, zu, zxi) for e in exprs], axis=1)

    return fn


def _load_field(path: Path, grid: Grid, where: str, src: str) -> DiscreteField:
    try:
        return DiscreteField.from_csv(path, grid)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{src}: {where}: {exc}") from None


def _region_selection(spec, where: str, src: str, d: int) -> RegionSelection:
    if not isinstance(spec, dict):
        raise ConfigError(f"{src}: {where} must be a table with 'regions' and/or 'default'")
    regions = []
    for k, reg in enumerate(spec.get("regions", [])):
        try:
            box = tuple((float(lo), float(hi)) for lo, hi in reg["box"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"{src}: {where}.regions[{k + 1}] needs box = [[lo, hi], ...]") from None
        if len(box) != d:
            raise ConfigError(f"{src}: {where}.regions[{k + 1}] box has {len(box)} axes, domain has {d}")
        regions.append((box, _target(reg, f"{where}.regions[{k + 1}]", src)))
    default = _target(spec, where, src) if ("vertex" in spec or "target" in spec) else None
    return RegionSelection(tuple(regions), default, spec.get("kind", "hyper"))


def _target(tbl: dict, where: str, src: str):
    if "vertex" in tbl:
        v = tbl["vertex"]
        if not isinstance(v, int) or v < 0:
            raise ConfigError(f"{src}: {where}.vertex must be a nonnegative integer")
        return v
    if "target" in tbl:
        return tuple(float(t) for t in tbl["target"])
    raise ConfigError(f"{src}: {where} needs 'vertex' or 'target'")


def _fraction(v, where: str, src: str) -> Fraction:
    try:
        return Fraction(str(v)) if not isinstance(v, float) else Fraction(v)
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"{src}: {where}: not a number: {v!r}") from None


def _build(doc: dict, src: str, base: Path, cells_override) -> ProblemConfig:
    dom = _section(doc, "domain", src, required=True)
    try:
        bounds = [tuple(float(v) for v in b) for b in dom["bounds"]]
        cells = [int(n) for n in (cells_override or dom["cells"])]
    except KeyError as exc:
        raise ConfigError(f"{src}: [domain] missing key {exc.args[0]!r}") from None
    except (TypeError, ValueError):
        raise ConfigError(f"{src}: [domain] bounds must be [[lo, hi], ...] and cells integers") from None
    if len(cells) == 1 and len(bounds) == 2:
        cells = cells * 2
    try:
        grid = Grid(tuple(bounds), tuple(cells))
    except ValueError as exc:
        raise ConfigError(f"{src}: [domain] {exc}") from None
    d = grid.d

    integ = _section(doc, "integrand", src, required=True)
    m = int(integ.get("m", 1))
    f = _expr(integ.get("expression"), "[integrand] expression", src, d=d, m=m)

    bnd = _section(doc, "boundary", src)
    cons = _section(doc, "constraints", src)
    g0 = _boundary_expr(bnd["g0"], "[boundary] g0", src, m) if "g0" in bnd else None
    ineq = tuple(_boundary_expr(t, f"[boundary] ineq[{k + 1}]", src, m) for k, t in enumerate(bnd.get("ineq", [])))
    eq = tuple(_boundary_expr(t, f"[boundary] eq[{k + 1}]", src, m) for k, t in enumerate(bnd.get("eq", [])))
    iso = []
    for k, item in enumerate(cons.get("isoperimetric", [])):
        if not isinstance(item, dict) or "expression" not in item:
            raise ConfigError(f"{src}: [constraints] isoperimetric[{k + 1}] needs expression and level")
        e = _expr(item["expression"], f"[constraints] isoperimetric[{k + 1}]", src, d=d, m=m)
        iso.append(IsoperimetricConstraint(e, float(item.get("level", 0.0))))
    nonhol = tuple(
        _expr(t, f"[constraints] nonholonomic[{k + 1}]", src, d=d, m=m) for k, t in enumerate(cons.get("nonholonomic", []))
    )
    declared = cons.get("type")
    endpoint = g0 is not None or ineq or eq
    present = [n for n, flag in (("endpoint", endpoint), ("isoperimetric", iso), ("nonholonomic", nonhol)) if flag]
    if len(present) > 1:
        raise ConfigError(f"{src}: exactly one constraint family is allowed, found {', '.join(present)}")
    family = present[0] if present else "none"
    if declared is not None and declared != family:
        raise ConfigError(f"{src}: [constraints] type = {declared!r} but the file defines {family!r} data")

    dirichlet = None
    if not endpoint:
        if "u0_file" in bnd:
            dirichlet = _load_field(base / bnd["u0_file"], grid, "[boundary] u0_file", src)
        elif "u0" in bnd:
            dirichlet = _field_function(bnd["u0"], "[boundary] u0", src, d, m)
        else:
            raise ConfigError(f"{src}: [boundary] needs u0 or u0_file")
    try:
        problem = VariationalProblem(
            f, grid, dirichlet, g0, ineq, eq, tuple(iso), nonhol, name=str(doc.get("name", Path(src).stem))
        )
    except ValueError as exc:
        raise ConfigError(f"{src}: {exc}") from None

    cand = _section(doc, "candidate", src)
    cand_fn = None
    if "file" in cand:
        candidate = _load_field(base / cand["file"], grid, "[candidate] file", src)
    elif "u" in cand:
        cand_fn = _field_function(cand["u"], "[candidate] u", src, d, m)
        candidate = DiscreteField.from_function(grid, cand_fn, m)
    elif dirichlet is not None:
        candidate = problem.boundary_field()
        cand_fn = dirichlet if callable(dirichlet) else None
    else:
        raise ConfigError(f"{src}: [candidate] u is required for problems with free endpoints")

    sels_doc = _section(doc, "selections", src)
    selections = {}
    for key, spec in sels_doc.items():
        if key == "endpoint":
            continue
        idx = 0 if key == "objective" else key
        try:
            idx = int(idx)
        except ValueError:
            raise ConfigError(f"{src}: [selections] keys are 'objective', constraint numbers or 'endpoint'") from None
        selections[idx] = _region_selection(spec, f"[selections] {key}", src, d)
    ep = sels_doc.get("endpoint", {})
    endpoint_sel = BoundarySelections(
        s={k: [float(t) for t in v] for k, v in ep.get("s", {}).items()},
        r={k: [float(t) for t in v] for k, v in ep.get("r", {}).items()},
    )
    if "objective" in ep:
        endpoint_sel.f = _region_selection(ep["objective"], "[selections.endpoint] objective", src, d)
    elif 0 in selections:
        endpoint_sel.f = selections[0]

    run = dict(_section(doc, "run", src))
    mass = None
    if "mass" in doc:
        mass = _mass_section(doc["mass"], src)
    return ProblemConfig(problem.name, src, problem, candidate, cand_fn, selections, endpoint_sel, run, mass)


def _mass_section(sec: dict, src: str) -> dict:
    out = {}
    if "w" in sec:
        w = sec["w"]
        br = [_fraction(b, "[mass] w.breaks", src) for b in w["breaks"]]
        vals = [float(v) for v in w["values"]]
        try:
            w2 = StepFunction(tuple(br), tuple(vals))
        except ValueError as exc:
            raise ConfigError(f"{src}: [mass] w: {exc}") from None
        out["w_f"] = (StepFunction((br[0], br[-1]), (0.0,)), w2)
    tests = []
    for k, t in enumerate(sec.get("tests", [])):
        try:
            h = PiecewiseLinear.from_slopes(
                _fraction(t["start"], f"[mass] tests[{k + 1}].start", src),
                [_fraction(b, f"[mass] tests[{k + 1}].breaks", src) for b in t["breaks"]],
                [_fraction(s, f"[mass] tests[{k + 1}].slopes", src) for s in t["slopes"]],
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{src}: [mass] tests[{k + 1}]: {exc}") from None
        tests.append((t.get("name", f"h{k + 1}"), h))
    out["tests"] = tests
    return out


# -- output --------------------------------------------------------------------------------------------


def _write(path: Path, text: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _cell_csv(grid: Grid, columns: dict) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    names = [f"x{k + 1}" for k in range(grid.d)]
    flat = {}
    for key, arr in columns.items():
        arr = np.asarray(arr, dtype=float).reshape(grid.n_cells, -1)
        if arr.shape[1] == 1:
            flat[key] = arr[:, 0]
        else:
            for j in range(arr.shape[1]):
                flat[f"{key}{j + 1}"] = arr[:, j]
    w.writerow(names + list(flat))
    for c in range(grid.n_cells):
        w.writerow(["%.17e" % v for v in grid.centers[c]] + ["%.17e" % flat[k][c] for k in flat])
    return buf.getvalue()


def _node_csv(grid: Grid, columns: dict, interior_only: dict) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    nodes = grid.nodes
    full = {}
    for key, arr in columns.items():
        arr = np.asarray(arr, dtype=float)
        if interior_only.get(key):
            tmp = np.zeros((grid.n_nodes,) + arr.shape[1:])
            tmp[grid.interior] = arr
            arr = tmp
        arr = arr.reshape(grid.n_nodes, -1)
        for j in range(arr.shape[1]):
            full[f"{key}{j + 1}" if arr.shape[1] > 1 else key] = arr[:, j]
    w.writerow([f"x{k + 1}" for k in range(grid.d)] + list(full))
    for n in range(grid.n_nodes):
        w.writerow(["%.17e" % v for v in nodes[n]] + ["%.17e" % full[k][n] for k in full])
    return buf.getvalue()


def _emit_certificate(cert: Certificate, grid: Grid, out: Path, stem: str, tol: Optional[float]) -> list:
    written = []
    valid = cert.validate() if tol is None else cert.validate(tol)
    text = cert.to_text() + f"validated: {valid}\n"
    _write(out / f"{stem}.cert.txt", text)
    written.append(out / f"{stem}.cert.txt")
    if "zeta" in cert.witness:
        _write(out / f"{stem}.zeta.csv", _cell_csv(grid, {"zeta": cert.witness["zeta"]}))
        written.append(out / f"{stem}.zeta.csv")
        if "div_zeta" in cert.witness:
            _write(out / f"{stem}.div.csv", _node_csv(grid, {"div_zeta": cert.witness["div_zeta"]}, {"div_zeta": True}))
            written.append(out / f"{stem}.div.csv")
    if "test_field" in cert.witness:
        _write(out / f"{stem}.testfield.csv", _node_csv(grid, {"h": cert.witness["test_field"]}, {}))
        written.append(out / f"{stem}.testfield.csv")
    return written


# -- commands ------------------------------------------------------------------------------------------


def _check(cfg: ProblemConfig, p: VariationalProblem, u: DiscreteField, extras: bool) -> Certificate:
    """Run the checker of the problem family on one grid."""
    family = p.family
    if family == "dirichlet":
        return check_unconstrained(p, u, cfg.selections.get(0))
    if family == "endpoint":
        sel = cfg.endpoint_selections
        cq = check_cq_boundary(p, u, sel.s, sel.r)
        cert = check_boundary(p, u, sel)
        cert.extras["cq_holds"] = cq.holds
        if cert.fails and not cq.holds:
            cert.verdict = Verdict.INCONCLUSIVE
            cert.message = "constraint qualification fails and the transversality system is infeasible"
        return cert
    if family == "isoperimetric":
        return check_isoperimetric(p, u, cfg.selections)
    cert = check_nonholonomic_regular(p, u, cfg.selections)
    h_star = cfg.run.get("h_star")
    if extras and (h_star is not None or cfg.mass is not None):
        cp = convexify_nonholonomic(p, u, cfg.selections)
        if h_star is not None:
            fn = _field_function(h_star, "[run] h_star", cfg.source, p.grid.d, p.m)
            cert.extras["cq_max_phi"] = cp.cq_report(DiscreteField.from_function(p.grid, fn, p.m))
        if cfg.mass is not None:
            for name, h in cfg.mass["tests"]:
                mb = min_total_mass(cp, [h], cfg.mass.get("w_f"))
                cert.extras[f"mass_{name}"] = mb.mass
                cert.extras[f"J_{name}"] = float(mb.J[0])
                cert.extras[f"sup_{name}"] = float(h.sup_norm)
            masses = ", ".join(
                f"{name}: {cert.extras[f'mass_{name}']:.6g} (sup {cert.extras[f'sup_{name}']:.6g})"
                for name, _ in cfg.mass["tests"]
            )
            cert.message = (cert.message + "; " if cert.message else "") + f"minimum multiplier mass {masses}"
    return cert


def run_verify(cfg: ProblemConfig, out: Path, tol: Optional[float] = None) -> tuple:
    """
    Dispatch to the checker of the problem family; returns ``(exit code, certificate)``.

    A ConditionsFail verdict is re-checked on a grid refined by 2 when the
    candidate is given by expressions and the refined grid is small enough
    (``[run] refine`` = ``"auto"``, ``true`` or ``false``).
    """
    p, u = cfg.problem, cfg.candidate
    cert = _check(cfg, p, u, extras=True)
    refine = cfg.run.get("refine", "auto")
    if refine not in ("auto", True, False):
        raise ConfigError(f"{cfg.source}: [run] refine must be true, false or \"auto\"")
    small = 2 ** p.grid.d * p.grid.n_cells <= REFINE_CELL_LIMIT
    resamplable = cfg.candidate_fn is not None and not isinstance(p.dirichlet, DiscreteField)
    if cert.fails and resamplable:
        if refine is True or (refine == "auto" and small):
            p2 = p.refined(2)
            u2 = DiscreteField.from_function(p2.grid, cfg.candidate_fn, p.m)
            cert.refined = _check(cfg, p2, u2, extras=False)
            cert.extras["refinement_stable"] = cert.refined.fails
            cert.message += f"; re-run at {'x'.join(map(str, p2.grid.cells))}: {cert.refined.verdict.value}"
        elif refine == "auto":
            cert.extras["refinement"] = f"skipped: refined grid exceeds {REFINE_CELL_LIMIT} cells"
    out.mkdir(parents=True, exist_ok=True)
    _emit_certificate(cert, p.grid, out, cfg.name, tol)
    if cert.refined is not None:
        fine = Grid(p.grid.bounds, cert.refined.cells)
        _emit_certificate(cert.refined, fine, out, f"{cfg.name}.refined", tol)
    return VERDICT_EXIT[cert.verdict], cert


def run_solve(cfg: ProblemConfig, out: Path, overrides: dict) -> tuple:
    run = {**cfg.run, **{k: v for k, v in overrides.items() if v is not None}}
    known = {f for f in DescentParams.__dataclass_fields__}
    params = DescentParams(**{k: v for k, v in run.items() if k in known})
    res = descent_solve(cfg.problem, cfg.candidate, params)
    out.mkdir(parents=True, exist_ok=True)
    res.u.to_csv(out / f"{cfg.name}.u.csv")
    res.trace_csv(out / f"{cfg.name}.trace.csv")
    summary = f"reason: {res.reason}\nvalue: {'%.17e' % res.value}\niterations: {res.iterations}\n"
    _write(out / f"{cfg.name}.solve.txt", summary)
    if res.reason == "target" or (res.reason == "stationary" and params.target is None):
        code = EXIT_HOLD
    elif res.reason == "lp_failure":
        code = EXIT_INCONCLUSIVE
    else:
        code = EXIT_BUDGET
    return code, res


def run_noether(cfg: ProblemConfig, out: Path, mode: str, tol: Optional[float] = None) -> tuple:
    if mode == "energy":
        cert = check_energy_conservation(cfg.problem, cfg.candidate)
    else:
        cert = check_noether(cfg.problem, cfg.candidate, cfg.selections.get(0))
    out.mkdir(parents=True, exist_ok=True)
    _emit_certificate(cert, cfg.problem.grid, out, f"{cfg.name}.{mode}", tol)
    return VERDICT_EXIT[cert.verdict], cert


def _cells_arg(text: str) -> list:
    try:
        return [int(t) for t in text.lower().split("x")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or N1xN2, got {text!r}") from None


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="artifact", description="Codifferential optimality checks for variational problems.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="problem file, or the name of a bundled problem")
        sp.add_argument("--out", default=".", help="directory for certificates and CSV files (default: .)")
        sp.add_argument("--cells", type=_cells_arg, help="override the grid resolution, N or N1xN2")
        sp.add_argument("--tol", type=float, help="tolerance for validating certificates / stationarity in solve")
        sp.add_argument("--max-iter", type=int, help="iteration cap for solve")
        sp.add_argument("--seed", type=int, help="seed for the vertex sampling in solve")
        sp.add_argument("--quiet", action="store_true", help="print only the verdict line")

    common(sub.add_parser("verify", help="check the necessary conditions at the candidate field"))
    common(sub.add_parser("solve", help="run codifferential descent from the candidate field"))
    sp = sub.add_parser("noether", help="check the Noether inclusion or conservation of energy")
    common(sp)
    sp.add_argument("--mode", choices=("noether", "energy"), default=None)
    sub.add_parser("list", help="list the bundled problems")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = _parser()
    args = ap.parse_args(argv)
    if args.command == "list":
        for name, path in sorted(bundled_problems().items()):
            print(f"{name}\t{path}")
        return 0
    try:
        cfg = load_config(args.config, args.cells)
        out = Path(args.out)
        if args.command == "verify":
            code, cert = run_verify(cfg, out, args.tol)
            _report(cert, args.quiet)
        elif args.command == "solve":
            overrides = {"max_iter": args.max_iter, "seed": args.seed, "eps_stat": args.tol}
            code, res = run_solve(cfg, out, overrides)
            print(f"{cfg.name}: {res.reason} value={res.value:.12g} iterations={res.iterations}")
        else:
            mode = args.mode or cfg.run.get("mode", "noether")
            if mode not in ("noether", "energy"):
                raise ConfigError(f"{cfg.source}: [run] mode must be 'noether' or 'energy'")
            code, cert = run_noether(cfg, out, mode, args.tol)
            _report(cert, args.quiet)
        return code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def _report(cert: Certificate, quiet: bool) -> None:
    print(f"{cert.check}: {cert.verdict.value}" + (f" ({cert.message})" if cert.message else ""))
    if quiet:
        return
    for key, val in cert.extras.items():
        if isinstance(val, (int, float, bool, str, np.floating)):
            print(f"  {key}: {val}")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
