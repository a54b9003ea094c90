"""Command-line front end.

``pulshom <command> [--config PATH] [--out DIR] [--threads N] [--h H] [--ns N] [--eps LIST]``

Commands: ``cell``, ``upscale``, ``macro``, ``micro``, ``compare``, ``sweep``,
``verify``.  Exit codes: 0 success, 1 failed verification, 2 invalid input,
3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import femcore as fe
from .cellsolve import MOVING, TRANSFORMED, CellSolver
from .config import ALL_CHECKS, build_program, bundled_config_path, config_hash, default_config, load_config
from .errors import (
    ClearanceViolation,
    ConfigError,
    DegenerateMap,
    GridMismatch,
    IncompatibleData,
    InsufficientSlices,
    InvalidSlice,
    MeshFailure,
    NonFiniteCoefficient,
    PointNotOnInterface,
    SolverDivergence,
)
from .exprs import Expression
from .macrosim import CoefficientField, MacroProblem, run
from .meshkit import mesh_cell, write_vtk
from .microgeom import back_and_forth_program, breathing_disk_program, obstacle_at, shuttle_program
from .microsim import EpsilonProblem, compare_to_homogenised, run_micro
from .upscale import average_coefficients, compute_slices, lambda_comparison, slice_coefficients, slice_points

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_SOLVER = 0, 1, 2, 3
INPUT_ERRORS = (ConfigError, ClearanceViolation, InvalidSlice, InsufficientSlices, PointNotOnInterface,
                GridMismatch, ValueError)
SOLVER_ERRORS = (SolverDivergence, DegenerateMap, MeshFailure, NonFiniteCoefficient, IncompatibleData,
                 np.linalg.LinAlgError, RuntimeError)

SLICE_COLUMNS = ["t", "x1", "x2", "s", "theta", "D11", "D12", "D22", "V1", "V2"]
COEFF_COLUMNS = ["t", "x1", "x2", "D11", "D12", "D22", "W1", "W2", "V1", "V2", "F", "G"]


# -- shared plumbing ----------------------------------------------------------
class Run:
    """Resolved configuration, output directory and thread count of one command."""

    def __init__(self, cfg, out=None, threads=None):
        self.cfg = cfg
        self.program = build_program(cfg["motion"])
        self.out = Path(out or cfg["outputs"]["directory"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.threads = threads or _env_threads()
        self.formats = set(cfg["outputs"]["formats"])
        self.hash = config_hash(cfg)

    @property
    def disc(self):
        return self.cfg["discretization"]

    @property
    def phys(self):
        return self.cfg["physics"]

    def D(self):
        return np.asarray(self.phys["D"], float)

    def meta(self, command):
        return {"command": command, "version": __version__, "config_hash": self.hash}

    def write_csv(self, name, columns, rows):
        path = self.out / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"# pulshom {__version__} config {self.hash}"])
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        return path

    def write_plot(self, name, data, x, y, kind="line", title=""):
        if "plot" not in self.formats:
            return None
        ys = y if isinstance(y, (list, tuple)) else [y]
        text = (f"kind: {kind}\ndata: {data}\nx: {x}\ny: [{', '.join(ys)}]\ntitle: {title}\n"
                f"comment_lines: 1\n")
        (self.out / name).write_text(text)
        return self.out / name

    def write_json(self, name, payload):
        (self.out / name).write_text(json.dumps(payload, indent=2, default=_json_default) + "\n")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v) + 0.0)  # no negative zeros
    return v


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    return str(o)


def _env_threads():
    try:
        return max(1, int(os.environ.get("PULSHOM_THREADS", "1")))
    except ValueError:
        return 1


def _slice_row(c):
    return [c.t, c.x[0], c.x[1], c.s, c.porosity, c.D_star[0, 0], c.D_star[0, 1], c.D_star[1, 1],
            c.V_star[0], c.V_star[1]]


def _coeff_row(e):
    return [e.t, e.x[0], e.x[1], e.D_hom[0, 0], e.D_hom[0, 1], e.D_hom[1, 1], e.W_hom[0], e.W_hom[1],
            e.V_hom[0], e.V_hom[1], e.F, e.G]


def _homogenize_at(r, x, program=None, n_s=None, keep_solutions=False, flip_normal=False):
    program = program or r.program
    d = r.disc
    n_s = n_s or d["n_s"]
    ss = slice_points(n_s)
    solver = CellSolver(program, d["h"], r.D(), frame=d["frame"], map_kind=d["map_kind"],
                        flip_normal=flip_normal)
    t = r.cfg["point"]["t"]
    f0, g0 = r.phys["f0"], r.phys["g0"]

    def work(s):
        sol = solver.solve(t, tuple(x), float(s), d["formulation"])
        return sol, slice_coefficients(sol, f0, g0, program)

    if r.threads > 1:
        with ThreadPoolExecutor(max_workers=r.threads) as pool:
            pairs = list(pool.map(work, ss))
    else:
        pairs = [work(s) for s in ss]
    eff = average_coefficients([p[1] for p in pairs], program)
    return eff, ([p[0] for p in pairs] if keep_solutions else None)


def _sample_points(r):
    grid = r.cfg["point"]["grid"]
    if grid is None:
        x = r.cfg["point"]["x"]
        return [x[0]], [x[1]]
    try:
        x1 = [float(Expression(str(v), ())()) for v in grid.get("x1", [0.5])]
        x2 = [float(Expression(str(v), ())()) for v in grid.get("x2", [0.5])]
    except Exception as exc:  # noqa: BLE001
        raise ConfigError(f"point.grid: {exc}") from None
    return x1, x2


def _coefficient_field(r):
    """Macro coefficients from the config override or by upscaling."""
    ov = r.phys["coefficients"]
    if ov is not None:
        unknown = set(ov) - {"D", "drift", "source", "theta"}
        if unknown:
            raise ConfigError(f"physics.coefficients: unknown keys {sorted(unknown)}")
        return CoefficientField.uniform(ov.get("D", 1.0), ov.get("drift", (0.0, 0.0)),
                                        ov.get("source", 0.0), ov.get("theta", 1.0)), []
    x1, x2 = _sample_points(r)
    effs = [[_homogenize_at(r, (a, b))[0] for b in x2] for a in x1]
    flat = [e for row in effs for e in row]
    if len(flat) == 1:
        return CoefficientField.from_effective(flat[0]), flat
    return CoefficientField.from_samples(x1, x2, effs), flat


def _initial_mass_density(r, cf):
    u0 = Expression(r.phys["u_in"], ("x1", "x2"))

    def u_in(x1, x2):
        p = np.column_stack([np.ravel(x1), np.ravel(x2)])
        return cf.theta(p) * np.broadcast_to(u0(x1=x1, x2=x2), np.shape(x1))

    return u_in


# -- commands -----------------------------------------------------------------
def cmd_cell(r):
    x = r.cfg["point"]["x"]
    eff, sols = _homogenize_at(r, x, keep_solutions=True)
    r.write_csv("slices.csv", SLICE_COLUMNS, [_slice_row(c) for c in eff.slices])
    r.write_csv("coefficients.csv", COEFF_COLUMNS, [_coeff_row(eff)])
    if "vtk" in r.formats:
        vdir = r.out / "correctors"
        vdir.mkdir(exist_ok=True)
        for k, sol in enumerate(sols):
            data = {f"zeta{j}": sol.dofmap.to_vertices(sol.zeta[j]) for j in range(3)}
            write_vtk(vdir / f"slice_{k:03d}.vtk", sol.mesh.points, sol.mesh.triangles, data,
                      title=f"cell correctors s={sol.s}")
    r.write_plot("slices.plot", "slices.csv", "s", ["V1", "V2"], title="pulsation drift per slice")
    r.write_json("cell.json", {**r.meta("cell"), "V_hom": eff.V_hom, "D_hom": eff.D_hom})
    return EXIT_OK


def cmd_upscale(r):
    x1, x2 = _sample_points(r)
    rows = []
    slice_rows = []
    for a in x1:
        for b in x2:
            eff, _ = _homogenize_at(r, (a, b))
            rows.append(_coeff_row(eff))
            slice_rows += [_slice_row(c) for c in eff.slices]
    r.write_csv("coefficients.csv", COEFF_COLUMNS, rows)
    r.write_csv("slices.csv", SLICE_COLUMNS, slice_rows)
    r.write_plot("coefficients.plot", "coefficients.csv", "x1", ["V1", "W1"], title="homogenised drift")
    r.write_json("upscale.json", r.meta("upscale"))
    return EXIT_OK


def _macro_problem(r, cf, dt=None):
    d = r.disc
    return MacroProblem(cf, _initial_mass_density(r, cf), d["T"], dt or d["dt"], n=d["macro_n"],
                        formulation=r.phys["macro_formulation"], streamline=r.phys["streamline"])


def cmd_macro(r):
    cf, effs = _coefficient_field(r)
    prob = _macro_problem(r, cf)
    res = run(prob, cadence=r.cfg["outputs"]["cadence"])
    rows = [[k, t, m, l] for k, (t, m, l) in enumerate(zip(res.times, res.mass, res.l2))]
    r.write_csv("macro_diagnostics.csv", ["step", "t", "mass", "l2"], rows)
    u = res.mass_density()
    p = res.mesh.points
    r.write_csv("macro_final.csv", ["x1", "x2", "u"], [[a, b, c] for (a, b), c in zip(p, u)])
    if "vtk" in r.formats:
        for k, (t, snap) in enumerate(zip(res.snapshot_times, res.snapshots)):
            write_vtk(r.out / f"macro_{k:04d}.vtk", p, res.mesh.triangles, {"u": res.mass_density(snap)},
                      title=f"macro t={t}")
    r.write_plot("macro.plot", "macro_diagnostics.csv", "t", ["mass", "l2"], title="macro diagnostics")
    r.write_json("macro.json", {**r.meta("macro"), "final_mass": res.mass[-1],
                                "coefficients": [_coeff_row(e) for e in effs]})
    return EXIT_OK


def _micro_problem(r, eps):
    d = r.disc
    return EpsilonProblem(r.program, eps, d["T"], r.phys["u_in"], h=d["micro_h"], D=r.D(), dt=d["micro_dt"],
                          f0=r.phys["f0"], g0=r.phys["g0"], map_kind=d["map_kind"],
                          allow_fine=abs(eps - 1 / 16) < 1e-14)


def _run_eps(r, fn):
    eps_list = r.disc["eps"]
    if r.threads > 1 and len(eps_list) > 1:
        with ThreadPoolExecutor(max_workers=min(r.threads, len(eps_list))) as pool:
            return list(pool.map(fn, eps_list))
    return [fn(e) for e in eps_list]


def _eps_tag(eps):
    return f"{round(1 / eps)}"


def cmd_micro(r):
    def one(eps):
        return run_micro(_micro_problem(r, eps))

    results = _run_eps(r, one)
    for res in results:
        tag = _eps_tag(res.eps)
        r.write_csv(f"micro_eps{tag}.csv", ["t", "mass", "energy"],
                    [[t, m, e] for t, m, e in zip(res.times, res.mass, res.energy)])
        if "vtk" in r.formats:
            write_vtk(r.out / f"micro_eps{tag}.vtk", res.mesh.points, res.mesh.triangles,
                      {"u_hat": res.snapshots[-1]}, title=f"micro eps=1/{tag}")
    r.write_plot("micro.plot", "micro_eps*.csv", "t", ["mass", "energy"], title="micro diagnostics")
    r.write_json("micro.json", r.meta("micro"))
    return EXIT_OK


def compare_runs(r):
    """Macro run plus one micro run per ``eps``; returns the comparison reports."""
    d = r.disc
    cf, effs = _coefficient_field(r)
    cadence = round(d["compare_dt"] / d["dt"])
    if cadence < 1 or abs(cadence * d["dt"] - d["compare_dt"]) > 1e-12:
        raise GridMismatch("compare_dt must be a multiple of the macro dt")
    macro = run(_macro_problem(r, cf), cadence=cadence)
    theta = effs[0].porosity_mean if len(effs) == 1 else None
    times = np.asarray(macro.snapshot_times)
    blocks = d["blocks"] or round(1 / max(d["eps"]))

    def one(eps):
        micro = run_micro(_micro_problem(r, eps), compare_times=times)
        return compare_to_homogenised(micro, macro, blocks=blocks, theta=theta), micro

    return _run_eps(r, one), macro


def cmd_compare(r):
    out, macro = compare_runs(r)
    rows, trows = [], []
    for rep, micro in out:
        rows.append([rep.eps, rep.block_error, rep.zero_extension_error, rep.pore_error, rep.blocks,
                     float(np.max(np.abs(np.diff(micro.mass))) / abs(micro.mass[0]))])
        for k, t in enumerate(rep.times):
            trows.append([rep.eps, t, rep.block_errors[k], rep.zero_extension_errors[k], rep.pore_errors[k]])
    r.write_csv("errors.csv", ["eps", "block_error", "zero_extension_error", "pore_error", "blocks",
                               "max_mass_change"], rows)
    r.write_csv("errors_time.csv", ["eps", "t", "block_error", "zero_extension_error", "pore_error"], trows)
    r.write_plot("errors.plot", "errors.csv", "eps", ["block_error", "zero_extension_error"], kind="loglog",
                 title="micro-macro error")
    r.write_json("compare.json", {**r.meta("compare"), "errors": rows})
    return EXIT_OK


def sweep_table(r):
    sw = r.cfg["sweep"]
    rows = []
    for a in sw["a"]:
        for b in sw["b"]:
            for speed in sw["speed"]:
                stroke = speed / 4
                prog = shuttle_program(a, b, left=0.5 - stroke / 2, right=0.5 + stroke / 2)
                eff, _ = _homogenize_at(r, r.cfg["point"]["x"], program=prog)
                l1, l2 = lambda_comparison(prog, slices=eff.slices)
                rows.append([a, b, speed, l1, l2, eff.V_hom[0], eff.V_hom[1]])
    return rows


def cmd_sweep(r):
    rows = sweep_table(r)
    r.write_csv("sweep.csv", ["a", "b", "speed", "lambda1", "lambda2", "V1", "V2"], rows)
    r.write_plot("sweep.plot", "sweep.csv", "a", ["V1"], kind="scatter", title="drift versus obstacle width")
    r.write_json("sweep.json", r.meta("sweep"))
    return EXIT_OK


# -- verification ---------------------------------------------------------------
def _check(name, fn):
    t0 = time.perf_counter()
    try:
        passed, value, threshold, message = fn()
    except Exception as exc:  # noqa: BLE001 - every failure is reported, not raised
        passed, value, threshold, message = False, None, None, f"{type(exc).__name__}: {exc}"
    return {"name": name, "passed": bool(passed), "value": value, "threshold": threshold,
            "message": message, "seconds": round(time.perf_counter() - t0, 3)}


def verification_checks(r):
    """Named checks of the verification suite as zero-argument callables."""
    vcfg = r.cfg["verify"]
    n_s = vcfg["n_s"] or r.disc["n_s"]
    h = r.disc["h"]
    D = r.D()
    Dnorm = float(np.linalg.norm(D * np.eye(2) if D.ndim == 0 else D, 2))
    flip = vcfg["flip_normal"]
    cache = {}

    def shuttle():
        if "shuttle" not in cache:
            prog = shuttle_program()
            cache["shuttle"] = (prog, compute_slices(prog, 0.0, (0.5, 0.5), h, n_s, D, flip_normal=flip))
        return cache["shuttle"]

    def zero_advection():
        prog = back_and_forth_program()
        eff = average_coefficients(compute_slices(prog, 0.0, (0.5, 0.5), h, n_s, D, flip_normal=flip), prog)
        v = float(np.linalg.norm(eff.V_hom))
        return v <= 1e-3 * Dnorm, v, 1e-3 * Dnorm, "|V_hom| of a back-and-forth translation"

    def lambda_sign():
        prog, sl = shuttle()
        eff = average_coefficients(sl, prog)
        l1, l2 = lambda_comparison(prog, slices=sl)
        ok = eff.V_hom[0] > 0 and l1 > 0 and l2 > 0 and abs(eff.V_hom[1]) <= 1e-4 * Dnorm
        return ok, [float(eff.V_hom[0]), l1, l2], 0.0, "V_hom.e1, lambda1, lambda2 positive"

    def lambda_order():
        prog, sl = shuttle()
        l1, l2 = lambda_comparison(prog, slices=sl)
        return l1 > l2, l1 - l2, 0.0, "lambda1 - lambda2 > 0"

    def formulation_equivalence():
        prog = shuttle_program()
        solver = CellSolver(prog, h, D)
        worst = 0.0
        for s in (0.125, 0.625):
            a = solver.solve(0.0, (0.5, 0.5), s, MOVING)
            b = solver.solve(0.0, (0.5, 0.5), s, TRANSFORMED)
            worst = max(worst, float(np.max(np.abs(a.D_star - b.D_star))) / Dnorm,
                        float(np.linalg.norm(a.V_star - b.V_star) / np.linalg.norm(a.V_star)))
        return worst <= 0.02, worst, 0.02, "relative D*, V* gap between the two cell formulations"

    def compatibility():
        worst = 0.0
        for prog in (shuttle_program(), breathing_disk_program()):
            solver = CellSolver(prog, h, D, flip_normal=flip)
            for s in slice_points(n_s):
                sol = solver.solve(0.0, (0.5, 0.5), float(s), MOVING)
                worst = max(worst, sol.compatibility)
        return worst <= fe.COMPAT_TOL, worst, fe.COMPAT_TOL, "|dTheta/ds - int v.nu| over all slices"

    def spd():
        prog, sl = shuttle()
        eff = average_coefficients(sl, prog)
        lam = float(np.min(np.linalg.eigvalsh(eff.D_hom)))
        margin = min(c.voigt_margin(D) for c in sl)
        return lam > 0 and margin >= -1e-10, [lam, margin], 0.0, "D_hom eigenvalue and Voigt margin"

    def mass_conservation():
        prog, sl = shuttle()
        eff = average_coefficients(sl, prog)
        cf = CoefficientField.from_effective(eff)
        mp = MacroProblem(cf, "1 + 0.5*cos(pi*x1)*cos(pi*x2)", 1 / 16, 1 / 256, n=32)
        mres = run(mp)
        macro_drift = float(np.max(np.abs(np.diff(mres.mass))) / abs(mres.mass[0]))
        up = EpsilonProblem(prog, 1 / 4, 1 / 16, "1 + 0.5*cos(pi*x1)*cos(pi*x2)", h=1 / 8)
        ures = run_micro(up)
        micro_drift = float(np.max(np.abs(np.diff(ures.mass))) / abs(ures.mass[0]))
        worst = max(macro_drift, micro_drift)
        return worst <= 1e-8, [macro_drift, micro_drift], 1e-8, "largest relative mass change per step"

    def manufactured_convergence():
        hs = [1 / 8, 1 / 16, 1 / 32]
        errs = np.array([fe.manufactured_periodic(mesh_cell(
            obstacle_at(shuttle_program(), 0.0, (0.5, 0.5), 0.0), hh, frame="cell")) for hh in hs])
        o2 = fe.convergence_orders(hs, errs[:, 0])
        o1 = fe.convergence_orders(hs, errs[:, 1])
        ok = np.all(np.abs(o2 - 2) <= 0.2) and np.all(np.abs(o1 - 1) <= 0.2)
        return ok, {"L2": o2.tolist(), "H1": o1.tolist()}, "2 +/- 0.2, 1 +/- 0.2", "observed orders"

    def quadrature():
        prog = breathing_disk_program()
        ss = slice_points(n_s)
        mean = float(np.mean([obstacle_at(prog, 0.0, (0.5, 0.5), s).porosity for s in ss]))
        # the polygon area scales with (r / r0)^2 and sin^2 averages to 1/2
        area0 = 1.0 - obstacle_at(prog, 0.0, (0.5, 0.5), 0.0).porosity
        ratio = prog.breathing / prog.shape.radius
        exact = 1.0 - area0 * (1.0 + 0.5 * ratio ** 2)
        err = abs(mean - exact)
        return err <= 1e-12, err, 1e-12, f"period mean of the breathing porosity with {n_s} slices"

    return {
        "zero_advection": zero_advection,
        "lambda_sign": lambda_sign,
        "lambda_order": lambda_order,
        "formulation_equivalence": formulation_equivalence,
        "compatibility": compatibility,
        "spd": spd,
        "mass_conservation": mass_conservation,
        "manufactured_convergence": manufactured_convergence,
        "quadrature": quadrature,
    }


def cmd_verify(r):
    checks = verification_checks(r)
    names = [c for c in ALL_CHECKS if c in r.cfg["verify"]["checks"]]
    results = [_check(n, checks[n]) for n in names]
    passed = all(c["passed"] for c in results)
    report = {**r.meta("verify"), "passed": passed, "checks": results}
    r.write_json("verify.json", report)
    print(json.dumps(report, indent=2, default=_json_default))
    return EXIT_OK if passed else EXIT_CHECK


COMMANDS = {
    "cell": cmd_cell,
    "upscale": cmd_upscale,
    "macro": cmd_macro,
    "micro": cmd_micro,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


def _parse_eps(text):
    vals = []
    for part in text.split(","):
        v = float(Expression(part.strip(), ())())
        if not math.isfinite(v) or v <= 0:
            raise argparse.ArgumentTypeError(f"invalid eps {part!r}")
        vals.append(v)
    return vals


def _parse_h(text):
    try:
        v = float(Expression(text, ())())
    except Exception:  # noqa: BLE001
        raise argparse.ArgumentTypeError(f"invalid mesh size {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("mesh size must be positive")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="pulshom", description="Homogenisation of pulsating perforated media.")
    p.add_argument("--version", action="version", version=f"pulshom {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML experiment configuration, or builtin:NAME for a bundled one")
        sp.add_argument("--out", help="output directory (overrides outputs.directory)")
        sp.add_argument("--threads", type=int, help="worker threads (default: PULSHOM_THREADS or 1)")
        sp.add_argument("--h", type=_parse_h, help="cell mesh size, e.g. 1/32")
        sp.add_argument("--ns", type=int, help="number of fast-time slices")
        sp.add_argument("--eps", type=_parse_eps, help="comma separated micro scales, e.g. 1/4,1/8")
        if name == "verify":
            sp.add_argument("--flip-normal", action="store_true", help="debug: reverse the interface normal")
    return p


def resolve_config(args):
    if args.config and args.config.startswith("builtin:"):
        cfg = load_config(bundled_config_path(args.config[len("builtin:"):]))
    else:
        cfg = load_config(args.config) if args.config else default_config()
    if args.h is not None:
        cfg["discretization"]["h"] = args.h
    if args.ns is not None:
        cfg["discretization"]["n_s"] = args.ns
        cfg["verify"]["n_s"] = args.ns
    if args.eps is not None:
        cfg["discretization"]["eps"] = args.eps
    if getattr(args, "flip_normal", False):
        cfg["verify"]["flip_normal"] = True
    return cfg


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        r = Run(cfg, args.out, args.threads)
        return COMMANDS[args.command](r)
    except INPUT_ERRORS as exc:
        print(f"pulshom {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SOLVER_ERRORS as exc:
        print(f"pulshom {args.command}: solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"pulshom {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
