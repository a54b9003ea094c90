"""Acceptance criteria, one test per criterion at its stated tolerance.

Each test prints a single ``criterion N: PASS|FAIL`` line; the lines are
collected again in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from pulshom import femcore as fe
from pulshom.cellsolve import MOVING, TRANSFORMED, CellSolver, solve_cell
from pulshom.cli import Run, compare_runs
from pulshom.config import bundled_config_path, load_config
from pulshom.macrosim import CoefficientField, MacroProblem, run
from pulshom.meshkit import mesh_cell
from pulshom.microgeom import (
    Keyframe,
    MotionProgram,
    ObstacleShape,
    back_and_forth_program,
    breathing_disk_program,
    empty_program,
    obstacle_at,
    shuttle_program,
    static_program,
    strip_program,
)
from pulshom.microsim import EpsilonProblem, run_micro
from pulshom.upscale import average_coefficients, compute_slices, homogenize, lambda_comparison, slice_points

X = (0.5, 0.5)
D = 1.0


def report(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_01_identity_geometry():
    t0 = time.perf_counter()
    e = homogenize(empty_program(), h=1 / 32, n_s=16, D=D)
    dt = time.perf_counter() - t0
    dD = float(np.max(np.abs(e.D_hom - D * np.eye(2))))
    dV = float(np.max(np.abs(e.V_hom)))
    dW = float(np.max(np.abs(e.W_hom)))
    thetas = {c.porosity for c in e.slices}
    ok = dD <= 1e-10 and dV <= 1e-12 and dW <= 1e-12 and thetas == {1.0} and dt < 5.0
    report(1, ok, f"|D-1|={dD:.1e} |V|={dV:.1e} |W|={dW:.1e} Theta={sorted(thetas)} time={dt:.2f}s")


def test_criterion_02_static_obstacle():
    disk = solve_cell(static_program(ObstacleShape("disk", radius=0.2)), 0.0, X, 0.3, 1 / 32, D=D)
    rect = solve_cell(static_program(ObstacleShape("rectangle", half_width=0.1, half_height=0.2)),
                      0.0, X, 0.7, 1 / 32, D=D)
    zero = all(np.all(s.zeta[2] == 0.0) and np.all(s.V_star == 0.0) for s in (disk, rect))
    aniso = abs(disk.D_star[0, 0] - disk.D_star[1, 1])
    off = max(abs(disk.D_star[0, 1]), abs(disk.D_star[1, 0]))
    ok = zero and aniso <= 1e-6 * D and off <= 1e-8 * D
    report(2, ok, f"zeta0==0 and V*==0: {zero}; |D11-D22|={aniso:.1e} |D12|={off:.1e}")


def test_criterion_03_zero_advection():
    v = {}
    for h in (1 / 32, 1 / 64):
        v[h] = float(np.linalg.norm(homogenize(back_and_forth_program(), h=h, n_s=16, D=D).V_hom))
    # the reversal pairs slices s and 1 - s exactly, so the drift cancels to
    # roundoff at both resolutions and "decreases" is read as non-increasing
    # or already at roundoff
    floor = 1e-12
    decreases = v[1 / 64] <= v[1 / 32] or max(v.values()) <= floor
    ok = v[1 / 32] <= 1e-3 * D and decreases
    report(3, ok, f"|V_hom| h=1/32: {v[1 / 32]:.1e}, h=1/64: {v[1 / 64]:.1e}")


def test_criterion_03_uneven_reversal():
    # outbound over [0, 0.3], return over [0.3, 1]: the geometry still
    # recurs, with a non-affine reversal map
    vs = [float(np.linalg.norm(homogenize(back_and_forth_program(turn=0.3), h=h, n_s=20, D=D).V_hom))
          for h in (1 / 32, 1 / 64)]
    assert max(vs) <= 1e-3 * D


def test_criterion_04_shuttle_drift():
    prog = shuttle_program(a=0.05, b=0.1)
    t0 = time.perf_counter()
    fine = compute_slices(prog, 0.0, X, 1 / 64, 16, D)
    dt = time.perf_counter() - t0
    coarse = compute_slices(prog, 0.0, X, 1 / 32, 16, D)
    V64 = average_coefficients(fine, prog).V_hom
    V32 = average_coefficients(coarse, prog).V_hom
    change = abs(V64[0] - V32[0])
    l1, l2 = lambda_comparison(prog, slices=fine)
    ctl = shuttle_program(a=0.1, b=0.1)
    c1, c2 = lambda_comparison(ctl, slices=compute_slices(ctl, 0.0, X, 1 / 64, 16, D))
    ok = (V64[0] > 0 and V64[0] >= 5 * change and abs(V64[1]) <= 1e-4 * D
          and l1 > l2 > 0 and abs(c1 - c2) <= 2 * fe.SOLVER_TOL and dt < 600)
    report(4, ok, f"V1={V64[0]:.5f} (change {change:.1e}) V2={V64[1]:.1e} lambda1={l1:.5f} lambda2={l2:.5f} "
                  f"control |l1-l2|={abs(c1 - c2):.1e} time={dt:.1f}s")


def test_criterion_05_strip_limit():
    # slabs of growing height pushed along e1; the slice lies inside the fast push
    vals = []
    for half_height in (0.35, 0.40, 0.45):
        sol = solve_cell(strip_program(half_height), 0.0, X, 0.025, 1 / 32, D=D)
        vals.append(float(sol.pore_mean_flux0()[0]))
    ok = vals[0] > vals[1] > vals[2] > -2.0
    report(5, ok, "pore mean of D grad zeta0 . e1: " + ", ".join(f"{v:.4f}" for v in vals))


def _spin_program():
    shape = ObstacleShape("rectangle", half_width=0.05, half_height=0.1)
    return MotionProgram(shape, (Keyframe(0.0, (0.4, 0.5), 0.0), Keyframe(0.5, (0.6, 0.5), math.pi / 2),
                                 Keyframe(1.0, (0.4, 0.5), 0.0)))


def _formulation_gaps(h):
    gaps = {}
    cases = [("outbound", shuttle_program(), 0.125, True), ("return", shuttle_program(), 0.625, True),
             ("rotation", shuttle_program(), 0.375, False), ("spin+translate", _spin_program(), 0.25, True)]
    for name, prog, s, with_drift in cases:
        cs = CellSolver(prog, h, D)
        a = cs.solve(0.0, X, s, MOVING)
        b = cs.solve(0.0, X, s, TRANSFORMED)
        g = float(np.max(np.abs(a.D_star - b.D_star)) / np.max(np.abs(a.D_star)))
        # a pure rotation about the obstacle centre has V* = 0 by point
        # symmetry, so there only D* carries information
        if with_drift:
            g = max(g, float(np.linalg.norm(a.V_star - b.V_star) / np.linalg.norm(a.V_star)))
        gaps[name] = g
    return gaps


def test_criterion_06_formulation_equivalence():
    g32 = _formulation_gaps(1 / 32)
    g64 = _formulation_gaps(1 / 64)
    within = max(g32.values()) <= 0.02
    # slices where both routes share the mesh agree to roundoff already
    improving = all(g64[k] < g32[k] or g32[k] < 1e-12 for k in g32)
    ok = within and improving
    report(6, ok, "gap h=1/32 -> 1/64: " + ", ".join(f"{k} {g32[k]:.1e}->{g64[k]:.1e}" for k in g32))


def test_criterion_07_compatibility_and_conservation():
    worst = 0.0
    for prog in (shuttle_program(), breathing_disk_program(), back_and_forth_program(), strip_program(0.4)):
        solver = CellSolver(prog, 1 / 32, D)
        for s in slice_points(16):
            worst = max(worst, solver.solve(0.0, X, float(s), MOVING).compatibility)
    eff = homogenize(shuttle_program(), h=1 / 32, n_s=16, D=D)
    u_in = "1 + 0.5*cos(pi*x1)*cos(pi*x2)"
    macro = run(MacroProblem(CoefficientField.from_effective(eff), u_in, 1 / 16, 1 / 256, n=32))
    macro_drift = float(np.max(np.abs(np.diff(macro.mass))) / macro.mass[0])
    micro_drift = 0.0
    for prog in (shuttle_program(), breathing_disk_program()):
        micro = run_micro(EpsilonProblem(prog, 1 / 4, 1 / 16, u_in, h=1 / 16, D=D))
        micro_drift = max(micro_drift, float(np.max(np.abs(np.diff(micro.mass))) / micro.mass[0]))
    ok = worst <= 1e-8 and macro_drift <= 1e-8 and micro_drift <= 1e-8
    report(7, ok, f"compatibility {worst:.1e}, mass change per step macro {macro_drift:.1e} "
                  f"micro {micro_drift:.1e}")


def test_criterion_08_manufactured_orders():
    hs = [1 / 8, 1 / 16, 1 / 32]
    lines, ok = [], True
    for name, prog in (("empty", empty_program()), ("rectangle", shuttle_program())):
        errs = np.array([fe.manufactured_periodic(mesh_cell(obstacle_at(prog, 0.0, X, 0.0), h, frame="cell"))
                         for h in hs])
        l2 = fe.convergence_orders(hs, errs[:, 0])
        h1 = fe.convergence_orders(hs, errs[:, 1])
        ok &= bool(np.all(np.abs(l2 - 2) <= 0.2) and np.all(np.abs(h1 - 1) <= 0.2))
        lines.append(f"{name} L2 {np.round(l2, 2).tolist()} H1 {np.round(h1, 2).tolist()}")
    report(8, ok, "; ".join(lines))


def test_criterion_09_micro_macro(tmp_path):
    cfg = load_config(bundled_config_path("smooth_data"))
    assert cfg["discretization"]["eps"] == [0.25, 0.125]
    t0 = time.perf_counter()
    reports, _ = compare_runs(Run(cfg, str(tmp_path), None))
    dt = time.perf_counter() - t0
    by_eps = {rep.eps: rep for rep, _ in reports}
    lit = [by_eps[e].zero_extension_error for e in (0.25, 0.125)]
    blk = [by_eps[e].block_error for e in (0.25, 0.125)]
    ok = lit[1] < lit[0] and blk[1] < blk[0] and dt < 1800
    report(9, ok, f"zero-extension error {lit[0]:.4f} -> {lit[1]:.4f}, block-averaged {blk[0]:.4f} -> "
                  f"{blk[1]:.4f} (eps 1/4 -> 1/8), time={dt:.0f}s")


def test_criterion_10_counterflow():
    mod = shuttle_program(modulation="1 + 0.5*x1")
    e = homogenize(mod, x=X, h=1 / 32, n_s=16, D=D)
    # finite differences of 1/Theta across x1, independent of the averaging code
    def fd_counterflow(prog, slices, step=1e-3):
        out = np.zeros(2)
        for c in slices:
            grad = np.zeros(2)
            for k in range(2):
                e_k = step * np.eye(2)[k]
                tp = obstacle_at(prog, 0.0, np.add(X, e_k), c.s).porosity
                tm = obstacle_at(prog, 0.0, np.subtract(X, e_k), c.s).porosity
                grad[k] = (1 / tp - 1 / tm) / (2 * step)
            out -= c.D_star @ grad / len(slices)
        return out

    fd = fd_counterflow(mod, e.slices)
    plain = homogenize(shuttle_program(), x=X, h=1 / 32, n_s=16, D=D)
    # the library skips the gradient for unmodulated programs; evaluate it anyway
    Wp = max(float(np.max(np.abs(plain.W_hom))), float(np.max(np.abs(fd_counterflow(shuttle_program(),
                                                                                      plain.slices)))))
    ok = e.W_hom[0] != 0 and np.sign(e.W_hom[0]) == np.sign(fd[0]) and Wp <= 1e-10
    report(10, ok, f"W_hom={np.round(e.W_hom, 6).tolist()} finite differences={np.round(fd, 6).tolist()} "
                   f"unmodulated |W|={Wp:.1e}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
