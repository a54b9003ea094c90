import math

import numpy as np
import pytest

from pulshom.cellsolve import MOVING, TRANSFORMED, CellSolver, solve_cell, solve_corrector_pulse
from pulshom.errors import IncompatibleData
from pulshom.meshkit import mesh_cell
from pulshom.microgeom import (
    Keyframe,
    MotionProgram,
    ObstacleShape,
    breathing_disk_program,
    empty_program,
    obstacle_at,
    porosity_rate,
    shuttle_program,
    static_program,
)

X = (0.5, 0.5)


def test_empty_cell_gives_identity():
    sol = solve_cell(empty_program(), 0.0, X, 0.3, 1 / 16)
    assert np.allclose(sol.D_star, np.eye(2), atol=1e-12)
    assert np.all(sol.V_star == 0)
    assert np.max(np.abs(sol.zeta)) < 1e-12


def test_static_obstacle_has_zero_pulsation_corrector():
    sol = solve_cell(static_program(ObstacleShape("disk", radius=0.2)), 0.0, X, 0.3, 1 / 32)
    assert np.all(sol.zeta[2] == 0.0)
    assert np.all(sol.V_star == 0.0)


def test_disk_matches_dilute_limit_formula():
    # insulating disks on a square lattice: (1 - f) / (1 + f) up to O(f^4)
    r = 0.2
    shape = ObstacleShape("disk", radius=r, resolution=1 / 512)
    sol = solve_cell(static_program(shape), 0.0, X, 0.0, 1 / 64)
    f = math.pi * r ** 2
    assert sol.D_star[0, 0] == pytest.approx((1 - f) / (1 + f), rel=1e-2)


@pytest.mark.parametrize("s", [0.1, 0.375, 0.6, 0.9])
def test_effective_diffusion_is_spd_and_below_voigt_bound(s):
    sol = solve_cell(shuttle_program(), 0.0, X, s, 1 / 32)
    D = sol.D_star
    assert abs(D[0, 1] - D[1, 0]) < 1e-10
    assert np.all(np.linalg.eigvalsh(0.5 * (D + D.T)) > 0)
    assert np.all(np.linalg.eigvalsh(sol.porosity * np.eye(2) - 0.5 * (D + D.T)) > -1e-12)


def test_diffusion_scaling():
    p = shuttle_program()
    a = solve_cell(p, 0.0, X, 0.1, 1 / 32, D=1.0)
    b = solve_cell(p, 0.0, X, 0.1, 1 / 32, D=2.5)
    assert np.allclose(b.D_star, 2.5 * a.D_star, rtol=1e-12)
    # the pulsation drift does not depend on the diffusivity
    assert np.allclose(b.V_star, a.V_star, rtol=1e-10)


def test_drift_is_linear_in_the_speed():
    shape = ObstacleShape("rectangle", half_width=0.05, half_height=0.1)

    def prog(dx):
        return MotionProgram(shape, (Keyframe(0.0, (0.4, 0.5)), Keyframe(0.5, (0.4 + dx, 0.5)),
                                     Keyframe(1.0, (0.4, 0.5))))

    a = solve_cell(prog(0.1), 0.0, X, 0.25, 1 / 32)
    b = solve_cell(prog(0.2), 0.0, X, 0.25, 1 / 32)
    assert a.V_star[0] > 0
    assert b.V_star[0] == pytest.approx(2 * a.V_star[0], rel=1e-10)


def test_mirror_image_motion_flips_drift():
    p = shuttle_program()
    sol = solve_cell(p, 0.0, X, 0.125, 1 / 32)
    back = solve_cell(p, 0.0, X, 0.625, 1 / 32)
    assert sol.V_star[0] > 0 > back.V_star[0]
    assert abs(sol.V_star[1]) < 1e-12


def test_pore_mean_of_flux_is_drift_over_porosity():
    sol = solve_cell(shuttle_program(), 0.0, X, 0.1, 1 / 32)
    assert np.allclose(sol.pore_mean_flux0(), -sol.V_star / sol.porosity)


def test_residuals_are_small():
    sol = solve_cell(shuttle_program(), 0.0, X, 0.4, 1 / 32)
    assert np.max(sol.residuals) < 1e-10


def test_frames_agree():
    p = shuttle_program()
    a = solve_cell(p, 0.0, X, 0.1, 1 / 32, frame="obstacle")
    b = solve_cell(p, 0.0, X, 0.1, 1 / 32, frame="cell")
    assert np.allclose(a.D_star, b.D_star, atol=5e-3)
    assert np.allclose(a.V_star, b.V_star, atol=5e-3 * abs(a.V_star[0]) + 1e-12)


@pytest.mark.parametrize("s", [0.125, 0.375, 0.625])
def test_moving_and_transformed_agree(s):
    cs = CellSolver(shuttle_program(), 1 / 32)
    a = cs.solve(0.0, X, s, MOVING)
    b = cs.solve(0.0, X, s, TRANSFORMED)
    assert np.max(np.abs(a.D_star - b.D_star)) <= 0.02
    assert np.linalg.norm(a.V_star - b.V_star) <= 0.02 * max(np.linalg.norm(a.V_star), 1e-2)


def test_breathing_disk_formulations_and_symmetry():
    cs = CellSolver(breathing_disk_program(), 1 / 32)
    for s in (0.1, 0.6):
        a = cs.solve(0.0, X, s, MOVING)
        b = cs.solve(0.0, X, s, TRANSFORMED)
        assert a.compatibility < 1e-12
        assert np.linalg.norm(a.V_star) < 1e-10
        assert np.linalg.norm(b.V_star) < 1e-10
        assert np.max(np.abs(a.D_star - b.D_star)) <= 0.02
        assert b.porosity == pytest.approx(a.porosity, abs=1e-3)


def test_flipped_normal_breaks_compatibility():
    p = breathing_disk_program()
    geom = obstacle_at(p, 0.0, X, 0.1)
    mesh = mesh_cell(geom, 1 / 16)
    with pytest.raises(IncompatibleData):
        solve_corrector_pulse(mesh, geom, porosity_rate(p, 0.0, X, 0.1), flip_normal=True)
    with pytest.raises(IncompatibleData):
        CellSolver(p, 1 / 16, flip_normal=True).solve(0.0, X, 0.1)


def test_wrong_porosity_rate_is_rejected():
    p = breathing_disk_program()
    geom = obstacle_at(p, 0.0, X, 0.1)
    with pytest.raises(IncompatibleData):
        solve_corrector_pulse(mesh_cell(geom, 1 / 16), geom, 0.0)


def test_unknown_formulation():
    with pytest.raises(ValueError):
        CellSolver(shuttle_program(), 1 / 16).solve(0.0, X, 0.1, "bogus")
