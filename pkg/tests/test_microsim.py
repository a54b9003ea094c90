import numpy as np
import pytest

from pulshom.errors import GridMismatch
from pulshom.macrosim import CoefficientField, MacroProblem, run
from pulshom.microgeom import ObstacleShape, breathing_disk_program, shuttle_program, static_program
from pulshom.microsim import (
    EpsilonProblem,
    compare_to_homogenised,
    macro_block_means,
    micro_block_means,
    run_micro,
)
from pulshom.meshkit import unit_square_mesh


def test_eps_and_step_validation():
    with pytest.raises(ValueError):
        EpsilonProblem(shuttle_program(), 1 / 3, 0.1)
    with pytest.raises(ValueError):
        EpsilonProblem(shuttle_program(), 1 / 16, 0.1)
    assert EpsilonProblem(shuttle_program(), 1 / 16, 0.1, allow_fine=True).dt == pytest.approx(1 / 512)
    with pytest.raises(ValueError):
        EpsilonProblem(shuttle_program(), 1 / 4, 0.1, dt=0.03).n_steps


def test_static_obstacles_keep_a_constant_state():
    pb = EpsilonProblem(static_program(ObstacleShape("disk", radius=0.2)), 1 / 2, 1 / 16, h=1 / 8)
    res = run_micro(pb)
    assert np.allclose(res.snapshots[-1], 1.0, atol=1e-12)


@pytest.mark.parametrize("prog", [shuttle_program(), breathing_disk_program()], ids=["shuttle", "breathing"])
def test_mass_is_conserved_per_step(prog):
    pb = EpsilonProblem(prog, 1 / 2, 1 / 8, u0_in="1 + x1", h=1 / 8)
    res = run_micro(pb)
    assert np.max(np.abs(np.diff(res.mass))) <= 1e-8 * abs(res.mass[0])


@pytest.mark.parametrize("eps", [1 / 2, 1 / 4, 1 / 8])
def test_weighted_energy_stays_bounded(eps):
    pb = EpsilonProblem(shuttle_program(), eps, 1 / 16, u0_in="1 + 0.5*cos(pi*x1)", h=1 / 8)
    res = run_micro(pb)
    assert np.all(np.isfinite(res.energy))
    assert np.max(res.energy) <= 1.05 * res.energy[0]


def test_limit_map_bounds_are_uniform_in_eps():
    bounds = []
    for eps in (1 / 2, 1 / 4):
        pb = EpsilonProblem(shuttle_program(), eps, eps, h=1 / 8)
        res = run_micro(pb)
        bounds.append(res.coefficients.check_bounds(8))
    # displacement is O(eps) and the gradient O(1), with the same constants
    assert bounds[0] == pytest.approx(bounds[1], rel=1e-10)
    assert bounds[0][0] < 1.0
    assert bounds[0][1] < 10.0


def test_source_adds_mass_at_the_pore_rate():
    pb = EpsilonProblem(shuttle_program(), 1 / 2, 1 / 16, u0_in="0", f0="1", h=1 / 8)
    res = run_micro(pb)
    theta = 1 - 4 * 0.05 * 0.1
    assert np.allclose(np.diff(res.mass), pb.dt * theta, rtol=1e-10)


def test_compare_times_must_be_on_the_step_grid():
    pb = EpsilonProblem(shuttle_program(), 1 / 2, 1 / 16, h=1 / 8)
    with pytest.raises(GridMismatch):
        run_micro(pb, compare_times=[0.01])


def test_identical_constant_fields_have_zero_block_error():
    prog = static_program(ObstacleShape("rectangle", half_width=0.1, half_height=0.1))
    pb = EpsilonProblem(prog, 1 / 2, 1 / 32, h=1 / 8)
    micro = run_micro(pb, compare_times=[0.0, 1 / 32])
    theta = 1 - 0.04
    macro = run(MacroProblem(CoefficientField.uniform(1.0, theta=theta), str(theta), 1 / 32, 1 / 64, n=8))
    rep = compare_to_homogenised(micro, macro, theta=theta)
    assert rep.block_error < 1e-12
    assert rep.pore_error < 1e-12
    assert rep.times == pytest.approx([0.0, 1 / 32])


def test_block_means_of_constants():
    pb = EpsilonProblem(shuttle_program(), 1 / 4, 1 / 128, h=1 / 8)
    micro = run_micro(pb, compare_times=[0.0])
    mb = micro_block_means(micro, micro.snapshots[0], micro.J_snapshots[0], 4)
    assert np.allclose(mb, 1 - 4 * 0.05 * 0.1, atol=1e-12)
    sq = unit_square_mesh(8)
    assert np.allclose(macro_block_means(sq, np.full(sq.n_points, 2.0), 4), 2.0)
    with pytest.raises(GridMismatch):
        macro_block_means(sq, np.ones(sq.n_points), 3)


def test_missing_macro_snapshot():
    pb = EpsilonProblem(shuttle_program(), 1 / 2, 1 / 32, h=1 / 8)
    micro = run_micro(pb, compare_times=[1 / 64])
    macro = run(MacroProblem(CoefficientField.uniform(1.0), "1", 1 / 32, 1 / 32, n=4))
    with pytest.raises(GridMismatch):
        compare_to_homogenised(micro, macro)
