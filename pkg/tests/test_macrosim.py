import numpy as np
import pytest

from pulshom.macrosim import CoefficientField, MacroProblem, MacroStepper, center_of_mass, run
from pulshom.microgeom import shuttle_program
from pulshom.upscale import homogenize

GAUSS = "exp(-((x1 - 0.5)**2 + (x2 - 0.5)**2) / 0.01)"


def _problem(cf, u_in=GAUSS, T=0.1, dt=1 / 200, n=32, **kw):
    return MacroProblem(cf, u_in, T, dt, n=n, **kw)


def test_center_of_mass_moves_with_the_drift():
    lam = np.array([0.3, -0.1])
    res = run(_problem(CoefficientField.uniform(0.005, lam), T=0.2, n=48))
    c0 = center_of_mass(res.mesh, res.snapshots[0])
    c1 = center_of_mass(res.mesh, res.final)
    assert np.allclose(c1 - c0, lam * 0.2, rtol=0.03, atol=1e-3)


def test_mass_is_conserved_every_step():
    res = run(_problem(CoefficientField.uniform([[1.0, 0.2], [0.2, 0.5]], (0.5, 0.2))))
    assert np.max(np.abs(np.diff(res.mass))) <= 1e-8 * res.mass[0]


def test_unit_source_adds_mass_at_unit_rate():
    res = run(_problem(CoefficientField.uniform(1.0, source=1.0), T=0.05, dt=0.01))
    assert np.allclose(np.diff(res.mass), 0.01, atol=1e-12)


def test_no_drift_keeps_a_symmetric_profile_symmetric():
    res = run(_problem(CoefficientField.uniform(0.9, theta=0.96), n=16))
    p = res.mesh.points
    u = res.final
    # the structured mesh has one diagonal direction, so the discrete problem
    # is symmetric under point reflection through the centre
    order = np.lexsort((p[:, 1], p[:, 0]))
    mirrored = np.lexsort((1 - p[:, 1], 1 - p[:, 0]))
    assert np.allclose(u[order], u[mirrored], atol=1e-12)


def test_l2_norm_decays_without_drift():
    res = run(_problem(CoefficientField.uniform(0.5)))
    assert np.all(np.diff(res.l2) <= 1e-14)


def test_formulations_agree_without_pulsation():
    eff = homogenize(shuttle_program(), h=1 / 16, n_s=8)
    cf = CoefficientField.from_effective(eff)
    a = run(_problem(cf, formulation="mass", n=16))
    b = run(_problem(cf, formulation="concentration", n=16))
    assert np.allclose(a.mass_density(), b.mass_density(), atol=1e-10)


def test_restart_reproduces_uninterrupted_run(tmp_path):
    pb = _problem(CoefficientField.uniform(0.2, (0.4, 0.0)), T=0.1, dt=0.01, n=16)
    full = run(pb)
    ck = tmp_path / "ck.npz"
    run(pb, checkpoint=ck, checkpoint_every=4)
    # the last checkpoint holds step 8; resume from there
    resumed = run(pb, restart=ck)
    assert resumed.times[0] == pytest.approx(0.08)
    assert np.array_equal(resumed.final, full.final)


def test_streamline_diffusion_is_optional_and_conservative():
    cf = CoefficientField.uniform(1e-3, (1.0, 0.0))
    plain = run(_problem(cf, T=0.05, dt=0.01, n=16))
    supg = run(_problem(cf, T=0.05, dt=0.01, n=16, streamline=0.5))
    assert not np.allclose(plain.final, supg.final)
    assert supg.mass[-1] == pytest.approx(supg.mass[0], rel=1e-12)
    # the added diffusion smooths undershoots behind the pulse
    assert supg.final.min() >= plain.final.min() - 1e-14


def test_snapshot_cadence():
    res = run(_problem(CoefficientField.uniform(1.0), T=0.1, dt=0.01, n=8), cadence=4)
    assert res.snapshot_times == pytest.approx([0.0, 0.04, 0.08, 0.1])


def test_validation():
    cf = CoefficientField.uniform(1.0)
    with pytest.raises(ValueError):
        _problem(cf, formulation="bogus")
    with pytest.raises(ValueError):
        _problem(cf, T=0.1, dt=0.03).n_steps
    with pytest.raises(ValueError):
        MacroStepper(_problem(CoefficientField.uniform([[1.0, 0.0], [0.0, -1.0]]), n=4))


def test_interpolated_field_matches_samples():
    eff = homogenize(shuttle_program(), h=1 / 16, n_s=8)
    cf = CoefficientField.from_samples([0.2, 0.8], [0.5], [[eff], [eff]])
    p = np.array([[0.1, 0.3], [0.6, 0.9]])
    assert np.allclose(cf.D(p), eff.D_hom)
    assert np.allclose(cf.drift(p), eff.V_hom + eff.W_hom)
