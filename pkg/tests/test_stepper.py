from dataclasses import replace

import numpy as np
import pytest

from colecole.dgcore import Mesh1D, assemble_operators, l2_project
from colecole.diagnostics import l2_error
from colecole.material import MaterialParams
from colecole.sources import ManufacturedSolution, SourceSet
from colecole.stepper import (
    BdfWorkspace,
    SimState,
    SimulationConfig,
    StepError,
    bdf1_coefficients,
    bdf2_coefficients,
    bdf2_step,
    bootstrap_first_step,
    eliminate_psi,
    initial_state,
    polarization_solve,
    residual_norms,
    run_simulation,
    write_manifest,
)
import colecole.stepper as stepper


def _setup(quad, M=6, k=1, tau=0.01, dense=None):
    p = MaterialParams.unit(quad.alpha)
    mesh = Mesh1D(0.0, 2.0, M)
    ops = assemble_operators(mesh, k, p)
    return p, mesh, ops, BdfWorkspace(ops, quad, tau, dense)


def _random_state(rng, mesh, k, L, t=0.0):
    shape = (mesh.n_cells, k + 1)
    return SimState(t, mesh, *(rng.standard_normal(shape) for _ in range(3)), rng.standard_normal((L,) + shape))


def test_bdf_coefficients():
    assert bdf2_coefficients(0.5, 0.5)[:3] == (3.0, -4.0, 1.0)
    assert bdf1_coefficients(0.5) == (2.0, -2.0, 0.0)
    with pytest.raises(ValueError):
        bdf2_coefficients(0.0, 0.5)


def test_kappa_exceeds_one(quad05):
    for tau in (1e-6, 1e-2, 10.0):
        ws = _setup(quad05, tau=tau)[3]
        assert ws.kappa > 1.0 and ws.kappa1 > 1.0


def test_infeasible_or_mismatched_quadrature_is_rejected(quad05):
    from colecole.quadopt import DiffusiveQuadrature

    p = MaterialParams.unit(0.5)
    ops = assemble_operators(Mesh1D(0, 2, 4), 1, p)
    with pytest.raises(ValueError):
        BdfWorkspace(ops, DiffusiveQuadrature([-1.0], [1.0], 0.5), 0.1)
    with pytest.raises(ValueError):
        BdfWorkspace(ops, DiffusiveQuadrature(quad05.weights, quad05.abscissae, 0.3, quad05.band), 0.1)


def test_zero_state_stays_zero(quad05):
    p, mesh, ops, ws = _setup(quad05)
    s0 = SimState.zeros(mesh, 1, quad05.L)
    s1 = bootstrap_first_step(s0, ws)
    assert not np.any(s1.U) and not np.any(s1.psi) and s1.t == pytest.approx(0.01)
    s2 = bdf2_step(s1, s0, ws, None, 0.02)
    assert not np.any(s2.U) and not np.any(s2.psi)


def test_step_count_for_two_steps(quad05, monkeypatch):
    calls = {"boot": 0, "bdf": 0}
    real_boot, real_bdf = stepper.bootstrap_first_step, stepper.bdf2_step

    def boot(*a, **k):
        calls["boot"] += 1
        return real_boot(*a, **k)

    def bdf(*a, **k):
        calls["bdf"] += 1
        return real_bdf(*a, **k)

    monkeypatch.setattr(stepper, "bootstrap_first_step", boot)
    monkeypatch.setattr(stepper, "bdf2_step", bdf)
    cfg = SimulationConfig(Mesh1D(0, 2, 4), 1, MaterialParams.unit(0.5), 0.1, 0.2, quad05)
    res = run_simulation(cfg)
    assert calls == {"boot": 1, "bdf": 1} and res.n_steps == 2


def test_non_multiple_end_time_warns(quad05):
    cfg = SimulationConfig(Mesh1D(0, 2, 4), 1, MaterialParams.unit(0.5), 0.1, 0.25, quad05)
    with pytest.warns(UserWarning):
        res = run_simulation(cfg)
    assert res.n_steps == 2 and "warning" in res.manifest
    assert res.final.t == pytest.approx(0.2)


def test_bdf2_step_satisfies_all_discrete_equations(quad05, rng):
    p, mesh, ops, ws = _setup(quad05, M=5, k=2, tau=0.003)
    s2 = _random_state(rng, mesh, 2, quad05.L)
    s1 = _random_state(rng, mesh, 2, quad05.L, 0.003)
    f = tuple(rng.standard_normal((5, 3)) for _ in range(3))
    new = bdf2_step(s1, s2, ws, lambda t: f, 0.006)
    res = residual_norms(ws, new, s1, s2, f)
    assert max(res.values()) < 1e-12


def test_psi_elimination_and_polarization_agree(quad05, rng):
    p, mesh, ops, ws = _setup(quad05, tau=0.02)
    s2, s1 = _random_state(rng, mesh, 1, quad05.L), _random_state(rng, mesh, 1, quad05.L)
    En = rng.standard_normal(s1.E.shape)
    F3 = rng.standard_normal(s1.E.shape)
    Pn = polarization_solve(En, (s1.P, s2.P), (s1.psi, s2.psi), F3, ws)
    psin = eliminate_psi(Pn, s1.P, s2.P, s1.psi, s2.psi, ws)
    law = p.tau_alpha * np.tensordot(quad05.weights, psin, axes=1) + Pn - p.eps_d * En - F3
    assert np.abs(law).max() < 1e-12


def test_residual_failure_raises(quad05, rng, monkeypatch):
    p, mesh, ops, ws = _setup(quad05)
    s0 = _random_state(rng, mesh, 1, quad05.L)
    s1 = _random_state(rng, mesh, 1, quad05.L)  # not a consistent history, but any history is allowed
    monkeypatch.setattr(stepper, "RESIDUAL_TOL", 0.0)
    monkeypatch.setattr(stepper.check_residuals, "__defaults__", (0.0, None))
    with pytest.raises(StepError):
        bdf2_step(s1, s0, ws, None, 0.02)


@pytest.mark.parametrize("k", [1, 2])
def test_dense_and_sparse_solves_agree(quad05, rng, k):
    p = MaterialParams.unit(0.5)
    mesh = Mesh1D(0, 2, 7)
    ops = assemble_operators(mesh, k, p)
    a = BdfWorkspace(ops, quad05, 0.01, dense=True)
    b = BdfWorkspace(ops, quad05, 0.01, dense=False)
    s2, s1 = _random_state(rng, mesh, k, quad05.L), _random_state(rng, mesh, k, quad05.L)
    f = tuple(rng.standard_normal(s1.E.shape) for _ in range(3))
    na = bdf2_step(s1, s2, a, lambda t: f, 0.02)
    nb = bdf2_step(s1, s2, b, lambda t: f, 0.02)
    np.testing.assert_allclose(na.U, nb.U, rtol=1e-11, atol=1e-12)
    np.testing.assert_allclose(na.psi, nb.psi, rtol=1e-11, atol=1e-12)


def test_nonpositive_step_is_rejected(quad05):
    ops = assemble_operators(Mesh1D(0, 2, 4), 1, MaterialParams.unit(0.5))
    with pytest.raises(ValueError):
        BdfWorkspace(ops, quad05, -1.0)


def test_nonfinite_solution_raises(quad05, rng):
    p, mesh, ops, ws = _setup(quad05)
    s0 = _random_state(rng, mesh, 1, quad05.L)
    s0.E[0, 0] = np.nan
    with pytest.raises(StepError):
        bdf2_step(s0, s0, ws, None, 0.02)


def test_linearity_in_sources(quad05):
    p = MaterialParams.unit(0.5)
    ex = ManufacturedSolution(p)
    base = SimulationConfig(Mesh1D(0, 2, 6), 1, p, 0.01, 0.2, quad05, ex.sources())
    one = run_simulation(base).final
    two = run_simulation(replace(base, sources=ex.sources().scaled(2.0))).final
    np.testing.assert_allclose(two.U, 2.0 * one.U, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(two.psi, 2.0 * one.psi, rtol=1e-12, atol=1e-14)


def test_nonzero_F3_is_supported(quad05):
    p = MaterialParams.unit(0.5)
    src = SourceSet(F3=lambda x, t: np.sin(np.pi * x) * t)
    cfg = SimulationConfig(Mesh1D(0, 2, 6), 2, p, 0.01, 0.1, quad05, src)
    res = run_simulation(cfg)  # residual checks run at every step
    assert np.abs(res.final.P).max() > 0


def test_bootstrap_local_error_is_second_order(wide_quad05):
    p = MaterialParams.unit(0.5)
    ex = ManufacturedSolution(p)
    mesh = Mesh1D(0.0, 2.0, 10)
    ops = assemble_operators(mesh, 2, p)
    errs = []
    for tau in (2e-2, 1e-2, 5e-3):
        ws = BdfWorkspace(ops, wide_quad05, tau)
        cfg = SimulationConfig(mesh, 2, p, tau, tau, wide_quad05, ex.sources(), ex.initial_E, ex.initial_H)
        s1 = bootstrap_first_step(initial_state(cfg, wide_quad05.L), ws, cfg.sources)
        errs.append(l2_error(s1.field("H"), lambda x: ex.H(x, tau)) + l2_error(s1.field("E"), lambda x: ex.E(x, tau)))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(3.2 < r < 4.8 for r in ratios), ratios


def test_bootstrap_from_magnetic_field_only(quad05):
    p, mesh, ops, ws = _setup(quad05, M=4, tau=0.05)
    s0 = SimState.zeros(mesh, 1, quad05.L)
    s0.H = l2_project(lambda x: np.sin(np.pi * x), mesh, 1).coeffs
    s1 = bootstrap_first_step(s0, ws)
    KH, KE = ops.apply(s0.H, s0.E)
    # forward Euler: eps_e (E1 - E0) + (P1 - P0) = tau K_E / m, and P1 = eps_d E1 / kappa1
    lhs = p.eps_e * s1.E + s1.P
    np.testing.assert_allclose(lhs, 0.05 * KE / ops.mass, atol=1e-14)
    np.testing.assert_allclose(s1.P, p.eps_d * s1.E / ws.kappa1, atol=1e-14)
    # the upwind H flux carries a jump penalty on H, so H moves even with E = 0
    np.testing.assert_allclose(s1.H, s0.H + 0.05 / p.mu0 * KH / ops.mass, atol=1e-14)


def test_implicit_start_dissipates(quad05):
    from colecole.sources import energy_initial_E, energy_initial_H

    p = MaterialParams.unit(0.5)
    mesh = Mesh1D(0, 2, 40)
    cfg = SimulationConfig(mesh, 1, p, mesh.h, 0.5, quad05, E0=energy_initial_E, H0=energy_initial_H,
                           sample_every=1, bootstrap="implicit")
    tot = np.array([s.total for s in run_simulation(cfg).samples])
    assert np.all(np.diff(tot) <= 0)
    with pytest.raises(ValueError):
        run_simulation(replace(cfg, bootstrap="rk4"))


def test_runs_are_deterministic_and_sampled(quad05, tmp_path):
    from colecole.sources import energy_initial_E, energy_initial_H

    p = MaterialParams.unit(0.5)
    cfg = SimulationConfig(Mesh1D(0, 2, 8), 1, p, 0.05, 0.5, quad05, E0=energy_initial_E, H0=energy_initial_H,
                           sample_every=2, snapshot_every=5)
    a, b = run_simulation(cfg), run_simulation(cfg)
    assert np.array_equal(a.final.U, b.final.U)
    assert [s.t for s in a.samples] == pytest.approx([0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
    assert len(a.snapshots) == 3
    write_manifest(tmp_path / "m.txt", a.manifest)
    text = (tmp_path / "m.txt").read_text()
    for key in ("alpha", "tau", "T", "n_cells", "quad_zeta", "wall_time_s", "bootstrap"):
        assert f"{key} = " in text


def test_fast_solver_missing_quadrature():
    cfg = SimulationConfig(Mesh1D(0, 2, 4), 1, MaterialParams.unit(0.5), 0.1, 0.2)
    with pytest.raises(ValueError):
        run_simulation(cfg)


def test_manufactured_problem_converges_in_space(wide_quad05):
    from colecole.diagnostics import convergence_study

    p = MaterialParams.unit(0.5)
    ex = ManufacturedSolution(p)
    cfg = SimulationConfig(Mesh1D(0, 2, 10), 1, p, 0.01, 1.0, wide_quad05, ex.sources())
    rows = convergence_study(cfg, [10, 20], ex)
    assert 1.8 < rows[1].order_E < 2.3 and 1.8 < rows[1].order_H < 2.3
