import numpy as np
import pytest

from colecole.dgcore import Mesh1D, l2_project
from colecole.material import MaterialParams
from colecole.sources import ManufacturedSolution, SeparableSource, SourceSet


def _fd(f, t, eps=1e-6):
    return (f(t + eps) - f(t - eps)) / (2 * eps)


@pytest.mark.parametrize("alpha", [0.3, 0.7])
def test_manufactured_fields_solve_maxwell(alpha):
    p = MaterialParams.unit(alpha)
    ex = ManufacturedSolution(p)
    x = np.linspace(0.0, 2.0, 9)
    t = 0.8
    dx = lambda f: (f(x + 1e-6, t) - f(x - 1e-6, t)) / 2e-6  # noqa: E731
    dH = _fd(lambda s: ex.H(x, s), t)
    dE = _fd(lambda s: ex.E(x, s), t)
    dP = _fd(lambda s: ex.P(x, s), t)
    np.testing.assert_allclose(p.mu0 * dH, dx(ex.E) + ex.F1(x, t), atol=1e-6)
    np.testing.assert_allclose(p.eps_e * dE, dx(ex.H) - dP + ex.F2(x, t), atol=1e-6)


def test_manufactured_polarization_law():
    from colecole.material import caputo_power

    p = MaterialParams.unit(0.4)
    ex = ManufacturedSolution(p)
    x = np.linspace(0, 2, 5)
    t = 1.3
    lhs = p.tau_alpha * np.cos(np.pi * x) * caputo_power(2.0, 0.4, t) + ex.P(x, t)
    np.testing.assert_allclose(lhs, p.eps_d * ex.E(x, t), atol=1e-14)


def test_sharp_variant_psi_ode(quad05):
    p = MaterialParams.unit(0.5)
    ex = ManufacturedSolution(p, quad05, sharp=True)
    t = 0.6
    lam = quad05.abscissae
    drive = p.c_alpha * lam ** (p.alpha - 1.0)
    dpsi = _fd(ex.psi_profile, t)
    np.testing.assert_allclose(dpsi, -lam * ex.psi_profile(t) + drive * 2.0 * t, rtol=1e-6, atol=1e-9)
    with pytest.raises(ValueError):
        ManufacturedSolution(p).psi(0.0, 1.0)


def test_separable_forms_match_pointwise():
    p = MaterialParams.unit(0.5)
    ex = ManufacturedSolution(p)
    s = ex.sources()
    x = np.linspace(0, 2, 11)
    for t in (0.0, 0.3, 1.7):
        np.testing.assert_allclose(s.F1(x, t), ex.F1(x, t), atol=1e-12)
        np.testing.assert_allclose(s.F2(x, t), ex.F2(x, t), atol=1e-12)


def test_projector_agrees_with_direct_projection():
    mesh = Mesh1D(0.0, 2.0, 6)
    ex = ManufacturedSolution(MaterialParams.unit(0.5))
    srcs = ex.sources()
    generic = SourceSet(F1=ex.F1, F2=ex.F2, F3=lambda x, t: t * np.sin(x))
    proj = srcs.projector(mesh, 2)
    f1, f2, f3 = proj(0.7)
    assert f3 is None
    np.testing.assert_allclose(f1, l2_project(lambda x: ex.F1(x, 0.7), mesh, 2).coeffs, atol=1e-12)
    g1, g2, g3 = generic.projector(mesh, 2)(0.7)
    np.testing.assert_allclose(g2, f2, atol=1e-12)
    np.testing.assert_allclose(g3, l2_project(lambda x: 0.7 * np.sin(x), mesh, 2).coeffs, atol=1e-14)


def test_time_average_of_separable_and_generic_sources():
    mesh = Mesh1D(0.0, 2.0, 4)
    sep = SeparableSource([(lambda t: t**0.5, np.cos)])
    a = SourceSet(F1=sep).project_average(mesh, 1, 0.0, 0.25)[0]
    b = SourceSet(F1=lambda x, t: t**0.5 * np.cos(x)).project_average(mesh, 1, 0.0, 0.25)[0]
    exact = (2.0 / 3.0) * 0.25**1.5 / 0.25 * l2_project(np.cos, mesh, 1).coeffs
    np.testing.assert_allclose(a, exact, atol=1e-12)
    np.testing.assert_allclose(b, exact, atol=1e-10)


def test_zero_and_scaled_sets():
    assert SourceSet.zero().is_zero
    s = SourceSet(F2=lambda x, t: x + t).scaled(3.0)
    assert s.F1 is None and s.F2(1.0, 1.0) == 6.0
