"""Energies, dispersion relations, error norms and convergence tables."""

from __future__ import annotations

import cmath
import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from colecole.dgcore import DgField, DgOperators, basis_values, gauss_rule, jump_dissipation
from colecole.material import MaterialParams
from colecole.quadopt import DiffusiveQuadrature

ENERGY_HEADER = ["t", "e1", "e2_sharp", "total", "dissipation"]
DISPERSION_HEADER = ["omega", "re_k", "im_k", "c", "eta"]
CONVERGENCE_HEADER = ["n_cells", "errE", "ordE", "errH", "ordH", "errP", "ordP"]


# -- energies ---------------------------------------------------------------------


@dataclass(frozen=True)
class EnergySample:
    t: float
    e1: float
    e2_sharp: float
    total: float
    dissipation: float


def _inner(u: np.ndarray, v: np.ndarray, h: float) -> float:
    """int u v dx for modal coefficient arrays (orthonormal basis, mass h/2)."""
    return 0.5 * h * float(np.sum(u * v))


def _mode_weights(quad: DiffusiveQuadrature, params: MaterialParams, power: float) -> np.ndarray:
    lam = np.asarray(quad.abscissae, dtype=float)
    return np.asarray(quad.weights, dtype=float) * lam**power


def energy_classical_coeffs(state, params: MaterialParams) -> float:
    h = state.mesh.h
    return 0.5 * (
        params.eps_e * _inner(state.E, state.E, h)
        + params.mu0 * _inner(state.H, state.H, h)
        + _inner(state.P, state.P, h) / params.eps_d
    )


def energy_classical(state, params: MaterialParams) -> float:
    """1/2 int eps0 eps_inf E^2 + mu0 H^2 + P^2 / (eps0 (eps_s - eps_inf)) dx."""
    return energy_classical_coeffs(state, params)


def energy_diffusive_sharp(state, params: MaterialParams, quad: DiffusiveQuadrature) -> float:
    """pi / (2 sin(pi a)) tau0^a / eps_d int sum_l zeta_l lam_l^(1-a) psi_l^2 dx."""
    a = params.alpha
    w = _mode_weights(quad, params, 1.0 - a)
    sq = np.sum(state.psi**2, axis=(1, 2)) * 0.5 * state.mesh.h
    return math.pi / (2.0 * math.sin(math.pi * a)) * params.tau_alpha / params.eps_d * float(np.sum(w * sq))


def volume_dissipation(state, params: MaterialParams, quad: DiffusiveQuadrature) -> float:
    """-pi / sin(pi a) tau0^a / eps_d int sum_l zeta_l lam_l^(2-a) psi_l^2 dx."""
    a = params.alpha
    w = _mode_weights(quad, params, 2.0 - a)
    sq = np.sum(state.psi**2, axis=(1, 2)) * 0.5 * state.mesh.h
    return -math.pi / math.sin(math.pi * a) * params.tau_alpha / params.eps_d * float(np.sum(w * sq))


def dissipation_rate(state, params: MaterialParams, quad: DiffusiveQuadrature, faces: bool = True) -> float:
    """Instantaneous dE#/dt of the semi-discrete system; never positive.

    With ``faces`` the upwind jump term -sum_j M_{j+1/2} is included.
    """
    rate = volume_dissipation(state, params, quad)
    if faces:
        rate -= float(np.sum(jump_dissipation(state.H, state.E, params)))
    return rate


def energy_sample(state, params: MaterialParams, quad: DiffusiveQuadrature, ops: DgOperators | None = None) -> EnergySample:
    e1 = energy_classical(state, params)
    e2 = energy_diffusive_sharp(state, params, quad)
    return EnergySample(state.t, e1, e2, e1 + e2, dissipation_rate(state, params, quad))


def constrained_polarization(H, E, psi, params: MaterialParams, quad: DiffusiveQuadrature):
    """P from the polarization law tau0^a sum zeta psi + P = eps_d E (no source)."""
    return params.eps_d * E - params.tau_alpha * np.tensordot(quad.weights, psi, axes=1)


def semi_discrete_rates(state, ops: DgOperators, quad: DiffusiveQuadrature):
    """Time derivatives (H', E', P', psi') of the unforced semi-discrete system.

    ``state.P`` must satisfy the polarization law; P' is then fixed by
    differentiating that law and substituting the auxiliary ODEs.
    """
    p = ops.params
    a = p.alpha
    lam = np.asarray(quad.abscissae, dtype=float)
    zeta = np.asarray(quad.weights, dtype=float)
    drive = p.c_alpha * lam ** (a - 1.0)
    m = ops.mass
    KH, KE = ops.apply(state.H, state.E)
    dH = KH / (m * p.mu0)
    R = KE / m
    kinf = 1.0 + p.tau_alpha * float(np.sum(zeta * drive))
    Lam = p.tau_alpha * np.tensordot(zeta * lam, state.psi, axes=1)
    dE = (R - Lam / kinf) / (p.eps_e + p.eps_d / kinf)
    dP = (p.eps_d * dE + Lam) / kinf
    dpsi = -lam[:, None, None] * state.psi + drive[:, None, None] * dP[None]
    return dH, dE, dP, dpsi


def energy_rate_chain_rule(state, ops: DgOperators, quad: DiffusiveQuadrature) -> float:
    """dE#/dt evaluated by differentiating the energy along the semi-discrete flow."""
    p = ops.params
    a = p.alpha
    h = state.mesh.h
    dH, dE, dP, dpsi = semi_discrete_rates(state, ops, quad)
    w = _mode_weights(quad, p, 1.0 - a)
    d1 = p.eps_e * _inner(state.E, dE, h) + p.mu0 * _inner(state.H, dH, h) + _inner(state.P, dP, h) / p.eps_d
    d2 = math.pi / math.sin(math.pi * a) * p.tau_alpha / p.eps_d * sum(
        w[l] * _inner(state.psi[l], dpsi[l], h) for l in range(w.size)
    )
    return d1 + d2


def write_energy_csv(path, samples: Sequence[EnergySample]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(ENERGY_HEADER)
        for s in samples:
            wr.writerow([repr(float(v)) for v in (s.t, s.e1, s.e2_sharp, s.total, s.dissipation)])


def energy_differences(samples: Sequence[EnergySample]):
    """Per-step differences F(t_n) - F(t_{n+1}) for F = E# and F = E1."""
    tot = np.array([s.total for s in samples])
    e1 = np.array([s.e1 for s in samples])
    return tot[:-1] - tot[1:], e1[:-1] - e1[1:]


# -- dispersion ---------------------------------------------------------------------


@dataclass(frozen=True)
class DispersionSample:
    omega: float
    k: complex
    phase_velocity: float
    attenuation: float


def _sample_from_k2(omega: float, k2: complex) -> DispersionSample:
    k = cmath.sqrt(k2)
    if k.real < 0:
        k = -k
    return DispersionSample(omega, k, omega / k.real, -k.imag)


def _wavenumber_sq(omega: float, params: MaterialParams, Q: complex) -> complex:
    p = params
    return (p.mu0 * p.eps_e + p.mu0 * p.eps_d / (1.0 + Q)) * omega**2


def dispersion_exact(omega: float, params: MaterialParams, alpha: float | None = None) -> DispersionSample:
    """Plane-wave relation with Q = (i omega tau0)^alpha.

    ``alpha`` overrides the material exponent and may equal 1 (Debye).
    """
    if not omega > 0:
        raise ValueError("omega must be positive")
    a = params.alpha if alpha is None else float(alpha)
    if not 0.0 < a <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    Q = (1j * omega * params.tau0) ** a
    return _sample_from_k2(omega, _wavenumber_sq(omega, params, Q))


def q_sharp(omega: float, params: MaterialParams, quad: DiffusiveQuadrature) -> complex:
    lam = np.asarray(quad.abscissae, dtype=float)
    zeta = np.asarray(quad.weights, dtype=float)
    a = params.alpha
    s = np.sum(zeta * lam ** (a - 1.0) / (1j * omega + lam)) if zeta.size else 0.0
    return complex(params.tau_alpha * params.c_alpha * 1j * omega * s)


def dispersion_approx(omega: float, params: MaterialParams, quad: DiffusiveQuadrature) -> DispersionSample:
    """Same relation with Q replaced by its diffusive approximation."""
    if not omega > 0:
        raise ValueError("omega must be positive")
    return _sample_from_k2(omega, _wavenumber_sq(omega, params, q_sharp(omega, params, quad)))


def debye_closed_form(omega: float, params: MaterialParams) -> DispersionSample:
    """Debye medium: k = omega sqrt(mu0 (eps_e + eps_d / (1 + i omega tau0)))."""
    p = params
    w = omega * p.tau0
    # rationalized form of eps_d / (1 + i w)
    eps = complex(p.eps_e + p.eps_d / (1.0 + w * w), -p.eps_d * w / (1.0 + w * w))
    return _sample_from_k2(omega, p.mu0 * eps * omega**2)


def write_dispersion_csv(path, samples: Sequence[DispersionSample]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(DISPERSION_HEADER)
        for s in samples:
            wr.writerow([repr(float(v)) for v in (s.omega, s.k.real, s.k.imag, s.phase_velocity, s.attenuation)])


# -- errors and convergence ------------------------------------------------------------


def l2_error(field: DgField, exact: Callable) -> float:
    """L2 distance to ``exact`` with a (k+3)-point Gauss rule per cell."""
    k = field.degree
    xq, wq = gauss_rule(k + 3)
    vals = field.coeffs @ basis_values(k, xq).T
    ex = np.broadcast_to(np.asarray(exact(field.mesh.to_physical(xq)), dtype=float), vals.shape)
    return float(math.sqrt(0.5 * field.mesh.h * np.sum((vals - ex) ** 2 * wq)))


@dataclass(frozen=True)
class ConvergenceRow:
    n_cells: int
    l2_err_E: float
    l2_err_H: float
    l2_err_P: float
    order_E: float | None = None
    order_H: float | None = None
    order_P: float | None = None
    # set when an error sits at the rounding floor, where orders carry no meaning
    degenerate: bool = False


ERROR_FLOOR = 1e-12


def observed_order(e_coarse: float, e_fine: float, ratio: float = 2.0) -> float | None:
    if e_coarse <= ERROR_FLOOR or e_fine <= ERROR_FLOOR:
        return None
    return math.log(e_coarse / e_fine) / math.log(ratio)


def convergence_table(levels: Sequence[int], errors: Sequence[tuple]) -> list:
    """Rows with consecutive-level log2 orders from (errE, errH, errP) triples."""
    rows = []
    for i, (n, err) in enumerate(zip(levels, errors)):
        degenerate = any(e <= ERROR_FLOOR for e in err)
        orders = [None, None, None]
        if i > 0:
            r = n / levels[i - 1]
            orders = [observed_order(errors[i - 1][j], err[j], r) for j in range(3)]
        rows.append(ConvergenceRow(n, *err, *orders, degenerate=degenerate))
    return rows


def convergence_study(base_config, mesh_levels: Sequence[int], exact, tau_rule: Callable | None = None,
                      solver: Callable | None = None) -> list:
    """Run the manufactured problem on each mesh level and tabulate errors.

    ``exact`` provides vectorized ``E(x, t)``, ``H(x, t)`` and ``P(x, t)``;
    ``tau_rule`` maps the cell width to the time step (default h^2) and T
    is kept fixed.
    """
    from dataclasses import replace

    from colecole.dgcore import Mesh1D
    from colecole.stepper import run_simulation

    solver = solver or run_simulation
    tau_rule = tau_rule or (lambda h: h * h)
    errs = []
    for n in mesh_levels:
        mesh = Mesh1D(base_config.mesh.x_minus, base_config.mesh.x_plus, n)
        cfg = replace(base_config, mesh=mesh, tau=base_config.T / round(base_config.T / tau_rule(mesh.h)))
        res = solver(cfg)
        s, T = res.final, res.final.t
        errs.append(
            (
                l2_error(s.field("E"), lambda x: exact.E(x, T)),
                l2_error(s.field("H"), lambda x: exact.H(x, T)),
                l2_error(s.field("P"), lambda x: exact.P(x, T)),
            )
        )
    return convergence_table(list(mesh_levels), errs)


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_convergence_csv(path, rows: Sequence[ConvergenceRow]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CONVERGENCE_HEADER)
        for r in rows:
            wr.writerow(
                [r.n_cells, _fmt(r.l2_err_E), _fmt(r.order_E), _fmt(r.l2_err_H), _fmt(r.order_H), _fmt(r.l2_err_P), _fmt(r.order_P)]
            )
