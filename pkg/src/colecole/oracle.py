"""Direct reference solver with the L1 discretization of the Caputo derivative.

The (H, E) part is treated exactly as in :mod:`colecole.stepper`; only the
polarization law differs.  The whole polarization history is stored, so the
cost of step n grows linearly with n.
"""

from __future__ import annotations

import math

import numpy as np

from colecole.dgcore import assemble_operators
from colecole.stepper import (
    HESolver,
    SimResult,
    SimState,
    SimulationConfig,
    _as_projector,
    _averaged_sources,
    _drive,
    _projected_sources,
    bdf2_coefficients,
    check_residuals,
    euler_fields,
    maxwell_residuals,
)

__all__ = ["l1_coefficients", "L1History", "l1_caputo_apply", "run_direct_simulation"]


def l1_coefficients(n: int, alpha: float, tau: float) -> np.ndarray:
    """a_m = tau^-alpha / Gamma(2-alpha) ((m+1)^(1-alpha) - m^(1-alpha)), m < n."""
    if n < 1:
        raise ValueError("need at least one coefficient")
    if not tau > 0:
        raise ValueError("time step must be positive")
    m = np.arange(n + 1, dtype=float)
    powers = m ** (1.0 - alpha)
    return tau ** (-alpha) / math.gamma(2.0 - alpha) * np.diff(powers)


class L1History:
    """Append-only store of P^0, P^1, ... with the L1 weights.

    ``capacity`` is the number of levels that will ever be stored; the
    storage is preallocated so that the history sum of step n is one
    contiguous matrix-vector product.
    """

    def __init__(self, alpha: float, tau: float, capacity: int, field_shape, P0=None):
        self.alpha, self.tau = alpha, tau
        self.capacity = int(capacity)
        self.field_shape = tuple(field_shape)
        size = int(np.prod(self.field_shape))
        self.a = l1_coefficients(self.capacity, alpha, tau)
        # diff[j] = a_j - a_{j-1} for j >= 1, stored reversed: rev[c-1-j] = diff[j]
        diff = np.zeros(self.capacity)
        diff[1:] = self.a[1:] - self.a[:-1]
        self._rev = np.ascontiguousarray(diff[::-1])
        self._levels = np.zeros((self.capacity, size))
        self._p0_nonzero = False
        if P0 is not None:
            self.set_initial(P0)
        self.count = 1  # P^0 is always level 0

    def set_initial(self, P0) -> None:
        self._levels[0] = np.ravel(P0)
        self._p0_nonzero = bool(np.any(self._levels[0]))

    def append(self, P) -> None:
        if self.count >= self.capacity:
            raise IndexError("L1 history is full")
        self._levels[self.count] = np.ravel(P)
        self.count += 1

    def level(self, m: int) -> np.ndarray:
        return self._levels[m].reshape(self.field_shape)

    def history_term(self, n: int) -> np.ndarray:
        """sum_{m=1}^{n-1} (a_{n-m} - a_{n-m-1}) P^m - a_{n-1} P^0."""
        if n > self.count:
            raise ValueError("levels 1..n-1 must be stored before step n")
        c = self.capacity
        out = self._rev[c - n : c - 1] @ self._levels[1:n] if n > 1 else np.zeros(self._levels.shape[1])
        if self._p0_nonzero:
            out -= self.a[n - 1] * self._levels[0]
        return out.reshape(self.field_shape)

    def nbytes(self) -> int:
        return self.count * self._levels.shape[1] * self._levels.itemsize


def l1_caputo_apply(history: L1History, Pn) -> np.ndarray:
    """Discrete Caputo derivative at level n = history.count from P^n."""
    n = history.count
    return history.a[0] * np.asarray(Pn) + history.history_term(n)


class _DirectWorkspace:
    """Same (H, E) system as the fast solver with kappa = 1 + tau0^a a_0."""

    def __init__(self, ops, tau: float, capacity: int, dense=None):
        p = ops.params
        self.ops, self.params, self.tau = ops, p, float(tau)
        self.mass = ops.mass
        self.C1, self.C2, self.C3, _ = bdf2_coefficients(tau, p.alpha)
        self.history = L1History(p.alpha, tau, capacity, (ops.mesh.n_cells, ops.degree + 1))
        self.kappa = 1.0 + p.tau_alpha * self.history.a[0]
        self.solver = HESolver(ops, (self.C1, self.C2, self.C3), self.kappa, dense)


def _direct_first_step(s0: SimState, ws: _DirectWorkspace, sources) -> SimState:
    p, tau = ws.params, ws.tau
    f1, f2, _ = _averaged_sources(sources, s0.mesh, s0.degree, s0.t, s0.t + tau)
    _, _, f3 = _projected_sources(sources, s0.mesh, s0.degree, s0.t + tau)
    H1, rE = euler_fields(s0, ws.ops, tau, f1, f2)
    ws.history.set_initial(s0.P)
    G = -p.tau_alpha * ws.history.history_term(1)
    if f3 is not None:
        G = G + f3
    E1 = (p.eps_e * s0.E + s0.P - G / ws.kappa + tau * rE) / (p.eps_e + p.eps_d / ws.kappa)
    P1 = (p.eps_d * E1 + G) / ws.kappa
    ws.history.append(P1)
    return SimState(s0.t + tau, s0.mesh, H1, E1, P1, s0.psi)


def _direct_step(s1: SimState, s2: SimState, ws: _DirectWorkspace, sources, t_n: float, check: bool) -> SimState:
    p = ws.params
    f1, f2, f3 = sources(t_n)
    n = ws.history.count
    G = ws.history.history_term(n)
    G *= -p.tau_alpha
    if f3 is not None:
        G += f3
    U = np.empty_like(s1.U)
    U[0], U[1] = ws.solver.solve(s1.U, s2.U, G, f1, f2)
    np.multiply(U[1], p.eps_d / ws.kappa, out=U[2])
    U[2] += G / ws.kappa
    new = SimState.from_stack(t_n, s1.mesh, U, s1.psi)
    if check:
        rH, rE = maxwell_residuals(ws.ops, (ws.C1, ws.C2, ws.C3), new, s1, s2, f1, f2)
        lhs = p.tau_alpha * l1_caputo_apply(ws.history, new.P) + new.P
        rhs = p.eps_d * new.E + (f3 if f3 is not None else 0.0)
        scale = np.linalg.norm(lhs) + np.linalg.norm(rhs)
        rP = np.linalg.norm(lhs - rhs) / scale if scale > 0 else 0.0
        check_residuals({"H": rH, "E": rE, "P": rP}, t=t_n)
    ws.history.append(new.P)
    return new


def run_direct_simulation(cfg: SimulationConfig, energies: bool = False) -> SimResult:
    """Run the direct L1 solver on the same configuration surface.

    The quadrature in ``cfg`` is ignored except for energy sampling, which
    needs auxiliary variables and is therefore unavailable here: only the
    classical energy is recorded when ``energies`` is set.
    """
    ops = assemble_operators(cfg.mesh, cfg.degree, cfg.params)
    n_steps = cfg.n_steps()
    ws = _DirectWorkspace(ops, cfg.tau, n_steps + 1, cfg.dense_step)
    energy_fn = None
    if energies:
        from colecole.diagnostics import energy_classical_coeffs

        energy_fn = lambda s: (s.t, energy_classical_coeffs(s, cfg.params))  # noqa: E731
    tau = cfg.tau
    proj = _as_projector(cfg.sources, cfg.mesh, cfg.degree)
    return _drive(
        cfg,
        lambda s0: _direct_first_step(s0, ws, cfg.sources),
        lambda s1, s2, n: _direct_step(s1, s2, ws, proj, n * tau, cfg.check_residuals),
        0,
        energy_fn,
    )
