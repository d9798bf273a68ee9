"""Fast fully discrete solver: DG in space, BDF2 in time.

At every step the auxiliary variables and the polarization are eliminated in
closed form, which leaves one constant-coefficient linear system for the
stacked (H, E) coefficients.  That system is factored once and reused.
Only two past time levels are kept.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from colecole.dgcore import DgField, DgOperators, Mesh1D, assemble_operators, project_initial_EH
from colecole.material import MaterialParams
from colecole.quadopt import DiffusiveQuadrature
from colecole.sources import SourceSet, zero_function

__all__ = [
    "SimState",
    "SourceSet",
    "BdfWorkspace",
    "HESolver",
    "StepError",
    "SimulationConfig",
    "SimResult",
    "bdf2_coefficients",
    "eliminate_psi",
    "polarization_solve",
    "bootstrap_first_step",
    "implicit_first_step",
    "bdf1_coefficients",
    "bdf2_step",
    "initial_state",
    "run_simulation",
    "write_manifest",
]

RESIDUAL_TOL = 1e-10
# (H, E) systems with at most this many unknowns use a precomputed dense step map
DENSE_LIMIT = 256


class StepError(RuntimeError):
    """A time step failed: singular system or discrete residual above tolerance."""


class SimState:
    """Solution at one time level.

    H, E and P are views into one stacked array ``U`` of shape (3, M, k+1);
    ``psi`` has shape (L, M, k+1).
    """

    __slots__ = ("t", "mesh", "U", "psi")

    def __init__(self, t: float, mesh: Mesh1D, H, E, P, psi):
        self.t = t
        self.mesh = mesh
        self.U = np.stack([np.asarray(H, dtype=float), np.asarray(E, dtype=float), np.asarray(P, dtype=float)])
        self.psi = np.asarray(psi, dtype=float)

    @classmethod
    def from_stack(cls, t: float, mesh: Mesh1D, U: np.ndarray, psi: np.ndarray) -> "SimState":
        s = cls.__new__(cls)
        s.t, s.mesh, s.U, s.psi = t, mesh, U, psi
        return s

    @classmethod
    def zeros(cls, mesh: Mesh1D, k: int, L: int, t: float = 0.0) -> "SimState":
        return cls.from_stack(t, mesh, np.zeros((3, mesh.n_cells, k + 1)), np.zeros((L, mesh.n_cells, k + 1)))

    H = property(lambda self: self.U[0])
    E = property(lambda self: self.U[1])
    P = property(lambda self: self.U[2])

    @H.setter
    def H(self, value):
        self.U[0] = value

    @E.setter
    def E(self, value):
        self.U[1] = value

    @P.setter
    def P(self, value):
        self.U[2] = value

    @property
    def degree(self) -> int:
        return self.U.shape[2] - 1

    @property
    def L(self) -> int:
        return self.psi.shape[0]

    def field(self, name: str) -> DgField:
        return DgField(self.mesh, getattr(self, name).copy())

    def psi_field(self, ell: int) -> DgField:
        return DgField(self.mesh, self.psi[ell].copy())

    def scaled(self, c: float) -> "SimState":
        return SimState.from_stack(self.t, self.mesh, c * self.U, c * self.psi)

    def copy(self) -> "SimState":
        return SimState.from_stack(self.t, self.mesh, self.U.copy(), self.psi.copy())


def bdf2_coefficients(tau: float, alpha: float):
    """(C1, C2, C3, C_alpha) of the BDF2 formula and the diffusive weight."""
    if not tau > 0:
        raise ValueError("time step must be positive")
    return 1.5 / tau, -2.0 / tau, 0.5 / tau, float(np.sin(np.pi * alpha) / np.pi)


def bdf1_coefficients(tau: float):
    """(C1, C2, C3) of backward Euler written in the BDF2 layout."""
    if not tau > 0:
        raise ValueError("time step must be positive")
    return 1.0 / tau, -1.0 / tau, 0.0


class HESolver:
    """Solves the BDF2 system for (H^n, E^n).

    With P^n = (eps_d E^n + G) / kappa eliminated, the equations read
      mu0 m (C1 H^n + C2 H1 + C3 H2) = K_H [H^n; E^n] + m f1
      m ((eps_e + eps_d / kappa) C1 E^n + eps_e (C2 E1 + C3 E2)
         + C1 G / kappa + C2 P1 + C3 P2) = K_E [H^n; E^n] + m f2
    where m = h/2 is the mass and index 1, 2 mark levels n-1, n-2.  The
    system matrix is LU-factored once.  Small systems additionally keep the
    dense map from the stacked data [U1, U2, G, f1, f2] to [H^n; E^n], which
    turns a step into a single matrix-vector product.
    """

    def __init__(self, ops: DgOperators, C: tuple, kappa: float, dense: bool | None = None):
        p = ops.params
        C1, C2, C3 = C
        n = ops.n_dofs
        m = ops.mass
        self.n = n
        self.shape = (ops.mesh.n_cells, ops.degree + 1)
        eps_coef = p.eps_e + p.eps_d / kappa
        diag = np.concatenate([np.full(n, p.mu0 * C1 * m), np.full(n, eps_coef * C1 * m)])
        A = (sp.diags(diag) - ops.K).tocsc()
        try:
            self.lu = spla.splu(A)
        except RuntimeError as exc:
            raise StepError(f"(H, E) system is singular: {exc}") from exc
        # right-hand side as a linear map of z = [H1, E1, P1, H2, E2, P2, G, f1, f2]
        I = sp.identity(n, format="csr")
        Z = sp.csr_matrix((n, n))
        rows_H = [-p.mu0 * m * C2 * I, Z, Z, -p.mu0 * m * C3 * I, Z, Z, Z, m * I, Z]
        rows_E = [
            Z,
            -m * p.eps_e * C2 * I,
            -m * C2 * I,
            Z,
            -m * p.eps_e * C3 * I,
            -m * C3 * I,
            -(m * C1 / kappa) * I,
            Z,
            m * I,
        ]
        self.R = sp.bmat([rows_H, rows_E], format="csr")
        self.dense = (2 * n <= DENSE_LIMIT) if dense is None else bool(dense)
        if self.dense:
            T = self.lu.solve(self.R.toarray())
            self.T_full = np.ascontiguousarray(T)
            self.T_nosrc = np.ascontiguousarray(T[:, : 7 * n])

    def solve(self, U1: np.ndarray, U2: np.ndarray, G: np.ndarray, f1=None, f2=None):
        n = self.n
        if f1 is None and f2 is None:
            z = np.concatenate((U1.ravel(), U2.ravel(), G.ravel()))
            x = self.T_nosrc @ z if self.dense else self.lu.solve(self.R[:, : 7 * n] @ z)
        else:
            zero = np.zeros(n)
            z = np.concatenate(
                (
                    U1.ravel(),
                    U2.ravel(),
                    G.ravel(),
                    zero if f1 is None else f1.ravel(),
                    zero if f2 is None else f2.ravel(),
                )
            )
            x = self.T_full @ z if self.dense else self.lu.solve(self.R @ z)
        if not np.isfinite(x).all():
            raise StepError("linear solve produced non-finite values")
        return x[:n].reshape(self.shape), x[n:].reshape(self.shape)


class BdfWorkspace:
    """Step-size dependent constants and the factored (H, E) system."""

    def __init__(
        self,
        ops: DgOperators,
        quad: DiffusiveQuadrature,
        tau: float,
        dense: bool | None = None,
        coefficients: tuple | None = None,
    ):
        quad.check_feasible()
        p = ops.params
        if abs(quad.alpha - p.alpha) > 1e-14:
            raise ValueError("quadrature and material disagree on alpha")
        self.ops = ops
        self.quad = quad
        self.params = p
        self.tau = float(tau)
        self.C1, self.C2, self.C3, self.C_alpha = bdf2_coefficients(tau, p.alpha)
        if coefficients is not None:
            self.C1, self.C2, self.C3 = (float(c) for c in coefficients)
        lam = np.asarray(quad.abscissae, dtype=float)
        zeta = np.asarray(quad.weights, dtype=float)
        self.lam, self.zeta = lam, zeta
        self.drive = self.C_alpha * lam ** (p.alpha - 1.0)  # C_alpha lam^(alpha-1)
        self.denom = self.C1 + lam
        ta = p.tau_alpha
        self.kappa = 1.0 + ta * self.C1 * float(np.sum(zeta * self.drive / self.denom))
        # G = F3 - a_sum (C2 P1 + C3 P2) + sum_l b_l (C2 psi1_l + C3 psi2_l)
        self._a_sum = ta * float(np.sum(zeta * self.drive / self.denom))
        self._b = ta * zeta / self.denom
        self._b2 = self._b * self.C2
        self._b3 = self._b * self.C3
        # psi^n = u_l dP - v_l psi1 - w_l psi2, with dP = C1 P^n + C2 P1 + C3 P2
        self._psi_u = (self.drive / self.denom)[:, None]
        self._psi_v = (self.C2 / self.denom)[:, None]
        self._psi_w = (self.C3 / self.denom)[:, None]
        # forward Euler constant for the first step
        self.kappa1 = 1.0 + ta * float(np.sum(zeta * self.drive))
        self.mass = ops.mass
        self.solver = HESolver(ops, (self.C1, self.C2, self.C3), self.kappa, dense)

    def history_G(self, P1, P2, psi1, psi2, F3n=None) -> np.ndarray:
        L = psi1.shape[0]
        G = self._b2 @ psi1.reshape(L, -1) + self._b3 @ psi2.reshape(L, -1)
        G -= (self._a_sum * self.C2) * P1.ravel()
        G -= (self._a_sum * self.C3) * P2.ravel()
        if F3n is not None:
            G += F3n.ravel()
        return G.reshape(P1.shape)


def eliminate_psi(Pn, P_nm1, P_nm2, psi_nm1, psi_nm2, ws: BdfWorkspace):
    """psi^n from the BDF2 form of psi' = -lam psi + C_alpha lam^(alpha-1) P'.

    ``psi_*`` hold all modes stacked along axis 0.
    """
    dP = ws.C1 * Pn + ws.C2 * P_nm1 + ws.C3 * P_nm2
    L = psi_nm1.shape[0]
    flat = ws._psi_u * dP.ravel() - ws._psi_v * psi_nm1.reshape(L, -1) - ws._psi_w * psi_nm2.reshape(L, -1)
    return flat.reshape(psi_nm1.shape)


def polarization_solve(En, P_hist, psi_hist, F3n, ws: BdfWorkspace):
    """P^n from the discrete polarization law after eliminating psi^n.

    ``P_hist`` = (P^{n-1}, P^{n-2}), ``psi_hist`` = (psi^{n-1}, psi^{n-2}).
    """
    G = ws.history_G(P_hist[0], P_hist[1], psi_hist[0], psi_hist[1], F3n)
    return (ws.params.eps_d * En + G) / ws.kappa


def _projected_sources(sources: SourceSet, mesh: Mesh1D, k: int, t: float):
    if sources is None or sources.is_zero:
        return None, None, None
    return sources.project(mesh, k, t)


def _averaged_sources(sources: SourceSet, mesh: Mesh1D, k: int, t0: float, t1: float):
    if sources is None or sources.is_zero:
        return None, None, None
    return sources.project_average(mesh, k, t0, t1)


def _no_sources(t):
    return None, None, None


def _as_projector(sources, mesh: Mesh1D, k: int):
    if sources is None or (isinstance(sources, SourceSet) and sources.is_zero):
        return _no_sources
    if isinstance(sources, SourceSet):
        return sources.projector(mesh, k)
    return sources


def _norm(a) -> float:
    a = np.ravel(a)
    return math.sqrt(float(a @ a))


def _rel(*terms) -> float:
    total = sum(terms[1:], terms[0])
    scale = sum(_norm(t) for t in terms)
    return _norm(total) / scale if scale > 0 else 0.0


def maxwell_residuals(ops: DgOperators, C: tuple, new: SimState, s1: SimState, s2: SimState, f1, f2):
    """Relative residuals of the BDF2 H and E equations, using the sparse operator."""
    p, m = ops.params, ops.mass
    C1, C2, C3 = C
    KH, KE = ops.apply(new.H, new.E)
    zero = np.zeros_like(new.H)
    rH = _rel(p.mu0 * m * C1 * new.H, p.mu0 * m * (C2 * s1.H + C3 * s2.H), -KH, -m * f1 if f1 is not None else zero)
    dP = C1 * new.P + C2 * s1.P + C3 * s2.P
    rE = _rel(
        p.eps_e * m * C1 * new.E,
        p.eps_e * m * (C2 * s1.E + C3 * s2.E),
        m * dP,
        -KE,
        -m * f2 if f2 is not None else zero,
    )
    return rH, rE


def residual_norms(ws: BdfWorkspace, new: SimState, s1: SimState, s2: SimState, f):
    """Relative residuals of the four discrete equations at level n."""
    p = ws.params
    C1, C2, C3 = ws.C1, ws.C2, ws.C3
    f1, f2, f3 = f
    rH, rE = maxwell_residuals(ws.ops, (C1, C2, C3), new, s1, s2, f1, f2)
    zero = np.zeros_like(new.H)
    rP = _rel(
        p.tau_alpha * np.tensordot(ws.zeta, new.psi, axes=1),
        new.P,
        -p.eps_d * new.E,
        -f3 if f3 is not None else zero,
    )
    dP = C1 * new.P + C2 * s1.P + C3 * s2.P
    shape = (-1, 1, 1)
    rpsi = _rel(
        C1 * new.psi,
        C2 * s1.psi + C3 * s2.psi,
        ws.lam.reshape(shape) * new.psi,
        -ws.drive.reshape(shape) * dP[None],
    )
    return {"H": rH, "E": rE, "P": rP, "psi": rpsi}


def check_residuals(res: dict, tol: float = RESIDUAL_TOL, t: float | None = None):
    bad = {k: v for k, v in res.items() if not v <= tol}
    if bad:
        where = f" at t={t:.6g}" if t is not None else ""
        raise StepError(f"discrete residual above {tol:g}{where}: {bad}")


def euler_fields(state0: SimState, ops: DgOperators, tau: float, f1, f2):
    """H^1 and the right-hand side of the E equation for a forward Euler step."""
    p, m = ops.params, ops.mass
    KH, KE = ops.apply(state0.H, state0.E)
    rH = KH / m + (f1 if f1 is not None else 0.0)
    rE = KE / m + (f2 if f2 is not None else 0.0)
    return state0.H + (tau / p.mu0) * rH, rE


def bootstrap_first_step(state0: SimState, ws: BdfWorkspace, sources: SourceSet | None = None) -> SimState:
    """One forward Euler step of size tau for H, E and psi.

    The spatial operators are evaluated at the old level and F1, F2 enter
    through their time averages over the step, so that sources which are
    not differentiable at t = 0 do not cost accuracy.  The polarization law
    is imposed at the new level, which makes E^1 and P^1 the solution of a
    cellwise linear relation.
    """
    p, tau = ws.params, ws.tau
    mesh = state0.mesh
    k = state0.degree
    f1, f2, _ = _averaged_sources(sources, mesh, k, state0.t, state0.t + tau)
    _, _, f3_new = _projected_sources(sources, mesh, k, state0.t + tau)
    H1, rE = euler_fields(state0, ws.ops, tau, f1, f2)
    lam = ws.lam.reshape(-1, 1, 1)
    drive = ws.drive.reshape(-1, 1, 1)
    ta = p.tau_alpha
    decay = (1.0 - tau * lam) * state0.psi
    # tau^a sum zeta psi^1 + P^1 = eps_d E^1 + F3^1 with psi^1 = decay + drive (P^1 - P^0)
    G1 = -ta * np.tensordot(ws.zeta, decay, axes=1) + ta * float(np.sum(ws.zeta * ws.drive)) * state0.P
    if f3_new is not None:
        G1 = G1 + f3_new
    k1 = ws.kappa1
    E1 = (p.eps_e * state0.E + state0.P - G1 / k1 + tau * rE) / (p.eps_e + p.eps_d / k1)
    P1 = (p.eps_d * E1 + G1) / k1
    psi1 = decay + drive * (P1 - state0.P)[None]
    return SimState(state0.t + tau, mesh, H1, E1, P1, psi1)


def implicit_first_step(state0: SimState, ws: BdfWorkspace, sources: SourceSet | None = None) -> SimState:
    """One backward Euler step of size tau, an optional alternative start.

    ``ws`` must be built with the coefficients of :func:`bdf1_coefficients`.
    The step dissipates the discrete energy, whereas the forward Euler start
    adds an O(tau^2) amount to it.
    """
    return bdf2_step(state0, state0, ws, sources, state0.t + ws.tau)


def bdf2_step(
    s1: SimState,
    s2: SimState,
    ws: BdfWorkspace,
    sources,
    t_n: float,
    check: bool = True,
) -> SimState:
    """Advance from levels (n-1, n-2) = (s1, s2) to level n at time t_n.

    ``sources`` is a :class:`SourceSet`, a projector bound to the mesh (see
    :meth:`SourceSet.projector`) or None.
    """
    sources = _as_projector(sources, s1.mesh, s1.degree)
    f1, f2, f3 = sources(t_n)
    G = ws.history_G(s1.P, s2.P, s1.psi, s2.psi, f3)
    U = np.empty_like(s1.U)
    U[0], U[1] = ws.solver.solve(s1.U, s2.U, G, f1, f2)
    np.multiply(U[1], ws.params.eps_d / ws.kappa, out=U[2])
    U[2] += G / ws.kappa
    psin = eliminate_psi(U[2], s1.P, s2.P, s1.psi, s2.psi, ws)
    new = SimState.from_stack(t_n, s1.mesh, U, psin)
    if check:
        check_residuals(residual_norms(ws, new, s1, s2, (f1, f2, f3)), t=t_n)
    return new


# -- driver -------------------------------------------------------------------------


@dataclass
class SimulationConfig:
    """Everything needed to run either solver.

    ``sample_every`` is the energy sampling cadence in steps (0 disables
    sampling except for the initial and final states); ``snapshot_every``
    likewise for stored field states.  ``dense_step`` selects the solve
    path for (H, E): None picks by system size.
    """

    mesh: Mesh1D
    degree: int
    params: MaterialParams
    tau: float
    T: float
    quad: Optional[DiffusiveQuadrature] = None
    sources: SourceSet = field(default_factory=SourceSet)
    E0: Callable = zero_function
    H0: Callable = zero_function
    sample_every: int = 0
    snapshot_every: int = 0
    check_residuals: bool = True
    dense_step: Optional[bool] = None
    bootstrap: str = "euler"
    label: str = ""

    def n_steps(self) -> int:
        n = int(np.floor(self.T / self.tau * (1.0 + 1e-12)))
        if n < 1:
            raise ValueError("T must be at least one time step")
        return n

    def grid_warning(self) -> str | None:
        n = self.n_steps()
        if abs(n * self.tau - self.T) > 1e-9 * max(self.T, 1.0):
            return f"T={self.T!r} is not a multiple of tau={self.tau!r}; stopping at t={n * self.tau!r}"
        return None

    def describe(self) -> dict:
        p = self.params
        d = {
            "label": self.label,
            "x_minus": self.mesh.x_minus,
            "x_plus": self.mesh.x_plus,
            "n_cells": self.mesh.n_cells,
            "degree": self.degree,
            "eps0": p.eps0,
            "eps_inf": p.eps_inf,
            "eps_s": p.eps_s,
            "mu0": p.mu0,
            "tau0": p.tau0,
            "alpha": p.alpha,
            "tau": self.tau,
            "T": self.T,
            "n_steps": self.n_steps(),
            "sources": "zero" if self.sources.is_zero else "given",
            "sample_every": self.sample_every,
            "snapshot_every": self.snapshot_every,
            "check_residuals": self.check_residuals,
            "dense_step": self.dense_step,
            "bootstrap": self.bootstrap,
        }
        if self.quad is not None:
            d["quad_L"] = self.quad.L
            d["quad_zeta"] = " ".join(repr(float(z)) for z in self.quad.weights)
            d["quad_lambda"] = " ".join(repr(float(z)) for z in self.quad.abscissae)
            if self.quad.band is not None:
                d["quad_omega_min"] = self.quad.band.omega_min
                d["quad_omega_max"] = self.quad.band.omega_max
        return d


@dataclass
class SimResult:
    final: SimState
    samples: list
    snapshots: list
    n_steps: int
    wall_time: float
    manifest: dict
    cpu_time: float = float("nan")


def initial_state(cfg: SimulationConfig, L: int) -> SimState:
    Eh, Hh = project_initial_EH(cfg.E0, cfg.H0, cfg.params, cfg.mesh, cfg.degree)
    s = SimState.zeros(cfg.mesh, cfg.degree, L)
    s.E, s.H = Eh.coeffs, Hh.coeffs
    return s


def _drive(cfg: SimulationConfig, first_step, next_step, L: int, energy_fn) -> SimResult:
    """Shared time loop: bootstrap, then two-level recurrence."""
    n_steps = cfg.n_steps()
    warn = cfg.grid_warning()
    if warn:
        warnings.warn(warn)
    samples, snapshots = [], []
    every = cfg.sample_every
    snap = cfg.snapshot_every

    def record(n, state):
        if energy_fn is not None and (n == 0 or n == n_steps or (every and n % every == 0)):
            samples.append(energy_fn(state))
        if snap and (n % snap == 0 or n == n_steps):
            snapshots.append(state)

    need_record = energy_fn is not None or snap
    start = time.perf_counter()
    cpu_start = time.process_time()
    s0 = initial_state(cfg, L)
    record(0, s0)
    s1 = first_step(s0)
    record(1, s1)
    prev, cur = s0, s1
    for n in range(2, n_steps + 1):
        prev, cur = cur, next_step(cur, prev, n)
        if need_record:
            record(n, cur)
    wall = time.perf_counter() - start
    cpu = time.process_time() - cpu_start
    manifest = cfg.describe()
    manifest["wall_time_s"] = wall
    manifest["cpu_time_s"] = cpu
    manifest["steps_taken"] = n_steps
    manifest["final_time"] = cur.t
    if warn:
        manifest["warning"] = warn
    return SimResult(cur, samples, snapshots, n_steps, wall, manifest, cpu)


def run_simulation(cfg: SimulationConfig, energies: bool | None = None) -> SimResult:
    """Run the fast solver: one start step, then BDF2 to T.

    The start step is forward Euler (``cfg.bootstrap == "euler"``) or
    backward Euler (``"implicit"``).
    """
    if cfg.quad is None:
        raise ValueError("the fast solver needs a diffusive quadrature")
    if cfg.bootstrap not in ("euler", "implicit"):
        raise ValueError(f"unknown bootstrap {cfg.bootstrap!r}")
    ops = assemble_operators(cfg.mesh, cfg.degree, cfg.params)
    ws = BdfWorkspace(ops, cfg.quad, cfg.tau, cfg.dense_step)
    if cfg.bootstrap == "implicit":
        ws1 = BdfWorkspace(ops, cfg.quad, cfg.tau, cfg.dense_step, bdf1_coefficients(cfg.tau))
        first = lambda s0: implicit_first_step(s0, ws1, cfg.sources)  # noqa: E731
    else:
        first = lambda s0: bootstrap_first_step(s0, ws, cfg.sources)  # noqa: E731
    energy_fn = None
    if energies or (energies is None and cfg.sample_every):
        from colecole.diagnostics import energy_sample

        energy_fn = lambda s: energy_sample(s, cfg.params, cfg.quad)  # noqa: E731
    tau = cfg.tau
    proj = _as_projector(cfg.sources, cfg.mesh, cfg.degree)
    return _drive(
        cfg,
        first,
        lambda s1, s2, n: bdf2_step(s1, s2, ws, proj, n * tau, cfg.check_residuals),
        cfg.quad.L,
        energy_fn,
    )


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w") as fh:
        for key, value in manifest.items():
            fh.write(f"{key} = {value}\n")
