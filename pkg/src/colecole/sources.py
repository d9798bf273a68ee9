"""External source terms and the closed-form test problems.

A :class:`SourceSet` holds up to three vectorized functions ``F(x, t)``.
The solvers only ever need their cellwise L2 projections, returned as modal
coefficient arrays (``None`` for an absent term).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad, quad_vec

from colecole.dgcore import Mesh1D, l2_project
from colecole.material import MaterialParams
from colecole.quadopt import DiffusiveQuadrature

SourceFn = Callable[[np.ndarray, float], np.ndarray]


class SeparableSource:
    """Source of the form F(x, t) = sum_i a_i(t) b_i(x).

    Projections of the spatial factors are computed once per (mesh, degree),
    so a projection at a new time costs only a few scalar evaluations.
    """

    def __init__(self, terms):
        self.terms = tuple(terms)
        self._cache = {}

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        return sum(a(t) * b(x) for a, b in self.terms)

    def _basis(self, mesh: Mesh1D, k: int) -> np.ndarray:
        key = (mesh, k)
        if key not in self._cache:
            self._cache[key] = np.stack([l2_project(b, mesh, k).coeffs for _, b in self.terms])
        return self._cache[key]

    def _combine(self, coef, mesh: Mesh1D, k: int) -> np.ndarray:
        B = self._basis(mesh, k)
        return (np.asarray(coef) @ B.reshape(B.shape[0], -1)).reshape(B.shape[1:])

    def project(self, mesh: Mesh1D, k: int, t: float) -> np.ndarray:
        return self._combine([a(t) for a, _ in self.terms], mesh, k)

    def project_average(self, mesh: Mesh1D, k: int, t0: float, t1: float) -> np.ndarray:
        coef = [quad(a, t0, t1, epsabs=1e-15, epsrel=1e-13, limit=200)[0] / (t1 - t0) for a, _ in self.terms]
        return self._combine(coef, mesh, k)


@dataclass(frozen=True)
class SourceSet:
    F1: Optional[SourceFn] = None
    F2: Optional[SourceFn] = None
    F3: Optional[SourceFn] = None

    @classmethod
    def zero(cls) -> "SourceSet":
        return cls()

    @property
    def is_zero(self) -> bool:
        return self.F1 is None and self.F2 is None and self.F3 is None

    def scaled(self, c: float) -> "SourceSet":
        def wrap(f):
            return None if f is None else (lambda x, t: c * f(x, t))

        return SourceSet(wrap(self.F1), wrap(self.F2), wrap(self.F3))

    def project(self, mesh: Mesh1D, k: int, t: float):
        """L2-projection coefficients of (F1, F2, F3) at time t."""
        out = []
        for f in (self.F1, self.F2, self.F3):
            if f is None:
                out.append(None)
            elif isinstance(f, SeparableSource):
                out.append(f.project(mesh, k, t))
            else:
                out.append(l2_project(lambda x, f=f: f(x, t), mesh, k).coeffs)
        return tuple(out)

    def projector(self, mesh: Mesh1D, k: int) -> "SourceProjector":
        return SourceProjector(self, mesh, k)

    def project_average(self, mesh: Mesh1D, k: int, t0: float, t1: float):
        """Projections of the time averages of (F1, F2, F3) over [t0, t1].

        Adaptive quadrature copes with sources that are only Hoelder
        continuous at t0, such as the t^(1-alpha) terms of fractional
        problems.
        """
        out = []
        for f in (self.F1, self.F2, self.F3):
            if f is None:
                out.append(None)
                continue
            if isinstance(f, SeparableSource):
                out.append(f.project_average(mesh, k, t0, t1))
                continue
            integral, _ = quad_vec(
                lambda t, f=f: l2_project(lambda x: f(x, t), mesh, k).coeffs,
                t0,
                t1,
                epsabs=1e-15,
                epsrel=1e-12,
            )
            out.append(integral / (t1 - t0))
        return tuple(out)


class SourceProjector:
    """A :class:`SourceSet` bound to one mesh and degree.

    Separable terms of all three sources are merged, so one call costs a few
    scalar evaluations and one small matrix product.  Other sources are
    projected pointwise at each call.
    """

    def __init__(self, sources: SourceSet, mesh: Mesh1D, k: int):
        self.mesh, self.k = mesh, k
        self.shape = (mesh.n_cells, k + 1)
        fns = (sources.F1, sources.F2, sources.F3)
        self.present = tuple(f is not None for f in fns)
        self._generic = [(i, f) for i, f in enumerate(fns) if f is not None and not isinstance(f, SeparableSource)]
        times, blocks = [], []
        n = mesh.n_cells * (k + 1)
        for i, f in enumerate(fns):
            if isinstance(f, SeparableSource):
                for a, b in f.terms:
                    times.append(a)
                    row = np.zeros((3, n))
                    row[i] = l2_project(b, mesh, k).coeffs.ravel()
                    blocks.append(row.ravel())
        self._times = times
        self._B = np.array(blocks) if blocks else None

    def __call__(self, t: float):
        if not any(self.present):
            return None, None, None
        if self._B is not None:
            out = (np.array([a(t) for a in self._times]) @ self._B).reshape((3,) + self.shape)
        else:
            out = np.zeros((3,) + self.shape)
        for i, f in self._generic:
            out[i] = l2_project(lambda x: f(x, t), self.mesh, self.k).coeffs
        return tuple(out[i] if self.present[i] else None for i in range(3))


def _phi_ramp(lam: np.ndarray, t: float) -> np.ndarray:
    """(lam t - 1 + exp(-lam t)) / lam^2, stable for small lam t."""
    z = lam * t
    small = z < 1e-3
    out = np.empty_like(z)
    zs = z[small]
    out[small] = t * t * (0.5 - zs / 6.0 + zs * zs / 24.0 - zs**3 / 120.0)
    zl = z[~small]
    out[~small] = (zl + np.expm1(-zl)) / lam[~small] ** 2
    return out


def _phi_ramp_dt(lam: np.ndarray, t: float) -> np.ndarray:
    """d/dt of :func:`_phi_ramp`, i.e. -expm1(-lam t) / lam."""
    z = lam * t
    small = z < 1e-6
    out = np.empty_like(z)
    out[small] = t * (1.0 - 0.5 * z[small])
    out[~small] = -np.expm1(-z[~small]) / lam[~small]
    return out


class ManufacturedSolution:
    """Smooth periodic solution on [0, 2] with P(x, t) = cos(pi x) t^2.

    E follows from the polarization law with F3 = 0, H is prescribed as
    pi (2 cos(pi x) + sin(pi x)) t^2, and F1, F2 make both Maxwell equations
    hold exactly.

    With ``sharp=True`` the fractional derivative of t^2 is replaced by its
    diffusive surrogate built from ``quad``, so that the returned fields solve
    the diffusive system (including the auxiliary variables) exactly.  The
    default variant solves the Cole-Cole system itself.
    """

    def __init__(self, params: MaterialParams, quad: DiffusiveQuadrature | None = None, sharp: bool = False):
        if sharp and quad is None:
            raise ValueError("the sharp variant needs a quadrature")
        self.params = params
        self.quad = quad
        self.sharp = sharp
        a = params.alpha
        self._g = math.gamma(3.0) / math.gamma(3.0 - a)
        if sharp:
            lam = np.asarray(quad.abscissae, dtype=float)
            self._lam = lam
            self._w = params.c_alpha * lam ** (a - 1.0)
            self._zeta = np.asarray(quad.weights, dtype=float)

    # -- scalar time profiles: D^a(t^2) and its derivative
    def _frac(self, t: float) -> float:
        if self.sharp:
            return float(np.sum(self._zeta * self.psi_profile(t)))
        a = self.params.alpha
        return self._g * t ** (2.0 - a)

    def _frac_dt(self, t: float) -> float:
        if self.sharp:
            return float(np.sum(self._zeta * self.psi_profile_dt(t)))
        a = self.params.alpha
        return self._g * (2.0 - a) * t ** (1.0 - a) if t > 0 else 0.0

    def psi_profile(self, t: float) -> np.ndarray:
        """Time factor of each auxiliary variable (psi_l = cos(pi x) * this)."""
        return 2.0 * self._w * _phi_ramp(self._lam, t)

    def psi_profile_dt(self, t: float) -> np.ndarray:
        return 2.0 * self._w * _phi_ramp_dt(self._lam, t)

    def _e_profile(self, t):
        p = self.params
        return (p.tau_alpha * self._frac(t) + t * t) / p.eps_d

    def _e_profile_dt(self, t):
        p = self.params
        return (p.tau_alpha * self._frac_dt(t) + 2.0 * t) / p.eps_d

    # -- exact fields
    def P(self, x, t):
        return np.cos(np.pi * x) * t * t

    def E(self, x, t):
        return np.cos(np.pi * x) * self._e_profile(t)

    def H(self, x, t):
        return np.pi * (2.0 * np.cos(np.pi * x) + np.sin(np.pi * x)) * t * t

    def psi(self, x, t):
        """Stacked exact auxiliary variables, shape (L,) + x.shape (sharp only)."""
        if not self.sharp:
            raise ValueError("auxiliary variables are defined for the sharp variant only")
        prof = self.psi_profile(t)
        return prof.reshape((-1,) + (1,) * np.ndim(x)) * np.cos(np.pi * np.asarray(x))

    # -- forcings
    def F1(self, x, t):
        p = self.params
        dH = np.pi * (2.0 * np.cos(np.pi * x) + np.sin(np.pi * x)) * 2.0 * t
        dE_dx = -np.pi * np.sin(np.pi * x) * self._e_profile(t)
        return p.mu0 * dH - dE_dx

    def F2(self, x, t):
        p = self.params
        dE = np.cos(np.pi * x) * self._e_profile_dt(t)
        dH_dx = np.pi**2 * (-2.0 * np.sin(np.pi * x) + np.cos(np.pi * x)) * t * t
        dP = np.cos(np.pi * x) * 2.0 * t
        return p.eps_e * dE - dH_dx + dP

    def sources(self) -> SourceSet:
        """(F1, F2, 0) in separable form; pointwise equal to :meth:`F1`, :meth:`F2`."""
        p = self.params
        pi = np.pi
        F1 = SeparableSource(
            [
                (lambda t: 2.0 * p.mu0 * t, lambda x: pi * (2.0 * np.cos(pi * x) + np.sin(pi * x))),
                (self._e_profile, lambda x: pi * np.sin(pi * x)),
            ]
        )
        F2 = SeparableSource(
            [
                (lambda t: p.eps_e * self._e_profile_dt(t) + 2.0 * t, lambda x: np.cos(pi * x)),
                (lambda t: t * t, lambda x: -(pi**2) * (-2.0 * np.sin(pi * x) + np.cos(pi * x))),
            ]
        )
        return SourceSet(F1, F2, None)

    def initial_E(self, x):
        return self.E(x, 0.0)

    def initial_H(self, x):
        return self.H(x, 0.0)


def energy_initial_E(x):
    """Initial electric field of the energy experiment."""
    return np.cos(np.pi * x) * np.sin(np.pi * x)


def energy_initial_H(x):
    """Initial magnetic field of the energy experiment."""
    return 2.0 * np.pi * np.cos(np.pi * x) + np.pi * np.sin(np.pi * x)


def zero_function(x):
    return np.zeros_like(np.asarray(x, dtype=float))
