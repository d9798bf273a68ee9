"""Ready-made numerical studies shared by the command line and the tests.

Each study returns plain data (rows, samples, timings) and leaves file
output to the caller.
"""

from __future__ import annotations

import gc
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from colecole.dgcore import DgField, Mesh1D
from colecole.diagnostics import (
    convergence_study,
    debye_closed_form,
    dispersion_approx,
    dispersion_exact,
    energy_differences,
    l2_error,
)
from colecole.material import MaterialParams
from colecole.oracle import run_direct_simulation
from colecole.quadopt import DiffusiveQuadrature, FrequencyBand, optimize_quadrature
from colecole.sources import ManufacturedSolution, energy_initial_E, energy_initial_H
from colecole.stepper import SimulationConfig, run_simulation

DOMAIN = (0.0, 2.0)

#: narrow band and size used for the energy experiment
ENERGY_BAND = (0.5, 5.0)
ENERGY_L = 20

#: wide band used when the quadrature must be accurate enough not to mask
#: the discretization error of the manufactured problem
REFERENCE_BAND = (1e-4, 1e6)
REFERENCE_L = 80

#: calibration band and size of the dispersion comparison
DISPERSION_BAND = (20.0 * math.pi, 200.0 * math.pi)
DISPERSION_L = 6
DISPERSION_ALPHAS = (0.3, 0.5, 0.7, 1.0)

CONVERGENCE_LEVELS = (10, 20, 40, 80)
TIMING_GRID_FULL = (10000, 20000, 40000, 80000, 160000)
TIMING_GRID_DESK = (8000, 16000, 32000, 64000)


@lru_cache(maxsize=None)
def fitted_quadrature(alpha: float, L: int, omega_min: float, omega_max: float, n_samples: int | None = None):
    """Optimized quadrature on [omega_min, omega_max] with M = 2L samples by default."""
    band = FrequencyBand(omega_min, omega_max, n_samples or 2 * L)
    return optimize_quadrature(alpha, L, band)


def reference_quadrature(alpha: float) -> DiffusiveQuadrature:
    """Wide-band L=80 fit; its model error sits far below the DG errors studied here."""
    return fitted_quadrature(alpha, REFERENCE_L, *REFERENCE_BAND)


def energy_quadrature(alpha: float) -> DiffusiveQuadrature:
    return fitted_quadrature(alpha, ENERGY_L, *ENERGY_BAND)


# -- manufactured problem and convergence --------------------------------------


def manufactured_config(
    alpha: float,
    degree: int,
    n_cells: int,
    quad: DiffusiveQuadrature,
    T: float = 2.0,
    tau: float | None = None,
    check_residuals: bool = True,
):
    """Configuration of the smooth test problem on [0, 2]; tau defaults to h^2."""
    params = MaterialParams.unit(alpha)
    mesh = Mesh1D(*DOMAIN, n_cells)
    exact = ManufacturedSolution(params)
    if tau is None:
        tau = T / round(T / mesh.h**2)
    cfg = SimulationConfig(
        mesh,
        degree,
        params,
        tau,
        T,
        quad,
        exact.sources(),
        exact.initial_E,
        exact.initial_H,
        check_residuals=check_residuals,
        label=f"manufactured alpha={alpha} k={degree}",
    )
    return cfg, exact


def convergence_run(
    alpha: float,
    degree: int,
    levels: Sequence[int] = CONVERGENCE_LEVELS,
    quad: DiffusiveQuadrature | None = None,
    T: float = 2.0,
):
    """Errors and observed orders at T on each mesh level with tau = h^2."""
    quad = quad or reference_quadrature(alpha)
    cfg, exact = manufactured_config(alpha, degree, levels[0], quad, T)
    return convergence_study(cfg, levels, exact)


# -- energy ---------------------------------------------------------------------


def energy_config(
    alpha: float,
    n_cells: int = 800,
    quad: DiffusiveQuadrature | None = None,
    T: float = 2.5,
    bootstrap: str = "euler",
) -> SimulationConfig:
    """Zero-source run with tau = h and the prescribed smooth initial data."""
    params = MaterialParams.unit(alpha)
    mesh = Mesh1D(*DOMAIN, n_cells)
    return SimulationConfig(
        mesh,
        1,
        params,
        mesh.h,
        T,
        quad or energy_quadrature(alpha),
        E0=energy_initial_E,
        H0=energy_initial_H,
        sample_every=1,
        bootstrap=bootstrap,
        label=f"energy alpha={alpha}",
    )


@dataclass
class EnergyTrace:
    samples: list
    d_total: np.ndarray  # E#(t_n) - E#(t_{n+1})
    d_e1: np.ndarray  # E1(t_n) - E1(t_{n+1})
    manifest: dict

    @property
    def e_total0(self) -> float:
        return self.samples[0].total

    def worst_total_drop(self) -> float:
        """Smallest E# difference relative to E#(0) (negative means growth)."""
        return float(self.d_total.min() / self.e_total0)

    def negative_e1_steps(self) -> int:
        return int(np.count_nonzero(self.d_e1 < 0))


def energy_run(cfg: SimulationConfig) -> EnergyTrace:
    res = run_simulation(cfg, energies=True)
    d_total, d_e1 = energy_differences(res.samples)
    return EnergyTrace(res.samples, d_total, d_e1, res.manifest)


# -- fast versus direct ---------------------------------------------------------


@dataclass
class CrossValidationRow:
    tau: float
    discrepancy: float  # ||E_fast - E_direct|| / ||E_direct|| at T
    rate: float | None


def cross_validation(
    taus: Sequence[float] = (1e-3, 5e-4, 2.5e-4, 1.25e-4),
    quad: DiffusiveQuadrature | None = None,
    alpha: float = 0.5,
    n_cells: int = 10,
    T: float = 1.0,
):
    """Relative L2 distance of the final E fields of both solvers per tau."""
    quad = quad or reference_quadrature(alpha)
    rows, prev = [], None
    for tau in taus:
        cfg, _ = manufactured_config(alpha, 1, n_cells, quad, T, tau)
        fast = run_simulation(cfg).final
        direct = run_direct_simulation(cfg).final
        diff = DgField(cfg.mesh, fast.E - direct.E).l2_norm() / direct.field("E").l2_norm()
        rate = None if prev is None else math.log2(prev / diff)
        rows.append(CrossValidationRow(tau, diff, rate))
        prev = diff
    return rows


def manufactured_errors(cfg: SimulationConfig, exact, solver=run_simulation):
    """L2 errors of (E, H, P) at the final time of ``cfg``."""
    s = solver(cfg).final
    return tuple(l2_error(s.field(name), lambda x, f=getattr(exact, name): f(x, s.t)) for name in "EHP")


# -- timing ---------------------------------------------------------------------


@dataclass
class TimingRow:
    n_steps: int
    fast_seconds: float
    direct_seconds: float


def timing_study(
    grid: Sequence[int] = TIMING_GRID_DESK,
    degree: int = 1,
    n_cells: int = 10,
    rounds: int = 2,
    alpha: float = 0.5,
    quad: DiffusiveQuadrature | None = None,
    clock: str = "cpu",
    fast_repeats: int = 3,
):
    """CPU (or wall) seconds of both solvers on [0, 1] with Nt = 1/tau steps.

    The runs are interleaved over ``rounds`` passes through the grid and
    the fastest observation of each (Nt, solver) pair is kept, which damps
    the effect of background load on a shared machine.  The cheap fast
    solver is repeated ``fast_repeats`` times per pass.
    """
    quad = quad or energy_quadrature(alpha)
    best = {(n, s): math.inf for n in grid for s in ("fast", "direct")}
    for _ in range(rounds):
        for n in grid:
            cfg, _ = manufactured_config(alpha, degree, n_cells, quad, 1.0, 1.0 / n, check_residuals=False)
            runs = [("fast", run_simulation)] * fast_repeats + [("direct", run_direct_simulation)]
            for name, solver in runs:
                gc.collect()
                gc.disable()  # as timeit does: keep collector pauses out of the measurement
                try:
                    res = solver(cfg)
                finally:
                    gc.enable()
                t = res.cpu_time if clock == "cpu" else res.wall_time
                best[n, name] = min(best[n, name], t)
    return [TimingRow(n, best[n, "fast"], best[n, "direct"]) for n in grid]


def doubling_ratios(values: Sequence[float]) -> list:
    return [b / a for a, b in zip(values[:-1], values[1:])]


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


# -- dispersion -----------------------------------------------------------------


def dispersion_grid(n: int = 400, band=DISPERSION_BAND) -> np.ndarray:
    """Log grid on [omega_min/2, 2 omega_max] that contains both band edges."""
    w0, w1 = band
    grid = np.geomspace(w0 / 2.0, 2.0 * w1, n)
    return np.unique(np.concatenate([grid, [w0, w1]]))


@dataclass
class DispersionCurves:
    alpha: float
    omega: np.ndarray
    exact: list
    approx: list | None  # None at alpha = 1, where no fractional quadrature applies
    quad: DiffusiveQuadrature | None

    def max_band_deviation(self, band=DISPERSION_BAND) -> float:
        """max |c_approx - c_exact| / c_exact over omega in the band."""
        if self.approx is None:
            return 0.0
        w0, w1 = band
        dev = [
            abs(a.phase_velocity - e.phase_velocity) / e.phase_velocity
            for w, e, a in zip(self.omega, self.exact, self.approx)
            if w0 <= w <= w1
        ]
        return max(dev)


def dispersion_sweep(alphas: Sequence[float] = DISPERSION_ALPHAS, n: int = 400) -> list:
    """Exact and approximate curves with unit material constants."""
    omega = dispersion_grid(n)
    base = MaterialParams.unit(0.5)
    out = []
    for a in alphas:
        exact = [dispersion_exact(w, base, alpha=a) for w in omega]
        approx = quad = None
        if a < 1.0:
            params = base.with_alpha(a)
            quad = fitted_quadrature(a, DISPERSION_L, *DISPERSION_BAND)
            approx = [dispersion_approx(w, params, quad) for w in omega]
        out.append(DispersionCurves(a, omega, exact, approx, quad))
    return out


def debye_mismatch(omega: Sequence[float]) -> float:
    """max relative |k_exact(alpha=1) - k_debye| over ``omega``."""
    base = MaterialParams.unit(0.5)
    worst = 0.0
    for w in omega:
        e = dispersion_exact(w, base, alpha=1.0).k
        d = debye_closed_form(w, base).k
        worst = max(worst, abs(e - d) / abs(d))
    return worst


__all__ = [
    "fitted_quadrature",
    "reference_quadrature",
    "energy_quadrature",
    "manufactured_config",
    "convergence_run",
    "energy_config",
    "energy_run",
    "EnergyTrace",
    "cross_validation",
    "CrossValidationRow",
    "manufactured_errors",
    "timing_study",
    "TimingRow",
    "doubling_ratios",
    "loglog_slope",
    "dispersion_grid",
    "dispersion_sweep",
    "DispersionCurves",
    "debye_mismatch",
]
