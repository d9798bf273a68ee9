"""Positive diffusive quadratures for the Caputo kernel.

A quadrature is a set of weights ``zeta`` and abscissae ``lam`` such that

    (i w)**alpha  ~  sin(pi a)/pi * (i w) * sum_l zeta_l lam_l**(a-1) / (i w + lam_l)

over a frequency band.  Both arrays must stay strictly positive, otherwise
the auxiliary-variable system loses its decreasing energy.  The fit is done
in the variables ``u = log(zeta)`` and ``v = logit(lam / lam_max)`` so every
iterate is strictly feasible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.optimize import least_squares
from scipy.special import expit, gammaln

logger = logging.getLogger(__name__)

#: abscissae are confined to (0, LAMBDA_CAP * omega_max)
LAMBDA_CAP = 10.0

# box on the transformed variables; keeps exp/sigmoid away from 0 and 1
_U_BOUNDS = (-60.0, 40.0)
_V_BOUNDS = (-40.0, 30.0)


class QuadratureError(RuntimeError):
    """Raised when the fit cannot improve on its starting point."""

    def __init__(self, message, fallback=None):
        super().__init__(message)
        self.fallback = fallback


@dataclass(frozen=True)
class FrequencyBand:
    omega_min: float
    omega_max: float
    n_samples: int = 40

    def __post_init__(self):
        if not 0.0 < self.omega_min < self.omega_max:
            raise ValueError(
                f"need 0 < omega_min < omega_max, got [{self.omega_min}, {self.omega_max}]"
            )
        if self.n_samples < 2:
            raise ValueError("a band needs at least two samples")

    @property
    def lambda_max(self) -> float:
        return LAMBDA_CAP * self.omega_max


@dataclass(frozen=True)
class DiffusiveQuadrature:
    weights: np.ndarray
    abscissae: np.ndarray
    alpha: float
    band: FrequencyBand | None = None
    # set when the optimizer failed and the (projected) initializer was kept
    fallback: bool = field(default=False, compare=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        lam = np.asarray(self.abscissae, dtype=float).ravel()
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "abscissae", lam)
        if w.shape != lam.shape or w.size < 1:
            raise ValueError("weights and abscissae must be nonempty and of equal length")

    def __len__(self):
        return self.weights.size

    @property
    def L(self) -> int:
        return self.weights.size

    def is_feasible(self, lambda_max: float | None = None) -> bool:
        if lambda_max is None and self.band is not None:
            lambda_max = self.band.lambda_max
        ok = bool(np.all(self.weights > 0.0) and np.all(self.abscissae > 0.0))
        if lambda_max is not None:
            ok = ok and bool(np.all(self.abscissae < lambda_max))
        return ok

    def check_feasible(self) -> None:
        if not self.is_feasible():
            raise ValueError(
                "quadrature is infeasible: need zeta > 0 and 0 < lambda < 10*omega_max"
            )


def log_spaced_samples(band: FrequencyBand) -> np.ndarray:
    m = np.arange(band.n_samples)
    return band.omega_min * (band.omega_max / band.omega_min) ** (m / (band.n_samples - 1))


def jacobi_recurrence(n: int, a: float, b: float):
    """Diagonal and off-diagonal of the Jacobi matrix for weight (1-x)^a (1+x)^b.

    Also returns the zeroth moment of the weight.
    """
    k = np.arange(n, dtype=float)
    s = 2.0 * k + a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        diag = (b * b - a * a) / (s * (s + 2.0))
    diag[0] = (b - a) / (a + b + 2.0)
    kk = k[1:]
    s1 = 2.0 * kk + a + b
    with np.errstate(divide="ignore", invalid="ignore"):
        off2 = 4.0 * kk * (kk + a) * (kk + b) * (kk + a + b) / (s1 * s1 * (s1 + 1.0) * (s1 - 1.0))
    if n > 1:
        # the (1 + a + b) factor cancels in the first entry
        off2[0] = 4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + a + b) ** 2 * (3.0 + a + b))
    off = np.sqrt(off2)
    mu0 = math.exp(
        (a + b + 1.0) * math.log(2.0) + gammaln(a + 1.0) + gammaln(b + 1.0) - gammaln(a + b + 2.0)
    )
    return diag, off, mu0


def gauss_jacobi(n: int, a: float, b: float):
    """n-point Gauss rule for weight (1-x)^a (1+x)^b on [-1, 1] (Golub-Welsch)."""
    if n < 1:
        raise ValueError("need at least one node")
    if not (a > -1.0 and b > -1.0):
        raise ValueError("Jacobi exponents must exceed -1")
    diag, off, mu0 = jacobi_recurrence(n, a, b)
    if n == 1:
        return diag.copy(), np.array([mu0])
    try:
        nodes, vecs = eigh_tridiagonal(diag, off)
    except np.linalg.LinAlgError as exc:
        raise QuadratureError(f"Jacobi eigenproblem did not converge: {exc}") from exc
    weights = mu0 * vecs[0, :] ** 2
    return nodes, weights


def jacobi_exponents(alpha: float):
    """(nu1, nu2) of the weight (1+x)^nu1 (1-x)^nu2 used for the initial rule."""
    abar = 2.0 * alpha - 1.0
    return 1.0 - 2.0 * abar, 1.0 + 2.0 * abar


def gauss_jacobi_init(L: int, alpha: float, band: FrequencyBand | None = None) -> DiffusiveQuadrature:
    """Modified Gauss-Jacobi starting quadrature.

    Maps the Gauss nodes ``x`` of weight (1+x)^nu1 (1-x)^nu2 through
    lam = ((1-x)/(1+x))**2.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    nu1, nu2 = jacobi_exponents(alpha)
    x, w = gauss_jacobi(L, nu2, nu1)
    lam = ((1.0 - x) / (1.0 + x)) ** 2
    zeta = 4.0 * w / ((1.0 + x) ** (nu1 + 3.0) * (1.0 - x) ** (nu2 - 1.0))
    order = np.argsort(lam)
    return DiffusiveQuadrature(zeta[order], lam[order], alpha, band)


def _chi_parts(omega, weights, abscissae, alpha):
    s = 1j * np.asarray(omega, dtype=float)
    # principal branch: (i w)^(1-a) = w^(1-a) exp(i pi (1-a)/2)
    pref = math.sin(math.pi * alpha) / math.pi * np.abs(s) ** (1.0 - alpha) * np.exp(
        0.5j * math.pi * (1.0 - alpha)
    )
    denom = s[..., None] + abscissae
    return pref, denom


def chi(omega, quad: DiffusiveQuadrature, alpha: float | None = None):
    """Ratio of the quadrature symbol to (i w)**alpha; identically 1 when exact."""
    alpha = quad.alpha if alpha is None else alpha
    pref, denom = _chi_parts(omega, quad.weights, quad.abscissae, alpha)
    return pref * np.sum(quad.weights * quad.abscissae ** (alpha - 1.0) / denom, axis=-1)


def objective(quad: DiffusiveQuadrature, alpha: float | None, samples) -> float:
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("need at least one sample frequency")
    r = chi(samples, quad, alpha) - 1.0
    return float(np.sum(r.real**2 + r.imag**2))


def objective_gradient(quad: DiffusiveQuadrature, alpha: float | None, samples):
    """Gradient of the objective w.r.t. (weights, abscissae), concatenated."""
    alpha = quad.alpha if alpha is None else alpha
    zeta, lam = quad.weights, quad.abscissae
    pref, denom = _chi_parts(samples, zeta, lam, alpha)
    r = pref * np.sum(zeta * lam ** (alpha - 1.0) / denom, axis=-1) - 1.0
    dz = pref[:, None] * lam ** (alpha - 1.0) / denom
    dl = pref[:, None] * zeta * ((alpha - 1.0) * lam ** (alpha - 2.0) / denom - lam ** (alpha - 1.0) / denom**2)
    # d|r|^2 = 2 Re(conj(r) dr)
    gz = 2.0 * np.real(np.conj(r)[:, None] * dz).sum(axis=0)
    gl = 2.0 * np.real(np.conj(r)[:, None] * dl).sum(axis=0)
    return np.concatenate([gz, gl])


class _TransformedFit:
    """Residuals and Jacobian of chi - 1 in the unconstrained variables."""

    def __init__(self, alpha, samples, lambda_max):
        self.alpha = alpha
        self.samples = np.asarray(samples, dtype=float)
        self.lambda_max = lambda_max
        self.pref, _ = _chi_parts(self.samples, np.zeros(1), np.ones(1), alpha)
        self.s = 1j * self.samples
        self.n_evals = 0

    def unpack(self, p):
        L = p.size // 2
        zeta = np.exp(p[:L])
        lam = self.lambda_max * expit(p[L:])
        if not (np.all(zeta > 0.0) and np.all(lam > 0.0) and np.all(lam < self.lambda_max)):
            raise AssertionError("optimizer iterate left the feasible region")
        return zeta, lam

    def pack(self, zeta, lam):
        ratio = np.clip(lam / self.lambda_max, 1e-300, 1.0 - 1e-15)
        p = np.concatenate([np.log(zeta), np.log(ratio) - np.log1p(-ratio)])
        L = zeta.size
        p[:L] = np.clip(p[:L], *_U_BOUNDS)
        p[L:] = np.clip(p[L:], *_V_BOUNDS)
        return p

    def residuals(self, p):
        self.n_evals += 1
        zeta, lam = self.unpack(p)
        r = self.pref * np.sum(zeta * lam ** (self.alpha - 1.0) / (self.s[:, None] + lam), axis=1) - 1.0
        return np.concatenate([r.real, r.imag])

    def jacobian(self, p):
        zeta, lam = self.unpack(p)
        a = self.alpha
        d = self.s[:, None] + lam
        dz = self.pref[:, None] * lam ** (a - 1.0) / d
        dl = self.pref[:, None] * zeta * ((a - 1.0) * lam ** (a - 2.0) / d - lam ** (a - 1.0) / d**2)
        J = np.hstack([dz * zeta, dl * lam * (1.0 - lam / self.lambda_max)])
        return np.vstack([J.real, J.imag])


def optimize_quadrature(
    alpha: float,
    L: int,
    band: FrequencyBand,
    *,
    max_iter: int = 2000,
    rtol: float = 1e-10,
    raise_on_failure: bool = False,
) -> DiffusiveQuadrature:
    """Fit a strictly feasible quadrature on ``band``.

    Minimizes sum_m |chi(w_m) - 1|^2 over log-spaced samples, subject to
    zeta > 0 and 0 < lam < 10 * omega_max, starting from the modified
    Gauss-Jacobi rule.  A trust-region Gauss-Newton iteration works on the
    box-bounded variables (log zeta, logit(lam / lam_max)).

    If no iterate beats the initializer, the initializer projected into the
    feasible box is returned with ``fallback=True`` (or
    :class:`QuadratureError` is raised when ``raise_on_failure``).
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    samples = log_spaced_samples(band)
    init = gauss_jacobi_init(L, alpha, band)
    init_obj = objective(init, alpha, samples)

    fit = _TransformedFit(alpha, samples, band.lambda_max)
    p0 = fit.pack(init.weights, init.abscissae)
    z0, l0 = fit.unpack(p0)
    projected = DiffusiveQuadrature(z0, l0, alpha, band, fallback=True)
    lower = np.concatenate([np.full(L, _U_BOUNDS[0]), np.full(L, _V_BOUNDS[0])])
    upper = np.concatenate([np.full(L, _U_BOUNDS[1]), np.full(L, _V_BOUNDS[1])])

    sol = least_squares(
        fit.residuals,
        p0,
        jac=fit.jacobian,
        bounds=(lower, upper),
        method="trf",
        x_scale="jac",
        ftol=rtol,
        xtol=1e-14,
        gtol=1e-14,
        max_nfev=max_iter,
    )
    zeta, lam = fit.unpack(sol.x)
    result = DiffusiveQuadrature(zeta, lam, alpha, band)
    final_obj = objective(result, alpha, samples)
    logger.debug(
        "quadrature fit alpha=%g L=%d: objective %.3e -> %.3e in %d evaluations (%s)",
        alpha, L, init_obj, final_obj, sol.nfev, sol.message,
    )
    if not (final_obj <= init_obj and final_obj < objective(projected, alpha, samples)) or not np.isfinite(final_obj):
        msg = f"fit did not improve on the initializer (objective {final_obj:.3e} vs {init_obj:.3e})"
        if raise_on_failure:
            raise QuadratureError(msg, fallback=projected)
        logger.warning("%s; keeping projected initializer", msg)
        return projected
    order = np.argsort(result.abscissae)
    return DiffusiveQuadrature(result.weights[order], result.abscissae[order], alpha, band)


def max_relative_error(quad: DiffusiveQuadrature, omega) -> float:
    return float(np.max(np.abs(chi(omega, quad) - 1.0)))


def plotting_grid(band: FrequencyBand, n: int = 400) -> np.ndarray:
    """Log grid on [omega_min/2, 2 omega_max], the range used for error curves."""
    return np.geomspace(band.omega_min / 2.0, 2.0 * band.omega_max, n)


# -- persistence --------------------------------------------------------------


def write_quadrature(path, quad: DiffusiveQuadrature) -> None:
    band = quad.band
    w0 = band.omega_min if band is not None else float("nan")
    w1 = band.omega_max if band is not None else float("nan")
    lines = [f"# alpha={quad.alpha!r} L={quad.L} omega_min={w0!r} omega_max={w1!r}"]
    if band is not None:
        lines[0] += f" M={band.n_samples}"
    for z, lam in zip(quad.weights, quad.abscissae):
        lines.append(f"{float(z)!r} {float(lam)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_quadrature(path) -> DiffusiveQuadrature:
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing '# alpha=... L=...' header")
        meta = dict(item.split("=", 1) for item in header[1:].split())
        rows = [line.split() for line in fh if line.strip() and not line.startswith("#")]
    zeta = np.array([float(r[0]) for r in rows])
    lam = np.array([float(r[1]) for r in rows])
    L = int(meta["L"])
    if zeta.size != L:
        raise ValueError(f"{path}: header says L={L} but found {zeta.size} rows")
    w0, w1 = float(meta["omega_min"]), float(meta["omega_max"])
    band = None
    if math.isfinite(w0) and math.isfinite(w1):
        band = FrequencyBand(w0, w1, int(meta.get("M", 2 * L)))
    return DiffusiveQuadrature(zeta, lam, float(meta["alpha"]), band)
