"""Material constants and closed-form fractional calculus helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class MaterialParams:
    """Constants of a Cole-Cole medium.

    ``eps_inf`` and ``eps_s`` are relative permittivities; ``eps0`` and
    ``mu0`` are the vacuum constants in whatever unit system the caller uses.
    """

    eps0: float = 1.0
    eps_inf: float = 1.0
    eps_s: float = 2.0
    mu0: float = 1.0
    tau0: float = 1.0
    alpha: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.eps_s > self.eps_inf > 0.0:
            raise ValueError(
                f"need eps_s > eps_inf > 0, got eps_s={self.eps_s}, eps_inf={self.eps_inf}"
            )
        for name in ("eps0", "mu0", "tau0"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def unit(cls, alpha: float) -> "MaterialParams":
        """tau0 = mu0 = eps0*eps_inf = eps0*(eps_s - eps_inf) = 1."""
        return cls(eps0=1.0, eps_inf=1.0, eps_s=2.0, mu0=1.0, tau0=1.0, alpha=alpha)

    def with_alpha(self, alpha: float) -> "MaterialParams":
        return MaterialParams(self.eps0, self.eps_inf, self.eps_s, self.mu0, self.tau0, alpha)

    @property
    def eps_e(self) -> float:
        """eps0 * eps_inf, the instantaneous permittivity."""
        return self.eps0 * self.eps_inf

    @property
    def eps_d(self) -> float:
        """eps0 * (eps_s - eps_inf), the polarization strength."""
        return self.eps0 * (self.eps_s - self.eps_inf)

    @property
    def impedance(self) -> float:
        """sqrt(mu0 / (eps0 eps_inf)); scales jumps of H in the E flux."""
        return math.sqrt(self.mu0 / self.eps_e)

    @property
    def tau_alpha(self) -> float:
        return self.tau0**self.alpha

    @property
    def c_alpha(self) -> float:
        return math.sin(math.pi * self.alpha) / math.pi


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


def kernel_density(lam: float, alpha: float) -> float:
    """Density sin(pi a)/pi * lam**(a-1) of the diffusive measure on (0, inf)."""
    _check_alpha(alpha)
    if not lam > 0.0:
        raise ValueError(f"lambda must be positive, got {lam}")
    return math.sin(math.pi * alpha) / math.pi * lam ** (alpha - 1.0)


def caputo_power(p: float, alpha: float, t):
    """Caputo derivative of order ``alpha`` of t**p, evaluated at ``t``.

    Works elementwise when ``t`` is a numpy array.
    """
    _check_alpha(alpha)
    if not p > 0.0:
        raise ValueError(f"exponent must be positive, got {p}")
    # math.gamma is a Lanczos approximation, ~1e-15 relative on (0, 10)
    coef = math.gamma(p + 1.0) / math.gamma(p + 1.0 - alpha)
    return coef * t ** (p - alpha)
