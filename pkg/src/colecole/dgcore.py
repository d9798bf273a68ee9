"""Uniform periodic 1D mesh, modal DG space, projections and upwind operators.

Fields are stored as ``(n_cells, k + 1)`` arrays of coefficients with
respect to the orthonormal Legendre basis on each cell, so the local mass
matrix is ``h/2 * I``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre as npleg

from colecole.material import MaterialParams


@dataclass(frozen=True)
class Mesh1D:
    x_minus: float
    x_plus: float
    n_cells: int

    def __post_init__(self):
        if not self.x_plus > self.x_minus:
            raise ValueError("need x_plus > x_minus")
        if self.n_cells < 2:
            raise ValueError("a periodic mesh needs at least two cells")

    @property
    def h(self) -> float:
        return (self.x_plus - self.x_minus) / self.n_cells

    @property
    def length(self) -> float:
        return self.x_plus - self.x_minus

    @property
    def faces(self) -> np.ndarray:
        """x_{j+1/2} for j = 0..M, both domain ends included."""
        return self.x_minus + self.h * np.arange(self.n_cells + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.x_minus + self.h * (np.arange(self.n_cells) + 0.5)

    def to_physical(self, xi) -> np.ndarray:
        """Map reference points in [-1, 1] into every cell; shape (M, len(xi))."""
        xi = np.asarray(xi, dtype=float)
        return self.centers[:, None] + 0.5 * self.h * xi[None, :]

    def locate(self, x):
        """Cell index and reference coordinate of physical points (periodic)."""
        x = np.asarray(x, dtype=float)
        s = np.mod(x - self.x_minus, self.length) / self.h
        j = np.minimum(np.floor(s).astype(int), self.n_cells - 1)
        return j, 2.0 * (s - j) - 1.0


# -- reference element ----------------------------------------------------------


def basis_values(k: int, xi) -> np.ndarray:
    """Orthonormal Legendre basis at ``xi``; shape (len(xi), k+1)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    scale = np.sqrt((2.0 * np.arange(k + 1) + 1.0) / 2.0)
    return npleg.legvander(xi, k) * scale


def basis_derivatives(k: int, xi) -> np.ndarray:
    """d/dxi of the orthonormal basis at ``xi``; shape (len(xi), k+1)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    out = np.empty((xi.size, k + 1))
    for i in range(k + 1):
        c = np.zeros(i + 1)
        c[i] = np.sqrt((2.0 * i + 1.0) / 2.0)
        out[:, i] = npleg.legval(xi, npleg.legder(c)) if i > 0 else 0.0
    return out


@lru_cache(maxsize=None)
def gauss_rule(n: int):
    x, w = npleg.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


@lru_cache(maxsize=None)
def endpoint_values(k: int):
    """(phi_i(-1), phi_i(+1)) as two length-(k+1) arrays."""
    scale = np.sqrt((2.0 * np.arange(k + 1) + 1.0) / 2.0)
    left = scale * (-1.0) ** np.arange(k + 1)
    left.flags.writeable = False
    scale.flags.writeable = False
    return left, scale


@lru_cache(maxsize=None)
def stiffness(k: int) -> np.ndarray:
    """S[a, b] = int_{-1}^{1} phi_b phi_a' dxi (exact with k+1 Gauss points)."""
    x, w = gauss_rule(k + 1)
    phi = basis_values(k, x)
    dphi = basis_derivatives(k, x)
    S = (dphi * w[:, None]).T @ phi
    S.flags.writeable = False
    return S


# -- fields -----------------------------------------------------------------------


@dataclass
class DgField:
    """Piecewise polynomial with modal coefficients of shape (M, k+1)."""

    mesh: Mesh1D
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 2 or self.coeffs.shape[0] != self.mesh.n_cells:
            raise ValueError(
                f"coefficients must have shape ({self.mesh.n_cells}, k+1), got {self.coeffs.shape}"
            )

    @classmethod
    def zeros(cls, mesh: Mesh1D, k: int) -> "DgField":
        return cls(mesh, np.zeros((mesh.n_cells, k + 1)))

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    def _check_compatible(self, other: "DgField"):
        if other.mesh != self.mesh or other.coeffs.shape != self.coeffs.shape:
            raise ValueError("fields live on different meshes or degrees")

    def __add__(self, other: "DgField") -> "DgField":
        self._check_compatible(other)
        return DgField(self.mesh, self.coeffs + other.coeffs)

    def __sub__(self, other: "DgField") -> "DgField":
        self._check_compatible(other)
        return DgField(self.mesh, self.coeffs - other.coeffs)

    def __mul__(self, c: float) -> "DgField":
        return DgField(self.mesh, self.coeffs * c)

    __rmul__ = __mul__

    def __neg__(self) -> "DgField":
        return DgField(self.mesh, -self.coeffs)

    def __call__(self, x) -> np.ndarray:
        """Point values; at a face the value from the cell on the right is used."""
        j, xi = self.mesh.locate(x)
        phi = basis_values(self.degree, np.ravel(xi))
        return np.sum(self.coeffs[np.ravel(j)] * phi, axis=1).reshape(np.shape(x))

    def at_reference(self, xi) -> np.ndarray:
        """Values at reference points in every cell; shape (M, len(xi))."""
        return self.coeffs @ basis_values(self.degree, xi).T

    def traces(self):
        """(left-end, right-end) values of every cell."""
        left, right = endpoint_values(self.degree)
        return self.coeffs @ left, self.coeffs @ right

    def l2_norm(self) -> float:
        return float(np.sqrt(0.5 * self.mesh.h * np.sum(self.coeffs**2)))

    def shifted(self, cells: int) -> "DgField":
        return DgField(self.mesh, np.roll(self.coeffs, cells, axis=0))


def face_states(u: np.ndarray):
    """(u^-, u^+) at faces x_{j+1/2}, j = 0..M-1, with periodic wraparound.

    ``u`` is a coefficient array; u^- comes from cell j, u^+ from cell j+1.
    """
    left, right = endpoint_values(u.shape[1] - 1)
    u_minus = u @ right
    u_plus = np.roll(u @ left, -1)
    return u_minus, u_plus


def face_average(u: np.ndarray) -> np.ndarray:
    um, up = face_states(u)
    return 0.5 * (um + up)


def face_jump(u: np.ndarray) -> np.ndarray:
    um, up = face_states(u)
    return up - um


# -- projections ------------------------------------------------------------------


def _coeffs(u):
    return u.coeffs if isinstance(u, DgField) else np.asarray(u, dtype=float)


@lru_cache(maxsize=64)
def projection_data(mesh: Mesh1D, k: int, n_quad: int):
    """Physical quadrature points (M, n_quad) and the map from point values to
    L2-projection coefficients, W[q, a] = w_q phi_a(xi_q)."""
    xq, wq = gauss_rule(n_quad)
    pts = mesh.to_physical(xq)
    W = wq[:, None] * basis_values(k, xq)
    pts.flags.writeable = False
    W.flags.writeable = False
    return pts, W


def l2_project(f, mesh: Mesh1D, k: int, n_quad: int | None = None) -> DgField:
    """Cellwise L2 projection of a vectorized function f(x) onto P^k."""
    if k < 1:
        raise ValueError("polynomial degree must be at least 1")
    pts, W = projection_data(mesh, k, n_quad or k + 2)
    fx = np.asarray(f(pts), dtype=float)
    if fx.shape != pts.shape:
        fx = np.broadcast_to(fx, pts.shape)
    # int f phi_a dx = h/2 sum_q w_q f phi_a, and the mass is h/2
    return DgField(mesh, fx @ W)


@lru_cache(maxsize=None)
def _radau_matrix(k: int, side: str) -> np.ndarray:
    """Rows: k moment conditions, then the endpoint condition."""
    left, right = endpoint_values(k)
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = np.eye(k)
    A[k] = left if side == "plus" else right
    A.flags.writeable = False
    return A


def gauss_radau_project(f, mesh: Mesh1D, k: int, side: str = "plus", n_quad: int | None = None) -> DgField:
    """Gauss-Radau projection P^+ (side='plus') or P^- (side='minus').

    P^+ matches the moments against P^{k-1} and f at each cell's left end;
    P^- matches f at each cell's right end.
    """
    if k < 1:
        raise ValueError("polynomial degree must be at least 1")
    if side not in ("plus", "minus"):
        raise ValueError("side must be 'plus' or 'minus'")
    xq, wq = gauss_rule(n_quad or k + 2)
    fx = np.broadcast_to(np.asarray(f(mesh.to_physical(xq)), dtype=float), (mesh.n_cells, xq.size))
    rhs = np.empty((mesh.n_cells, k + 1))
    rhs[:, :k] = (fx * wq) @ basis_values(k - 1, xq)
    ends = mesh.faces[:-1] if side == "plus" else mesh.faces[1:]
    rhs[:, k] = np.broadcast_to(np.asarray(f(ends), dtype=float), (mesh.n_cells,))
    coeffs = np.linalg.solve(_radau_matrix(k, side), rhs.T).T
    return DgField(mesh, coeffs)


def project_initial_EH(E0, H0, params: MaterialParams, mesh: Mesh1D, k: int):
    """Characteristic projections of the initial (E, H).

    E_h = 1/2 P^+(E + Z H) + 1/2 P^-(E - Z H) and
    H_h = 1/2 P^+(H + E/Z) + 1/2 P^-(H - E/Z), with Z = sqrt(mu0/(eps0 eps_inf)).
    """
    Z = params.impedance
    Eh = 0.5 * gauss_radau_project(lambda x: E0(x) + Z * H0(x), mesh, k, "plus") + 0.5 * gauss_radau_project(
        lambda x: E0(x) - Z * H0(x), mesh, k, "minus"
    )
    Hh = 0.5 * gauss_radau_project(lambda x: H0(x) + E0(x) / Z, mesh, k, "plus") + 0.5 * gauss_radau_project(
        lambda x: H0(x) - E0(x) / Z, mesh, k, "minus"
    )
    return Eh, Hh


# -- fluxes and operators -----------------------------------------------------------


def upwind_face_values(Eh, Hh, params: MaterialParams):
    """Upwind (E_hat, H_hat) at faces x_{j+1/2}, j = 0..M-1."""
    E, H = _coeffs(Eh), _coeffs(Hh)
    Z = params.impedance
    Em, Ep = face_states(E)
    Hm, Hp = face_states(H)
    E_hat = 0.5 * (Em + Ep) + 0.5 * Z * (Hp - Hm)
    H_hat = 0.5 * (Hm + Hp) + 0.5 / Z * (Ep - Em)
    return E_hat, H_hat


def jump_dissipation(Hh, Eh, params: MaterialParams) -> np.ndarray:
    """Face terms 1/2 (Z [H]^2 + [E]^2 / Z) >= 0, one per face."""
    Z = params.impedance
    jH = face_jump(_coeffs(Hh))
    jE = face_jump(_coeffs(Eh))
    return 0.5 * (Z * jH**2 + jE**2 / Z)


@dataclass(frozen=True)
class DgOperators:
    """Assembled spatial operators of the Maxwell part.

    ``K`` maps the stacked coefficients [H; E] to the right-hand sides of the
    H and E equations: for each test function v,
    -int E v' + E_hat v^-|_{j+1/2} - E_hat v^+|_{j-1/2}, and the same with
    the roles of E and H (and H_hat) exchanged.  Time derivatives enter with
    the mass ``h/2``.
    """

    mesh: Mesh1D
    degree: int
    params: MaterialParams
    K: sp.csr_matrix

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_cells * (self.degree + 1)

    @property
    def mass(self) -> float:
        return 0.5 * self.mesh.h

    def apply(self, H: np.ndarray, E: np.ndarray):
        """Right-hand sides (of the H and E equations) as coefficient arrays."""
        shape = H.shape
        out = self.K @ np.concatenate([H.ravel(), E.ravel()])
        n = self.n_dofs
        return out[:n].reshape(shape), out[n:].reshape(shape)

    def d_e(self, Eh, Hh) -> np.ndarray:
        """Flux-coupled weak derivative of E (H equation right-hand side)."""
        return self.apply(_coeffs(Hh), _coeffs(Eh))[0]

    def d_h(self, Hh, Eh) -> np.ndarray:
        """Flux-coupled weak derivative of H (E equation right-hand side)."""
        return self.apply(_coeffs(Hh), _coeffs(Eh))[1]

    def inverse_mass(self, b: np.ndarray) -> np.ndarray:
        return b / self.mass


def assemble_operators(mesh: Mesh1D, k: int, params: MaterialParams) -> DgOperators:
    if k < 1:
        raise ValueError("polynomial degree must be at least 1")
    M = mesh.n_cells
    left, right = endpoint_values(k)
    S = stiffness(k)
    eye = sp.identity(M, format="csr")
    shift = sp.diags([np.ones(M - 1), np.ones(1)], [1, -(M - 1)], shape=(M, M), format="csr")
    # face traces: u^- from cell j, u^+ from cell j+1
    t_minus = sp.kron(eye, right[None, :], format="csr")
    t_plus = sp.kron(shift, left[None, :], format="csr")
    avg = 0.5 * (t_minus + t_plus)
    jump = t_plus - t_minus
    # cell j collects +flux_{j+1/2} phi(1) and -flux_{j-1/2} phi(-1)
    lift = sp.kron(eye, right[:, None], format="csr") - sp.kron(shift.T, left[:, None], format="csr")
    vol = sp.kron(eye, S, format="csr")
    Z = params.impedance
    cross = -vol + lift @ avg
    K = sp.bmat(
        [[0.5 * Z * (lift @ jump), cross], [cross, (0.5 / Z) * (lift @ jump)]],
        format="csr",
    )
    K.eliminate_zeros()
    return DgOperators(mesh, k, params, K)


# -- serialization -------------------------------------------------------------------


def write_field(path, field: DgField) -> None:
    m = field.mesh
    lines = [f"{m.n_cells} {field.degree} {m.x_minus!r} {m.x_plus!r}"]
    lines += [",".join(repr(float(c)) for c in row) for row in field.coeffs]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field(path) -> DgField:
    with open(path) as fh:
        M, k, x0, x1 = fh.readline().split()
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    mesh = Mesh1D(float(x0), float(x1), int(M))
    coeffs = np.array(rows, dtype=float).reshape(int(M), int(k) + 1)
    return DgField(mesh, coeffs)
