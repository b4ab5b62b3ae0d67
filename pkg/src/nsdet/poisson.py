"""Five-point Poisson solvers (Dirichlet and Neumann) and Helmholtz-type solves.

Grids of up to 256x256 unknowns are factorised once with SuperLU and the
factorisation is cached per grid; larger grids fall back to conjugate
gradients preconditioned with smoothed-aggregation AMG.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, SolverDivergenceError
from .fields import SIDES, ScalarField
from .geometry import DiscreteDomain

log = logging.getLogger(__name__)

DIRECT_LIMIT = 256 * 256
DEFAULT_TOL = 1e-12
DEFECT_WARN = 1e-4


@dataclass
class PoissonProblem:
    """``Laplace(phi) = rhs`` with boundary data.

    ``bc_data`` maps side name to an array along that wall (Dirichlet values
    or outer-normal fluxes); missing sides mean zero. ``location`` selects
    cell-centred unknowns (ghost-cell boundary treatment) or node unknowns
    (boundary nodes carry the Dirichlet values; Dirichlet only).
    ``warn_defect=False`` silences the compatibility warning for callers whose
    data are compatible by construction.
    """

    rhs: ScalarField
    bc_kind: str = "dirichlet"
    bc_data: dict = field(default_factory=dict)
    solver_tol: float = DEFAULT_TOL
    backend: Optional[str] = None
    warn_defect: bool = True

    def side(self, name: str, n: int) -> np.ndarray:
        val = self.bc_data.get(name, 0.0)
        return np.broadcast_to(np.asarray(val, dtype=float), (n,))


def _second_difference(n: int, h: float, end: float) -> sp.csr_matrix:
    """1D second difference; ``end`` is the diagonal at both ends (times -1/h^2)."""
    main = np.full(n, -2.0)
    main[0] = main[-1] = end
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2


def cell_laplacian(nx: int, ny: int, hx: float, hy: float, kind: str) -> sp.csr_matrix:
    """Cell-centred Laplacian; ``kind`` is ``neumann`` or ``dirichlet`` (ghost -phi)."""
    end = -1.0 if kind == "neumann" else -3.0
    Ax = _second_difference(nx, hx, end)
    Ay = _second_difference(ny, hy, end)
    return (sp.kron(Ax, sp.identity(ny)) + sp.kron(sp.identity(nx), Ay)).tocsr()


def node_laplacian(nx: int, ny: int, hx: float, hy: float) -> sp.csr_matrix:
    """Laplacian on the ``(nx-1) x (ny-1)`` interior nodes, zero boundary nodes."""
    Ax = _second_difference(nx - 1, hx, -2.0)
    Ay = _second_difference(ny - 1, hy, -2.0)
    return (sp.kron(Ax, sp.identity(ny - 1)) + sp.kron(sp.identity(nx - 1), Ay)).tocsc()


def _demean(r):
    r = np.ravel(r)
    return r - r.mean()


class _Operator:
    """A sparse operator with its norm and a cached solver.

    For ``bordered=True`` the operator is singular with constant null space
    and solves are done on the zero-mean complement through the bordered
    (Lagrange multiplier) system.
    """

    def __init__(self, matrix: sp.spmatrix, backend: str = "direct", bordered: bool = False):
        self.matrix = matrix.tocsr()
        self.anorm = float(abs(self.matrix).sum(axis=1).max())
        self.backend = backend
        self.bordered = bordered
        n = self.matrix.shape[0]
        if backend == "direct":
            if bordered:
                ones = sp.csr_matrix(np.ones((n, 1)) / n)
                self._lu = spla.splu(sp.bmat([[self.matrix, ones], [ones.T, None]]).tocsc())
            else:
                self._lu = spla.splu(self.matrix.tocsc())
        else:
            import pyamg

            neg = -self.matrix if self.matrix.diagonal().max() < 0 else self.matrix
            self._sign = -1.0 if neg is not self.matrix else 1.0
            self._neg = neg
            amg = pyamg.smoothed_aggregation_solver(neg, symmetry="symmetric").aspreconditioner()
            if bordered:
                # keep the preconditioned residual in the zero-mean complement
                self._amg = spla.LinearOperator(neg.shape, lambda r: _demean(amg @ _demean(r)))
            else:
                self._amg = amg

    def relres(self, x, b) -> float:
        """Normwise backward error ``|Ax - b| / (|A| |x| + |b|)``."""
        denom = self.anorm * np.linalg.norm(x) + np.linalg.norm(b)
        r = np.linalg.norm(self.matrix @ x - b)
        return float(r / denom) if denom > 0 else float(r)

    def _direct(self, b):
        if self.bordered:
            return self._lu.solve(np.append(b - b.mean(), 0.0))[:-1]
        return self._lu.solve(b)

    def solve(self, b: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
        if self.backend == "direct":
            x = self._direct(b)
            for _ in range(2):
                if self.relres(x, b) <= tol:
                    break
                x = x + self._direct(b - self.matrix @ x)
        else:
            rhs = self._sign * b
            if self.bordered:
                rhs = rhs - rhs.mean()
            x, info = spla.cg(self._neg, rhs, rtol=tol, atol=0.0, M=self._amg, maxiter=5000)
            if info != 0:
                raise SolverDivergenceError(f"CG stopped after {info} iterations without reaching {tol:g}")
        if self.bordered:
            x = x - x.mean()
        res = self.relres(x, b)
        if not np.isfinite(res) or res > tol:
            raise SolverDivergenceError(f"relative residual {res:.3e} above target {tol:.1e}")
        return x


@lru_cache(maxsize=64)
def _poisson_operator(nx, ny, hx, hy, kind, backend) -> _Operator:
    if kind == "node":
        return _Operator(node_laplacian(nx, ny, hx, hy), backend)
    return _Operator(cell_laplacian(nx, ny, hx, hy, kind), backend, bordered=(kind == "neumann"))


@lru_cache(maxsize=64)
def _helmholtz_operator(n1, n2, h1, h2, end1, end2, coef) -> _Operator:
    A1 = _second_difference(n1, h1, end1)
    A2 = _second_difference(n2, h2, end2)
    L = sp.kron(A1, sp.identity(n2)) + sp.kron(sp.identity(n1), A2)
    backend = "direct" if n1 * n2 <= DIRECT_LIMIT else "cg"
    return _Operator(sp.identity(n1 * n2) - coef * L, backend)


def clear_caches() -> None:
    _poisson_operator.cache_clear()
    _helmholtz_operator.cache_clear()


def _backend(prob: PoissonProblem, size: int) -> str:
    if prob.backend is not None:
        if prob.backend not in ("direct", "cg"):
            raise ConfigurationError(f"unknown backend {prob.backend!r}")
        return prob.backend
    return "direct" if size <= DIRECT_LIMIT else "cg"


def solve_dirichlet(prob: PoissonProblem, location: str = "cell") -> ScalarField:
    """Solve ``Laplace(phi) = rhs`` with prescribed boundary values.

    For ``location="cell"`` the unknowns are cell centres and the wall value
    enters through the ghost ``2*g - phi``. For ``location="node"`` the rhs is
    a node field whose interior entries are used; boundary nodes receive the
    Dirichlet values (``bc_data`` arrays of length ``ny+1`` / ``nx+1``).
    """
    if prob.bc_kind != "dirichlet":
        raise ConfigurationError("solve_dirichlet needs bc_kind='dirichlet'")
    d = prob.rhs.domain
    nx, ny, hx, hy = d.nx, d.ny, d.hx, d.hy
    if location == "node":
        if prob.rhs.location != "node":
            raise ConfigurationError("node solve needs a node rhs")
        left, right = prob.side("left", ny + 1), prob.side("right", ny + 1)
        bottom, top = prob.side("bottom", nx + 1), prob.side("top", nx + 1)
        full = np.zeros((nx + 1, ny + 1))
        full[0, :], full[-1, :] = left, right
        full[:, 0], full[:, -1] = bottom, top
        b = prob.rhs.values[1:-1, 1:-1].copy()
        b[0, :] -= full[0, 1:-1] / hx**2
        b[-1, :] -= full[-1, 1:-1] / hx**2
        b[:, 0] -= full[1:-1, 0] / hy**2
        b[:, -1] -= full[1:-1, -1] / hy**2
        b = b.ravel()
        op = _poisson_operator(nx, ny, hx, hy, "node", _backend(prob, b.size))
        x = op.solve(b, prob.solver_tol)
        full[1:-1, 1:-1] = x.reshape(nx - 1, ny - 1)
        return ScalarField(full, d, location="node")

    if prob.rhs.location != "cell":
        raise ConfigurationError("cell solve needs a cell rhs")
    b = prob.rhs.values.copy()
    b[0, :] -= 2.0 * prob.side("left", ny) / hx**2
    b[-1, :] -= 2.0 * prob.side("right", ny) / hx**2
    b[:, 0] -= 2.0 * prob.side("bottom", nx) / hy**2
    b[:, -1] -= 2.0 * prob.side("top", nx) / hy**2
    b = b.ravel()
    op = _poisson_operator(nx, ny, hx, hy, "dirichlet", _backend(prob, b.size))
    x = op.solve(b, prob.solver_tol)
    return ScalarField(x.reshape(nx, ny), d)


def neumann_flux_source(domain: DiscreteDomain, bc_data: dict) -> np.ndarray:
    """Cell source ``flux/h`` contributed by outer-normal boundary fluxes."""
    nx, ny = domain.nx, domain.ny
    prob = PoissonProblem(ScalarField(np.zeros((nx, ny)), domain), "neumann", bc_data)
    src = np.zeros((nx, ny))
    src[0, :] += prob.side("left", ny) / domain.hx
    src[-1, :] += prob.side("right", ny) / domain.hx
    src[:, 0] += prob.side("bottom", nx) / domain.hy
    src[:, -1] += prob.side("top", nx) / domain.hy
    return src


def boundary_flux_integral(domain: DiscreteDomain, bc_data: dict) -> float:
    return float(np.sum(neumann_flux_source(domain, bc_data)) * domain.cell_area)


def solve_neumann(prob: PoissonProblem):
    """Zero-mean solution of ``Laplace(phi) = rhs`` with ``d_n phi = bc_data``.

    Returns ``(phi, defect)``. The compatibility defect
    ``(int rhs - oint flux) / area`` is subtracted from the rhs before the
    solve, so the returned field solves the corrected problem.
    """
    if prob.bc_kind != "neumann":
        raise ConfigurationError("solve_neumann needs bc_kind='neumann'")
    d = prob.rhs.domain
    nx, ny, hx, hy = d.nx, d.ny, d.hx, d.hy
    for name in prob.bc_data:
        if name not in SIDES:
            raise ConfigurationError(f"unknown side {name!r}")
    f = prob.rhs.values - neumann_flux_source(d, prob.bc_data)
    if not np.isfinite(f).all():
        raise ConfigurationError("non-finite Poisson data")
    defect = float(np.mean(f))
    f = f - defect
    scale = float((np.abs(prob.rhs.values).sum() + np.abs(neumann_flux_source(d, prob.bc_data)).sum()) * d.cell_area)
    if prob.warn_defect and abs(defect) * d.area > DEFECT_WARN * max(scale, 1e-300) and abs(defect) > 0:
        warnings.warn(f"Neumann compatibility defect {defect:.3e} is large", RuntimeWarning, stacklevel=2)
    b = f.ravel()
    if np.any(b):
        op = _poisson_operator(nx, ny, hx, hy, "neumann", _backend(prob, b.size))
        x = op.solve(b, prob.solver_tol)
    else:
        x = np.zeros_like(b)
    return ScalarField(x.reshape(nx, ny), d, zero_mean=True), defect


def helmholtz_solve(rhs: np.ndarray, h1: float, h2: float, end1: float, end2: float, coef: float) -> np.ndarray:
    """Solve ``(I - coef * L) x = rhs`` on a 2D array of unknowns.

    ``end1``/``end2`` are the end diagonals of the 1D second differences along
    each axis (``-2`` for held Dirichlet neighbours, ``-3`` for a ``-x`` ghost,
    ``-1`` for a ``+x`` ghost).
    """
    n1, n2 = rhs.shape
    op = _helmholtz_operator(n1, n2, h1, h2, end1, end2, coef)
    return op.solve(rhs.ravel()).reshape(n1, n2)
