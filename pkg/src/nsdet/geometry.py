"""Computational domain and boundary-curve calculus.

Orientation convention
----------------------
Boundary curves are traversed clockwise as the arc-length parameter ``s``
grows. With the tangent ``tau = (x', y')`` the normal is ``n = (-y', x')``,
which is then the *outer* normal, and the curvature is defined through
``n' = kappa * tau`` (equivalently ``tau' = -kappa * n``). A circle of radius
``R`` therefore has ``kappa = +1/R``. Curves built counter-clockwise would
give the inner normal with the same formula; every curve carries an explicit
``orientation`` flag and the builders here only produce clockwise curves.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigurationError, DegenerateSystemError

MIN_CELLS = 8


@dataclass(frozen=True)
class DiscreteDomain:
    """Rectangle ``[0, Lx] x [0, Ly]`` split into ``nx x ny`` cells."""

    nx: int
    ny: int
    Lx: float = 1.0
    Ly: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ConfigurationError("cell counts must be integers")
        if self.nx < MIN_CELLS or self.ny < MIN_CELLS:
            raise ConfigurationError(
                f"grid too coarse: need nx, ny >= {MIN_CELLS}, got {self.nx}x{self.ny}"
            )
        if not (self.Lx > 0 and self.Ly > 0) or not np.isfinite([self.Lx, self.Ly]).all():
            raise ConfigurationError(f"side lengths must be positive, got {self.Lx}, {self.Ly}")

    @property
    def hx(self) -> float:
        return self.Lx / self.nx

    @property
    def hy(self) -> float:
        return self.Ly / self.ny

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def hmin(self) -> float:
        return min(self.hx, self.hy)

    def cell_centers(self):
        """Meshgrid (``ij`` indexing) of cell centres, shape ``(nx, ny)``."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def nodes(self):
        """Meshgrid of grid nodes, shape ``(nx+1, ny+1)``."""
        x = np.arange(self.nx + 1) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def u_faces(self):
        """Centres of x-faces (normal velocity ``u``), shape ``(nx+1, ny)``."""
        x = np.arange(self.nx + 1) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def v_faces(self):
        """Centres of y-faces (normal velocity ``v``), shape ``(nx, ny+1)``."""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")


def build_rectangle(nx: int, ny: int, Lx: float = 1.0, Ly: float = 1.0) -> DiscreteDomain:
    return DiscreteDomain(nx=nx, ny=ny, Lx=float(Lx), Ly=float(Ly))


@dataclass(frozen=True)
class BoundaryCurve:
    """Uniformly sampled closed boundary curve.

    ``points``, ``tangent`` and ``normal`` have shape ``(m, 2)``; ``s`` and
    ``curvature`` shape ``(m,)``. ``excluded`` marks samples where the
    smooth-curve calculus does not apply (rectangle corners and the samples
    adjacent to them).
    """

    s: np.ndarray
    points: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    curvature: np.ndarray
    length: float
    orientation: str = "clockwise"
    excluded: Optional[np.ndarray] = None
    kappa_fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    turning_fn: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    @property
    def m(self) -> int:
        return self.s.size

    @property
    def ds(self) -> float:
        return self.length / self.m

    @property
    def mask(self) -> np.ndarray:
        """Samples on which the smooth identities are checked."""
        if self.excluded is None:
            return np.ones(self.m, dtype=bool)
        return ~self.excluded

    def total_turning(self) -> float:
        return float(np.sum(self.curvature) * self.ds)

    def kappa(self, s):
        """Curvature at arbitrary arc length (periodic)."""
        s = np.mod(np.asarray(s, dtype=float), self.length)
        if self.kappa_fn is not None:
            return self.kappa_fn(s)
        return self._spline()(s)

    def turning(self, s):
        """``Theta(s) = int_0^s kappa``."""
        s = np.asarray(s, dtype=float)
        if self.turning_fn is not None:
            return self.turning_fn(s)
        return self._spline().antiderivative()(s)

    def _spline(self) -> CubicSpline:
        knots = np.append(self.s, self.length)
        vals = np.append(self.curvature, self.curvature[0])
        return CubicSpline(knots, vals, bc_type="periodic")

    def to_csv(self, path, residuals: Optional[dict] = None) -> None:
        """Write ``s, x, y, tx, ty, kappa`` plus optional residual columns."""
        residuals = residuals or {}
        names = list(residuals)
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s", "x", "y", "tx", "ty", "kappa", *names])
            for i in range(self.m):
                row = [self.s[i], *self.points[i], *self.tangent[i], self.curvature[i]]
                row += [residuals[n][i] for n in names]
                writer.writerow([repr(float(v)) for v in row])


def circle_curve(R: float, m: int, center=(0.0, 0.0)) -> BoundaryCurve:
    """Clockwise circle of radius ``R`` sampled at ``m`` equispaced points."""
    if not R > 0:
        raise ConfigurationError("radius must be positive")
    if m < 16:
        raise ConfigurationError("need at least 16 samples")
    L = 2.0 * np.pi * R
    s = np.arange(m) * (L / m)
    phi = s / R
    points = np.column_stack([center[0] + R * np.cos(phi), center[1] - R * np.sin(phi)])
    tangent = np.column_stack([-np.sin(phi), -np.cos(phi)])
    normal = np.column_stack([-tangent[:, 1], tangent[:, 0]])
    curvature = np.full(m, 1.0 / R)
    return BoundaryCurve(
        s=s,
        points=points,
        tangent=tangent,
        normal=normal,
        curvature=curvature,
        length=L,
        kappa_fn=lambda t: np.full(np.shape(t), 1.0 / R),
        turning_fn=lambda t: np.asarray(t, dtype=float) / R,
    )


def ellipse_curve(a: float, b: float, m: int) -> BoundaryCurve:
    """Clockwise ellipse, resampled uniformly in arc length."""
    if not (a > 0 and b > 0) or m < 16:
        raise ConfigurationError("need a, b > 0 and m >= 16")
    # dense parameter table -> arc-length inversion
    t = np.linspace(0.0, 2.0 * np.pi, 20001)
    speed = np.hypot(a * np.sin(t), b * np.cos(t))
    arc = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(t))])
    L = arc[-1]
    s = np.arange(m) * (L / m)
    ts = CubicSpline(arc, t)(s)
    # clockwise: (a cos t, -b sin t)
    x, y = a * np.cos(ts), -b * np.sin(ts)
    dx, dy = -a * np.sin(ts), -b * np.cos(ts)
    sp = np.hypot(dx, dy)
    tangent = np.column_stack([dx / sp, dy / sp])
    normal = np.column_stack([-tangent[:, 1], tangent[:, 0]])
    # kappa = n' . tau = x'y'' - y'x'' in arc length (positive for clockwise convex)
    ddx, ddy = -a * np.cos(ts), b * np.sin(ts)
    curvature = (dy * ddx - dx * ddy) / sp**3
    return BoundaryCurve(
        s=s,
        points=np.column_stack([x, y]),
        tangent=tangent,
        normal=normal,
        curvature=curvature,
        length=L,
    )


def rectangle_curve(domain: DiscreteDomain, per_unit: int = 64) -> BoundaryCurve:
    """Clockwise rectangle boundary starting at the origin.

    Curvature is zero on the edges; corners (where it is undefined) and their
    immediate neighbours are flagged in ``excluded``.
    """
    Lx, Ly = domain.Lx, domain.Ly
    L = 2.0 * (Lx + Ly)
    m = max(16, int(round(per_unit * L)))
    s = np.arange(m) * (L / m)
    breaks = np.array([0.0, Ly, Ly + Lx, 2 * Ly + Lx, L])
    edge = np.searchsorted(breaks, s, side="right") - 1
    local = s - breaks[edge]
    dirs = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]])
    starts = np.array([[0.0, 0.0], [0.0, Ly], [Lx, Ly], [Lx, 0.0]])
    points = starts[edge] + local[:, None] * dirs[edge]
    tangent = dirs[edge].copy()
    normal = np.column_stack([-tangent[:, 1], tangent[:, 0]])
    corner_dist = np.min(np.abs(s[:, None] - breaks[None, :]), axis=1)
    excluded = corner_dist < 1.5 * (L / m)
    return BoundaryCurve(
        s=s,
        points=points,
        tangent=tangent,
        normal=normal,
        curvature=np.zeros(m),
        length=L,
        excluded=excluded,
    )


# ---------------------------------------------------------------------------
# Frenet system along the boundary


class FrenetSolution(NamedTuple):
    s: np.ndarray
    X: np.ndarray
    Y: np.ndarray


def frenet_solve(curve: BoundaryCurve, R0: float, theta0: float, step: Optional[float] = None) -> FrenetSolution:
    """Integrate ``X' = kappa Y, Y' = -kappa X`` with classical RK4.

    Starts from ``(R0 cos theta0, R0 sin theta0)`` at ``s = 0`` and returns
    the solution at the curve's sample points. The default step is
    ``L / (100 m)``.
    """
    if not np.isfinite(R0):
        raise ConfigurationError("R0 must be finite")
    m = curve.m
    sub = 100 if step is None else max(1, int(np.ceil(curve.ds / step)))
    h = curve.ds / sub
    X = np.empty(m)
    Y = np.empty(m)
    x, y = R0 * np.cos(theta0), R0 * np.sin(theta0)
    for i in range(m):
        X[i], Y[i] = x, y
        base = i * curve.ds
        grid = base + h * np.arange(sub + 1)
        mids = grid[:-1] + 0.5 * h
        k0 = curve.kappa(grid)
        km = curve.kappa(mids)
        for j in range(sub):
            ka, kb, kc = k0[j], km[j], k0[j + 1]
            ax, ay = ka * y, -ka * x
            bx, by = kb * (y + 0.5 * h * ay), -kb * (x + 0.5 * h * ax)
            cx, cy = kb * (y + 0.5 * h * by), -kb * (x + 0.5 * h * bx)
            dx, dy = kc * (y + h * cy), -kc * (x + h * cx)
            x += h / 6.0 * (ax + 2 * bx + 2 * cx + dx)
            y += h / 6.0 * (ay + 2 * by + 2 * cy + dy)
    return FrenetSolution(curve.s.copy(), X, Y)


def frenet_closed_form(curve: BoundaryCurve, R0: float, theta0: float) -> FrenetSolution:
    """Exact solution ``X = R0 cos(theta0 - Theta)``, ``Y = R0 sin(theta0 - Theta)``."""
    theta = curve.turning(curve.s)
    return FrenetSolution(curve.s.copy(), R0 * np.cos(theta0 - theta), R0 * np.sin(theta0 - theta))


# ---------------------------------------------------------------------------
# Tangential / normal derivative identities


@dataclass
class GeometryResidualReport:
    """Max residuals of the boundary derivative identities.

    ``tangential``: d/ds U(gamma) against ``x' U_x + y' U_y``.
    ``second_tangential``: d/ds (d_tau U) against
    ``x'^2 U_xx + 2 x'y' U_xy + y'^2 U_yy - kappa d_n U``.
    ``tangential_of_normal``: d/ds (d_n U) against
    ``kappa d_tau U + x'y'(U_yy - U_xx) + (x'^2 - y'^2) U_xy``.
    """

    tangential: float
    second_tangential: float
    tangential_of_normal: float
    pointwise: dict

    def as_dict(self) -> dict:
        return {
            "tangential": self.tangential,
            "second_tangential": self.second_tangential,
            "tangential_of_normal": self.tangential_of_normal,
        }


def _periodic_ds(f: np.ndarray, ds: float) -> np.ndarray:
    return (np.roll(f, -1) - np.roll(f, 1)) / (2.0 * ds)


def check_geometry_identities(curve: BoundaryCurve, U, grad, hess) -> GeometryResidualReport:
    """Compare arc-length differencing of traces with the analytic right sides.

    ``U(x, y)``, ``grad(x, y) -> (Ux, Uy)`` and ``hess(x, y) -> (Uxx, Uxy, Uyy)``
    are vectorised callables.
    """
    x, y = curve.points[:, 0], curve.points[:, 1]
    tx, ty = curve.tangent[:, 0], curve.tangent[:, 1]
    kappa = curve.curvature
    Ux, Uy = (np.broadcast_to(np.asarray(c, dtype=float), x.shape) for c in grad(x, y))
    Uxx, Uxy, Uyy = (np.broadcast_to(np.asarray(c, dtype=float), x.shape) for c in hess(x, y))
    trace = np.broadcast_to(np.asarray(U(x, y), dtype=float), x.shape)

    d_tau = tx * Ux + ty * Uy
    d_n = -ty * Ux + tx * Uy

    r1 = _periodic_ds(trace, curve.ds) - d_tau
    rhs2 = tx**2 * Uxx + 2 * tx * ty * Uxy + ty**2 * Uyy - kappa * d_n
    r2 = _periodic_ds(d_tau, curve.ds) - rhs2
    rhs3 = kappa * d_tau + tx * ty * (Uyy - Uxx) + (tx**2 - ty**2) * Uxy
    r3 = _periodic_ds(d_n, curve.ds) - rhs3

    mask = curve.mask
    pointwise = {
        "tangential": np.where(mask, r1, np.nan),
        "second_tangential": np.where(mask, r2, np.nan),
        "tangential_of_normal": np.where(mask, r3, np.nan),
    }
    return GeometryResidualReport(
        tangential=float(np.max(np.abs(r1[mask]))),
        second_tangential=float(np.max(np.abs(r2[mask]))),
        tangential_of_normal=float(np.max(np.abs(r3[mask]))),
        pointwise=pointwise,
    )


def frenet_consistency_residual(curve: BoundaryCurve) -> float:
    """Max of ``|n'(s) - kappa tau|`` with centred differencing of the normal."""
    dn = np.column_stack([_periodic_ds(curve.normal[:, k], curve.ds) for k in range(2)])
    res = dn - curve.curvature[:, None] * curve.tangent
    return float(np.max(np.linalg.norm(res[curve.mask], axis=1)))


class TraceSolution(NamedTuple):
    A: float
    B: float
    det: float


def solve_trace_system(tangent, kappa: float, dn_v: float, dn_w: float) -> TraceSolution:
    """Solve for the mixed second derivatives ``A = v_xy`` and ``B = w_xy``.

    The system, with unknowns ordered ``(B, A)``, is::

        (y'^2 - x'^2) B + 2 x'y' A = kappa dn_v
        2 x'y' B - (y'^2 - x'^2) A = kappa dn_w

    Its determinant is ``-(x'^2 + y'^2)^2``, i.e. ``-1`` for unit tangents.
    """
    tx, ty = float(tangent[0]), float(tangent[1])
    if abs(np.hypot(tx, ty) - 1.0) > 1e-8:
        raise DegenerateSystemError(f"tangent is not a unit vector: |t| = {np.hypot(tx, ty)!r}")
    a = ty * ty - tx * tx
    b = 2.0 * tx * ty
    det = -a * a - b * b
    r1, r2 = kappa * dn_v, kappa * dn_w
    # Cramer on [[a, b], [b, -a]] @ (B, A) = (r1, r2)
    B = (-a * r1 - b * r2) / det
    A = (a * r2 - b * r1) / det
    return TraceSolution(A=A, B=B, det=det)
