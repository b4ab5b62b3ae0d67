"""Staggered (MAC) grid fields and the discrete operators on them.

Layout on ``DiscreteDomain(nx, ny)``, all arrays indexed ``[i, j]`` with
``i`` along x:

* ``u``: x-face normal velocity, shape ``(nx+1, ny)``, at ``(i*hx, (j+1/2)*hy)``
* ``v``: y-face normal velocity, shape ``(nx, ny+1)``, at ``((i+1/2)*hx, j*hy)``
* cell scalars (pressure): shape ``(nx, ny)``
* node scalars (vorticity, stream function): shape ``(nx+1, ny+1)``

No-slip is built into the operators that need wall values of the
*tangential* velocity (vorticity, viscous Laplacian, wall shear): that value
is taken to be zero. The boundary-normal faces are stored explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import GridMismatchError
from .geometry import DiscreteDomain

SIDES = ("left", "right", "bottom", "top")


@dataclass
class ScalarField:
    values: np.ndarray
    domain: DiscreteDomain
    zero_mean: bool = False
    location: str = "cell"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = _scalar_shape(self.domain, self.location)
        if self.values.shape != expected:
            raise GridMismatchError(
                f"{self.location} field has shape {self.values.shape}, expected {expected}"
            )

    def copy(self) -> "ScalarField":
        return ScalarField(self.values.copy(), self.domain, self.zero_mean, self.location)

    def mean(self) -> float:
        return float(np.mean(self.values))

    def _combine(self, other, op):
        if isinstance(other, ScalarField):
            _check_same_grid(self.domain, other.domain)
            return ScalarField(op(self.values, other.values), self.domain, False, self.location)
        return ScalarField(op(self.values, other), self.domain, False, self.location)

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, a):
        return ScalarField(self.values * a, self.domain, self.zero_mean, self.location)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


@dataclass
class VelocityField:
    u: np.ndarray
    v: np.ndarray
    domain: DiscreteDomain

    def __post_init__(self):
        d = self.domain
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.shape != (d.nx + 1, d.ny) or self.v.shape != (d.nx, d.ny + 1):
            raise GridMismatchError(
                f"velocity arrays {self.u.shape}, {self.v.shape} do not fit a {d.nx}x{d.ny} grid"
            )

    @classmethod
    def zeros(cls, domain: DiscreteDomain) -> "VelocityField":
        return cls(np.zeros((domain.nx + 1, domain.ny)), np.zeros((domain.nx, domain.ny + 1)), domain)

    def copy(self) -> "VelocityField":
        return VelocityField(self.u.copy(), self.v.copy(), self.domain)

    def __add__(self, other: "VelocityField"):
        _check_same_grid(self.domain, other.domain)
        return VelocityField(self.u + other.u, self.v + other.v, self.domain)

    def __sub__(self, other: "VelocityField"):
        _check_same_grid(self.domain, other.domain)
        return VelocityField(self.u - other.u, self.v - other.v, self.domain)

    def __mul__(self, a: float):
        return VelocityField(self.u * a, self.v * a, self.domain)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(self.u)), np.max(np.abs(self.v))))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.u).all() and np.isfinite(self.v).all())

    def normal_boundary_max(self) -> float:
        """Largest boundary-normal face value (zero for no-slip fields)."""
        return float(
            max(
                np.max(np.abs(self.u[0])),
                np.max(np.abs(self.u[-1])),
                np.max(np.abs(self.v[:, 0])),
                np.max(np.abs(self.v[:, -1])),
            )
        )

    def with_zero_normal(self) -> "VelocityField":
        w = self.copy()
        w.u[0] = w.u[-1] = 0.0
        w.v[:, 0] = w.v[:, -1] = 0.0
        return w


def _scalar_shape(domain: DiscreteDomain, location: str):
    if location == "cell":
        return (domain.nx, domain.ny)
    if location == "node":
        return (domain.nx + 1, domain.ny + 1)
    raise ValueError(f"unknown location {location!r}")


def _check_same_grid(a: DiscreteDomain, b: DiscreteDomain):
    if a != b:
        raise GridMismatchError(f"grid mismatch: {a} vs {b}")


# ---------------------------------------------------------------------------
# Sampling helpers


def sample_velocity(domain: DiscreteDomain, fu, fv) -> VelocityField:
    """Point-sample analytic components at the face centres."""
    xu, yu = domain.u_faces()
    xv, yv = domain.v_faces()
    u = np.broadcast_to(np.asarray(fu(xu, yu), dtype=float), xu.shape).copy()
    v = np.broadcast_to(np.asarray(fv(xv, yv), dtype=float), xv.shape).copy()
    return VelocityField(u, v, domain)


def sample_scalar(domain: DiscreteDomain, f, location: str = "cell") -> ScalarField:
    x, y = domain.cell_centers() if location == "cell" else domain.nodes()
    vals = np.broadcast_to(np.asarray(f(x, y), dtype=float), x.shape).copy()
    return ScalarField(vals, domain, location=location)


def velocity_from_streamfunction(psi: np.ndarray, domain: DiscreteDomain) -> VelocityField:
    """Discrete ``(d_y psi, -d_x psi)`` from node values; exactly solenoidal."""
    psi = np.asarray(psi, dtype=float)
    u = (psi[:, 1:] - psi[:, :-1]) / domain.hy
    v = -(psi[1:, :] - psi[:-1, :]) / domain.hx
    return VelocityField(u, v, domain)


# ---------------------------------------------------------------------------
# Operators


def divergence(w: VelocityField) -> ScalarField:
    d = w.domain
    div = (w.u[1:, :] - w.u[:-1, :]) / d.hx + (w.v[:, 1:] - w.v[:, :-1]) / d.hy
    return ScalarField(div, d)


def gradient(phi: ScalarField) -> VelocityField:
    """Face differences of a cell field; boundary-normal faces are zero."""
    d = phi.domain
    p = phi.values
    u = np.zeros((d.nx + 1, d.ny))
    v = np.zeros((d.nx, d.ny + 1))
    u[1:-1, :] = (p[1:, :] - p[:-1, :]) / d.hx
    v[:, 1:-1] = (p[:, 1:] - p[:, :-1]) / d.hy
    return VelocityField(u, v, d)


def laplacian_neumann(phi: ScalarField) -> ScalarField:
    """Five-point Laplacian with zero-flux walls, i.e. ``div(grad(phi))``."""
    return divergence(gradient(phi))


def vorticity(w: VelocityField) -> ScalarField:
    """Node-sampled ``curl w = d_y u - d_x v``.

    Interior nodes use compact differences. On the walls the tangential
    velocity is zero, and the wall-normal derivative of the tangential
    component uses the one-sided second-order stencil through the wall value
    and the two nearest face values. Corners carry zero.
    """
    d = w.domain
    hx, hy = d.hx, d.hy
    u, v = w.u, w.v
    om = np.zeros((d.nx + 1, d.ny + 1))
    om[1:-1, 1:-1] = (u[1:-1, 1:] - u[1:-1, :-1]) / hy - (v[1:, 1:-1] - v[:-1, 1:-1]) / hx
    # bottom / top: d_x v along the wall from the normal faces
    om[1:-1, 0] = (9.0 * u[1:-1, 0] - u[1:-1, 1]) / (3.0 * hy) - (v[1:, 0] - v[:-1, 0]) / hx
    om[1:-1, -1] = -(9.0 * u[1:-1, -1] - u[1:-1, -2]) / (3.0 * hy) - (v[1:, -1] - v[:-1, -1]) / hx
    # left / right
    om[0, 1:-1] = (u[0, 1:] - u[0, :-1]) / hy - (9.0 * v[0, 1:-1] - v[1, 1:-1]) / (3.0 * hx)
    om[-1, 1:-1] = (u[-1, 1:] - u[-1, :-1]) / hy + (9.0 * v[-1, 1:-1] - v[-2, 1:-1]) / (3.0 * hx)
    return ScalarField(om, d, location="node")


def advect(w: VelocityField) -> VelocityField:
    """Face-sampled ``(w . grad) w`` in conservative (divergence) form.

    Centred second-order averages on the MAC grid; for discretely solenoidal
    fields with zero wall-normal flux the form is energy neutral. Values on
    boundary-normal faces are zero.
    """
    d = w.domain
    hx, hy = d.hx, d.hy
    u, v = w.u, w.v
    au = np.zeros_like(u)
    av = np.zeros_like(v)

    # u-momentum: d_x(uu) at cell centres, d_y(vu) at nodes
    uc = 0.5 * (u[1:, :] + u[:-1, :])
    fxx = uc * uc
    # u averaged to nodes in y (ghost: zero tangential at walls, flux vanishes anyway)
    u_ny = np.zeros((d.nx + 1, d.ny + 1))
    u_ny[:, 1:-1] = 0.5 * (u[:, 1:] + u[:, :-1])
    v_nx = np.zeros((d.nx + 1, d.ny + 1))
    v_nx[1:-1, :] = 0.5 * (v[1:, :] + v[:-1, :])
    fxy = u_ny * v_nx
    au[1:-1, :] = (fxx[1:, :] - fxx[:-1, :]) / hx + (fxy[1:-1, 1:] - fxy[1:-1, :-1]) / hy

    # v-momentum: d_x(uv) at nodes, d_y(vv) at cell centres
    vc = 0.5 * (v[:, 1:] + v[:, :-1])
    fyy = vc * vc
    av[:, 1:-1] = (fxy[1:, 1:-1] - fxy[:-1, 1:-1]) / hx + (fyy[:, 1:] - fyy[:, :-1]) / hy
    return VelocityField(au, av, d)


def vector_laplacian(w: VelocityField, boundary: str = "noslip") -> VelocityField:
    """Five-point Laplacian of each component on interior faces.

    Tangential wall condition through a ghost value: ``-value`` for no-slip,
    ``+value`` for free-slip. Boundary-normal faces are held (zero output).
    """
    d = w.domain
    sign = -1.0 if boundary == "noslip" else 1.0
    out_u = np.zeros_like(w.u)
    out_v = np.zeros_like(w.v)
    u = w.u
    ug = np.empty((d.nx + 1, d.ny + 2))
    ug[:, 1:-1] = u
    ug[:, 0] = sign * u[:, 0]
    ug[:, -1] = sign * u[:, -1]
    out_u[1:-1, :] = (u[2:, :] - 2 * u[1:-1, :] + u[:-2, :]) / d.hx**2 + (
        ug[1:-1, 2:] - 2 * ug[1:-1, 1:-1] + ug[1:-1, :-2]
    ) / d.hy**2
    v = w.v
    vg = np.empty((d.nx + 2, d.ny + 1))
    vg[1:-1, :] = v
    vg[0, :] = sign * v[0, :]
    vg[-1, :] = sign * v[-1, :]
    out_v[:, 1:-1] = (vg[2:, 1:-1] - 2 * vg[1:-1, 1:-1] + vg[:-2, 1:-1]) / d.hx**2 + (
        v[:, 2:] - 2 * v[:, 1:-1] + v[:, :-2]
    ) / d.hy**2
    return VelocityField(out_u, out_v, d)


# ---------------------------------------------------------------------------
# Inner products and norms


def inner(a, b) -> float:
    """Discrete L2 inner product with weight ``hx*hy`` on every sample."""
    if isinstance(a, VelocityField):
        _check_same_grid(a.domain, b.domain)
        return float((np.sum(a.u * b.u) + np.sum(a.v * b.v)) * a.domain.cell_area)
    _check_same_grid(a.domain, b.domain)
    return float(np.sum(a.values * b.values) * a.domain.cell_area)


def _velocity_h1_sq(w: VelocityField, boundary: str = "noslip") -> float:
    d = w.domain
    sign = -1.0 if boundary == "noslip" else 1.0
    # wall differences span half a cell, hence the weight 1/2
    wt_y = np.ones(d.ny + 1)
    wt_y[0] = wt_y[-1] = 0.5
    wt_x = np.ones(d.nx + 1)
    wt_x[0] = wt_x[-1] = 0.5
    ug = np.concatenate([sign * w.u[:, :1], w.u, sign * w.u[:, -1:]], axis=1)
    total = np.sum(((w.u[1:] - w.u[:-1]) / d.hx) ** 2)
    total += np.sum(wt_y * ((ug[:, 1:] - ug[:, :-1]) / d.hy) ** 2)
    vg = np.concatenate([sign * w.v[:1], w.v, sign * w.v[-1:]], axis=0)
    total += np.sum(wt_x[:, None] * ((vg[1:] - vg[:-1]) / d.hx) ** 2)
    total += np.sum(((w.v[:, 1:] - w.v[:, :-1]) / d.hy) ** 2)
    return float(total * d.cell_area)


def norm(f, kind: str = "L2") -> float:
    """``L2``, ``H1`` (seminorm) or ``Linf`` norm of a scalar or velocity field.

    The velocity H1 seminorm uses the same no-slip ghost values as the
    viscous operator, so ``norm(w, "H1")**2 == -inner(vector_laplacian(w), w)``
    for fields with zero normal faces.
    """
    kind = kind.upper()
    if kind == "LINF":
        if isinstance(f, VelocityField):
            return f.max_abs()
        return float(np.max(np.abs(f.values)))
    if kind == "L2":
        return float(np.sqrt(inner(f, f)))
    if kind == "H1":
        if isinstance(f, VelocityField):
            return float(np.sqrt(_velocity_h1_sq(f)))
        if f.location != "cell":
            raise ValueError("H1 seminorm is defined for cell fields")
        g = gradient(f)
        return float(np.sqrt(inner(g, g)))
    raise ValueError(f"unknown norm kind {kind!r}")


def energy(w: VelocityField) -> float:
    """``||w||_L2^2``."""
    return inner(w, w)


# ---------------------------------------------------------------------------
# Boundary derivatives


def boundary_normal_derivative(f, side: str, component: Optional[str] = None) -> np.ndarray:
    """Outer-normal derivative on one wall, one-sided and second order.

    ``f`` is a cell ``ScalarField`` or a ``VelocityField`` together with
    ``component`` (``"u"`` or ``"v"``). Values are returned along the wall in
    increasing coordinate order (one per boundary face, or per wall face of the
    tangential component). The wall value of a tangential velocity component is
    taken as zero (no-slip).
    """
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}")
    if isinstance(f, VelocityField):
        if component not in ("u", "v"):
            raise ValueError("component must be 'u' or 'v' for velocity fields")
        return _velocity_normal_derivative(f, side, component)
    if f.location != "cell":
        raise ValueError("normal derivatives of node fields are not supported")
    a = f.values
    d = f.domain
    # cell values at distances h/2, 3h/2, 5h/2 from the wall
    if side == "left":
        f1, f2, f3, h, sgn = a[0], a[1], a[2], d.hx, -1.0
    elif side == "right":
        f1, f2, f3, h, sgn = a[-1], a[-2], a[-3], d.hx, -1.0
    elif side == "bottom":
        f1, f2, f3, h, sgn = a[:, 0], a[:, 1], a[:, 2], d.hy, -1.0
    else:
        f1, f2, f3, h, sgn = a[:, -1], a[:, -2], a[:, -3], d.hy, -1.0
    # inward derivative is (-2 f1 + 3 f2 - f3)/h; outer normal flips sign
    return sgn * (-2.0 * f1 + 3.0 * f2 - f3) / h


def _velocity_normal_derivative(w: VelocityField, side: str, comp: str) -> np.ndarray:
    d = w.domain
    arr = w.u if comp == "u" else w.v
    normal_comp = (comp == "u" and side in ("left", "right")) or (comp == "v" and side in ("bottom", "top"))
    axis = 0 if side in ("left", "right") else 1
    h = d.hx if axis == 0 else d.hy
    first = side in ("left", "bottom")
    take = (lambda k: np.take(arr, k, axis=axis)) if first else (lambda k: np.take(arr, -1 - k, axis=axis))
    if normal_comp:
        # faces at distances 0, h, 2h
        inward = (-3.0 * take(0) + 4.0 * take(1) - take(2)) / (2.0 * h)
    else:
        # wall value 0, faces at h/2 and 3h/2
        inward = (9.0 * take(0) - take(1)) / (3.0 * h)
    return -inward
