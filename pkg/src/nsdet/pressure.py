"""Pressure recovered from a velocity snapshot.

For a solenoidal no-slip field the pressure solves the Neumann problem

    Laplace(p) = -div((u . grad) u) + div g,     d_n p = (nu Laplace(u) + g) . n,

normalised to zero mean. The inertial part (the interior source) is quadratic
in ``u``; the boundary flux is linear in ``u`` and affine in ``g``.

Wall flux
---------
For divergence-free ``u`` the identity ``Laplace(u) = (d_y c, -d_x c)`` with
``c = d_y u_1 - d_x u_2`` moves the normal trace of the viscous term onto a
tangential derivative of the wall vorticity. On a wall face the flux is the
difference of the one-sided wall vorticity at the two adjacent boundary
nodes, which is second order and telescopes around the boundary, so the
discrete compatibility condition holds up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np

from .errors import ConfigurationError
from .fields import ScalarField, VelocityField, advect, divergence, norm, vorticity
from .poisson import PoissonProblem, solve_neumann

DIV_G_GUARD = 1e-8


@dataclass
class PressureRecovery:
    u: VelocityField
    g: VelocityField
    recovered: ScalarField
    defect: float
    relative_defect: float
    inertial: ScalarField
    linear: ScalarField


def _check_forcing(g: VelocityField):
    if g.max_abs() == 0.0:
        return
    div = np.max(np.abs(divergence(g).values)) * g.domain.hmin / g.max_abs()
    if div > DIV_G_GUARD:
        raise ConfigurationError(f"forcing is not discretely solenoidal (scaled div {div:.2e})")


def wall_flux(u: VelocityField, g: Optional[VelocityField], nu: float) -> Dict[str, np.ndarray]:
    """Outer-normal flux ``(nu Laplace(u) + g) . n`` on every wall face."""
    d = u.domain
    c = vorticity(u).values
    fl = {
        "left": -nu * (c[0, 1:] - c[0, :-1]) / d.hy,
        "right": nu * (c[-1, 1:] - c[-1, :-1]) / d.hy,
        "bottom": nu * (c[1:, 0] - c[:-1, 0]) / d.hx,
        "top": -nu * (c[1:, -1] - c[:-1, -1]) / d.hx,
    }
    if g is not None:
        fl["left"] = fl["left"] - g.u[0]
        fl["right"] = fl["right"] + g.u[-1]
        fl["bottom"] = fl["bottom"] - g.v[:, 0]
        fl["top"] = fl["top"] + g.v[:, -1]
    return fl


def inertial_source(u: VelocityField) -> ScalarField:
    """``-div((u . grad) u)`` at cell centres."""
    return divergence(advect(u)) * -1.0


def inertial_pressure(u: VelocityField) -> ScalarField:
    """Quadratic part of the recovered pressure (no flux data)."""
    p, _ = solve_neumann(PoissonProblem(inertial_source(u), "neumann"))
    return p


def linear_pressure(u: VelocityField, g: Optional[VelocityField], nu: float) -> ScalarField:
    """Part of the pressure driven by the viscous and forcing wall flux."""
    d = u.domain
    zero = ScalarField(np.zeros((d.nx, d.ny)), d)
    p, _ = solve_neumann(PoissonProblem(zero, "neumann", wall_flux(u, g, nu)))
    return p


def pressure_recovery(u: VelocityField, g: Optional[VelocityField] = None, nu: float = 1.0) -> PressureRecovery:
    """Full recovery record: pressure, its two parts and the compatibility defect."""
    d = u.domain
    if g is None:
        g = VelocityField.zeros(d)
    elif g.domain != d:
        raise ConfigurationError("forcing and velocity live on different grids")
    _check_forcing(g)
    src = inertial_source(u)
    flux = wall_flux(u, g, nu)
    p, defect = solve_neumann(PoissonProblem(src, "neumann", flux))
    pin = inertial_pressure(u)
    plin = linear_pressure(u, g, nu)
    scale = float(np.sum(np.abs(src.values)) * d.cell_area)
    scale += sum(float(np.sum(np.abs(f))) for f in flux.values()) * max(d.hx, d.hy)
    rel = abs(defect) * d.area / scale if scale > 0 else 0.0
    return PressureRecovery(u, g, p, defect, rel, pin, plin)


def recover_pressure(u: VelocityField, g: Optional[VelocityField] = None, nu: float = 1.0) -> ScalarField:
    """Zero-mean pressure ``P(u)`` for velocity ``u`` under forcing ``g``."""
    return pressure_recovery(u, g, nu).recovered


@dataclass
class ScalingReport:
    alphas: tuple
    errors: tuple
    tol: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors)


def quadratic_scaling_check(u: VelocityField, alphas: Sequence[float] = (2.0, 3.0, 0.5),
                            tol: float = 1e-10) -> ScalingReport:
    """Check ``P_in(a u) = a^2 P_in(u)`` for the inertial part."""
    base = inertial_pressure(u)
    ref = max(norm(base, "L2"), 1e-300)
    errs = []
    for a in alphas:
        pa = inertial_pressure(u * a)
        errs.append(norm(pa - base * (a * a), "L2") / (a * a * ref) if a != 0 else norm(pa, "L2"))
    return ScalingReport(tuple(alphas), tuple(errs), tol)
