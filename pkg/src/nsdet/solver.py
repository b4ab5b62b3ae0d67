"""Projection time stepper for incompressible flow in a rectangle.

The scheme is an incremental-pressure projection on the MAC grid:

1. predictor ``(I - nu dt L) u* = u^n + dt (-N^n - grad p^n + g)`` with
   ``N^n`` the Adams-Bashforth extrapolation of the advection term (forward
   Euler on the first step, variable-step AB2 after a step-size change);
2. projection ``u^{n+1} = u* - grad phi`` with ``Laplace(phi) = div u*``;
3. pressure update ``p^{n+1} = p^n + phi / dt`` (kept zero mean).

Viscous solves reuse cached sparse factorisations from :mod:`nsdet.poisson`.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, InstabilityError, NonConvergenceError
from .fields import (
    ScalarField,
    VelocityField,
    advect,
    divergence,
    energy,
    gradient,
    norm,
    vector_laplacian,
    velocity_from_streamfunction,
)
from .geometry import DiscreteDomain
from .poisson import PoissonProblem, helmholtz_solve, solve_neumann

log = logging.getLogger(__name__)

FORCING_MODES = ("zero", "curl-potential", "single-fourier", "periodic")
BLOWUP_LIMIT = 1e6


@dataclass(frozen=True)
class ForcingSpec:
    """Divergence-free body force ``g = (d_y phi, -d_x phi)``.

    Modes
    -----
    zero
        ``g = 0``.
    single-fourier
        ``phi = amplitude * sin(kx pi x / Lx) sin(ky pi y / Ly)``. The potential
        vanishes on the walls, so ``g`` is tangential there.
    curl-potential
        ``phi = amplitude * potential(x, y)`` for a user callable (defaults to
        the single-Fourier potential when ``potential`` is None).
    periodic
        Time-periodic forcing ``cos(omega t) g_1 + sin(omega t) g_2`` where
        ``g_1`` uses ``(kx, ky)`` and ``g_2`` uses ``(kx2, ky2)``.
    """

    mode: str = "zero"
    amplitude: float = 0.0
    kx: int = 1
    ky: int = 1
    kx2: int = 2
    ky2: int = 1
    omega: float = 1.0
    potential: Optional[Callable] = None

    def __post_init__(self):
        if self.mode not in FORCING_MODES:
            raise ConfigurationError(f"forcing mode must be one of {FORCING_MODES}, got {self.mode!r}")
        if not math.isfinite(self.amplitude):
            raise ConfigurationError("forcing amplitude must be finite")

    @property
    def steady(self) -> bool:
        return self.mode != "periodic"


@dataclass(frozen=True)
class SimConfig:
    """Run configuration.

    ``advection=False`` gives the Stokes limit and ``boundary="freeslip"``
    replaces the no-slip tangential condition by a symmetric ghost; both are
    test configurations (the physical model is no-slip with advection).
    """

    nu: float
    dt: float
    T: float
    domain: DiscreteDomain
    forcing: ForcingSpec = field(default_factory=ForcingSpec)
    snapshot_every: int = 1
    seed: int = 0
    advection: bool = True
    boundary: str = "noslip"
    cfl: float = 0.5
    keep_snapshots: bool = True
    grashof_max: float = 50.0

    def __post_init__(self):
        if not (self.nu > 0 and math.isfinite(self.nu)):
            raise ConfigurationError("nu must be positive")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigurationError("dt must be positive")
        if not (self.T >= 0 and math.isfinite(self.T)):
            raise ConfigurationError("T must be non-negative")
        if self.snapshot_every < 1:
            raise ConfigurationError("snapshot_every must be >= 1")
        if self.boundary not in ("noslip", "freeslip"):
            raise ConfigurationError("boundary must be 'noslip' or 'freeslip'")


@dataclass
class TrajectoryRecord:
    times: List[float] = field(default_factory=list)
    snapshots: List[Tuple[VelocityField, ScalarField]] = field(default_factory=list)
    functional_values: Optional[np.ndarray] = None
    energy: List[float] = field(default_factory=list)
    energy_times: List[float] = field(default_factory=list)
    events: List[str] = field(default_factory=list)
    failed: bool = False
    message: str = ""
    config: Optional["SimConfig"] = None

    @property
    def final(self) -> Optional[Tuple[VelocityField, ScalarField]]:
        return self.snapshots[-1] if self.snapshots else None


# ---------------------------------------------------------------------------
# Forcing


def _fourier_potential(kx, ky, domain):
    def phi(x, y):
        return np.sin(kx * np.pi * x / domain.Lx) * np.sin(ky * np.pi * y / domain.Ly)

    return phi


def forcing_from_potential(phi_nodes: np.ndarray, domain: DiscreteDomain) -> VelocityField:
    """Face-sampled ``(d_y phi, -d_x phi)`` from node values of ``phi``."""
    gu = (phi_nodes[:, 1:] - phi_nodes[:, :-1]) / domain.hy
    gv = -(phi_nodes[1:, :] - phi_nodes[:-1, :]) / domain.hx
    return VelocityField(gu, gv, domain)


def _potential_field(fn, amplitude, domain):
    x, y = domain.nodes()
    return forcing_from_potential(amplitude * np.asarray(fn(x, y), dtype=float), domain)


def make_forcing(spec: ForcingSpec, domain: DiscreteDomain, t: float = 0.0) -> VelocityField:
    """Discretely solenoidal forcing field (at time ``t`` for periodic mode)."""
    if spec.mode == "zero" or spec.amplitude == 0.0:
        return VelocityField.zeros(domain)
    if spec.mode == "single-fourier":
        return _potential_field(_fourier_potential(spec.kx, spec.ky, domain), spec.amplitude, domain)
    if spec.mode == "curl-potential":
        fn = spec.potential or _fourier_potential(spec.kx, spec.ky, domain)
        return _potential_field(fn, spec.amplitude, domain)
    g1 = _potential_field(_fourier_potential(spec.kx, spec.ky, domain), spec.amplitude, domain)
    g2 = _potential_field(_fourier_potential(spec.kx2, spec.ky2, domain), spec.amplitude, domain)
    return g1 * math.cos(spec.omega * t) + g2 * math.sin(spec.omega * t)


class _ForcingCache:
    """Avoids re-sampling steady forcing every step."""

    def __init__(self, spec: ForcingSpec, domain: DiscreteDomain):
        self.spec = spec
        if spec.mode == "periodic" and spec.amplitude != 0.0:
            s1 = replace(spec, mode="single-fourier")
            s2 = replace(spec, mode="single-fourier", kx=spec.kx2, ky=spec.ky2)
            self._basis = (make_forcing(s1, domain), make_forcing(s2, domain))
            self._g = None
        else:
            self._basis = None
            self._g = make_forcing(spec, domain)

    def __call__(self, t: float) -> VelocityField:
        if self._basis is None:
            return self._g
        w = self.spec.omega * t
        return self._basis[0] * math.cos(w) + self._basis[1] * math.sin(w)


def forcing_sup_norm(spec: ForcingSpec, domain: DiscreteDomain, samples: int = 64) -> float:
    """``sup_t ||g(t)||_L2`` (exact for steady forcing, sampled over a period otherwise)."""
    if spec.steady:
        return norm(make_forcing(spec, domain), "L2")
    cache = _ForcingCache(spec, domain)
    ts = np.linspace(0.0, 2 * np.pi / spec.omega, samples, endpoint=False)
    return max(norm(cache(t), "L2") for t in ts)


# ---------------------------------------------------------------------------
# Projection


def project(w_star: VelocityField, solver_tol: float = 1e-12) -> Tuple[VelocityField, ScalarField]:
    """Discrete Leray projection.

    The boundary-normal faces of ``w_star`` are the flux data of the Neumann
    problem; folding them into the divergence means the potential solves
    ``Laplace(phi) = div(w0)`` with ``w0`` the field with zeroed normal faces.
    Returns ``(w0 - grad phi, phi)``.
    """
    w0 = w_star.with_zero_normal()
    rhs = divergence(w0)
    # the divergence of a field with zero normal faces telescopes to zero
    phi, _ = solve_neumann(PoissonProblem(rhs, "neumann", solver_tol=solver_tol, warn_defect=False))
    return w0 - gradient(phi), phi


def scaled_divergence(w: VelocityField) -> float:
    """``max|div w| * hmin / max(|w|_inf, tiny)``, the dimensionless defect."""
    d = w.domain
    scale = max(w.max_abs(), 1e-300)
    return float(np.max(np.abs(divergence(w).values)) * d.hmin / scale)


def momentum_pressure(u: VelocityField, g: VelocityField, nu: float, advection: bool = True,
                      boundary: str = "noslip") -> ScalarField:
    """Pressure consistent with the discrete momentum balance.

    Solves ``Laplace(p) = div(-N(u) + nu L u + g)`` restricted to interior
    faces, i.e. ``grad p`` is the gradient part of the discrete force.
    """
    f = vector_laplacian(u, boundary) * nu + g.with_zero_normal()
    if advection:
        f = f - advect(u)
    p, _ = solve_neumann(PoissonProblem(divergence(f.with_zero_normal()), "neumann", warn_defect=False))
    return p


# ---------------------------------------------------------------------------
# Stepper


def _ends(boundary: str):
    # (end diagonal along the wall-normal direction, along the tangential one)
    return -2.0, (-3.0 if boundary == "noslip" else -1.0)


class Stepper:
    """Holds the multistep history of one run."""

    def __init__(self, cfg: SimConfig, u0: VelocityField, p0: Optional[ScalarField] = None):
        self.cfg = cfg
        self.domain = cfg.domain
        self.forcing = _ForcingCache(cfg.forcing, cfg.domain)
        self.t = 0.0
        self.dt = cfg.dt
        self.u = u0.copy()
        if p0 is None:
            p0 = momentum_pressure(self.u, self.forcing(0.0), cfg.nu, cfg.advection, cfg.boundary)
        self.p = p0.copy()
        self._adv_prev: Optional[VelocityField] = None
        self._dt_prev: Optional[float] = None
        self.events: List[str] = []

    def _cfl_check(self, dt: float) -> float:
        if not self.cfg.advection:
            return dt
        speed = self.u.max_abs()
        h = self.domain.hmin
        while dt * speed / h > self.cfg.cfl:
            dt *= 0.5
            msg = f"t={self.t:.6g}: CFL {2 * dt * speed / h:.3f} > {self.cfg.cfl}, dt halved to {dt:.3g}"
            log.info(msg)
            self.events.append(msg)
        return dt

    def advance(self, dt: Optional[float] = None,
                extra: Optional[VelocityField] = None) -> Tuple[VelocityField, ScalarField]:
        """Advance one step; ``extra`` is an additional solenoidal body force."""
        cfg, d = self.cfg, self.domain
        req = self.dt if dt is None else dt
        new_dt = self._cfl_check(req)
        if new_dt < req:
            self.dt = new_dt if dt is None else self.dt * (new_dt / req)
        dt = new_dt
        u = self.u
        g = self.forcing(self.t + dt)
        if extra is not None:
            g = g + extra

        if cfg.advection:
            adv = advect(u)
            if self._adv_prev is None:
                nl = adv
            else:
                r = dt / self._dt_prev
                nl = adv * (1.0 + 0.5 * r) - self._adv_prev * (0.5 * r)
        else:
            adv = None
            nl = VelocityField.zeros(d)

        rhs = u + (g.with_zero_normal() - nl - gradient(self.p)) * dt
        normal_end, tang_end = _ends(cfg.boundary)
        coef = cfg.nu * dt
        us = np.zeros_like(u.u)
        vs = np.zeros_like(u.v)
        us[1:-1, :] = helmholtz_solve(rhs.u[1:-1, :], d.hx, d.hy, normal_end, tang_end, coef)
        vs[:, 1:-1] = helmholtz_solve(rhs.v[:, 1:-1], d.hx, d.hy, tang_end, normal_end, coef)
        w_star = VelocityField(us, vs, d)

        w, phi = project(w_star)
        p = self.p + phi * (1.0 / dt)
        p = ScalarField(p.values - p.values.mean(), d, zero_mean=True)

        if not w.is_finite() or w.max_abs() > BLOWUP_LIMIT:
            raise InstabilityError(f"velocity blew up at t={self.t + dt:.6g} (|u|_inf={w.max_abs():.3g})")

        self._adv_prev = adv
        self._dt_prev = dt
        self.u, self.p = w, p
        self.t += dt
        return w, p


def step(state: VelocityField, cfg: SimConfig, g: Optional[VelocityField] = None,
         p: Optional[ScalarField] = None) -> Tuple[VelocityField, ScalarField]:
    """One stand-alone step from ``state`` (forward-Euler advection).

    ``g`` overrides the configured forcing; ``p`` is the previous pressure for
    the incremental predictor (the momentum-consistent pressure if omitted).
    """
    if cfg.boundary == "noslip" and state.normal_boundary_max() > 0.0:
        raise ConfigurationError("state violates the no-penetration condition")
    st = Stepper(cfg, state, p)
    if g is not None:
        st.forcing._basis = None
        st.forcing._g = g
        if p is None:
            st.p = momentum_pressure(state, g, cfg.nu, cfg.advection, cfg.boundary)
    return st.advance()


def _step_plan(T: float, dt: float) -> int:
    return int(math.ceil(T / dt - 1e-9)) if T > 0 else 0


def simulate(cfg: SimConfig, u0: VelocityField, callback: Optional[Callable] = None) -> TrajectoryRecord:
    """Integrate to ``cfg.T``.

    ``callback(t, u, p)`` is called at every snapshot time (including t=0) and
    may return a vector of functional values, which is collected into
    ``functional_values``. On blow-up the partial record is returned with
    ``failed=True``.
    """
    if cfg.domain != u0.domain:
        raise ConfigurationError("initial field lives on a different grid")
    u = u0
    if u.normal_boundary_max() > 1e-14 * max(u.max_abs(), 1e-300) or scaled_divergence(u) > 1e-8:
        warnings.warn("initial field is not discretely solenoidal; projecting it", RuntimeWarning, stacklevel=2)
        log.warning("projecting non-solenoidal initial field")
        u, _ = project(u)

    st = Stepper(cfg, u)
    rec = TrajectoryRecord(config=cfg)
    fvals = []

    def snap():
        rec.times.append(st.t)
        if cfg.keep_snapshots:
            rec.snapshots.append((st.u.copy(), st.p.copy()))
        if callback is not None:
            out = callback(st.t, st.u, st.p)
            if out is not None:
                fvals.append(np.asarray(out, dtype=float))

    rec.energy.append(energy(st.u))
    rec.energy_times.append(0.0)
    snap()
    n = 0
    try:
        while st.t < cfg.T * (1 - 1e-12):
            remaining = cfg.T - st.t
            dt = None
            if remaining < st.dt * (1 + 1e-9):
                dt = remaining
            st.advance(dt)
            n += 1
            rec.energy.append(energy(st.u))
            rec.energy_times.append(st.t)
            if n % cfg.snapshot_every == 0 or st.t >= cfg.T * (1 - 1e-12):
                if not rec.times or st.t > rec.times[-1]:
                    snap()
    except InstabilityError as exc:
        rec.failed = True
        rec.message = str(exc)
        log.error("simulation failed: %s", exc)
    rec.events = list(st.events)
    if fvals:
        rec.functional_values = np.vstack(fvals)
    return rec


# ---------------------------------------------------------------------------
# Steady state


def steady_residual(G: VelocityField, q: ScalarField, g: VelocityField, nu: float,
                    advection: bool = True, boundary: str = "noslip") -> float:
    """``|| N(G) + grad q - nu L G - g ||_L2`` on interior faces."""
    r = gradient(q) - vector_laplacian(G, boundary) * nu - g
    if advection:
        r = r + advect(G)
    return norm(r.with_zero_normal(), "L2")


def steady_state(cfg: SimConfig, u0: Optional[VelocityField] = None, tol: float = 1e-10,
                 residual_tol: float = 1e-8, max_steps: int = 200000) -> Tuple[VelocityField, ScalarField]:
    """Stationary solution by pseudo-time marching.

    Marches with ``cfg.dt`` until ``||u_{n+1} - u_n||_L2 / dt <= tol`` and the
    stationary residual of ``(G, q)`` is below ``residual_tol``, where ``q`` is
    the pressure consistent with the discrete momentum balance of ``G`` (the
    limit of the stepper pressure). Raises :class:`NonConvergenceError` when
    the step budget is exhausted.
    """
    from .functionals import grashof_number

    if not cfg.forcing.steady:
        raise ConfigurationError("steady_state needs time-independent forcing")
    d = cfg.domain
    g = make_forcing(cfg.forcing, d)
    gn = grashof_number(g, cfg.nu, d)
    if gn > cfg.grashof_max:
        raise ConfigurationError(f"Grashof number {gn:.3g} exceeds the laminar limit {cfg.grashof_max:g}")
    if g.max_abs() == 0.0 and (u0 is None or u0.max_abs() == 0.0):
        return VelocityField.zeros(d), ScalarField(np.zeros((d.nx, d.ny)), d, True)
    st = Stepper(cfg, u0 if u0 is not None else VelocityField.zeros(d))
    inc = res = float("inf")
    for k in range(max_steps):
        prev = st.u
        st.advance()
        inc = norm(st.u - prev, "L2") / st._dt_prev
        if inc <= tol and k % 10 == 0:
            q = momentum_pressure(st.u, g, cfg.nu, cfg.advection, cfg.boundary)
            res = steady_residual(st.u, q, g, cfg.nu, cfg.advection, cfg.boundary)
            if res <= residual_tol:
                log.info("steady state after %d steps: increment %.2e, residual %.2e", k + 1, inc, res)
                return st.u, q
    raise NonConvergenceError(
        f"no steady state within {max_steps} steps (increment {inc:.3e}, residual {res:.3e})"
    )


def random_initial_field(domain: DiscreteDomain, seed: int, amplitude: float = 0.1, modes: int = 3) -> VelocityField:
    """Smooth random no-slip solenoidal field with ``max|u| = amplitude``.

    The node stream function is a random combination of
    ``(sin(k pi x) sin(l pi y))^2`` for ``1 <= k, l <= modes``; squaring makes
    the tangential velocity vanish on the walls as well.
    """
    rng = np.random.default_rng(seed)
    x, y = domain.nodes()
    psi = np.zeros_like(x)
    for k in range(1, modes + 1):
        for l in range(1, modes + 1):
            base = np.sin(k * np.pi * x / domain.Lx) * np.sin(l * np.pi * y / domain.Ly)
            psi += rng.standard_normal() * base**2 / (k * k + l * l)
    psi[0, :] = psi[-1, :] = 0.0
    psi[:, 0] = psi[:, -1] = 0.0
    w = velocity_from_streamfunction(psi, domain)
    return w * (amplitude / w.max_abs()) if amplitude != 0 else w * 0.0
