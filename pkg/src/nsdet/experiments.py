"""Experiment protocols built on the solver, the pressure map and the banks.

* paired-trajectory separation diagnostics,
* empirical injectivity of functional banks on sampled trajectories,
* an observer nudged by pressure-functional mismatches,
* the Monge-Ampere residual linking pressure and stream function,
* box-counting dimension of sampled sets in functional coordinates.

Pressure for functional evaluation always comes from :func:`recover_pressure`,
never from the stepper.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .errors import (
    ConfigurationError,
    InstabilityError,
    InsufficientSamplesError,
    SolverDivergenceError,
)
from .fields import ScalarField, VelocityField, energy, norm, vorticity
from .functionals import FunctionalBank, VorticityFunctionalConfig, eval_bank, vorticity_functional
from .poisson import PoissonProblem, solve_dirichlet
from .pressure import recover_pressure
from .solver import SimConfig, Stepper, TrajectoryRecord, forcing_from_potential, make_forcing

log = logging.getLogger(__name__)

RESOLUTION_FLOOR = 1e-10


# ---------------------------------------------------------------------------
# Rate fitting


class RateFit(dict):
    """Exponential fit ``series ~ exp(intercept - rate * t)``.

    Keys: ``rate``, ``intercept``, ``r2``, ``n``, ``fit_ok``. A dict so that
    reports serialise to JSON directly.
    """

    @property
    def rate(self) -> float:
        return self["rate"]

    @property
    def r2(self) -> float:
        return self["r2"]

    @property
    def fit_ok(self) -> bool:
        return self["fit_ok"]


def fit_decay_rate(times, series, floor: Optional[float] = None, keep: float = 0.6,
                   min_r2: float = 0.95) -> RateFit:
    """Least-squares fit of ``log(series)`` over the middle ``keep`` fraction.

    Points at or below ``floor`` (default ``1e-12 * max(series)``) are dropped
    first, then the outer ``(1 - keep)/2`` of the remaining points on each side.
    Fits with ``R^2 < min_r2`` or fewer than three points are flagged unfit.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(series, dtype=float)
    if t.shape != y.shape:
        raise ValueError("times and series differ in length")
    top = float(np.max(y)) if y.size else 0.0
    if floor is None:
        floor = 1e-12 * top
    ok = np.isfinite(y) & (y > max(floor, 0.0))
    t, y = t[ok], y[ok]
    n = t.size
    cut = int(math.floor(n * (1.0 - keep) / 2.0))
    t, y = t[cut : n - cut], y[cut : n - cut]
    if t.size < 3 or np.ptp(t) == 0:
        return RateFit(rate=float("nan"), intercept=float("nan"), r2=float("nan"), n=int(t.size), fit_ok=False)
    res = stats.linregress(t, np.log(y))
    r2 = float(res.rvalue**2)
    return RateFit(rate=float(-res.slope), intercept=float(res.intercept), r2=r2, n=int(t.size),
                   fit_ok=bool(r2 >= min_r2))


# ---------------------------------------------------------------------------
# Lock-step integration


def _forcing_at(cfg: SimConfig, t: float) -> VelocityField:
    return make_forcing(cfg.forcing, cfg.domain, t)


def _lockstep(steppers: Sequence[Stepper], T: float, extras=None):
    """Advance all steppers with one shared step size; yields after each step."""
    n = 0
    while steppers[0].t < T * (1 - 1e-12):
        dt = steppers[0].dt
        remaining = T - steppers[0].t
        if remaining < dt * (1 + 1e-9):
            dt = remaining
        wanted = dt
        for s in steppers:
            dt = s._cfl_check(dt)
        if dt < wanted:
            for s in steppers:
                s.dt = dt
        add = extras(steppers) if extras is not None else [None] * len(steppers)
        for s, e in zip(steppers, add):
            s.advance(dt, extra=e)
        n += 1
        yield n


def _snap_due(n: int, cfg: SimConfig, t: float) -> bool:
    return n % cfg.snapshot_every == 0 or t >= cfg.T * (1 - 1e-12)


# ---------------------------------------------------------------------------
# Separation


@dataclass
class SeparationReport:
    times: List[float] = field(default_factory=list)
    functional_diff: List[float] = field(default_factory=list)
    vorticity_diff: List[float] = field(default_factory=list)
    state_diff: List[float] = field(default_factory=list)
    fitted_rates: Dict[str, RateFit] = field(default_factory=dict)
    rate_ratio: float = float("nan")
    degenerate: bool = False
    message: str = ""

    def finalize(self):
        if len(self.times) >= 3 and not self.degenerate:
            self.fitted_rates = {
                "state": fit_decay_rate(self.times, self.state_diff),
                "functional": fit_decay_rate(self.times, self.functional_diff),
                "vorticity": fit_decay_rate(self.times, self.vorticity_diff),
            }
            s, f = self.fitted_rates["state"].rate, self.fitted_rates["functional"].rate
            if s and math.isfinite(s) and math.isfinite(f):
                self.rate_ratio = f / s
        return self


def _observations(u, cfg, t, bank, vcfg):
    p = recover_pressure(u, _forcing_at(cfg, t), cfg.nu)
    om = vorticity_functional(u, vcfg) if vcfg is not None else 0.0
    return eval_bank(bank, p), om


def separation_experiment(cfg: SimConfig, u0_a: VelocityField, u0_b: VelocityField, bank: FunctionalBank,
                          vcfg: Optional[VorticityFunctionalConfig] = None) -> SeparationReport:
    """Run two trajectories in lock step and compare functionals and states.

    At every snapshot the report records ``max_k |F_k(P(u_a)) - F_k(P(u_b))|``,
    ``|Omega(u_a) - Omega(u_b)|`` and ``||u_a - u_b||_L2``.
    """
    if u0_a.domain != cfg.domain or u0_b.domain != cfg.domain or bank.domain != cfg.domain:
        raise ConfigurationError("initial fields, bank and config must share one grid")
    a, b = Stepper(cfg, u0_a), Stepper(cfg, u0_b)
    rep = SeparationReport()

    def record():
        fa, oa = _observations(a.u, cfg, a.t, bank, vcfg)
        fb, ob = _observations(b.u, cfg, b.t, bank, vcfg)
        rep.times.append(a.t)
        rep.functional_diff.append(float(np.max(np.abs(fa - fb))))
        rep.vorticity_diff.append(abs(oa - ob))
        rep.state_diff.append(norm(a.u - b.u, "L2"))

    record()
    try:
        for n in _lockstep([a, b], cfg.T):
            if _snap_due(n, cfg, a.t):
                record()
    except InstabilityError as exc:
        rep.degenerate = True
        rep.message = str(exc)
        log.error("separation run degenerate: %s", exc)
    return rep.finalize()


# ---------------------------------------------------------------------------
# Injectivity


@dataclass
class InjectivityReport:
    sample_count: int
    pair_count: int
    min_pairwise_ratio: float
    collision_threshold: float
    collisions: List[Tuple[int, int, float]]
    degenerate: bool = False
    refined: bool = False
    min_segment_ratio: float = float("inf")
    segment_collisions: List[Tuple[int, int, float]] = field(default_factory=list)

    @property
    def n_collisions(self) -> int:
        return len(self.collisions) + len(self.segment_collisions)


def _segment_params(A, B, C):
    """Minimise ``|A + s B - t C|`` over ``(s, t)`` in the unit square."""
    bb, cc, bc = B @ B, C @ C, B @ C
    ab, ac = A @ B, A @ C

    def dist(s, t):
        r = A + s * B - t * C
        return r @ r

    cands = []
    det = bb * cc - bc * bc
    if det > 1e-14 * max(bb * cc, 1e-300):
        s = (bc * ac - cc * ab) / det
        t = (bb * ac - bc * ab) / det
        if 0 <= s <= 1 and 0 <= t <= 1:
            return s, t
    for s in (0.0, 1.0):
        t = float(np.clip((ac + s * bc) / cc, 0, 1)) if cc > 0 else 0.0
        cands.append((dist(s, t), s, t))
    for t in (0.0, 1.0):
        s = float(np.clip((t * bc - ab) / bb, 0, 1)) if bb > 0 else 0.0
        cands.append((dist(s, t), s, t))
    _, s, t = min(cands)
    return s, t


def trajectory_observations(traj: TrajectoryRecord, bank: FunctionalBank, vcfg=None,
                            cfg: Optional[SimConfig] = None) -> np.ndarray:
    """Functional values of every snapshot (vorticity functional appended if given)."""
    cfg = cfg or traj.config
    if cfg is None:
        raise ConfigurationError("trajectory carries no configuration; pass cfg")
    rows = []
    for t, (u, _) in zip(traj.times, traj.snapshots):
        f, om = _observations(u, cfg, t, bank, vcfg)
        rows.append(np.append(f, om) if vcfg is not None else f)
    return np.array(rows)


def mane_injectivity_test(traj: TrajectoryRecord, bank: FunctionalBank, subsample: Optional[int] = None,
                          threshold: float = 1e-6, vcfg: Optional[VorticityFunctionalConfig] = None,
                          refine: bool = True, cfg: Optional[SimConfig] = None,
                          transient: float = 0.2) -> InjectivityReport:
    """Pairwise ratios ``|F(P(u_i)) - F(P(u_j))| / ||u_i - u_j||`` on sampled states.

    The first ``transient`` fraction of snapshots is dropped and ``subsample``
    evenly spaced snapshots of the rest are used. Pairs closer than the
    resolution floor are excluded. With ``refine`` the sampled trajectory is
    also treated as a polygon: for every pair of non-adjacent segments the
    point pair minimising the functional distance is located and its ratio
    reported, which exposes crossings of the functional image that fall
    between samples.
    """
    snaps = traj.snapshots
    start = int(math.ceil(transient * len(snaps)))
    idx = np.arange(start, len(snaps))
    if subsample is not None and subsample < idx.size:
        idx = idx[np.round(np.linspace(0, idx.size - 1, subsample)).astype(int)]
    if idx.size < 10:
        raise InsufficientSamplesError(f"{idx.size} post-transient samples, need at least 10")
    sub = TrajectoryRecord(times=[traj.times[i] for i in idx], snapshots=[snaps[i] for i in idx],
                           config=traj.config)
    F = trajectory_observations(sub, bank, vcfg, cfg)
    d = snaps[0][0].domain
    w = math.sqrt(d.cell_area)
    U = np.array([np.concatenate([u.u.ravel(), u.v.ravel()]) for u, _ in sub.snapshots]) * w
    m = U.shape[0]

    ratios = []
    collisions = []
    for i in range(m - 1):
        du = np.linalg.norm(U[i + 1 :] - U[i], axis=1)
        df = np.linalg.norm(F[i + 1 :] - F[i], axis=1)
        good = du > RESOLUTION_FLOOR
        for k in np.nonzero(good)[0]:
            r = df[k] / du[k]
            ratios.append(r)
            if r < threshold:
                collisions.append((int(idx[i]), int(idx[i + 1 + k]), float(r)))
    rep = InjectivityReport(
        sample_count=m,
        pair_count=len(ratios),
        min_pairwise_ratio=float(min(ratios)) if ratios else float("inf"),
        collision_threshold=threshold,
        collisions=collisions,
        degenerate=not ratios,
    )
    if refine and ratios:
        rep.refined = True
        best = float("inf")
        for i in range(m - 1):
            B, Bu = F[i + 1] - F[i], U[i + 1] - U[i]
            for j in range(i + 2, m - 1):
                A, C = F[i] - F[j], F[j + 1] - F[j]
                s, t = _segment_params(A, B, C)
                du = np.linalg.norm(U[i] - U[j] + s * Bu - t * (U[j + 1] - U[j]))
                if du <= RESOLUTION_FLOOR:
                    continue
                r = float(np.linalg.norm(A + s * B - t * C) / du)
                best = min(best, r)
                if r < threshold:
                    rep.segment_collisions.append((int(idx[i]), int(idx[j]), r))
        rep.min_segment_ratio = best
    return rep


# ---------------------------------------------------------------------------
# Nudging


@dataclass
class NudgingReport:
    times: List[float] = field(default_factory=list)
    error: List[float] = field(default_factory=list)
    relative_error: List[float] = field(default_factory=list)
    truth_norm: List[float] = field(default_factory=list)
    mu: float = 0.0
    N: int = 0


def nudging_directions(bank: FunctionalBank) -> List[VelocityField]:
    """Unit solenoidal fields ``curl(e_k)`` built from node averages of ``e_k``.

    The node potential is zero on the walls, so every direction has zero
    normal flux and is exactly divergence free on the MAC grid.
    """
    d = bank.domain
    out = []
    for e in bank.coefficient_fields:
        phi = np.zeros((d.nx + 1, d.ny + 1))
        c = e.values
        phi[1:-1, 1:-1] = 0.25 * (c[1:, 1:] + c[:-1, 1:] + c[1:, :-1] + c[:-1, :-1])
        q = forcing_from_potential(phi, d)
        out.append(q * (1.0 / norm(q, "L2")))
    return out


def mode_directions(domain, count: int) -> List[VelocityField]:
    """Unit solenoidal fields from the ``count`` lowest potentials ``sin(k pi x) sin(l pi y)``."""
    modes = sorted(((k, l) for k in range(1, count + 2) for l in range(1, count + 2)),
                   key=lambda kl: (kl[0] ** 2 + kl[1] ** 2, kl))[:count]
    x, y = domain.nodes()
    out = []
    for k, l in modes:
        phi = np.sin(k * np.pi * x / domain.Lx) * np.sin(l * np.pi * y / domain.Ly)
        phi[0, :] = phi[-1, :] = 0.0
        phi[:, 0] = phi[:, -1] = 0.0
        q = forcing_from_potential(phi, domain)
        out.append(q * (1.0 / norm(q, "L2")))
    return out


def _observation_jacobian(u, cfg, t, bank, dirs):
    cols = []
    g = _forcing_at(cfg, t)
    for q in dirs:
        fp = eval_bank(bank, recover_pressure(u + q, g, cfg.nu))
        fm = eval_bank(bank, recover_pressure(u - q, g, cfg.nu))
        cols.append(0.5 * (fp - fm))
    return np.column_stack(cols)


def nudging_reconstruction(cfg: SimConfig, truth0: VelocityField, bank: FunctionalBank, mu: float,
                           observer0: Optional[VelocityField] = None,
                           energy_limit: float = 1e3, directions: str = "modes",
                           n_directions: Optional[int] = None) -> NudgingReport:
    """Observer driven toward the truth by pressure-functional mismatches.

    The observer feels the extra force ``-mu * sum_l c_l q_l`` where ``q_l``
    are the solenoidal directions of :func:`nudging_directions` and ``c``
    is the least-squares solution of ``J c = F(P(u_obs)) - F(P(u_truth))``
    with ``J`` the derivative of the observations along the ``q_l`` (central
    differences, exact because ``P`` is quadratic). ``mu = 0`` reduces to two
    independent runs.
    """
    if mu < 0:
        raise ConfigurationError("nudging gain must be non-negative")
    d = cfg.domain
    truth = Stepper(cfg, truth0)
    obs = Stepper(cfg, observer0 if observer0 is not None else VelocityField.zeros(d))
    if directions == "bank":
        dirs = nudging_directions(bank) if mu > 0 else []
    elif directions == "modes":
        dirs = mode_directions(d, n_directions or bank.N) if mu > 0 else []
    else:
        raise ConfigurationError("directions must be 'modes' or 'bank'")
    rep = NudgingReport(mu=mu, N=bank.N)

    def record():
        err = norm(truth.u - obs.u, "L2")
        tn = norm(truth.u, "L2")
        rep.times.append(truth.t)
        rep.error.append(err)
        rep.truth_norm.append(tn)
        rep.relative_error.append(err / tn if tn > 0 else (0.0 if err == 0 else float("inf")))

    def feedback(steppers):
        if mu == 0:
            return [None, None]
        tr, ob = steppers
        g = _forcing_at(cfg, tr.t)
        delta = eval_bank(bank, recover_pressure(ob.u, g, cfg.nu)) - eval_bank(bank, recover_pressure(tr.u, g, cfg.nu))
        J = _observation_jacobian(ob.u, cfg, ob.t, bank, dirs)
        c, *_ = np.linalg.lstsq(J, delta, rcond=1e-10)
        f = VelocityField.zeros(d)
        for cl, q in zip(c, dirs):
            f = f + q * (-mu * cl)
        return [None, f]

    record()
    for n in _lockstep([truth, obs], cfg.T, extras=feedback):
        et, eo = energy(truth.u), energy(obs.u)
        if eo > energy_limit * max(et, 1e-300) and eo > 1e-24:
            raise SolverDivergenceError(f"observer energy {eo:.3e} exceeds {energy_limit:g} x truth energy {et:.3e}")
        if _snap_due(n, cfg, truth.t):
            record()
    return rep


# ---------------------------------------------------------------------------
# Monge-Ampere residual


@dataclass
class MongeAmpereReport:
    c_fit: float
    residual_c1: float
    residual_c2: float
    residual_fit: float
    laplacian_norm: float
    band: int

    @property
    def relative_fit(self) -> float:
        return self.residual_fit / self.laplacian_norm if self.laplacian_norm > 0 else 0.0


def stream_function(u: VelocityField) -> ScalarField:
    """Node stream function with ``Laplace(psi) = curl u`` and ``psi = 0`` on the walls.

    With ``u = (d_y psi, -d_x psi)`` the curl ``d_y u_1 - d_x u_2`` equals
    ``Laplace(psi)``.
    """
    om = vorticity(u)
    return solve_dirichlet(PoissonProblem(om, "dirichlet"), location="node")


def hessian_determinant(psi: ScalarField) -> np.ndarray:
    """``psi_xx psi_yy - psi_xy^2`` at cell centres (NaN on the outer cell ring)."""
    d = psi.domain
    s = psi.values
    hx, hy = d.hx, d.hy
    sxx = np.full_like(s, np.nan)
    syy = np.full_like(s, np.nan)
    sxx[1:-1, :] = (s[2:, :] - 2 * s[1:-1, :] + s[:-2, :]) / hx**2
    syy[:, 1:-1] = (s[:, 2:] - 2 * s[:, 1:-1] + s[:, :-2]) / hy**2

    def to_cells(a):
        return 0.25 * (a[1:, 1:] + a[:-1, 1:] + a[1:, :-1] + a[:-1, :-1])

    cxx, cyy = to_cells(sxx), to_cells(syy)
    cxy = (s[1:, 1:] - s[:-1, 1:] - s[1:, :-1] + s[:-1, :-1]) / (hx * hy)
    return cxx * cyy - cxy**2


def _cell_laplacian_interior(p: ScalarField) -> np.ndarray:
    d = p.domain
    a = p.values
    out = np.full_like(a, np.nan)
    out[1:-1, 1:-1] = (a[2:, 1:-1] - 2 * a[1:-1, 1:-1] + a[:-2, 1:-1]) / d.hx**2 + (
        a[1:-1, 2:] - 2 * a[1:-1, 1:-1] + a[1:-1, :-2]
    ) / d.hy**2
    return out


def monge_ampere_residual(u: VelocityField, p: ScalarField, band: int = 2) -> MongeAmpereReport:
    """Compare ``Laplace(p)`` with ``c * det(D^2 psi)`` away from the walls.

    ``band`` cells next to each wall are excluded. Returns the L2 residuals for
    ``c = 1`` and ``c = 2`` and for the least-squares constant.
    """
    if band < 1:
        raise ConfigurationError("band must be at least one cell")
    d = u.domain
    det = hessian_determinant(stream_function(u))[band:-band, band:-band]
    lap = _cell_laplacian_interior(p)[band:-band, band:-band]
    w = d.cell_area

    def l2(a):
        return float(np.sqrt(np.sum(a * a) * w))

    dd = float(np.sum(det * det))
    c = float(np.sum(lap * det) / dd) if dd > 0 else float("nan")
    return MongeAmpereReport(
        c_fit=c,
        residual_c1=l2(lap - det),
        residual_c2=l2(lap - 2 * det),
        residual_fit=l2(lap - c * det) if dd > 0 else l2(lap),
        laplacian_norm=l2(lap),
        band=band,
    )


# ---------------------------------------------------------------------------
# Box counting


@dataclass
class BoxCountReport:
    scales: List[float]
    counts: List[int]
    slope: float
    intercept: float
    stderr: float
    ci95: Tuple[float, float]
    method: str
    sample_count: int
    note: str = "estimate of the dimension of the sampled set, not of the attractor"


def covering_counts(X: np.ndarray, scales: Sequence[float], method: str = "grid",
                    origin: Optional[np.ndarray] = None) -> List[int]:
    """Number of boxes (``grid``) or greedy balls (``greedy``) of size eps.

    The grid is anchored at ``origin`` (default the coordinate origin, fixed
    independently of the data) so that removing samples can never increase a
    count.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if origin is None:
        origin = np.zeros(X.shape[1])
    counts = []
    for eps in scales:
        if eps <= 0:
            raise ConfigurationError("scales must be positive")
        if method == "grid":
            cells = np.floor((X - origin) / eps).astype(np.int64)
            counts.append(int(np.unique(cells, axis=0).shape[0]))
        elif method == "greedy":
            centres: List[np.ndarray] = []
            for x in X:
                if not centres or np.min(np.linalg.norm(np.array(centres) - x, axis=1)) > eps:
                    centres.append(x)
            counts.append(len(centres))
        else:
            raise ConfigurationError(f"unknown covering method {method!r}")
    return counts


def box_counting_dimension(samples, scales: Sequence[float], bank: Optional[FunctionalBank] = None,
                           method: str = "grid", min_samples: int = 100) -> BoxCountReport:
    """Slope of ``log N(eps)`` against ``log(1/eps)``.

    ``samples`` is an array of coordinates (one row per sample) or a list of
    pressure fields projected on ``bank`` first.
    """
    if bank is not None:
        X = np.array([eval_bank(bank, p) for p in samples])
    else:
        X = np.asarray(samples, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
    if X.shape[0] < min_samples:
        raise InsufficientSamplesError(f"{X.shape[0]} samples, need at least {min_samples}")
    scales = sorted(float(s) for s in scales)
    if len(scales) < 2:
        raise ConfigurationError("need at least two scales")
    counts = covering_counts(X, scales, method)
    lx = np.log(1.0 / np.array(scales))
    ly = np.log(np.array(counts, dtype=float))
    if np.ptp(ly) == 0:
        slope, icpt, se = 0.0, float(ly[0]), 0.0
    else:
        res = stats.linregress(lx, ly)
        slope, icpt, se = float(res.slope), float(res.intercept), float(res.stderr)
    dof = max(len(scales) - 2, 1)
    half = float(stats.t.ppf(0.975, dof)) * se
    return BoxCountReport(scales, counts, slope, icpt, se, (slope - half, slope + half), method, int(X.shape[0]))
