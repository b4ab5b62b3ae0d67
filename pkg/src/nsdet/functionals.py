"""Functional banks on pressure, the boundary vorticity functional and the
Grashof / attractor-dimension arithmetic that sizes a bank."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from .errors import ConfigurationError, GridMismatchError, RankDeficiencyError
from .fields import ScalarField, VelocityField, gradient, inner, norm, vorticity
from .geometry import DiscreteDomain

LIEB_THIRRING = 1.456 / (2.0 * math.pi)
STRICT_EPS = 1e-9
DEFAULT_CUTOFF = 8
MAX_ATTEMPTS = 3


@dataclass
class FunctionalBank:
    """Orthonormal coefficient fields ``e_k``; ``F_k(p) = <p, e_k>``."""

    N: int
    coefficient_fields: List[ScalarField]
    inner_product: str
    seed: int
    domain: DiscreteDomain
    cutoff: int = DEFAULT_CUTOFF

    def matrix(self) -> np.ndarray:
        return np.stack([e.values for e in self.coefficient_fields])

    def gram(self) -> np.ndarray:
        ip = _inner_fn(self.inner_product)
        return np.array([[ip(a, b) for b in self.coefficient_fields] for a in self.coefficient_fields])

    def subset(self, n: int) -> "FunctionalBank":
        return FunctionalBank(n, self.coefficient_fields[:n], self.inner_product, self.seed, self.domain, self.cutoff)


def _inner_fn(kind: str):
    kind = kind.upper()
    if kind == "L2":
        return inner
    if kind == "H1":
        return lambda a, b: inner(gradient(a), gradient(b))
    raise ConfigurationError(f"inner product must be L2 or H1, got {kind!r}")


def _modes(cutoff: int):
    return [(k, l) for k in range(cutoff + 1) for l in range(cutoff + 1) if 0 < k * k + l * l <= cutoff * cutoff]


def _random_field(rng, domain: DiscreteDomain, modes) -> np.ndarray:
    x, y = domain.cell_centers()
    coef = rng.standard_normal(len(modes))
    out = np.zeros_like(x)
    for a, (k, l) in zip(coef, modes):
        out += a * np.cos(k * np.pi * x / domain.Lx) * np.cos(l * np.pi * y / domain.Ly)
    return out


def build_bank(seed: int, N: int, domain: DiscreteDomain, inner_product: str = "L2",
               cutoff: int = DEFAULT_CUTOFF) -> FunctionalBank:
    """Random smooth fields orthonormalised by modified Gram-Schmidt.

    Each field is a random combination of the non-constant cosine modes with
    ``k^2 + l^2 <= cutoff^2`` (band-limited white noise compatible with the
    Neumann setting). Gram-Schmidt is run twice per vector; a near-zero pivot
    triggers a redraw, and after ``MAX_ATTEMPTS`` failed draws a
    :class:`RankDeficiencyError` is raised.
    """
    if N < 1:
        raise ConfigurationError("bank size must be at least 1")
    ip = _inner_fn(inner_product)
    rng = np.random.default_rng(seed)
    modes = _modes(cutoff)
    basis: List[ScalarField] = []
    failures = 0
    while len(basis) < N:
        f = ScalarField(_random_field(rng, domain, modes), domain)
        n0 = math.sqrt(ip(f, f))
        for _ in range(2):
            for e in basis:
                f = f - e * ip(f, e)
        n1 = math.sqrt(max(ip(f, f), 0.0))
        if n1 <= 1e-8 * n0:
            failures += 1
            if failures >= MAX_ATTEMPTS:
                raise RankDeficiencyError(
                    f"Gram-Schmidt pivot vanished {failures} times at vector {len(basis) + 1} of {N}"
                )
            continue
        basis.append(f * (1.0 / n1))
    return FunctionalBank(N, basis, inner_product.upper(), seed, domain, cutoff)


def eval_bank(bank: FunctionalBank, p: ScalarField) -> np.ndarray:
    """Values ``F_k(p)`` under the bank's inner product."""
    if p.domain != bank.domain or p.location != "cell":
        raise GridMismatchError("pressure field is not on the bank's grid")
    if bank.inner_product == "L2":
        return bank.matrix().reshape(bank.N, -1) @ p.values.ravel() * bank.domain.cell_area
    ip = _inner_fn(bank.inner_product)
    return np.array([ip(p, e) for e in bank.coefficient_fields])


@dataclass
class VorticityFunctionalConfig:
    """Boundary point ``x0`` and reference field ``G`` of ``Omega(u)``.

    ``x0`` defaults to the midpoint of the bottom wall. The evaluation node is
    the boundary node nearest to ``x0``.
    """

    domain: DiscreteDomain
    G: Optional[VelocityField] = None
    x0: Optional[Tuple[float, float]] = None
    node: Tuple[int, int] = field(init=False)
    curlG_at_x0: float = field(init=False)

    def __post_init__(self):
        d = self.domain
        if self.x0 is None:
            self.x0 = (0.5 * d.Lx, 0.0)
        x, y = map(float, self.x0)
        dist = min(abs(x), abs(x - d.Lx), abs(y), abs(y - d.Ly))
        inside = -0.5 * d.hx <= x <= d.Lx + 0.5 * d.hx and -0.5 * d.hy <= y <= d.Ly + 0.5 * d.hy
        if dist > 0.5 * min(d.hx, d.hy) or not inside:
            raise ConfigurationError(f"x0={self.x0} is not on the boundary")
        i = int(round(x / d.hx))
        j = int(round(y / d.hy))
        i, j = min(max(i, 0), d.nx), min(max(j, 0), d.ny)
        # snap to the wall nearest to x0
        k = int(np.argmin([abs(x), abs(x - d.Lx), abs(y), abs(y - d.Ly)]))
        if k == 0:
            i = 0
        elif k == 1:
            i = d.nx
        elif k == 2:
            j = 0
        else:
            j = d.ny
        self.node = (i, j)
        if self.G is None:
            self.G = VelocityField.zeros(d)
        self.curlG_at_x0 = float(vorticity(self.G).values[self.node])


def vorticity_functional(u: VelocityField, cfg: VorticityFunctionalConfig) -> float:
    """``Omega(u) = curl u(x0) - curl G(x0)`` with one-sided wall vorticity."""
    if u.domain != cfg.domain:
        raise GridMismatchError("velocity is not on the functional's grid")
    return float(vorticity(u).values[cfg.node]) - cfg.curlG_at_x0


def grashof_number(g: VelocityField, nu: float, domain: DiscreteDomain) -> float:
    """``||g||_L2 * area / nu^2``."""
    if nu <= 0:
        raise ConfigurationError("nu must be positive")
    return norm(g, "L2") * domain.area / nu**2


def dimension_bound(Gn: float, C_LT: float = LIEB_THIRRING) -> float:
    """Upper bound ``sqrt(C_LT) / (2 sqrt(2) pi) * Gn`` on the attractor dimension."""
    if Gn < 0:
        raise ConfigurationError("Grashof number must be non-negative")
    if C_LT <= 0:
        raise ConfigurationError("C_LT must be positive")
    return math.sqrt(C_LT) / (2.0 * math.sqrt(2.0) * math.pi) * Gn


class FunctionalCount(NamedTuple):
    """Bank size ``n_pressure`` plus the boundary vorticity functional."""

    n_pressure: int
    with_vorticity: bool = True

    @property
    def total(self) -> int:
        return self.n_pressure + int(self.with_vorticity)


def required_functional_count(dbound: float) -> FunctionalCount:
    """``2 d`` pressure functionals with ``d`` the least integer strictly above ``dbound``."""
    if dbound < 0:
        raise ConfigurationError("dimension bound must be non-negative")
    return FunctionalCount(2 * int(math.ceil(dbound + STRICT_EPS)), True)
