"""Discrete Kirchhoff energy, its L² gradient, and closed-form whole-plane values.

All volume terms use nodal quadrature with weight hx·hy.  The Dirichlet energy
is the sum of squared forward differences over every grid edge, so that the
masked 5-point Laplacian is exactly its gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GridMismatch, ZeroField
from .geometry import DomainGrid, PotentialSpec


@dataclass(frozen=True)
class Field:
    grid: DomainGrid
    values: np.ndarray  # shape (ny, nx), zero outside the interior mask

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.ny, self.grid.nx):
            raise GridMismatch(f"values shape {v.shape} != grid {(self.grid.ny, self.grid.nx)}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", np.where(self.grid.interior_mask, v, 0.0))

    def mass(self) -> float:
        return l2_mass(self.values, self.grid)


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    kirchhoff: float
    potential: float
    quartic: float
    total: float
    mu: float
    b: float
    beta: float
    mass: float = 1.0

    @property
    def quartic_integral(self) -> float:
        """∫u⁴ (``quartic`` holds (β/2)∫u⁴)."""
        return 2.0 * self.quartic / self.beta if self.beta else float("nan")


def l2_mass(u: np.ndarray, grid: DomainGrid) -> float:
    return grid.cell_area * float(np.sum(u * u))


def dirichlet(u: np.ndarray, grid: DomainGrid) -> float:
    dx = np.diff(u, axis=1)
    dy = np.diff(u, axis=0)
    return grid.cell_area * (float(np.sum(dx * dx)) / grid.hx ** 2 + float(np.sum(dy * dy)) / grid.hy ** 2)


def laplacian(u: np.ndarray, grid: DomainGrid) -> np.ndarray:
    """Masked 5-point Laplacian (zero Dirichlet data outside the mask)."""
    lap = np.zeros_like(u)
    c = u[1:-1, 1:-1]
    lap[1:-1, 1:-1] = (u[1:-1, 2:] - 2.0 * c + u[1:-1, :-2]) / grid.hx ** 2 + (
        u[2:, 1:-1] - 2.0 * c + u[:-2, 1:-1]
    ) / grid.hy ** 2
    lap[~grid.interior_mask] = 0.0
    return lap


def _check(u: Field, spec: PotentialSpec | None):
    if spec is not None and not u.grid.same_as(spec.grid):
        raise GridMismatch("field and potential live on different grids")


def _parts(u: np.ndarray, grid: DomainGrid, b: float, beta: float, V: np.ndarray | None):
    w = grid.cell_area
    kin = dirichlet(u, grid)
    u2 = u * u
    pot = w * float(np.sum(V * u2)) if V is not None else 0.0
    q4 = w * float(np.sum(u2 * u2))
    return kin, pot, q4, w * float(np.sum(u2))


def evaluate(u: Field, b: float, beta: float, spec: PotentialSpec | None = None) -> EnergyBreakdown:
    """E_b(u) = ∫|∇u|² + (b/2)(∫|∇u|²)² + ∫Vu² - (β/2)∫u⁴ with its parts.

    ``mu`` is the Lagrange multiplier ∫|∇u|² + ∫Vu² + b(∫|∇u|²)² - β∫u⁴ divided
    by ∫u² (the Rayleigh-type quotient of the Euler-Lagrange operator).
    """
    if b < 0 or beta < 0:
        raise ValueError("b and beta must be nonnegative")
    _check(u, spec)
    V = spec.values if spec is not None else None
    kin, pot, q4, mass = _parts(u.values, u.grid, b, beta, V)
    kirch = 0.5 * b * kin * kin
    quart = 0.5 * beta * q4
    total = kin + kirch + pot - quart
    mu = (kin + pot + b * kin * kin - beta * q4) / mass if mass > 0 else 0.0
    return EnergyBreakdown(kin, kirch, pot, quart, total, mu, b, beta, mass)


def gradient(u: Field, b: float, beta: float, spec: PotentialSpec | None = None) -> Field:
    """Unconstrained L² gradient -2(1 + b∫|∇u|²)Δ_h u + 2Vu - 2βu³."""
    _check(u, spec)
    v = u.values
    kin = dirichlet(v, u.grid)
    g = -2.0 * (1.0 + b * kin) * laplacian(v, u.grid) - 2.0 * beta * v ** 3
    if spec is not None:
        g += 2.0 * spec.values * v
    return Field(u.grid, g)


def inner(f: Field, g: Field) -> float:
    if not f.grid.same_as(g.grid):
        raise GridMismatch("fields live on different grids")
    return f.grid.cell_area * float(np.sum(f.values * g.values))


def bar_radius(b: float, beta: float, beta_star: float) -> float:
    """r_b = (β - β*)/(bβ*), the squared inverse width of the whole-plane minimizer."""
    if b <= 0:
        raise ValueError("b must be positive")
    if beta <= beta_star:
        raise DomainError("the auxiliary whole-plane problem needs beta > beta_star")
    return (beta - beta_star) / (b * beta_star)


def bar_energy(b: float, beta: float, beta_star: float) -> float:
    """ē(b) = -(1/(2b))·((β - β*)/β*)²."""
    if b <= 0:
        raise ValueError("b must be positive")
    if beta <= beta_star:
        raise DomainError("the auxiliary whole-plane problem needs beta > beta_star")
    return -((beta - beta_star) / beta_star) ** 2 / (2.0 * b)


def bar_eps(b: float, beta: float, beta_star: float) -> float:
    """ε_b = (β*b/(β - β*))^{1/2} = r_b^{-1/2}."""
    return bar_radius(b, beta, beta_star) ** -0.5


def gn_ratio(u: Field) -> float:
    """∫u⁴ / (∫|∇u|² ∫u²); bounded by 2/β* in the continuum."""
    v = u.values
    mass = l2_mass(v, u.grid)
    if mass <= 0:
        raise ZeroField("gn_ratio needs a nonzero field")
    kin = dirichlet(v, u.grid)
    q4 = u.grid.cell_area * float(np.sum(v ** 4))
    return q4 / (kin * mass)
