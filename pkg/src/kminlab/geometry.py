"""Masked uniform grids for Ω and multi-well trapping potentials on them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import (
    AmbiguousBoundary,
    DisconnectedDomain,
    EmptyDomain,
    WellOutsideClosure,
)


@dataclass(frozen=True)
class DomainGrid:
    """Uniform node grid; ``interior_mask[j, i]`` refers to node (ox + i·hx, oy + j·hy).

    Nodes outside the mask carry the Dirichlet value 0.
    """

    nx: int
    ny: int
    hx: float
    hy: float
    origin: tuple
    interior_mask: np.ndarray
    shape_tag: str
    shape_params: dict = field(default_factory=dict)
    assume_interior_ball: bool = True

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def n_interior(self) -> int:
        return int(self.interior_mask.sum())

    def coords(self):
        """Meshgrid (X, Y) of node coordinates, shape (ny, nx)."""
        x = self.origin[0] + self.hx * np.arange(self.nx)
        y = self.origin[1] + self.hy * np.arange(self.ny)
        return np.meshgrid(x, y)

    def axes(self):
        return (self.origin[0] + self.hx * np.arange(self.nx),
                self.origin[1] + self.hy * np.arange(self.ny))

    def same_as(self, other: "DomainGrid") -> bool:
        return (
            self is other
            or (
                self.nx == other.nx
                and self.ny == other.ny
                and math.isclose(self.hx, other.hx)
                and math.isclose(self.hy, other.hy)
                and np.allclose(self.origin, other.origin)
                and np.array_equal(self.interior_mask, other.interior_mask)
            )
        )

    def translated(self, shift) -> "DomainGrid":
        params = dict(self.shape_params)
        if "center" in params:
            params["center"] = tuple(np.add(params["center"], shift))
        if "bounds" in params:
            a, b, c, d = params["bounds"]
            params["bounds"] = (a + shift[0], b + shift[0], c + shift[1], d + shift[1])
        return DomainGrid(
            self.nx, self.ny, self.hx, self.hy,
            (self.origin[0] + shift[0], self.origin[1] + shift[1]),
            self.interior_mask, self.shape_tag, params, self.assume_interior_ball,
        )

    def boundary_distance(self, point) -> float:
        """Distance from ``point`` to ∂Ω (positive inside)."""
        x, y = point
        if self.shape_tag == "disk":
            cx, cy = self.shape_params["center"]
            return self.shape_params["radius"] - math.hypot(x - cx, y - cy)
        if self.shape_tag == "rectangle":
            a, b, c, d = self.shape_params["bounds"]
            return min(x - a, b - x, y - c, d - y)
        # mask front: midway between the last interior and the first exterior node
        front = _front_nodes(self)
        X, Y = self.coords()
        dist = np.hypot(X[front] - x, Y[front] - y).min() - 0.5 * self.hx
        inside = self.interior_mask[self.nearest_index(point)]
        return float(dist if inside else -dist)

    def outward_normal(self, point):
        """Unit outward normal of ∂Ω at (or nearest to) ``point``."""
        x, y = point
        if self.shape_tag == "disk":
            cx, cy = self.shape_params["center"]
            v = np.array([x - cx, y - cy])
            return v / np.linalg.norm(v)
        if self.shape_tag == "rectangle":
            a, b, c, d = self.shape_params["bounds"]
            gaps = [x - a, b - x, y - c, d - y]
            normals = [(-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0)]
            return np.array(normals[int(np.argmin(gaps))])
        edt = ndimage.distance_transform_edt(self.interior_mask, sampling=(self.hy, self.hx))
        gy, gx = np.gradient(edt, self.hy, self.hx)
        j, i = self.nearest_index(point)
        v = -np.array([gx[j, i], gy[j, i]])
        return v / np.linalg.norm(v)

    def nearest_index(self, point):
        i = int(round((point[0] - self.origin[0]) / self.hx))
        j = int(round((point[1] - self.origin[1]) / self.hy))
        return min(max(j, 0), self.ny - 1), min(max(i, 0), self.nx - 1)


def _front_nodes(grid: DomainGrid) -> np.ndarray:
    """Exterior nodes with at least one interior axis neighbour."""
    m = grid.interior_mask
    near = np.zeros_like(m)
    near[1:, :] |= m[:-1, :]
    near[:-1, :] |= m[1:, :]
    near[:, 1:] |= m[:, :-1]
    near[:, :-1] |= m[:, 1:]
    return near & ~m


def build_grid(shape: dict, resolution: float, assume_interior_ball: bool | None = None) -> DomainGrid:
    """Grid for a rectangle, disk, or explicit boolean mask.

    ``shape`` is one of
      {"shape": "rectangle", "bounds": (a, b, c, d)}
      {"shape": "disk", "center": (cx, cy), "radius": R}
      {"shape": "mask", "mask": bool array (ny, nx), "origin": (ox, oy)}
    """
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    h = float(resolution)
    kind = shape.get("shape")
    if kind == "rectangle":
        a, b, c, d = map(float, shape["bounds"])
        nx = int(round((b - a) / h)) + 1
        ny = int(round((d - c) / h)) + 1
        hx = (b - a) / (nx - 1)
        hy = (d - c) / (ny - 1)
        mask = np.zeros((ny, nx), dtype=bool)
        mask[1:-1, 1:-1] = True
        grid = DomainGrid(nx, ny, hx, hy, (a, c), mask, "rectangle", {"bounds": (a, b, c, d)})
    elif kind == "disk":
        cx, cy = map(float, shape["center"])
        radius = float(shape["radius"])
        n = int(round(2.0 * radius / h)) + 1
        if n < 3:
            raise EmptyDomain(f"radius {radius} is below the grid spacing {h}")
        hh = 2.0 * radius / (n - 1)
        ox, oy = cx - radius, cy - radius
        x = ox + hh * np.arange(n)
        X, Y = np.meshgrid(x, oy + hh * np.arange(n))
        mask = (X - cx) ** 2 + (Y - cy) ** 2 < radius ** 2 * (1.0 - 1e-12)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = False
        grid = DomainGrid(n, n, hh, hh, (ox, oy), mask, "disk", {"center": (cx, cy), "radius": radius})
    elif kind in ("mask", "polygon-mask"):
        mask = np.asarray(shape["mask"], dtype=bool)
        mask = np.pad(mask, 1) if (mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any()) else mask.copy()
        ox, oy = shape.get("origin", (0.0, 0.0))
        if mask.shape != np.asarray(shape["mask"]).shape:
            ox, oy = ox - h, oy - h
        ny, nx = mask.shape
        flag = True if assume_interior_ball is None else bool(assume_interior_ball)
        grid = DomainGrid(nx, ny, h, h, (float(ox), float(oy)), mask, "polygon-mask", {}, flag)
    else:
        raise ValueError(f"unknown shape {kind!r}")

    if grid.n_interior == 0:
        raise EmptyDomain("grid has no interior nodes")
    _, ncomp = ndimage.label(grid.interior_mask)
    if ncomp > 1:
        raise DisconnectedDomain(f"interior mask has {ncomp} components")
    return grid


# -- potentials ---------------------------------------------------------------

@dataclass(frozen=True)
class PotentialSpec:
    """V(x) = h(x) ∏ |x - x_i|^{p_i}; ``values`` is V on all nodes (exterior entries 0)."""

    wells: tuple
    h_kind: str
    values: np.ndarray
    grid: DomainGrid

    @property
    def centers(self):
        return [np.asarray(w[0], dtype=float) for w in self.wells]

    @property
    def exponents(self):
        return [float(w[1]) for w in self.wells]

    def h_at(self, x, y):
        return h_function(self.h_kind)(x, y)

    def kappa(self, i: int) -> float:
        """lim V(x)/|x - x_i|^{p_i} in closed form."""
        xi = self.centers[i]
        k = float(self.h_at(np.array(xi[0]), np.array(xi[1])))
        for j, (c, pj) in enumerate(zip(self.centers, self.exponents)):
            if j != i:
                k *= float(np.hypot(*(xi - c))) ** pj
        return k


def h_function(h_kind: str):
    """Bounded positive prefactor h from the catalog.

    "const:c"              h ≡ c
    "bump:eps:cx:cy:w"     h = 1 + eps·exp(-|x - c|² / w²),  |eps| < 1
    """
    parts = str(h_kind).split(":")
    if parts[0] == "const":
        c = float(parts[1]) if len(parts) > 1 else 1.0
        if c <= 0:
            raise ValueError("h must be positive")
        return lambda x, y: np.full(np.shape(x), c, dtype=float)
    if parts[0] == "bump":
        eps, cx, cy, w = map(float, parts[1:5])
        if not -1.0 < eps < 1.0 or w <= 0:
            raise ValueError("bump needs |eps| < 1 and w > 0")
        return lambda x, y: 1.0 + eps * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / w ** 2)
    raise ValueError(f"unknown h catalog entry {h_kind!r}")


def sample_potential(grid: DomainGrid, wells, h_kind: str = "const:1") -> PotentialSpec:
    """Sample V at every node; ``wells`` is a list of (center, exponent)."""
    wells = tuple((tuple(map(float, c)), float(p)) for c, p in wells)
    if not wells:
        raise ValueError("at least one well is required")
    centers = [np.array(c) for c, _ in wells]
    for k, (c, p) in enumerate(wells):
        if p <= 0:
            raise ValueError(f"well {k}: exponent must be positive")
        for c2, _ in wells[k + 1:]:
            if np.allclose(c, c2):
                raise ValueError("wells must be pairwise distinct")
    X, Y = grid.coords()
    inside = grid.interior_mask
    for k, c in enumerate(centers):
        if grid.shape_tag in ("disk", "rectangle"):
            gap = -grid.boundary_distance(c)
        else:
            gap = np.hypot(X[inside] - c[0], Y[inside] - c[1]).min() - grid.hx
        if gap > grid.hx:
            raise WellOutsideClosure(f"well {k} at {tuple(c)} lies {gap:.3g} outside the domain")

    V = h_function(h_kind)(X, Y)
    for c, (_, p) in zip(centers, wells):
        V = V * np.hypot(X - c[0], Y - c[1]) ** p
    V = np.where(inside, V, 0.0)
    return PotentialSpec(wells, str(h_kind), V, grid)


@dataclass(frozen=True)
class WellClassification:
    p: float
    Z1: tuple
    Z0: tuple
    kappas: tuple
    kappa: float
    lambdas: dict
    lam: float | None

    @property
    def regime_side(self) -> str:
        return "interior" if self.Z1 else "boundary"

    @property
    def flattest(self) -> tuple:
        return self.Z1 + self.Z0


def classify_wells(spec: PotentialSpec, grid: DomainGrid, profile) -> WellClassification:
    from .groundstate import lambda_constant

    p = max(spec.exponents)
    kappas = tuple(spec.kappa(i) for i in range(len(spec.wells)))
    Z1, Z0 = [], []
    h = max(grid.hx, grid.hy)
    for i, (c, pi) in enumerate(zip(spec.centers, spec.exponents)):
        if pi != p:
            continue
        d = grid.boundary_distance(c)
        if d > 2.0 * h:
            Z1.append(i)
        elif d <= 0.5 * h:
            Z0.append(i)
        else:
            raise AmbiguousBoundary(f"well {i} sits {d:.3g} from the boundary (h={h:.3g})")
    flattest = Z1 + Z0
    kappa = min(kappas[i] for i in flattest)
    lambdas = {i: lambda_constant(kappas[i], p, profile) for i in Z1}
    lam = min(lambdas.values()) if lambdas else None
    return WellClassification(p, tuple(Z1), tuple(Z0), kappas, kappa, lambdas, lam)
