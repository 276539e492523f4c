"""Constrained minimization of the discrete Kirchhoff energy on the unit L² sphere.

The flow is projected gradient descent: step along a descent direction tangent
to the sphere, renormalize, and backtrack until the energy decreases.  Two
direction rules are available:

  "explicit"  the L² projected gradient itself (step bounded by h²).
  "pcg"       the gradient preconditioned by 2(1 + b∫|∇u|²)(σ - Δ_h), applied
              with a fast sine transform on the bounding box, combined
              Polak-Ribière style with the previous direction.

Both share the line search, constraint handling and stopping rules.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numba
import numpy as np
from scipy import fft, ndimage

from .energy import EnergyBreakdown, Field, dirichlet, evaluate
from .errors import AmbiguousMinimum, IllPosed, MaxItersExceeded, StepUnderflow
from .geometry import DomainGrid, PotentialSpec

ILLPOSED_MARGIN = 1e-3


@dataclass(frozen=True)
class FlowConfig:
    step0: float | None = None  # None: 1 for "pcg", h²/8/(1 + b·K0) for "explicit"
    max_iters: int = 5000
    energy_tol: float = 1e-13
    grad_tol: float = 1e-8
    backtracking: float = 0.5
    init_kind: str = "gaussian"  # gaussian | eigenmode | warm
    init_center: tuple | None = None
    init_width: float | None = None
    seed: int = 0
    scheme: str = "pcg"
    stall_window: int = 50

    def __post_init__(self):
        if self.energy_tol <= 0 or self.grad_tol <= 0 or self.max_iters <= 0:
            raise ValueError("tolerances and max_iters must be positive")
        if not 0.0 < self.backtracking < 1.0:
            raise ValueError("backtracking must lie in (0, 1)")
        if self.scheme not in ("pcg", "explicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.init_kind not in ("gaussian", "eigenmode", "warm"):
            raise ValueError(f"unknown init_kind {self.init_kind!r}")


@dataclass
class MinimizeResult:
    u: Field
    breakdown: EnergyBreakdown
    iterations: int
    converged: bool
    max_point: tuple
    eps_b: float
    history: list = field(default_factory=list)
    residual: float = math.nan
    mass_drift: float = 0.0
    b: float = math.nan
    beta: float = math.nan
    stop_reason: str = ""
    error: str | None = None

    @property
    def energy(self) -> float:
        return self.breakdown.total


# -- preconditioner -----------------------------------------------------------

class _SinePreconditioner:
    """Inverse of (σ - Δ_h) on the bounding box interior, restricted to the mask."""

    def __init__(self, grid: DomainGrid):
        self.mask = grid.interior_mask
        nxi, nyi = grid.nx - 2, grid.ny - 2
        kx = np.arange(1, nxi + 1)
        ky = np.arange(1, nyi + 1)
        lx = 4.0 / grid.hx ** 2 * np.sin(np.pi * kx / (2.0 * (nxi + 1))) ** 2
        ly = 4.0 / grid.hy ** 2 * np.sin(np.pi * ky / (2.0 * (nyi + 1))) ** 2
        self.lap_eig = ly[:, None] + lx[None, :]

    def __call__(self, r: np.ndarray, sigma: float) -> np.ndarray:
        # single precision is plenty for a preconditioner and halves the cost
        out = np.zeros_like(r)
        c = fft.dstn(r[1:-1, 1:-1].astype(np.float32), type=1, norm="ortho", overwrite_x=True)
        c /= (self.lap_eig + sigma).astype(np.float32)
        out[1:-1, 1:-1] = fft.idstn(c, type=1, norm="ortho", overwrite_x=True)
        out[~self.mask] = 0.0
        return out


# -- discrete problem ---------------------------------------------------------

@numba.njit(cache=True)
def _gradient_kernel(u, V, mask, ihx2, ihy2, ckin, cq):
    """-ckin·Δ_h u + 2Vu - cq·u³ on mask nodes, zero elsewhere."""
    ny, nx = u.shape
    g = np.zeros_like(u)
    for j in range(1, ny - 1):
        for i in range(1, nx - 1):
            if mask[j, i]:
                c = u[j, i]
                lap = (u[j, i + 1] - 2.0 * c + u[j, i - 1]) * ihx2 + (u[j + 1, i] - 2.0 * c + u[j - 1, i]) * ihy2
                g[j, i] = -ckin * lap + 2.0 * V[j, i] * c - cq * c * c * c
    return g


class _Problem:
    def __init__(self, grid: DomainGrid, V: np.ndarray | None, b: float, beta: float):
        self.grid = grid
        self.mask = grid.interior_mask
        self.w = grid.cell_area
        self.V = V
        self.b = b
        self.beta = beta
        self._zero = np.zeros_like(self.mask, dtype=float)

    def dot(self, f, g) -> float:
        return self.w * float(np.sum(f * g))

    def normalize(self, u):
        return u / math.sqrt(self.dot(u, u))

    def energy(self, u):
        kin = dirichlet(u, self.grid)
        u2 = u * u
        pot = self.w * float(np.sum(self.V * u2)) if self.V is not None else 0.0
        q4 = self.w * float(np.sum(u2 * u2))
        return kin + 0.5 * self.b * kin * kin + pot - 0.5 * self.beta * q4, kin

    def gradient(self, u, kin):
        V = self.V if self.V is not None else self._zero
        return _gradient_kernel(u, V, self.mask, 1.0 / self.grid.hx ** 2, 1.0 / self.grid.hy ** 2,
                                2.0 * (1.0 + self.b * kin), 2.0 * self.beta)


# -- initial fields -----------------------------------------------------------

def gaussian_field(grid: DomainGrid, center, width: float) -> Field:
    X, Y = grid.coords()
    v = np.exp(-((X - center[0]) ** 2 + (Y - center[1]) ** 2) / (2.0 * width ** 2))
    v = np.where(grid.interior_mask, v, 0.0)
    if not v.any() or np.sum(v * v) * grid.cell_area < 1e-300:
        raise ValueError("gaussian initial field vanishes on the grid")
    return Field(grid, v / math.sqrt(grid.cell_area * np.sum(v * v)))


def eigenmode_field(grid: DomainGrid) -> Field:
    """Principal Dirichlet eigenvector of -Δ_h on the mask, unit L² norm."""
    X, Y = grid.coords()
    if grid.shape_tag == "rectangle":
        a, b, c, d = grid.shape_params["bounds"]
        v = np.sin(np.pi * (X - a) / (b - a)) * np.sin(np.pi * (Y - c) / (d - c))
        v = np.where(grid.interior_mask, v, 0.0)
        return Field(grid, v / math.sqrt(grid.cell_area * np.sum(v * v)))
    start = ndimage.distance_transform_edt(grid.interior_mask)
    cfg = FlowConfig(init_kind="warm", grad_tol=1e-11, energy_tol=1e-15, max_iters=2000)
    res = minimize(grid, None, 0.0, 0.0, cfg, init=Field(grid, start), beta_star=np.inf)
    return res.u


def resample(u: Field, grid: DomainGrid, center_from=None, center_to=None, scale: float = 1.0) -> Field:
    """Bilinear resampling of ``u`` onto ``grid``.

    With ``scale`` ≠ 1 the profile is compressed about ``center_from`` by that
    factor and moved to ``center_to``: new(x) = u(center_from + scale·(x - center_to)).
    """
    X, Y = grid.coords()
    if center_from is None:
        center_from = (0.0, 0.0)
    if center_to is None:
        center_to = center_from
    sx = center_from[0] + scale * (X - center_to[0])
    sy = center_from[1] + scale * (Y - center_to[1])
    g0 = u.grid
    ii = (sx - g0.origin[0]) / g0.hx
    jj = (sy - g0.origin[1]) / g0.hy
    v = ndimage.map_coordinates(u.values, [jj, ii], order=1, mode="constant", cval=0.0)
    v = np.where(grid.interior_mask, v, 0.0)
    norm = grid.cell_area * float(np.sum(v * v))
    if norm <= 0:
        raise ValueError("resampled field vanishes on the target grid")
    return Field(grid, v / math.sqrt(norm))


def refine_max_point(values: np.ndarray, grid: DomainGrid):
    """Sub-grid location of max u by a least-squares quadratic over the 3×3 patch."""
    j, i = np.unravel_index(int(np.argmax(values)), values.shape)
    x0 = grid.origin[0] + i * grid.hx
    y0 = grid.origin[1] + j * grid.hy
    if not (1 <= j < grid.ny - 1 and 1 <= i < grid.nx - 1):
        return (x0, y0)
    patch = values[j - 1:j + 2, i - 1:i + 2]
    sy, sx = np.mgrid[-1:2, -1:2]
    sx = sx.ravel().astype(float)
    sy = sy.ravel().astype(float)
    A = np.column_stack([np.ones(9), sx, sy, sx * sx, sx * sy, sy * sy])
    c, *_ = np.linalg.lstsq(A, patch.ravel(), rcond=None)
    H = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]])
    try:
        off = -np.linalg.solve(H, c[1:3])
    except np.linalg.LinAlgError:
        off = np.zeros(2)
    if not np.all(np.isfinite(off)) or np.any(np.abs(off) > 1.0):
        off = np.zeros(2)
    return (x0 + off[0] * grid.hx, y0 + off[1] * grid.hy)


@lru_cache(maxsize=4)
def _default_beta_star():
    from .groundstate import solve_ground_state

    return solve_ground_state().mass


# -- the flow -----------------------------------------------------------------

def minimize(
    grid: DomainGrid,
    spec: PotentialSpec | None,
    b: float,
    beta: float,
    cfg: FlowConfig = FlowConfig(),
    init: Field | None = None,
    beta_star: float | None = None,
    callback: Callable | None = None,
) -> MinimizeResult:
    """Minimize E_b over {∫u² = 1} on ``grid``; ``spec=None`` means V ≡ 0."""
    if b < 0 or beta < 0:
        raise ValueError("b and beta must be nonnegative")
    if b == 0:
        bs = _default_beta_star() if beta_star is None else beta_star
        if beta >= bs * (1.0 - ILLPOSED_MARGIN):
            raise IllPosed("b = 0 with beta >= beta_star has no minimizer")
    if spec is not None and not spec.grid.same_as(grid):
        raise ValueError("potential sampled on a different grid")

    prob = _Problem(grid, None if spec is None else spec.values, float(b), float(beta))
    mask = grid.interior_mask

    if init is not None:
        u0 = init if init.grid.same_as(grid) else resample(init, grid)
    elif cfg.init_kind == "eigenmode":
        u0 = eigenmode_field(grid)
    elif cfg.init_kind == "gaussian":
        if cfg.init_center is not None:
            center = cfg.init_center
        elif spec is not None:
            center = spec.centers[int(np.argmax(spec.exponents))]
        else:
            X, Y = grid.coords()
            center = (float(X[mask].mean()), float(Y[mask].mean()))
        width = cfg.init_width or 0.1 * min(grid.nx * grid.hx, grid.ny * grid.hy)
        u0 = gaussian_field(grid, center, width)
    else:
        raise ValueError("init_kind='warm' needs an init field")

    u = prob.normalize(np.abs(u0.values))
    E, kin = prob.energy(u)
    g = prob.gradient(u, kin)
    precond = _SinePreconditioner(grid) if cfg.scheme == "pcg" else None
    if cfg.step0 is not None:
        t = cfg.step0
    elif cfg.scheme == "pcg":
        t = 1.0
    else:
        t = min(grid.hx, grid.hy) ** 2 / 8.0 / (1.0 + b * kin)

    history = [E]
    d_prev = z_prev = r_prev = None
    converged = False
    reason = "max_iters"
    it = 0
    resid = math.inf
    best = (E, u)
    for it in range(1, cfg.max_iters + 1):
        mu = 0.5 * prob.dot(g, u)
        r = g - 2.0 * mu * u
        resid = 0.5 * math.sqrt(prob.dot(r, r))
        if resid <= cfg.grad_tol * max(1.0, abs(mu)):
            converged, reason = True, "gradient"
            it -= 1
            break
        if len(history) > cfg.stall_window:
            old = history[-cfg.stall_window - 1]
            # dual criterion: a stalled energy only ends the flow once the
            # residual is also small (flat valleys near β = β* stall early)
            if abs(old - E) <= cfg.energy_tol * max(abs(E), 1.0) and resid <= 10.0 * cfg.grad_tol * max(1.0, abs(mu)):
                converged, reason = True, "energy-stall"
                it -= 1
                break

        if precond is None:
            z = r
            d = -z
        else:
            sigma = max(abs(mu) / (1.0 + b * kin), 1e-8)
            scale = 2.0 * (1.0 + b * kin)
            z = precond(r, sigma) / scale
            pu = precond(u, sigma) / scale
            z = z - (prob.dot(u, z) / prob.dot(u, pu)) * pu
            d = -z
            if d_prev is not None:
                denom = prob.dot(z_prev, r_prev)
                beta_pr = max(0.0, prob.dot(z - z_prev, r) / denom) if denom > 0 else 0.0
                d = d + beta_pr * d_prev
                d = d - prob.dot(d, u) * u
        slope = prob.dot(g, d)
        if slope >= 0.0:
            d = -z
            slope = prob.dot(g, d)

        noise = 1e-12 * (abs(E) + kin * (1.0 + b * kin) + 1.0)
        if -slope * t > 100.0 * noise:
            t, E_new, u_new, kin_new = _line_search(prob, u, d, E, slope, t, cfg.backtracking)
        else:
            # energy differences are at rounding level: work with φ' instead
            t, E_new, u_new, kin_new = _secant_step(prob, u, d, E, slope, t, noise)
        if u_new is None:
            # no decrease representable at working precision
            if abs(slope * t) <= 1e-13 * max(abs(E), 1.0) or t < 1e-14:
                if t < 1e-14 and abs(slope) * 1e-14 > 1e-13 * max(abs(E), 1.0):
                    raise StepUnderflow(f"step fell below 1e-14 at iteration {it}")
                converged = resid <= 10.0 * cfg.grad_tol * max(1.0, abs(mu))
                reason = "line-search-stall"
                break
            continue

        u, E, kin = u_new, E_new, kin_new
        g = prob.gradient(u, kin)
        history.append(E)
        best = (E, u)
        d_prev, z_prev, r_prev = d, z, r
        if precond is not None:
            t = min(4.0 * t, 1e6)
        else:
            t = t * 1.25
        if callback is not None:
            callback(it, E, resid)
    else:
        warnings.warn(f"flow stopped at max_iters={cfg.max_iters} (residual {resid:.3g})", MaxItersExceeded)

    E, u = best
    # sign fix and nonnegativity: |u| never raises the forward-difference energy
    u = np.abs(u)
    u = prob.normalize(u)
    field_u = Field(grid, u)
    bd = evaluate(field_u, b, beta, spec)
    mass = prob.dot(u, u)
    kin = bd.kinetic
    return MinimizeResult(
        u=field_u,
        breakdown=bd,
        iterations=it,
        converged=converged,
        max_point=refine_max_point(u, grid),
        eps_b=kin ** -0.5 if kin > 0 else math.inf,
        history=history,
        residual=resid,
        mass_drift=abs(mass - 1.0),
        b=float(b),
        beta=float(beta),
        stop_reason=reason,
    )


def _line_search(prob: _Problem, u, d, E0, slope, t, shrink):
    """Armijo search along the normalized curve t ↦ (u + t d)/‖u + t d‖.

    Tries ``t`` and the minimizer of the quadratic through (0, E0, slope) and
    (t, E(t)); falls back to geometric backtracking.
    """
    c1 = 1e-4

    def phi(s):
        v = prob.normalize(u + s * d)
        e, k = prob.energy(v)
        return e, v, k

    e1, v1, k1 = phi(t)
    cands = [(e1, t, v1, k1)]
    curv = 2.0 * (e1 - E0 - slope * t) / (t * t)
    if curv > 0:
        ts = -slope / curv
        if 0.05 * t < ts < 20.0 * t and abs(ts - t) > 1e-3 * t:
            es, vs, ks = phi(ts)
            cands.append((es, ts, vs, ks))
    cands.sort(key=lambda c: c[0])
    for e, s, v, k in cands:
        if e <= E0 + c1 * s * slope and e < E0:
            return s, e, v, k
    s = min(c[1] for c in cands)
    while s > 1e-14:
        s *= shrink
        e, v, k = phi(s)
        if e <= E0 + c1 * s * slope and e < E0:
            return s, e, v, k
    return s, E0, None, None


def _secant_step(prob: _Problem, u, d, E0, slope, t, noise):
    """Line search on the directional derivative φ'(s) by secant iteration.

    Used once energy differences drown in rounding.  A step is accepted when
    |φ'(s)| ≤ 0.5|φ'(0)| and the energy has not risen beyond ``noise``.
    """
    dd = prob.dot(d, d)

    def probe(s):
        n2 = 1.0 + s * s * dd
        v = prob.normalize(u + s * d)
        e, k = prob.energy(v)
        gv = prob.gradient(v, k)
        dv = (d - (s * dd / n2) * (u + s * d)) / math.sqrt(n2)
        return e, v, k, prob.dot(gv, dv)

    s0, d0 = 0.0, slope
    s1 = t
    for _ in range(6):
        e, v, k, d1 = probe(s1)
        if abs(d1) <= 0.5 * abs(slope) and e <= E0 + noise:
            return s1, e, v, k
        if d1 == d0:
            break
        s2 = s1 - d1 * (s1 - s0) / (d1 - d0)
        if not math.isfinite(s2) or s2 <= 0:
            s2 = 0.5 * s1
        s0, d0, s1 = s1, d1, s2
    return s1, E0, None, None


# -- sweeps -------------------------------------------------------------------

def continuation_sweep(
    grid: DomainGrid,
    spec: PotentialSpec | None,
    beta: float,
    b_list: Sequence[float],
    cfg: FlowConfig = FlowConfig(),
    eps_predictor: Callable[[float], float] | None = None,
    anchor=None,
    dist_predictor: Callable[[float], float] | None = None,
    init: Field | None = None,
    beta_star: float | None = None,
    on_result: Callable | None = None,
) -> list:
    """Minimize along a strictly decreasing list of b, warm-starting each run.

    The previous minimizer is compressed about its maximum point by the ratio of
    predicted blow-up rates ``eps_predictor(b_prev)/eps_predictor(b)``.  For
    boundary concentration ``anchor`` (the boundary well) and ``dist_predictor``
    additionally slide the peak along the line to the anchor.
    """
    b_list = [float(b) for b in b_list]
    if not b_list or any(b <= 0 for b in b_list):
        raise ValueError("b_list must be nonempty and positive")
    if any(b1 >= b0 for b0, b1 in zip(b_list, b_list[1:])):
        raise ValueError("b_list must be strictly decreasing")

    results = []
    prev = None
    for b in b_list:
        start = init
        if prev is not None:
            scale = 1.0
            if eps_predictor is not None:
                scale = eps_predictor(prev.b) / eps_predictor(b)
            z_old = prev.max_point
            z_new = z_old
            if anchor is not None and dist_predictor is not None:
                a = np.asarray(anchor, dtype=float)
                ratio = dist_predictor(b) / dist_predictor(prev.b)
                z_new = tuple(a + (np.asarray(z_old) - a) * ratio)
            start = resample(prev.u, grid, center_from=z_old, center_to=z_new, scale=scale)
        try:
            res = minimize(grid, spec, b, beta, replace(cfg, init_kind="warm") if start is not None else cfg,
                           init=start, beta_star=beta_star)
        except Exception as exc:  # recorded per entry; the sweep goes on
            u = start if start is not None else Field(grid, np.zeros((grid.ny, grid.nx)))
            nan = math.nan
            res = MinimizeResult(
                u=u, breakdown=EnergyBreakdown(nan, nan, nan, nan, nan, nan, b, beta, nan),
                iterations=0, converged=False,
                max_point=refine_max_point(u.values, grid), eps_b=math.nan, b=b, beta=beta,
                stop_reason="error", error=f"{type(exc).__name__}: {exc}",
            )
        results.append(res)
        if on_result is not None:
            on_result(res)
        if res.error is None:
            prev = res
    return results


def lowest_of(results: Sequence[MinimizeResult], cfg: FlowConfig = FlowConfig()) -> MinimizeResult:
    """Lowest-energy converged result; warns if the runs disagree beyond 10·energy_tol."""
    ok = [r for r in results if r.error is None and r.converged]
    if not ok:
        ok = [r for r in results if r.error is None] or list(results)
        return min(ok, key=lambda r: r.energy if math.isfinite(r.energy) else math.inf)
    best = min(ok, key=lambda r: r.energy)
    spread = max(r.energy for r in ok) - best.energy
    if spread > 10.0 * cfg.energy_tol * max(abs(best.energy), 1.0):
        warnings.warn(f"initializations reach different minima (spread {spread:.3g})", AmbiguousMinimum)
    return best


def minimize_from(grid: DomainGrid, spec: PotentialSpec, b: float, beta: float, cfg: FlowConfig,
                  centers: Sequence, width: float, beta_star: float | None = None) -> tuple:
    """One run per Gaussian start in ``centers`` plus the eigenmode start; (lowest, all runs)."""
    runs = [minimize(grid, spec, b, beta, replace(cfg, init_kind="warm"),
                     init=gaussian_field(grid, c, width), beta_star=beta_star) for c in centers]
    runs.append(minimize(grid, spec, b, beta, replace(cfg, init_kind="eigenmode"), beta_star=beta_star))
    return lowest_of(runs, cfg), runs


def auxiliary_minimum(grid: DomainGrid, b: float, beta: float, cfg: FlowConfig, init: Field) -> MinimizeResult:
    """Minimum of the V ≡ 0 energy on the same grid (the lattice twin of ē(b)).

    The start is ``init`` moved to the node farthest from the boundary; without
    V the peak would otherwise crawl there along an almost flat valley.
    """
    depth = ndimage.distance_transform_edt(grid.interior_mask)
    j, i = np.unravel_index(int(np.argmax(depth)), depth.shape)
    deepest = (grid.origin[0] + i * grid.hx, grid.origin[1] + j * grid.hy)
    start = resample(init, grid, center_from=refine_max_point(init.values, grid), center_to=deepest)
    return minimize(grid, None, b, beta, replace(cfg, init_kind="warm"), init=start)
