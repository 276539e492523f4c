"""Predicted limits, scaling fits, profile comparison and trial-function bounds.

Four concentration regimes are distinguished by whether β equals β* and
whether some flattest well is interior:

  CRIT_INTERIOR   β = β*, interior flattest well
  CRIT_BOUNDARY   β = β*, flattest wells only on ∂Ω
  SUPER_INTERIOR  β > β*, interior flattest well
  SUPER_BOUNDARY  β > β*, flattest wells only on ∂Ω
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.optimize import minimize_scalar

from .energy import Field, bar_energy, bar_eps, bar_radius, evaluate, gn_ratio
from .errors import (
    BracketFailure,
    DegenerateFit,
    RegimeMismatch,
    TrialOutsideDomain,
    WindowClipped,
)
from .geometry import DomainGrid, PotentialSpec, classify_wells

REGIMES = ("CRIT_INTERIOR", "CRIT_BOUNDARY", "SUPER_INTERIOR", "SUPER_BOUNDARY")
CRITICAL_RTOL = 1e-8


def regime_of(side: str, beta: float, beta_star: float) -> str:
    """Regime name from the well side ("interior"/"boundary") and β."""
    if abs(beta - beta_star) <= CRITICAL_RTOL * beta_star:
        head = "CRIT"
    elif beta > beta_star:
        head = "SUPER"
    else:
        raise RegimeMismatch("β < β* has no blow-up regime")
    return f"{head}_{side.upper()}"


@dataclass(frozen=True)
class RegimePrediction:
    regime: str
    p: float
    lam: float | None
    kappa: float
    beta: float
    beta_star: float
    energy_limit: float
    eps_limit: float
    dist_limit: float
    normalizers: dict = field(default_factory=dict)
    trial_energy_limit: float = math.nan  # limit of the trial-function bound, normalized like energy_limit

    @property
    def critical(self) -> bool:
        return self.regime.startswith("CRIT")

    @property
    def boundary(self) -> bool:
        return self.regime.endswith("BOUNDARY")

    def closed_form_eps(self, b: float) -> float:
        return bar_eps(b, self.beta, self.beta_star)

    def energy_offset(self, b: float) -> float:
        return 0.0 if self.critical else bar_energy(b, self.beta, self.beta_star)

    def energy_scale(self, b: float) -> float:
        p = self.p
        if self.regime == "CRIT_INTERIOR":
            return b ** (p / (p + 4))
        if self.regime == "CRIT_BOUNDARY":
            return b ** (p / (p + 4)) * math.log(2.0 / b) ** (4 * p / (p + 4))
        eps = self.closed_form_eps(b)
        if self.regime == "SUPER_INTERIOR":
            return eps ** p
        return eps ** p * abs(math.log(eps)) ** p

    def eps_scale(self, b: float) -> float:
        p = self.p
        if self.regime == "CRIT_INTERIOR":
            return b ** (1 / (p + 4))
        if self.regime == "CRIT_BOUNDARY":
            return b ** (1 / (p + 4)) * math.log(2.0 / b) ** (-p / (p + 4))
        return self.closed_form_eps(b)

    def rescaling_eps(self, b: float, measured: float) -> float:
        """ε used to normalize distances and rescale profiles."""
        return measured if self.critical else self.closed_form_eps(b)

    def dist_scale(self, b: float, measured_eps: float) -> float:
        eps = self.rescaling_eps(b, measured_eps)
        return eps * abs(math.log(eps)) if self.boundary else eps

    def normalized_energy(self, b: float, e: float) -> float:
        return (e - self.energy_offset(b)) / self.energy_scale(b)

    def normalized_eps(self, b: float, eps: float) -> float:
        return eps / self.eps_scale(b)

    def normalized_dist(self, b: float, eps: float, dist: float) -> float:
        return dist / self.dist_scale(b, eps)

    def predicted_eps(self, b: float) -> float:
        return self.eps_limit * self.eps_scale(b)

    def predicted_dist(self, b: float) -> float:
        """Leading-order distance of the peak from the well (0 for interior wells)."""
        eps = self.predicted_eps(b)
        return self.dist_limit * eps * abs(math.log(eps)) if self.boundary else 0.0


def predict(regime: str, p: float, lam: float | None, kappa: float, beta: float, beta_star: float) -> RegimePrediction:
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if p <= 0 or kappa <= 0 or beta_star <= 0:
        raise ValueError("p, kappa and beta_star must be positive")
    crit = abs(beta - beta_star) <= CRITICAL_RTOL * beta_star
    if regime.startswith("SUPER") and beta <= beta_star:
        raise RegimeMismatch(f"{regime} needs beta > beta_star")
    if regime.startswith("CRIT") and not crit:
        raise RegimeMismatch(f"{regime} needs beta = beta_star")
    if regime.endswith("INTERIOR") and (lam is None or lam <= 0):
        raise RegimeMismatch(f"{regime} needs the interior constant lambda")

    q = p + 4.0
    if regime == "CRIT_INTERIOR":
        e_lim = (p + 2) / (2 * p) * lam ** (4 * (p + 2) / q)
        # (b/2)τ⁴ + (2/p)λ^{p+2}τ^{-p} at its optimal τ carries (p+4)/(2p)
        trial_lim = (p + 4) / (2 * p) * lam ** (4 * (p + 2) / q)
        eps_lim = lam ** (-(p + 2) / q)
        d_lim = 0.0
        norm = {"energy": "b^(p/(p+4))", "eps": "b^(1/(p+4))", "dist": "eps"}
    elif regime == "CRIT_BOUNDARY":
        bracket = (p / 4) ** (4 / q) + (4 / p) ** (p / q)
        e_lim = kappa ** (4 / q) * 2 ** (-5 * p / q) * ((p + 2) / q) ** (4 * p / q) * bracket
        eps_lim = (2 ** (p + 1) / (p * kappa)) ** (1 / q) * (q / (p + 2)) ** (p / q)
        d_lim = (p + 2) / 2
        norm = {"energy": "b^(p/(p+4))*ln(2/b)^(4p/(p+4))", "eps": "b^(1/(p+4))*ln(2/b)^(-p/(p+4))",
                "dist": "eps*|ln eps|"}
    elif regime == "SUPER_INTERIOR":
        e_lim = 2 * lam ** (p + 2) / p
        eps_lim = 1.0
        d_lim = 0.0
        norm = {"energy": "(e-ebar)/epsc^p", "eps": "epsc", "dist": "epsc"}
    else:
        e_lim = kappa * ((p + 2) / 2) ** p
        eps_lim = 1.0
        d_lim = (p + 2) / 2
        norm = {"energy": "(e-ebar)/(epsc^p*|ln epsc|^p)", "eps": "epsc", "dist": "epsc*|ln epsc|"}
    norm["epsc"] = "(beta_star*b/(beta-beta_star))^(1/2)"
    if regime != "CRIT_INTERIOR":
        trial_lim = e_lim
    return RegimePrediction(regime, float(p), lam, float(kappa), float(beta), float(beta_star),
                            float(e_lim), float(eps_lim), float(d_lim), norm, float(trial_lim))


def predict_for(spec: PotentialSpec, grid: DomainGrid, profile, beta: float, regime: str | None = None) -> RegimePrediction:
    """Classify the wells and fill in the prediction for this configuration."""
    cls = classify_wells(spec, grid, profile)
    bs = profile.beta_star
    if regime is None or regime == "auto":
        regime = regime_of(cls.regime_side, beta, bs)
    return predict(regime, cls.p, cls.lam, cls.kappa, beta, bs)


# -- fits ---------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    log_power: float
    prefactor: float
    r_squared: float
    window: tuple


def fit_scaling(sweep, with_log: bool = False) -> ScalingFit:
    """Least squares of ln|v| on ln b (and ln ln(2/b)): v ≈ C·b^α·(ln(2/b))^γ."""
    pts = [(float(b), float(v)) for b, v in sweep]
    if len(pts) < 4:
        raise ValueError("fit needs at least 4 points")
    b = np.array([q[0] for q in pts])
    v = np.array([q[1] for q in pts])
    if np.any(b <= 0) or np.any(np.diff(b) >= 0):
        raise ValueError("b must be positive and strictly decreasing")
    if not (np.all(v > 0) or np.all(v < 0)):
        raise ValueError("values must be nonzero and of one sign")
    cols = [np.ones_like(b), np.log(b)]
    if with_log:
        cols.append(np.log(np.log(2.0 / b)))
    A = np.column_stack(cols)
    centered = A[:, 1:] - A[:, 1:].mean(axis=0)
    scale = np.linalg.norm(centered, axis=0)
    if np.any(scale <= 1e-9 * np.linalg.norm(A[:, 1:], axis=0).clip(1.0)) or \
            np.linalg.cond(centered / scale) > 1e10:
        raise DegenerateFit("design matrix is rank-deficient")
    y = np.log(np.abs(v))
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else max(0.0, 1.0 - float(np.sum(resid ** 2)) / ss_tot)
    return ScalingFit(
        exponent=float(coef[1]),
        log_power=float(coef[2]) if with_log else 0.0,
        prefactor=float(np.sign(v[0]) * math.exp(coef[0])),
        r_squared=min(1.0, r2),
        window=(float(b.min()), float(b.max())),
    )


def fit_window(results, size: int = 6) -> list:
    """The smallest ``size`` converged b-values of a sweep, in decreasing b."""
    ok = sorted((r for r in results if r.converged and r.error is None), key=lambda r: -r.b)
    return ok[-size:]


# -- profiles -----------------------------------------------------------------

def profile_distance(result, profile, eps: float | None = None, center=None,
                     radius: float = 10.0, spacing: float = 0.05) -> tuple:
    """Relative L² and H¹-seminorm distances of ε·u(εx + z) to Q(|x|)/√β*.

    The comparison runs over |x| ≤ ``radius``; u is extended by zero outside Ω.
    """
    u = result.u
    grid = u.grid
    eps = result.eps_b if eps is None else eps
    z = result.max_point if center is None else center
    bs = profile.beta_star
    s = np.arange(-radius, radius + 0.5 * spacing, spacing)
    XS, YS = np.meshgrid(s, s)
    disk = XS ** 2 + YS ** 2 <= radius ** 2
    px = z[0] + eps * XS
    py = z[1] + eps * YS
    ii = (px - grid.origin[0]) / grid.hx
    jj = (py - grid.origin[1]) / grid.hy
    w = eps * ndimage.map_coordinates(u.values, [jj, ii], order=1, mode="constant", cval=0.0)
    inside = ndimage.map_coordinates(grid.interior_mask.astype(float), [jj, ii], order=0, mode="constant", cval=0.0)
    clipped = 1.0 - float(np.sum(inside * disk)) / float(np.sum(disk))
    if clipped > 0.5:
        warnings.warn(f"comparison window lies {clipped:.0%} outside the domain", WindowClipped, stacklevel=2)

    r = np.hypot(XS, YS)
    q = profile(r.ravel()).reshape(r.shape) / math.sqrt(bs)
    dq = profile.derivative(r.ravel()).reshape(r.shape) / math.sqrt(bs)
    with np.errstate(invalid="ignore", divide="ignore"):
        qx = np.where(r > 0, dq * XS / r, 0.0)
        qy = np.where(r > 0, dq * YS / r, 0.0)
    wy, wx = np.gradient(w, spacing, spacing)
    l2 = math.sqrt(np.sum(((w - q) ** 2)[disk]) / np.sum((q ** 2)[disk]))
    h1 = math.sqrt(np.sum(((wx - qx) ** 2 + (wy - qy) ** 2)[disk]) / np.sum((qx ** 2 + qy ** 2)[disk]))
    return l2, h1


# -- trial functions ----------------------------------------------------------

def _smooth_step(s):
    """Quintic C² blend: 1 for s ≤ 0, 0 for s ≥ 1."""
    s = np.clip(s, 0.0, 1.0)
    return 1.0 - s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _cutoff(dist, inner: float, outer: float):
    return _smooth_step((dist - inner) / (outer - inner))


def trial_field(pred: RegimePrediction, grid: DomainGrid, spec: PotentialSpec, profile, b: float,
                cutoff_radius: float | None = None) -> Field:
    """The regime's cutoff-rescaled Q on the grid, unit L² mass."""
    if b <= 0:
        raise ValueError("b must be positive")
    p = pred.p
    X, Y = grid.coords()
    if pred.regime == "CRIT_INTERIOR":
        tau = pred.lam ** ((p + 2) / (p + 4)) * b ** (-1 / (p + 4))
    elif pred.regime == "CRIT_BOUNDARY":
        tau = ((p * pred.kappa / 2 ** (p + 1)) ** (1 / (p + 4)) * ((p + 2) / (p + 4)) ** (p / (p + 4))
               * b ** (-1 / (p + 4)) * math.log(2 / b) ** (p / (p + 4)))
    else:
        tau = math.sqrt(bar_radius(b, pred.beta, pred.beta_star))
    extent = max(grid.nx * grid.hx, grid.ny * grid.hy)
    if tau < 10.0 / extent:
        raise ValueError(f"b={b:g} too large for a trial function (tau={tau:.3g})")

    cls_side = "boundary" if pred.boundary else "interior"
    well = _trial_well(pred, spec, grid, cls_side)
    if not pred.boundary:
        d = grid.boundary_distance(well)
        R = 0.5 * d * 0.95 if cutoff_radius is None else cutoff_radius
        if 2.0 * R > d or R <= 0:
            raise TrialOutsideDomain(f"cutoff radius {2 * R:.3g} exceeds the well's boundary distance {d:.3g}")
        center = well
        dist = np.hypot(X - center[0], Y - center[1])
        psi = _cutoff(dist, R, 2.0 * R)
    else:
        if tau <= math.e:
            raise ValueError(f"tau={tau:.3g} too small for the boundary construction")
        R_tau = (p + 2) / 2 * math.log(tau) / tau
        xi = math.log(tau) ** -0.5
        n = grid.outward_normal(well)
        center = np.asarray(well) - (1 + xi) * R_tau * n
        outer = (1 + xi) * R_tau
        if grid.boundary_distance(center) < outer - 1e-9 - max(grid.hx, grid.hy):
            raise TrialOutsideDomain("the cutoff ball around the shifted center leaves the domain")
        dist = np.hypot(X - center[0], Y - center[1])
        psi = _cutoff(dist / R_tau, 1.0, 1.0 + xi)
    v = psi * profile(tau * dist.ravel()).reshape(dist.shape)
    total = float(np.sum(v * v))
    lost = total - float(np.sum((v * v)[grid.interior_mask]))
    if total <= 0 or lost > 1e-3 * total:
        raise TrialOutsideDomain("the trial function's support exits the domain")
    v = np.where(grid.interior_mask, v, 0.0)
    v /= math.sqrt(grid.cell_area * float(np.sum(v * v)))
    return Field(grid, v)


def _trial_well(pred: RegimePrediction, spec: PotentialSpec, grid: DomainGrid, side: str):
    p = max(spec.exponents)
    h = max(grid.hx, grid.hy)
    best, best_key = None, math.inf
    for i, (c, pi) in enumerate(zip(spec.centers, spec.exponents)):
        if pi != p:
            continue
        d = grid.boundary_distance(c)
        interior = d > 2 * h
        if (side == "interior") != interior:
            continue
        key = spec.kappa(i)  # λ_i is increasing in κ_i at fixed p
        if key < best_key:
            best, best_key = c, key
    if best is None:
        raise RegimeMismatch(f"no flattest {side} well for {pred.regime}")
    return best


def trial_upper_bound(regime, grid: DomainGrid, spec: PotentialSpec, profile, b: float,
                      beta: float | None = None, cutoff_radius: float | None = None) -> float:
    """Discrete E_b of the regime's trial function (an upper bound for the discrete e(b))."""
    if isinstance(regime, RegimePrediction):
        pred = regime
    else:
        bs = profile.beta_star
        if beta is None:
            if str(regime).startswith("SUPER"):
                raise RegimeMismatch("SUPER regimes need beta")
            beta = bs
        pred = predict_for(spec, grid, profile, beta, regime)
    u = trial_field(pred, grid, spec, profile, b, cutoff_radius)
    return evaluate(u, b, pred.beta, spec).total


# -- h(t) minimizer ----------------------------------------------------------

@dataclass(frozen=True)
class HMinimum:
    t0: float
    value: float
    t0_asymptotic: float
    value_asymptotic: float


def h_minimizer(a: float, gamma: float, p: float) -> HMinimum:
    """Minimize h(t) = a·t⁻⁴ + γ·tᵖ(ln 1/t)ᵖ on (0, 1/(e+1)).

    The search runs in s = ln(1/t); a coarse scan finds a bracket that
    golden-section search then refines.
    """
    if a <= 0 or gamma <= 0 or p <= 0:
        raise ValueError("a, gamma and p must be positive")
    s_lo = math.log(math.e + 1.0)

    def h(s):
        return a * math.exp(4.0 * s) + gamma * math.exp(-p * s) * s ** p

    s_hi = max(4.0 * s_lo, 2.0 * math.log(1.0 / a) / (p + 4.0) + 10.0) if a < 1 else 4.0 * s_lo
    grid = np.linspace(s_lo, s_hi, 4001)
    vals = np.array([h(s) for s in grid])
    k = int(np.argmin(vals))
    if k == 0 or k == grid.size - 1:
        raise BracketFailure(f"h has no interior minimum on (0, 1/(e+1)) for a={a:g}")
    res = minimize_scalar(h, bracket=(grid[k - 1], grid[k], grid[k + 1]), method="golden", tol=1e-12)
    L = math.log(1.0 / a)
    q = p + 4.0
    t_asym = (4.0 / (p * gamma)) ** (1 / q) * q ** (p / q) * a ** (1 / q) * L ** (-p / q)
    h_asym = (gamma ** (4 / q) * (1 / q) ** (4 * p / q) * ((p / 4) ** (4 / q) + (4 / p) ** (p / q))
              * a ** (p / q) * L ** (4 * p / q))
    return HMinimum(math.exp(-res.x), float(res.fun), t_asym, h_asym)


# -- diagnostics --------------------------------------------------------------

@dataclass
class DiagnosticsTable:
    rows: list
    flags: dict


def blow_up_diagnostics(results, beta: float, beta_star: float) -> DiagnosticsTable:
    """Per-b kinetic, Kirchhoff and potential parts plus the β > β* ratios."""
    rows = []
    super_ = beta > beta_star * (1 + CRITICAL_RTOL)
    for r in sorted(results, key=lambda r: -r.b):
        bd = r.breakdown
        q4 = bd.quartic_integral
        row = {
            "b": r.b,
            "kinetic": bd.kinetic,
            "b_kinetic_sq": r.b * bd.kinetic ** 2,
            "potential": bd.potential,
            "quartic": q4,
            "gn_ratio": gn_ratio(r.u),
        }
        if super_:
            rb = bar_radius(r.b, beta, beta_star)
            row["kinetic_over_rb"] = bd.kinetic / rb
            row["quartic_over_rb"] = q4 / (rb * 2.0 / beta_star)
        rows.append(row)
    flags = {}
    if len(rows) >= 2:
        kin = [row["kinetic"] for row in rows]
        bk = [row["b_kinetic_sq"] for row in rows]
        flags["kinetic_increasing"] = all(y > x for x, y in zip(kin, kin[1:]))
        if not super_:
            flags["b_kinetic_sq_decreasing"] = all(y < x for x, y in zip(bk, bk[1:]))
        else:
            dev = [abs(row["kinetic_over_rb"] - 1) for row in rows]
            flags["kinetic_over_rb_approaching_one"] = dev[-1] < dev[0]
    return DiagnosticsTable(rows, flags)
