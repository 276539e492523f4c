"""Radial ground state Q of -ΔQ + Q - Q³ = 0 in the plane, and its moments.

Q is found by shooting on Q(0) with a fixed-step RK4 integrator.  Trajectories
started above the ground-state value dive through zero; trajectories started
below it turn around and blow up.  Bisection on Q(0) runs to floating point
resolution, after which the two bracketing trajectories agree up to a radius
where exponential instability separates them; beyond that radius the profile
is continued with the linearised tail A·K0(r).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.special import k0, k1

from .errors import NonConvergence, ResolutionError, TruncationWarning

BRACKET = (1.0, 10.0)
BLOWUP = 50.0


@numba.njit(cache=True)
def _shoot(q0, r, blowup):
    """Integrate Q'' + Q'/r - Q + Q³ = 0 from Q(0)=q0, Q'(0)=0.

    Returns (q, dq, side, stop) where side is -1 if Q crossed zero, +1 if Q
    turned upward or exceeded ``blowup``, and stop is the last filled index + 1.
    """
    n = r.size
    h = r[1] - r[0]
    q = np.zeros(n)
    dq = np.zeros(n)
    q[0] = q0
    # series start: Q(r) ≈ q0 + (q0 - q0³) r² / 4
    a2 = (q0 - q0 ** 3) / 4.0
    q[1] = q0 + a2 * h * h
    dq[1] = 2.0 * a2 * h
    for i in range(1, n - 1):
        ri = r[i]
        rm = ri + 0.5 * h
        y = q[i]
        v = dq[i]
        k1q = v
        k1v = -v / ri + y - y ** 3
        y2 = y + 0.5 * h * k1q
        v2 = v + 0.5 * h * k1v
        k2q = v2
        k2v = -v2 / rm + y2 - y2 ** 3
        y3 = y + 0.5 * h * k2q
        v3 = v + 0.5 * h * k2v
        k3q = v3
        k3v = -v3 / rm + y3 - y3 ** 3
        y4 = y + h * k3q
        v4 = v + h * k3v
        k4q = v4
        k4v = -v4 / (ri + h) + y4 - y4 ** 3
        q[i + 1] = y + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        dq[i + 1] = v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        if q[i + 1] < 0.0:
            return q, dq, -1, i + 2
        if q[i + 1] > blowup or (dq[i + 1] > 0.0 and q[i + 1] < 1.0):
            return q, dq, 1, i + 2
    # never resolved: a trajectory still sitting near the Q=1 equilibrium is
    # on the blow-up side of the bracket
    if q[n - 1] > 0.5:
        return q, dq, 1, n
    return q, dq, 0, n


def radial_integral(f, r):
    """Trapezoid rule on a uniform grid with the Euler-Maclaurin end correction.

    Plain trapezoid is second order; the h²/12·(f'(b) - f'(a)) correction with
    one-sided second-order end slopes makes it fourth order.
    """
    f = np.asarray(f, dtype=float)
    h = r[1] - r[0]
    d0 = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
    d1 = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * h)
    return float(np.trapezoid(f, r) - h * h / 12.0 * (d1 - d0))


@dataclass(frozen=True)
class RadialProfile:
    r_nodes: np.ndarray
    q_values: np.ndarray
    q_prime: np.ndarray
    r_max: float
    mass: float
    grad_norm: float
    quartic: float
    q_at_zero: float
    splice_radius: float = math.nan
    _spline: CubicHermiteSpline = field(default=None, repr=False, compare=False)

    @property
    def beta_star(self) -> float:
        return self.mass

    @property
    def tail_amplitude(self) -> float:
        return float(self.q_values[-1] / k0(self.r_max))

    def __call__(self, r):
        """Q at arbitrary radii; beyond r_max the K0 tail is used."""
        r = np.abs(np.asarray(r, dtype=float))
        spline = self._spline
        if spline is None:
            spline = CubicHermiteSpline(self.r_nodes, self.q_values, self.q_prime)
            object.__setattr__(self, "_spline", spline)
        out = np.empty_like(r)
        inside = r <= self.r_max
        out[inside] = spline(r[inside])
        out[~inside] = self.tail_amplitude * k0(r[~inside])
        return out

    def derivative(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        if self._spline is None:
            self(0.0)
        out = np.empty_like(r)
        inside = r <= self.r_max
        out[inside] = self._spline.derivative()(r[inside])
        out[~inside] = -self.tail_amplitude * k1(r[~inside])
        return out


@dataclass(frozen=True)
class MomentTable:
    entries: dict

    def __getitem__(self, p):
        return self.entries[float(p)]

    def __contains__(self, p):
        return float(p) in self.entries


def solve_ground_state(r_max: float = 20.0, n_nodes: int = 8000, shoot_tol: float = 1e-10) -> RadialProfile:
    if r_max < 10:
        raise ValueError("r_max must be >= 10")
    if n_nodes < 1000:
        raise ValueError("n_nodes must be >= 1000")
    if not 0 < shoot_tol <= 1e-3:
        raise ValueError("shoot_tol must lie in (0, 1e-3]")
    r = np.linspace(0.0, float(r_max), int(n_nodes))
    dr = r[1] - r[0]
    if dr ** 4 > shoot_tol:
        raise ResolutionError(
            f"step {dr:.3g} too coarse for shoot_tol={shoot_tol:g}; RK4 error scale dr^4={dr**4:.2g}"
        )

    lo, hi = BRACKET
    if _shoot(lo, r, BLOWUP)[2] != 1 or _shoot(hi, r, BLOWUP)[2] != -1:
        raise NonConvergence(f"no sign change of the shooting outcome inside [{lo}, {hi}]")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        side = _shoot(mid, r, BLOWUP)[2]
        if side == 1:
            lo = mid
        elif side == -1:
            hi = mid
        else:
            lo = hi = mid
            break

    qa, dqa, _, stop_a = _shoot(lo, r, BLOWUP)
    qb, dqb, _, stop_b = _shoot(hi, r, BLOWUP)
    stop = min(stop_a, stop_b) - 1
    apart = np.abs(qa[:stop] - qb[:stop]) > shoot_tol * qa[0]
    splice = int(np.argmax(apart)) if apart.any() else stop - 1
    if r[splice] < 5.0:
        raise NonConvergence(f"shooting branches separate already at r={r[splice]:.3g}")

    q = 0.5 * (qa + qb)
    dq = 0.5 * (dqa + dqb)
    amp = q[splice] / k0(r[splice])
    q[splice:] = amp * k0(r[splice:])
    dq[splice:] = -amp * k1(r[splice:])

    jac = 2.0 * np.pi * r
    return RadialProfile(
        r_nodes=r,
        q_values=q,
        q_prime=dq,
        r_max=float(r_max),
        mass=radial_integral(jac * q * q, r),
        grad_norm=radial_integral(jac * dq * dq, r),
        quartic=radial_integral(jac * q ** 4, r),
        q_at_zero=float(q[0]),
        splice_radius=float(r[splice]),
    )


def moment(profile: RadialProfile, p: float) -> float:
    """m_p = ∫_{R²} |x|^p Q² dx."""
    if p < 0:
        raise ValueError("moment exponent must be nonnegative")
    r = profile.r_nodes
    f = 2.0 * np.pi * r ** (p + 1.0) * profile.q_values ** 2
    total = radial_integral(f, r)
    cut = int(0.9 * r.size)
    tail = radial_integral(f[cut:], r[cut:]) if r.size - cut >= 3 else 0.0
    if total > 0 and tail > 1e-6 * total:
        warnings.warn(
            f"last 10% of radii carry {tail / total:.2e} of m_{p:g}; increase r_max",
            TruncationWarning,
            stacklevel=2,
        )
    return total


def moment_table(profile: RadialProfile, exponents) -> MomentTable:
    return MomentTable({float(p): moment(profile, p) for p in exponents})


def lambda_constant(kappa_i: float, p: float, moments, beta_star: float | None = None) -> float:
    """λ_i = (p κ_i m_p / (2β*))^{1/(p+2)}.

    ``moments`` is a MomentTable (β* read from its p=0 entry unless given) or a
    RadialProfile.
    """
    if kappa_i <= 0 or p <= 0:
        raise ValueError("kappa_i and p must be positive")
    if isinstance(moments, RadialProfile):
        m_p = moment(moments, p)
        beta_star = moments.mass if beta_star is None else beta_star
    else:
        m_p = moments[p]
        if beta_star is None:
            beta_star = moments[0.0]
    return (p * kappa_i * m_p / (2.0 * beta_star)) ** (1.0 / (p + 2.0))
