import math
import warnings
from types import SimpleNamespace

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from kminlab.asymptotics import (
    blow_up_diagnostics, fit_scaling, h_minimizer, predict, predict_for, profile_distance, regime_of,
    trial_field, trial_upper_bound,
)
from kminlab.energy import Field
from kminlab.errors import BracketFailure, DegenerateFit, RegimeMismatch, TrialOutsideDomain, WindowClipped
from kminlab.geometry import build_grid, sample_potential
from kminlab.minimizer import FlowConfig, auxiliary_minimum, minimize, refine_max_point

DISK = {"shape": "disk", "center": (0, 0), "radius": 1.0}
BS = 11.700896520935746


def test_predict_examples():
    c = predict("CRIT_INTERIOR", 2, 1.0, 1.0, BS, BS)
    assert (c.energy_limit, c.eps_limit, c.dist_limit) == (1.0, 1.0, 0.0)
    s = predict("SUPER_INTERIOR", 2, 1.0, 1.0, 2 * BS, BS)
    assert s.energy_limit == 1.0
    cb = predict("CRIT_BOUNDARY", 4, None, 1.0, BS, BS)
    assert cb.energy_limit == pytest.approx(2 ** -2.5 * (6 / 8) ** 2 * 2, rel=1e-15)
    sb = predict("SUPER_BOUNDARY", 2, None, 1.5, 2 * BS, BS)
    assert sb.energy_limit == pytest.approx(1.5 * 4, rel=1e-15)
    assert sb.dist_limit == cb.dist_limit - 1 == 2.0


def test_predict_is_pure():
    a = predict("CRIT_BOUNDARY", 3, None, 0.7, BS, BS)
    b = predict("CRIT_BOUNDARY", 3, None, 0.7, BS, BS)
    assert a == b


def test_predict_mismatches():
    with pytest.raises(RegimeMismatch):
        predict("SUPER_INTERIOR", 2, 1.0, 1.0, BS, BS)
    with pytest.raises(RegimeMismatch):
        predict("CRIT_INTERIOR", 2, 1.0, 1.0, 2 * BS, BS)
    with pytest.raises(RegimeMismatch):
        predict("CRIT_INTERIOR", 2, None, 1.0, BS, BS)
    with pytest.raises(RegimeMismatch):
        regime_of("interior", 0.5 * BS, BS)
    assert regime_of("boundary", 2 * BS, BS) == "SUPER_BOUNDARY"


@pytest.mark.parametrize("p,lam", [(2, 1.0), (2, 1.04), (4, 0.8), (1, 1.3)])
def test_trial_constant_is_the_optimized_bound(p, lam):
    # min over τ of (b/2)τ⁴ + (2/p)λ^{p+2}τ^{-p}, normalized by b^{p/(p+4)}
    b = 1e-6
    f = lambda s: 0.5 * b * math.exp(4 * s) + 2 / p * lam ** (p + 2) * math.exp(-p * s)
    res = minimize_scalar(f, bracket=(0.0, 5.0), tol=1e-12)
    pred = predict("CRIT_INTERIOR", p, lam, 1.0, BS, BS)
    assert pred.trial_energy_limit == pytest.approx(res.fun / b ** (p / (p + 4)), rel=1e-8)
    assert pred.predicted_eps(b) == pytest.approx(math.exp(-res.x), rel=1e-5)


@pytest.mark.parametrize("p,kappa", [(2, 1.0), (4, 1.0), (3, 0.5)])
def test_boundary_constants_follow_from_the_h_formulas(p, kappa):
    # leading-order h-minimum with a = b/2, γ = κ((p+2)/2)^p
    b = 1e-9
    hm = h_minimizer(b / 2, kappa * ((p + 2) / 2) ** p, p)
    pred = predict("CRIT_BOUNDARY", p, None, kappa, BS, BS)
    assert hm.value_asymptotic / pred.energy_scale(b) == pytest.approx(pred.energy_limit, rel=1e-12)
    assert hm.t0_asymptotic / pred.eps_scale(b) == pytest.approx(pred.eps_limit, rel=1e-12)


def test_fit_scaling_recovers_planted_laws():
    b = np.geomspace(1e-2, 1e-5, 8)
    f = fit_scaling(list(zip(b, 3 * b ** (1 / 3))))
    assert f.exponent == pytest.approx(1 / 3, abs=1e-10)
    assert f.prefactor == pytest.approx(3, rel=1e-10)
    assert f.r_squared == pytest.approx(1.0)
    g = fit_scaling(list(zip(b, b ** (1 / 3) * np.log(2 / b) ** (4 / 3))), with_log=True)
    assert g.exponent == pytest.approx(1 / 3, abs=1e-10)
    assert g.log_power == pytest.approx(4 / 3, abs=1e-10)
    c = fit_scaling(list(zip(b, np.full(b.size, 2.5))))
    assert c.exponent == pytest.approx(0, abs=1e-12)
    n = fit_scaling(list(zip(b, -0.5 * b ** 0.5)))
    assert n.prefactor == pytest.approx(-0.5, rel=1e-10)
    assert n.window == (b.min(), b.max())


def test_fit_scaling_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_scaling([(1e-2, 1), (1e-3, 1), (1e-4, 1)])
    with pytest.raises(ValueError):
        fit_scaling([(1e-2, 1), (1e-3, -1), (1e-4, 1), (1e-5, 1)])
    b = [1.0, 1 - 1e-15, 1 - 2e-15, 1 - 3e-15]
    with pytest.raises(DegenerateFit):
        fit_scaling(list(zip(b, [1, 2, 3, 4])))


@pytest.fixture(scope="module")
def fine_disk():
    g = build_grid(DISK, 1 / 256)
    return g, sample_potential(g, [((0, 0), 2)])


def sampled_q(grid, profile, eps, center):
    X, Y = grid.coords()
    r = np.hypot(X - center[0], Y - center[1]) / eps
    return Field(grid, profile(r.ravel()).reshape(r.shape) / (eps * math.sqrt(profile.beta_star)))


def test_profile_distance_self_and_shift(fine_disk, profile):
    g, _ = fine_disk
    eps = 0.05
    u = sampled_q(g, profile, eps, (0.1, -0.05))
    res = SimpleNamespace(u=u, eps_b=eps, max_point=refine_max_point(u.values, g))
    l2, h1 = profile_distance(res, profile)
    assert l2 <= 4 * (g.hx / eps) ** 2
    shifted = profile_distance(res, profile, center=(0.1 + 5 * eps, -0.05))
    assert shifted[0] > l2 and shifted[1] > h1


def test_profile_distance_warns_when_clipped(fine_disk, profile):
    g, _ = fine_disk
    u = sampled_q(g, profile, 0.05, (0.99, 0.0))
    res = SimpleNamespace(u=u, eps_b=0.05, max_point=(0.99, 0.0))
    with pytest.warns(WindowClipped):
        profile_distance(res, profile)


def test_trial_bounds_minimizer_super_interior(profile):
    g = build_grid(DISK, 1 / 256)
    spec = sample_potential(g, [((0, 0), 2)])
    beta = 2 * profile.beta_star
    pred = predict_for(spec, g, profile, beta)
    assert pred.regime == "SUPER_INTERIOR"
    gaps = []
    for b in (2e-2, 1e-2, 5e-3):
        cfg = FlowConfig(grad_tol=1e-9, init_width=0.2)
        r = minimize(g, spec, b, beta, cfg, beta_star=profile.beta_star)
        t = trial_upper_bound(pred, g, spec, profile, b)
        assert t >= r.energy
        # ē on this lattice: the V ≡ 0 minimum of the same discrete energy
        ebar_h = auxiliary_minimum(g, b, beta, cfg, r.u).energy
        gaps.append(t - ebar_h)
        assert gaps[-1] > 0
    assert gaps[-1] < gaps[0]


def test_trial_precondition_and_support(profile):
    g = build_grid(DISK, 1 / 64)
    spec = sample_potential(g, [((0, 0), 2)])
    with pytest.raises(ValueError):
        trial_upper_bound("CRIT_INTERIOR", g, spec, profile, 1e-2)
    pred = predict_for(spec, g, profile, profile.beta_star)
    with pytest.raises(TrialOutsideDomain):
        trial_field(pred, g, spec, profile, 1e-6, cutoff_radius=0.6)
    with pytest.raises(RegimeMismatch):
        trial_upper_bound("SUPER_INTERIOR", g, spec, profile, 1e-2)
    u = trial_field(pred, g, spec, profile, 1e-6)
    assert u.mass() == pytest.approx(1.0, rel=1e-12)


def test_boundary_trial_is_admissible(profile):
    g = build_grid(DISK, 1 / 256)
    spec = sample_potential(g, [((1, 0), 2)])
    pred = predict_for(spec, g, profile, profile.beta_star)
    assert pred.regime == "CRIT_BOUNDARY"
    u = trial_field(pred, g, spec, profile, 1e-4)
    z = refine_max_point(u.values, g)
    tau = 1 / pred.predicted_eps(1e-4)
    R = 2 * math.log(tau) / tau
    assert 1 - z[0] == pytest.approx((1 + math.log(tau) ** -0.5) * R, rel=0.05)


def dense_h_min(a, gamma, p):
    s = np.linspace(math.log(math.e + 1), 40, 2_000_001)
    h = a * np.exp(4 * s) + gamma * np.exp(-p * s) * s ** p
    k = int(np.argmin(h))
    return math.exp(-s[k]), float(h[k])


@pytest.mark.parametrize("a,gamma,p", [(1e-8, 1, 2), (1e-10, 2, 4), (1e-6, 0.5, 3)])
def test_h_minimizer_matches_dense_scan(a, gamma, p):
    hm = h_minimizer(a, gamma, p)
    t0, v0 = dense_h_min(a, gamma, p)
    assert hm.t0 == pytest.approx(t0, rel=1e-4)
    assert hm.value == pytest.approx(v0, rel=1e-9)
    assert hm.value <= v0


def test_h_minimizer_bracket_failure():
    with pytest.raises(BracketFailure):
        h_minimizer(1.0, 1.0, 2)


def fake(b, kin, quart, beta, u):
    from kminlab.energy import EnergyBreakdown
    bd = EnergyBreakdown(kin, 0.5 * b * kin ** 2, 0.1, 0.5 * beta * quart, 0.0, 0.0, b, beta)
    return SimpleNamespace(b=b, breakdown=bd, u=u)


def test_blow_up_diagnostics_flags(profile):
    g = build_grid(DISK, 1 / 32)
    u = sampled_q(g, profile, 0.3, (0, 0))
    bs = profile.beta_star
    one = blow_up_diagnostics([fake(1e-2, 10, 1.0, bs, u)], bs, bs)
    assert len(one.rows) == 1 and one.flags == {}
    crit = blow_up_diagnostics([fake(1e-2, 10, 1, bs, u), fake(1e-3, 20, 2, bs, u)], bs, bs)
    assert crit.flags == {"kinetic_increasing": True, "b_kinetic_sq_decreasing": True}
    sup = blow_up_diagnostics([fake(1e-2, 90, 15, 2 * bs, u), fake(1e-3, 1010, 171, 2 * bs, u)], 2 * bs, bs)
    assert sup.rows[1]["kinetic_over_rb"] == pytest.approx(1.01)
    assert sup.flags["kinetic_over_rb_approaching_one"]


def test_interior_trial_bound_tracks_optimized_constant(profile):
    # large disk so the cutoff is harmless; b ≫ h² so the lattice is too
    g = build_grid({"shape": "disk", "center": (0, 0), "radius": 3.0}, 1 / 256)
    spec = sample_potential(g, [((0, 0), 2)])
    pred = predict_for(spec, g, profile, profile.beta_star)
    b = 1e-3
    t = trial_upper_bound(pred, g, spec, profile, b)
    assert t / b ** (1 / 3) == pytest.approx(pred.trial_energy_limit, rel=0.01)
    assert pred.trial_energy_limit / pred.energy_limit == pytest.approx(1.5, rel=1e-12)
