import math
import warnings

import numpy as np
import pytest

from kminlab.errors import ResolutionError, TruncationWarning
from kminlab.groundstate import lambda_constant, moment, moment_table, solve_ground_state
from oracles import ground_state_oracle


@pytest.fixture(scope="module")
def oracle():
    return ground_state_oracle()


def test_mass_and_peak_match_adaptive_shooting(profile, oracle):
    assert profile.mass == pytest.approx(oracle["beta_star"], rel=1e-6)
    assert profile.q_at_zero == pytest.approx(oracle["q0"], rel=1e-6)
    assert profile.mass == pytest.approx(11.70, abs=0.01)


def test_norm_identities(profile):
    assert abs(profile.mass - profile.grad_norm) / profile.mass <= 1e-6
    assert abs(profile.quartic - 2 * profile.mass) / profile.quartic <= 1e-6


def test_profile_positive_and_decreasing(profile):
    q = profile.q_values[profile.r_nodes < profile.r_max]
    assert np.all(q > 0)
    assert np.all(np.diff(q) < 0)


def test_tail_has_exponential_form(profile):
    r, q = profile.r_nodes, profile.q_values
    sel = r >= profile.r_max / 2
    shape = r[sel] ** -0.5 * np.exp(-r[sel])
    c = float(np.dot(shape, q[sel]) / np.dot(shape, shape))
    assert np.all(np.abs(q[sel] / (c * shape) - 1) <= 0.2)


def test_insensitive_to_truncation_radius(profile):
    wider = solve_ground_state(30.0, 12000, 1e-10)
    assert abs(wider.mass - profile.mass) / profile.mass < 1e-8


def test_identities_improve_under_refinement():
    errs = []
    for n in (2000, 4000):
        p = solve_ground_state(20.0, n, 1e-3)
        errs.append(abs(p.mass - p.grad_norm) / p.mass + abs(p.quartic - 2 * p.mass) / p.quartic)
    assert math.log2(errs[0] / errs[1]) >= 1.8


def test_moments(profile, oracle):
    assert moment(profile, 0) == pytest.approx(profile.mass, rel=1e-12)
    assert moment(profile, 2) == pytest.approx(oracle["m2"], rel=1e-6)
    table = moment_table(profile, [1, 2, 3, 4])
    vals = [table[p] for p in (1, 2, 3, 4)]
    assert all(b > a for a, b in zip(vals, vals[1:]))
    assert 2 in table and 5 not in table


def test_moments_log_convex(profile):
    # Hölder: ln m_p is convex in p; m_p itself dips below m_0 for small p
    ps = np.linspace(0, 4, 9)
    lm = np.log([moment(profile, p) for p in ps])
    assert np.all(lm[:-2] + lm[2:] - 2 * lm[1:-1] > 0)
    assert moment(profile, 0.5) < moment(profile, 0)


def test_moment_continuous_in_exponent(profile):
    d = 1e-3
    m = [moment(profile, 2 + k * d) for k in (-1, 0, 1)]
    slope = max(abs(m[1] - m[0]), abs(m[2] - m[1])) / d
    assert abs(m[2] - m[1]) <= 1.1 * slope * d


def test_moment_truncation_warning():
    short = solve_ground_state(10.0, 2000, 1e-3)
    with pytest.warns(TruncationWarning):
        moment(short, 12)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        moment(short, 0)


def test_lambda_constant(profile, oracle):
    m2 = moment(profile, 2)
    table = moment_table(profile, [0, 2])
    kappa_unit = 2 * profile.mass / (2 * m2)
    assert lambda_constant(kappa_unit, 2, table) == pytest.approx(1.0, rel=1e-14)
    lam = lambda_constant(1.0, 2, profile)
    assert lam == pytest.approx((oracle["m2"] / oracle["beta_star"]) ** 0.25, rel=1e-6)
    assert lambda_constant(2.0, 2, profile) / lam == pytest.approx(2 ** 0.25, rel=1e-14)


def test_preconditions():
    with pytest.raises(ValueError):
        solve_ground_state(5.0, 8000, 1e-10)
    with pytest.raises(ValueError):
        solve_ground_state(20.0, 500, 1e-10)
    with pytest.raises(ValueError):
        solve_ground_state(20.0, 8000, 1e-2)
    with pytest.raises(ResolutionError):
        solve_ground_state(20.0, 1000, 1e-10)
    with pytest.raises(ValueError):
        lambda_constant(0.0, 2, {2.0: 1.0, 0.0: 1.0})


def test_profile_evaluation(profile):
    assert float(profile(np.array([0.0]))[0]) == pytest.approx(profile.q_at_zero, rel=1e-12)
    far = profile(np.array([25.0, 30.0]))
    assert np.all(far > 0) and far[1] < far[0]
    r = np.array([1.0, 3.0])
    num = (profile(r + 1e-6) - profile(r - 1e-6)) / 2e-6
    assert np.allclose(profile.derivative(r), num, rtol=1e-5)
