import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import beta as beta_fn

from pmelab.ode import ProfileODE, TailClass, TailKind, shoot, trajectory_to_csv
from pmelab.params import Params, derive_exponents
from pmelab.reference import (BarenblattSpec, ExtrapolationRefused, SelfSimilar, StationarySpec,
                              barenblatt_D_for_mass, barenblatt_k, barenblatt_mass, barenblatt_value,
                              gamma_residual, gamma_value, homogeneous_exact, selfsim_value, sphere_area)

P3 = Params(2, 3, 1, 1)


def beta_mass(m, N, D):
    """Closed form: omega_N D^(1/(m-1)) (D/k)^(N/2) B(N/2, 1/(m-1)+1) / 2."""
    k = barenblatt_k(m, N)
    return sphere_area(N) * D ** (1 / (m - 1)) * (D / k) ** (N / 2) * 0.5 * beta_fn(N / 2, 1 / (m - 1) + 1)


def test_sphere_area():
    assert sphere_area(1) == pytest.approx(2.0)
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


def test_barenblatt_center_and_edge():
    B = BarenblattSpec(2, 1, 1.0)
    assert B(0.0, 1.0) == 1.0
    assert B.k == pytest.approx(1 / 12)
    assert B(math.sqrt(12), 1.0) == pytest.approx(0.0, abs=1e-15)
    assert B(3.47, 1.0) == 0.0
    assert B(math.sqrt(12) * 0.999, 1.0) > 0


def test_barenblatt_mass_m2_n1():
    # integral of (1 - r^2/12) over (-sqrt 12, sqrt 12)
    assert barenblatt_mass(2, 1, 1.0) == pytest.approx(8 * math.sqrt(3) / 3, rel=1e-12)


@pytest.mark.parametrize("m,N,D", [(2, 1, 1.0), (3, 2, 0.5), (1.5, 3, 2.0), (4, 1, 0.2)])
def test_mass_matches_beta_function(m, N, D):
    assert barenblatt_mass(m, N, D) == pytest.approx(beta_mass(m, N, D), rel=1e-10)


def test_mass_round_trip_and_monotone():
    M = barenblatt_mass(2, 1, 0.37)
    assert barenblatt_D_for_mass(2, 1, M) == pytest.approx(0.37, rel=1e-10)
    Ds = [barenblatt_D_for_mass(2, 1, M) for M in (1e-6, 1e-4, 1e-2, 1.0)]
    assert all(a < b for a, b in zip(Ds, Ds[1:]))
    with pytest.raises(ValueError):
        barenblatt_D_for_mass(2, 1, 0.0)


@settings(max_examples=20)
@given(st.floats(1.2, 5), st.integers(1, 3), st.floats(1e-3, 1e3))
def test_round_trip_property(m, N, M):
    D = barenblatt_D_for_mass(m, N, M)
    assert barenblatt_mass(m, N, D) == pytest.approx(M, rel=1e-10)


@given(st.floats(0, 5), st.floats(0.5, 1e4))
def test_barenblatt_selfsimilar_form(r, t):
    B = BarenblattSpec(2, 1, 1.0)
    eta = B.eta
    expect = barenblatt_value(B, r * t ** -eta, 1.0)
    assert barenblatt_value(B, r, t) * t ** eta == pytest.approx(expect, rel=1e-12, abs=1e-300)


def test_gamma_examples():
    ex = derive_exponents(P3)
    assert gamma_value(StationarySpec(P3, 42.0), 1.0) == 42.0
    r = np.geomspace(0.1, 10, 7)
    res = gamma_residual(StationarySpec(P3, ex.c_star), r)
    scale = 42.0 ** 3 * r ** -8.0
    assert np.all(np.abs(res) < 1e-12 * scale)
    assert np.all(gamma_residual(StationarySpec(P3, 2 * ex.c_star), r) > 0)
    assert np.all(gamma_residual(StationarySpec(P3, 0.5 * ex.c_star), r) < 0)


@settings(max_examples=30)
@given(st.floats(1.1, 4), st.floats(0.1, 4), st.floats(0.1, 3), st.integers(1, 3),
       st.floats(0.2, 3), st.floats(0.1, 10))
def test_gamma_residual_factorisation(m, dp, s, N, cfac, r):
    P = Params(m, m + dp, s, N)
    ex = derive_exponents(P)
    if ex.c_star is None:
        return
    C = cfac * ex.c_star
    expect = C ** m * (C ** (P.p - m) - ex.c_star ** (P.p - m)) * r ** (-(m * s + 2 * P.p) / (P.p - m))
    got = float(gamma_residual(StationarySpec(P, C), r))
    assert got == pytest.approx(expect, rel=1e-8, abs=1e-10 * abs(C ** P.p * r ** (-(m * s + 2 * P.p) / (P.p - m))))
    assert np.sign(got) == np.sign(cfac - 1) or abs(cfac - 1) < 1e-9


def test_homogeneous_exact():
    assert homogeneous_exact(1, 2, 1) == pytest.approx(0.5)
    assert homogeneous_exact(3.5, 2.5, 0.0) == pytest.approx(3.5)
    assert homogeneous_exact(2, 3, 1) == pytest.approx(2 / 3)


@pytest.fixture(scope="module")
def slow_profile():
    return shoot(ProfileODE.full(P3), 0.82)


def test_selfsim_basic_values(slow_profile):
    ex = derive_exponents(P3)
    U = SelfSimilar(slow_profile, ex.alpha, ex.beta)
    for t in (0.3, 1.0, 7.0):
        assert U(0.0, t) == pytest.approx(t ** -ex.alpha * 0.82, rel=1e-14)
    xi = slow_profile.xi[::50]
    assert np.allclose(U(xi, 1.0), slow_profile.f[::50], rtol=1e-12)
    assert selfsim_value(slow_profile, ex, 0.0, 1.0) == pytest.approx(0.82)


def test_selfsim_tail_is_continuous(slow_profile):
    U = SelfSimilar(slow_profile)
    xl = U.xi_last
    a, b = U.profile_value(np.array([xl * (1 - 1e-12), xl * (1 + 1e-12)]))
    assert a == pytest.approx(b, rel=1e-9)
    far = U.profile_value(np.array([10 * xl, 100 * xl]))
    assert far[0] / far[1] == pytest.approx(10.0 ** 3, rel=1e-12)


def test_critical_tail_identity(astar3):
    ex = derive_exponents(P3)
    _, traj, _ = astar3
    U = SelfSimilar(traj, ex.alpha, ex.beta)
    assert ex.alpha == pytest.approx(1 / (P3.p - 1) + ex.beta * P3.sigma / (P3.p - 1), rel=1e-14)
    t = 2.0
    r = 1e6 * traj.xi[-1] * t ** ex.beta
    c = traj.xi[-1] ** ex.crit_decay * traj.f[-1]
    assert U(r, t) == pytest.approx(c * t ** (-1 / (P3.p - 1)) * r ** (-ex.crit_decay), rel=1e-12)
    assert c == pytest.approx(ex.k_p, rel=1e-3)


@settings(max_examples=50)
@given(st.floats(0.1, 10), st.floats(0, 20), st.floats(0.01, 100))
def test_crit_rescaling_invariance(astar3, lam, x, t):
    ex = derive_exponents(P3)
    U = SelfSimilar(astar3[1], ex.alpha, ex.beta)
    lhs = lam ** ex.theta_star * U(lam * x, lam ** ex.gamma_crit * t)
    assert lhs == pytest.approx(U(x, t), rel=1e-10)


def test_contact_profile_zero_beyond():
    traj = shoot(ProfileODE.barenblatt(2, 1), 1.0)
    U = SelfSimilar(traj)
    assert U(4.0, 1.0) == 0.0
    assert U(1.0, 1.0) == pytest.approx(1 - 1 / 12, rel=1e-6)


def test_indeterminate_refuses(slow_profile):
    odd = slow_profile.with_tail(TailClass(TailKind.INDETERMINATE))
    U = SelfSimilar(odd)
    U(slow_profile.xi[-1] * 0.5, 1.0)
    with pytest.raises(ExtrapolationRefused):
        U(slow_profile.xi[-1] * 2, 1.0)
    with pytest.raises(ValueError):
        SelfSimilar(shoot(ProfileODE.full(P3), 0.82).with_tail(None))


def test_load_from_csv(tmp_path, slow_profile):
    path = tmp_path / "p.csv"
    trajectory_to_csv(slow_profile, path)
    U = SelfSimilar.from_csv(path)
    assert U(1.3, 2.0) == SelfSimilar(slow_profile)(1.3, 2.0)
