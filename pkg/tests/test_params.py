import math

import pytest
from hypothesis import given, strategies as st

from pmelab.params import (ParameterError, Params, RegimeLabel, classify_regime, derive_exponents,
                           params_from_dict)


def test_exponents_m2_p3():
    ex = derive_exponents(Params(2, 3, 1, 1))
    assert ex.L == 5
    assert ex.alpha == pytest.approx(0.6, abs=1e-15)
    assert ex.beta == pytest.approx(0.2, abs=1e-15)
    assert ex.p_fujita == 5
    assert ex.theta_star == 3
    assert ex.eta == pytest.approx(1 / 3, rel=1e-15)
    assert ex.k_p == pytest.approx(0.7071067812, abs=1e-10)
    assert ex.c_star == pytest.approx(42.0, rel=1e-14)
    assert ex.gamma_crit == 5
    assert ex.crit_decay == 0.5


@pytest.mark.parametrize("kw,needle", [
    (dict(m=2, p=2, sigma=1, dim=1), "m < p"),
    (dict(m=1, p=3, sigma=1, dim=1), "1 < m"),
    (dict(m=2, p=3, sigma=0, dim=1), "sigma > 0"),
    (dict(m=2, p=3, sigma=1, dim=0), "dim"),
])
def test_rejections_name_the_inequality(kw, needle):
    with pytest.raises(ParameterError, match=needle):
        Params(**kw)


def test_sigma_zero_needs_flag():
    P = Params(2, 3, 0, 1, homogeneous_test=True)
    assert derive_exponents(P).crit_decay == 0
    with pytest.raises(ParameterError):
        Params(2, 3, -1, 1, homogeneous_test=True)


def test_c_star_absent_when_bracket_nonpositive():
    # (m sigma + 2p)/(p - m) - N <= 0 needs a large dimension
    assert derive_exponents(Params(2, 30, 0.1, 3)).c_star is None


def test_from_dict_and_key():
    P = params_from_dict({"m": 2, "p": 3, "sigma": 1, "dim": 1})
    assert P.key == "m=2,p=3,sigma=1,N=1"
    with pytest.raises(ParameterError, match="missing"):
        params_from_dict({"m": 2})


@pytest.mark.parametrize("P,theta,label", [
    (Params(2, 6, 1, 1), 2.0, RegimeLabel.FAST_INTEGRABLE),
    (Params(2, 3, 1, 1), 3.0, RegimeLabel.CRITICAL_TAIL),
    (Params(2, 3, 1, 1), 5.0, RegimeLabel.OPEN_CASE),
    (Params(2, 3, 1, 1), 0.0, RegimeLabel.SLOWEST_DECAY),
    (Params(2, 6, 1, 2), 1.5, RegimeLabel.FAST_NON_INTEGRABLE),
    (Params(2, 6, 1, 2), 2.0, RegimeLabel.BORDERLINE_N),
    (Params(2, 6, 1, 1), math.inf, RegimeLabel.FAST_INTEGRABLE),
])
def test_classify_regime(P, theta, label):
    assert classify_regime(P, theta) is label


params_st = st.builds(
    lambda m, dp, s, N: Params(m, m + dp, s, N),
    st.floats(1.01, 6), st.floats(0.01, 10), st.floats(0.01, 6), st.integers(1, 5))


@given(params_st)
def test_alpha_is_beta_times_theta_star(P):
    ex = derive_exponents(P)
    assert math.isclose(ex.alpha, ex.beta * ex.theta_star, rel_tol=1e-14)
    assert ex.alpha > 0 and ex.beta > 0 and ex.L > 0
    assert ex.crit_decay < ex.theta_star


@given(params_st)
def test_theta_star_vs_fujita(P):
    ex = derive_exponents(P)
    assert (ex.theta_star > P.dim) == (P.p < ex.p_fujita)


@given(st.floats(1.01, 4), st.floats(0.05, 4), st.integers(1, 4))
def test_theta_star_equals_n_at_fujita(m, s, N):
    p = m + (s + 2) / N
    ex = derive_exponents(Params(m, p, s, N))
    assert math.isclose(ex.theta_star, N, rel_tol=1e-12)
    assert math.isclose(ex.p_fujita, p, rel_tol=1e-15)


@given(params_st)
def test_derive_is_pure(P):
    assert derive_exponents(P) == derive_exponents(Params(P.m, P.p, P.sigma, P.dim))
