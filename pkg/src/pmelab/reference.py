"""Closed-form and stored reference solutions.

Barenblatt solutions, the stationary power profiles Gamma_C, the explicit
solution of u' = -u^p, and evaluators of self-similar solutions
t^(-a) f(|x| t^(-b)) built from integrated profiles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq
from scipy.special import gamma as gamma_fn

from .ode import ProfileTrajectory, TailKind, trajectory_from_csv
from .params import Params, derive_exponents


class ExtrapolationRefused(ValueError):
    """Evaluation past the last sample of a profile whose tail is unclassified."""


def sphere_area(dim: int) -> float:
    """Surface area of the unit sphere in R^dim (2 for dim = 1)."""
    return 2.0 * math.pi ** (dim / 2.0) / gamma_fn(dim / 2.0)


def barenblatt_k(m: float, dim: int) -> float:
    return (m - 1.0) / (2.0 * m * (m * dim - dim + 2.0))


def barenblatt_mass(m: float, dim: int, D: float) -> float:
    if not D > 0:
        raise ValueError("D must be positive")
    k = barenblatt_k(m, dim)
    edge = math.sqrt(D / k)
    val, err = quad(lambda r: (D - k * r * r) ** (1.0 / (m - 1.0)) * r ** (dim - 1), 0.0, edge,
                    epsabs=0.0, epsrel=1e-13, limit=200)
    if not err <= 1e-10 * abs(val):
        raise ArithmeticError(f"mass quadrature did not converge (estimate {val}, error {err})")
    return sphere_area(dim) * val


def barenblatt_D_for_mass(m: float, dim: int, M: float) -> float:
    if not M > 0:
        raise ValueError("M must be positive")
    # M is a power of D, so bracket in log D around the unit-D mass
    expo = 1.0 / (m - 1.0) + dim / 2.0
    guess = (M / barenblatt_mass(m, dim, 1.0)) ** (1.0 / expo)
    f = lambda lnD: math.log(barenblatt_mass(m, dim, math.exp(lnD)) / M)
    x0 = math.log(guess)
    return math.exp(brentq(f, x0 - 1.0, x0 + 1.0, xtol=1e-15, rtol=1e-15))


@dataclass(frozen=True)
class BarenblattSpec:
    m: float
    dim: int
    D: float

    def __post_init__(self):
        if not self.D > 0:
            raise ValueError("D must be positive")

    @classmethod
    def from_mass(cls, m: float, dim: int, M: float) -> "BarenblattSpec":
        return cls(m, dim, barenblatt_D_for_mass(m, dim, M))

    @property
    def k(self) -> float:
        return barenblatt_k(self.m, self.dim)

    @property
    def eta(self) -> float:
        return 1.0 / (self.m * self.dim - self.dim + 2.0)

    @property
    def mass(self) -> float:
        return barenblatt_mass(self.m, self.dim, self.D)

    def __call__(self, r, t):
        return barenblatt_value(self, r, t)


def barenblatt_value(spec: BarenblattSpec, r, t):
    if not np.all(np.asarray(t) > 0):
        raise ValueError("t must be positive")
    eta = spec.eta
    xi = np.asarray(r, dtype=float) * np.asarray(t, dtype=float) ** (-eta)
    core = np.maximum(spec.D - spec.k * xi * xi, 0.0)
    out = np.asarray(t, dtype=float) ** (-spec.dim * eta) * core ** (1.0 / (spec.m - 1.0))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class StationarySpec:
    params: Params
    C: float

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be positive")


def gamma_value(spec: StationarySpec, r):
    ts = derive_exponents(spec.params).theta_star
    return spec.C * np.asarray(r, dtype=float) ** (-ts)


def gamma_residual(spec: StationarySpec, r):
    """-Lap(Gamma^m) + r^sigma Gamma^p for Gamma = C r^(-theta*), term by term.

    For a radial power r^(-q) in R^N the Laplacian is q (q + 2 - N) r^(-q-2).
    """
    P = spec.params
    ts = derive_exponents(P).theta_star
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("r must be positive")
    q = P.m * ts
    lap = spec.C ** P.m * q * (q + 2.0 - P.dim) * r ** (-q - 2.0)
    absorb = r ** P.sigma * spec.C ** P.p * r ** (-P.p * ts)
    return -lap + absorb


def homogeneous_exact(A: float, p: float, t):
    """Solution of u' = -u^p, u(0) = A."""
    if not (A > 0 and p > 1):
        raise ValueError("need A > 0 and p > 1")
    t = np.asarray(t, dtype=float)
    out = ((p - 1.0) * t + A ** (1.0 - p)) ** (-1.0 / (p - 1.0))
    return out if out.ndim else float(out)


class SelfSimilar:
    """u(r, t) = t^(-time_exp) f(r t^(-space_exp)) from a sampled profile.

    Inside the samples f is a monotone cubic through (0, A) and the stored
    points. Past the last sample the classified tail law is continued with
    the constant read off the last sample: c xi^(-e) with e the slow
    exponent for SlowDecay and sigma/(p-1) for CriticalDecay; zero past a
    contact or crossing.
    """

    def __init__(self, profile: ProfileTrajectory, time_exp: float | None = None,
                 space_exp: float | None = None):
        if profile.tail is None:
            raise ValueError("profile must be classified")
        self.profile = profile
        ode = profile.ode
        self.time_exp = ode.a_coef if time_exp is None else time_exp
        self.space_exp = ode.b_coef if space_exp is None else space_exp
        xi = np.concatenate(([0.0], profile.xi))
        f = np.concatenate(([profile.shooting_value], profile.f))
        self._interp = PchipInterpolator(xi, f, extrapolate=False)
        self.xi_last = float(profile.xi[-1])
        kind = profile.tail.kind
        self._tail_exp: Optional[float] = None
        if kind is TailKind.SLOW:
            self._tail_exp = ode.slow_exponent
        elif kind is TailKind.CRITICAL:
            self._tail_exp = derive_exponents(ode.params).crit_decay
        self._zero_beyond = kind in (TailKind.CONTACT, TailKind.CROSSING)
        if self._tail_exp is not None:
            self._tail_c = self.xi_last ** self._tail_exp * float(profile.f[-1])

    @classmethod
    def from_csv(cls, source, **kw) -> "SelfSimilar":
        return cls(trajectory_from_csv(source), **kw)

    def profile_value(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.empty_like(xi)
        inside = xi <= self.xi_last
        out[inside] = np.maximum(self._interp(xi[inside]), 0.0)
        far = ~inside
        if np.any(far):
            if self._zero_beyond:
                out[far] = 0.0
            elif self._tail_exp is not None:
                out[far] = self._tail_c * xi[far] ** (-self._tail_exp)
            else:
                raise ExtrapolationRefused(
                    f"profile tail is {self.profile.tail}; no extrapolation beyond xi={self.xi_last:g}")
        return out

    def __call__(self, r, t):
        r = np.asarray(r, dtype=float)
        t = np.asarray(t, dtype=float)
        if not np.all(t > 0):
            raise ValueError("t must be positive")
        r, t = np.broadcast_arrays(r, t)
        out = t ** (-self.time_exp) * self.profile_value(r * t ** (-self.space_exp))
        return out if out.ndim else float(out)


def selfsim_value(profile: ProfileTrajectory, exps, r, t):
    """Self-similar solution built on ``profile``; ``exps`` supplies (alpha, beta)."""
    return SelfSimilar(profile, exps.alpha, exps.beta)(r, t)
