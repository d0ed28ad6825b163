"""Equation parameters and the exponents derived from them.

The equation is ``u_t = Lap(u^m) - |x|^sigma u^p`` in ``N`` space dimensions,
studied for ``1 < m < p`` and ``sigma > 0``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Mapping, Optional


class ParameterError(ValueError):
    """Raised when a parameter set falls outside the admissible range."""


@dataclass(frozen=True)
class Params:
    m: float
    p: float
    sigma: float
    dim: int
    homogeneous_test: bool = False

    def __post_init__(self):
        m, p, sigma = float(self.m), float(self.p), float(self.sigma)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "sigma", sigma)
        if not all(math.isfinite(v) for v in (m, p, sigma)):
            raise ParameterError("m, p and sigma must be finite")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ParameterError(f"dim >= 1 (integer) violated: dim={self.dim}")
        object.__setattr__(self, "dim", int(self.dim))
        if not m > 1.0:
            raise ParameterError(f"1 < m violated: m={m}")
        if not p > m:
            raise ParameterError(f"m < p violated: m={m}, p={p}")
        if self.homogeneous_test:
            if sigma < 0.0:
                raise ParameterError(f"sigma >= 0 violated (homogeneous test): sigma={sigma}")
        elif not sigma > 0.0:
            raise ParameterError(f"sigma > 0 violated: sigma={sigma}")

    @property
    def key(self) -> str:
        """Canonical string used by the golden registry."""
        return f"m={_fmt(self.m)},p={_fmt(self.p)},sigma={_fmt(self.sigma)},N={self.dim}"

    def to_dict(self) -> dict:
        d = asdict(self)
        if not self.homogeneous_test:
            d.pop("homogeneous_test")
        return d


def _fmt(x: float) -> str:
    return format(float(x), ".12g")


def params_from_dict(d: Mapping[str, Any]) -> Params:
    """Build :class:`Params` from a JSON-style mapping with keys m, p, sigma, dim."""
    missing = [k for k in ("m", "p", "sigma", "dim") if k not in d]
    if missing:
        raise ParameterError(f"missing parameter keys: {', '.join(missing)}")
    return Params(
        m=float(d["m"]),
        p=float(d["p"]),
        sigma=float(d["sigma"]),
        dim=int(d["dim"]),
        homogeneous_test=bool(d.get("homogeneous_test", False)),
    )


@dataclass(frozen=True)
class Exponents:
    L: float
    alpha: float
    beta: float
    p_fujita: float
    theta_star: float
    eta: float
    k_p: float
    gamma_crit: float
    c_star: Optional[float]
    crit_decay: float  # sigma/(p-1), decay rate of the critical tail

    def to_dict(self) -> dict:
        return asdict(self)


def derive_exponents(params: Params) -> Exponents:
    m, p, s, N = params.m, params.p, params.sigma, params.dim
    L = s * (m - 1.0) + 2.0 * (p - 1.0)
    bracket = m * (s + 2.0) / (p - m) * ((m * s + 2.0 * p) / (p - m) - N)
    c_star = None
    if bracket > 0.0:
        try:
            c_star = bracket ** (1.0 / (p - m))
        except OverflowError:  # p close to m: C_* is not representable
            c_star = None
    exps = Exponents(
        L=L,
        alpha=(s + 2.0) / L,
        beta=(p - m) / L,
        p_fujita=m + (s + 2.0) / N,
        theta_star=(s + 2.0) / (p - m),
        eta=1.0 / (m * N - N + 2.0),
        k_p=(1.0 / (p - 1.0)) ** (1.0 / (p - 1.0)),
        gamma_crit=L / (p - m),
        c_star=c_star,
        crit_decay=s / (p - 1.0),
    )
    return exps


class RegimeLabel(str, Enum):
    SLOWEST_DECAY = "SlowestDecay"
    CRITICAL_TAIL = "CriticalTail"
    FAST_INTEGRABLE = "FastIntegrable"
    FAST_NON_INTEGRABLE = "FastNonIntegrable"
    BORDERLINE_N = "BorderlineN"
    OPEN_CASE = "OpenCase"


def _close(a: float, b: float) -> bool:
    return math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-14)


def classify_regime(params: Params, theta: float) -> RegimeLabel:
    """Large-time regime for initial data decaying like ``|x|^-theta``.

    ``theta = 0`` stands for data with a positive horizontal asymptote and
    ``theta = inf`` for compactly supported data.
    """
    if not theta >= 0.0:
        raise ParameterError(f"theta >= 0 violated: theta={theta}")
    exps = derive_exponents(params)
    ts, N = exps.theta_star, params.dim
    if math.isfinite(theta) and _close(theta, ts):
        return RegimeLabel.CRITICAL_TAIL
    if theta < ts:
        return RegimeLabel.SLOWEST_DECAY
    if params.p < exps.p_fujita or _close(params.p, exps.p_fujita):
        return RegimeLabel.OPEN_CASE
    if math.isfinite(theta) and _close(theta, N):
        return RegimeLabel.BORDERLINE_N
    if theta > N:
        return RegimeLabel.FAST_INTEGRABLE
    return RegimeLabel.FAST_NON_INTEGRABLE
