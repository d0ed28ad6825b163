"""Bisection on tail class for the distinguished shooting values.

Tail classes are ordered along increasing A as

    Crossing < Contact < SlowDecay < {CriticalDecay, Indeterminate, Divergent}

(the last group is not ordered internally: within integration noise of A*
the three interleave) and every bisection below is a two-sided predicate on
this ordering. A probe
sequence whose classes are not monotone in A is reported, never repaired.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .ode import (
    Controls,
    EventKind,
    IntegrationError,
    ProfileODE,
    ProfileTrajectory,
    TailClass,
    TailKind,
    Termination,
    _make_rhs,
    classify_tail,
    integrate_profile,
    shoot,
)
from .params import ParameterError, Params, derive_exponents

_RANK = {
    TailKind.CROSSING: 0,
    TailKind.CONTACT: 1,
    TailKind.SLOW: 2,
    TailKind.CRITICAL: 3,
    TailKind.INDETERMINATE: 3,
    TailKind.DIVERGENT: 3,
}

SUBCRITICAL = frozenset({TailKind.CROSSING, TailKind.CONTACT, TailKind.SLOW})


class ShootingError(RuntimeError):
    pass


class BracketInvalid(ShootingError):
    pass


class NonMonotoneTransition(ShootingError):
    def __init__(self, message, probes):
        super().__init__(message)
        self.probes = list(probes)


class NonMonotoneK(ShootingError):
    def __init__(self, message, probes):
        super().__init__(message)
        self.probes = list(probes)


class TargetOutOfRange(ShootingError):
    pass


class ContactNotReached(ShootingError):
    pass


@dataclass(frozen=True)
class Probe:
    A: float
    tail: TailClass
    upper: bool


@dataclass(frozen=True, eq=False)
class BisectionCertificate:
    lo: float
    hi: float
    class_lo: TailClass
    class_hi: TailClass
    iterations: int
    witness_lo: ProfileTrajectory
    witness_hi: ProfileTrajectory
    probes: tuple = ()
    estimate_trajectory: Optional[ProfileTrajectory] = None

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def witness_trajectories(self):
        return self.witness_lo, self.witness_hi

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "width": self.width, "iterations": self.iterations,
                "class_lo": str(self.class_lo), "class_hi": str(self.class_hi)}


def default_bracket(params: Params) -> tuple[float, float]:
    return 1e-4 * derive_exponents(params).k_p, 1e3


def _check_monotone(probes: Sequence[Probe]):
    ordered = sorted(probes, key=lambda pr: pr.A)
    ranks = [_RANK[pr.tail.kind] for pr in ordered]
    for i in range(len(ranks) - 1):
        if ranks[i + 1] < ranks[i]:
            a, b = ordered[i], ordered[i + 1]
            raise NonMonotoneTransition(
                f"class {b.tail} at A={b.A:.17g} follows {a.tail} at A={a.A:.17g}", ordered)


def _bisect(ode: ProfileODE, lo: float, hi: float, tol: float,
            is_upper: Callable[[ProfileTrajectory], bool], controls: Controls,
            monotone: bool = True, stop: Callable | None = None,
            settle: Callable | None = None, rel: bool = False) -> BisectionCertificate:
    """Generic bisection between a lower and an upper shooting value.

    ``stop(witness_lo, witness_hi)`` may end the loop before the width
    reaches ``tol`` (``tol * lo`` when ``rel``). Bisection also ends when the midpoint is no longer
    representable between the two ends.
    """
    if not (tol > 0 and lo < hi):
        raise ValueError("need tol > 0 and lo < hi")
    probes = []
    t_lo = shoot(ode, lo, controls, settle=settle)
    t_hi = shoot(ode, hi, controls, settle=settle)
    u_lo, u_hi = is_upper(t_lo), is_upper(t_hi)
    probes += [Probe(lo, t_lo.tail, u_lo), Probe(hi, t_hi.tail, u_hi)]
    if u_lo == u_hi:
        raise BracketInvalid(f"both ends on the same side: A={lo:.6g} -> {t_lo.tail}, A={hi:.6g} -> {t_hi.tail}")
    if u_lo:
        raise BracketInvalid(f"bracket reversed: upper class {t_lo.tail} at the lower end A={lo:.6g}")
    its = 0
    while hi - lo > (tol * lo if rel else tol):
        if stop is not None and stop(t_lo, t_hi):
            break
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        t_mid = shoot(ode, mid, controls, settle=settle)
        up = is_upper(t_mid)
        probes.append(Probe(mid, t_mid.tail, up))
        if monotone:
            _check_monotone(probes)
        if up:
            hi, t_hi = mid, t_mid
        else:
            lo, t_lo = mid, t_mid
        its += 1
    return BisectionCertificate(lo, hi, t_lo.tail, t_hi.tail, its, t_lo, t_hi, tuple(probes))


def _phi2_trend(traj: ProfileTrajectory, window: float = 0.1, band: float = 1e-2) -> int:
    """-1 if xi^(sigma/(p-1)) f ends below the K_p band and still falling,
    +1 if it ends above the band and still rising, 0 otherwise.

    K_p is a repelling level of the tail dynamics, so either trend decides
    the side of A* even when the tail has not settled into a class yet.
    """
    if not traj.ode.absorption or traj.f[-1] <= 0:
        return 0
    exps = derive_exponents(traj.ode.params)
    k = max(3, int(math.ceil(window * traj.xi.size)))
    phi = traj.xi[-k:] ** exps.crit_decay * traj.f[-k:]
    d = np.diff(phi)[-max(2, k // 5):]
    if np.all(d < 0) and phi[-1] < exps.k_p * (1.0 - band):
        return -1
    if np.all(d > 0) and phi[-1] > exps.k_p * (1.0 + band):
        return 1
    return 0


def _settled(traj: ProfileTrajectory) -> bool:
    return _phi2_trend(traj) != 0


def _is_super(traj: ProfileTrajectory) -> bool:
    kind = traj.tail.kind
    if kind in SUBCRITICAL:
        return False
    if kind is TailKind.INDETERMINATE and _phi2_trend(traj) < 0:
        return False
    return True


def _widened(ode: ProfileODE, bracket, is_upper, controls, max_widen=10, settle=None):
    lo, hi = bracket
    for _ in range(max_widen + 1):
        if (is_upper(shoot(ode, hi, controls, settle=settle))
                and not is_upper(shoot(ode, lo, controls, settle=settle))):
            return lo, hi
        lo, hi = lo / 10.0, hi * 10.0
    raise BracketInvalid(f"no class change found after {max_widen} widenings of {bracket}")


def find_astar(params: Params, bracket: tuple[float, float] | None = None, tol: float = 1e-10,
               controls: Controls | None = None, extend_to: float | None = None):
    """Shooting value of the profile with critical decay ``xi^(-sigma/(p-1))``.

    Bisects on "sub-critical" (Crossing, Contact or SlowDecay) against the
    rest until the bracket width is at most ``tol`` times A*. The estimate
    trajectory stored on the certificate is continued up to ``extend_to``
    (default ten times ``xi_max``) by :func:`extend_critical`.
    """
    ode = ProfileODE.full(params)
    if bracket is None:
        lo, hi = default_bracket(params)
        ctl = controls or Controls()
        lo, hi = _widened(ode, (lo, hi), _is_super, ctl, settle=_settled)
    else:
        lo, hi = bracket
        ctl = controls or Controls()
    cert = _bisect(ode, lo, hi, tol, _is_super, ctl, settle=_settled, rel=True)
    target = extend_to if extend_to is not None else 10.0 * ctl.xi_max
    crit = extend_critical(cert, target)
    cert = replace(cert, estimate_trajectory=crit)
    return 0.5 * (cert.lo + cert.hi), cert


# ------------------------------------------------------- critical continuation

def _band_residual(ode: ProfileODE, start, xi_h: float, ctl: Controls) -> float:
    """xi^(sigma/(p-1)) f / K_p - 1 at ``xi_h`` for a trajectory from ``start``.

    Early exits from the band (0.8, 1.25) return -1 (downward, or a zero of
    f) and +1 (upward, or f flattening to half the critical decay rate), so
    the residual keeps the sign of the exit side.
    """
    exps = derive_exponents(ode.params)
    e2, kp, m = exps.crit_decay, exps.k_p, ode.m
    rhs, _ = _make_rhs(ode)
    g_floor = ctl.f_floor ** m

    def phi(xi, y):
        return xi ** e2 * max(y[0], 0.0) ** (1.0 / m) / kp

    def zero(xi, y):
        return y[0] - g_floor
    zero.terminal, zero.direction = True, -1

    def above(xi, y):
        return phi(xi, y) - 1.25
    above.terminal, above.direction = True, 1

    def below(xi, y):
        return phi(xi, y) - 0.8
    below.terminal, below.direction = True, -1

    def turn(xi, y):
        return xi * y[1] / (m * max(y[0], 1e-300)) + 0.5 * e2
    turn.terminal, turn.direction = True, 1

    sol = solve_ivp(rhs, (start[0], xi_h), start[1:], method=ctl.method, rtol=ctl.rel_tol,
                    atol=ctl.abs_tol, events=(zero, above, below, turn))
    if sol.t_events[1].size or sol.t_events[3].size:
        return 1.0
    if sol.t_events[0].size or sol.t_events[2].size:
        return -1.0
    if sol.status == -1:
        raise IntegrationError(f"critical continuation failed at xi={sol.t[-1]:.6g}: {sol.message}")
    return phi(sol.t[-1], sol.y[:, -1]) - 1.0


def _agreement(a: ProfileTrajectory, b: ProfileTrajectory, rel: float) -> int:
    """Index of the last sample up to which two trajectories agree to ``rel``."""
    n = min(a.xi.size, b.xi.size)
    same = a.xi[:n] == b.xi[:n]
    scale = np.maximum(0.5 * (a.f[:n] + b.f[:n]), np.finfo(float).tiny)
    ok = same & (np.abs(a.f[:n] - b.f[:n]) <= rel * scale)
    bad = np.nonzero(~ok)[0]
    return (bad[0] if bad.size else n) - 1


def extend_critical(cert: BisectionCertificate, xi_target: float, agree: float = 1e-6,
                    stretch: float = 100.0, keep: float = 0.25, rel_tol: float = 1e-11,
                    max_segments: int = 50) -> ProfileTrajectory:
    """Continue the critical profile past the float64 shadowing horizon.

    The two witnesses of a converged A-bisection agree only up to some xi;
    past it the critical level K_p repels and rounding takes over. From the
    last agreeing state, ``g`` is corrected by a relative perturbation that
    puts xi^(sigma/(p-1)) f back on K_p at ``stretch`` times the current
    radius (a smooth scalar root). Only the first ``keep`` fraction (in xi)
    of the corrected piece is appended, where the residual deviation is
    smallest. Repeats until ``xi_target``.
    """
    ode = cert.witness_lo.ode
    A = 0.5 * (cert.lo + cert.hi)
    ctl = replace(cert.witness_lo.controls, rel_tol=min(rel_tol, cert.witness_lo.controls.rel_tol))
    w_ctl = replace(ctl, xi_max=min(xi_target, ctl.xi_max))
    lo_t = integrate_profile(ode, cert.lo, w_ctl)
    hi_t = integrate_profile(ode, cert.hi, w_ctl)
    i = _agreement(lo_t, hi_t, agree)
    if i < 1:
        raise IntegrationError("critical continuation stalled: witnesses disagree from the start")
    xs = [lo_t.xi[: i + 1]]
    fs = [0.5 * (lo_t.f[: i + 1] + hi_t.f[: i + 1])]
    hs = [0.5 * (lo_t.dgdxi[: i + 1] + hi_t.dgdxi[: i + 1])]
    for _ in range(max_segments):
        xi_a = float(xs[-1][-1])
        if xi_a >= xi_target * (1 - 1e-12):
            break
        g_a, h_a = float(fs[-1][-1]) ** ode.m, float(hs[-1][-1])
        xi_h = min(xi_a * stretch, xi_target / keep)
        xi_k = min(xi_h * keep, xi_target)

        def resid(eps):
            return _band_residual(ode, (xi_a, g_a * (1.0 + eps), h_a), xi_h, ctl)

        d = 1e-8
        while np.sign(resid(-d)) == np.sign(resid(d)):
            d *= 100.0
            if d > 1e-1:
                raise IntegrationError(f"no critical straddle at xi={xi_a:.6g}")
        eps = brentq(resid, -d, d, xtol=1e-17, rtol=4 * np.finfo(float).eps)
        piece = integrate_profile(ode, A, replace(ctl, xi_max=xi_k), start=(xi_a, g_a * (1.0 + eps), h_a))
        if piece.termination.kind is not EventKind.REACHED_XI_MAX:
            raise IntegrationError(f"corrected piece from xi={xi_a:.6g} left the critical band")
        xs.append(piece.xi[1:])
        fs.append(piece.f[1:])
        hs.append(piece.dgdxi[1:])
    else:
        raise IntegrationError(f"xi_target={xi_target:g} not reached in {max_segments} segments")

    xi = np.concatenate(xs)
    traj = ProfileTrajectory(ode, A, xi, np.concatenate(fs), np.concatenate(hs),
                             Termination(EventKind.REACHED_XI_MAX, float(xi[-1])),
                             replace(ctl, xi_max=xi_target))
    return traj.with_tail(classify_tail(traj))


# ------------------------------------------------------------------ A(K)

def find_a_of_k(params: Params, K: float, tol: float = 1e-8, astar_cert: BisectionCertificate | None = None,
                controls: Controls | None = None, noise: float = 1e-6):
    """Shooting value whose profile decays like ``K xi^(-theta*)``.

    The search runs between ``1e-4 K_p`` and the upper witness of the A*
    bisection. ``tol`` is relative in K: bisection stops once the two
    witnesses' plateaus straddle K within ``tol``.
    """
    if not K > 0:
        raise ValueError("K must be positive")
    ode = ProfileODE.full(params)
    if astar_cert is None:
        _, astar_cert = find_astar(params, controls=controls, extend_to=None)
    lo = default_bracket(params)[0]
    hi = astar_cert.hi
    ctl = controls or Controls()
    slow: list[Probe] = []

    def is_upper(traj):
        kind = traj.tail.kind
        if kind is TailKind.SLOW:
            pr = Probe(traj.shooting_value, traj.tail, traj.tail.constant > K)
            slow.append(pr)
            _check_k(slow, noise)
            return pr.upper
        return kind not in SUBCRITICAL

    def stop(a, b):
        if a.tail.kind is TailKind.SLOW and b.tail.kind is TailKind.SLOW:
            return (b.tail.constant - a.tail.constant) / K <= tol
        return False

    try:
        cert = _bisect(ode, lo, hi, tol * lo, is_upper, ctl, stop=stop)
    except BracketInvalid as exc:
        raise TargetOutOfRange(f"K={K:g} not bracketed on ({lo:.6g}, {hi:.6g}): {exc}") from exc
    A = 0.5 * (cert.lo + cert.hi)
    est = shoot(ode, A, ctl)
    if est.tail.kind is not TailKind.SLOW:
        raise TargetOutOfRange(f"estimate A={A:.17g} classified {est.tail}")
    return A, replace(cert, estimate_trajectory=est)


def _check_k(slow: Sequence[Probe], noise: float):
    ordered = sorted(slow, key=lambda pr: pr.A)
    for a, b in zip(ordered, ordered[1:]):
        if b.A > a.A and b.tail.constant < a.tail.constant * (1.0 - noise):
            raise NonMonotoneK(f"K_est drops from {a.tail.constant:.10g} at A={a.A:.17g} "
                               f"to {b.tail.constant:.10g} at A={b.A:.17g}", ordered)


# ------------------------------------------------------------------ sweeps

@dataclass(frozen=True)
class SweepRow:
    A: float
    tail: Optional[TailClass]
    estimate: Optional[float]  # K_est on SlowDecay, xi^(sigma/(p-1)) f at the last sample otherwise
    error: Optional[str] = None


def _sweep_one(args):
    ode, A, ctl = args
    try:
        traj = shoot(ode, A, ctl)
    except Exception as exc:  # recorded inline
        return SweepRow(A, None, None, f"{type(exc).__name__}: {exc}")
    tail = traj.tail
    if tail.constant is not None:
        est = tail.constant
    elif ode.absorption:
        est = float(traj.xi[-1] ** derive_exponents(ode.params).crit_decay * traj.f[-1])
    else:
        est = float(traj.xi[-1] ** ode.slow_exponent * traj.f[-1])
    return SweepRow(A, tail, est)


def sweep_A(target, A_grid, controls: Controls | None = None, workers: int = 1) -> list[SweepRow]:
    """Classify one trajectory per shooting value; ``target`` is Params or a ProfileODE."""
    grid = [float(a) for a in A_grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("A_grid must be strictly increasing")
    ode = ProfileODE.full(target) if isinstance(target, Params) else target
    ctl = controls or Controls()
    jobs = [(ode, A, ctl) for A in grid]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(_sweep_one, jobs))
    return [_sweep_one(j) for j in jobs]


def transitions(rows: Sequence[SweepRow]) -> list[tuple[float, TailKind, TailKind]]:
    """Consecutive class changes in a sweep table as (A_after, kind_before, kind_after)."""
    out = []
    for a, b in zip(rows, rows[1:]):
        if a.tail is not None and b.tail is not None and a.tail.kind is not b.tail.kind:
            out.append((b.A, a.tail.kind, b.tail.kind))
    return out


# -------------------------------------------------------- PME profiles

def pme_plateau(m: float, dim: int, theta: float, f0: float, controls: Controls | None = None) -> float:
    traj = shoot(ProfileODE.pme_power(m, dim, theta), f0, controls)
    if traj.tail.kind is not TailKind.SLOW:
        raise ShootingError(f"PME profile from f0={f0:g} classified {traj.tail}")
    return traj.tail.constant


def find_pme_profile(m: float, dim: int, theta: float, l: float, tol: float = 1e-7,
                     controls: Controls | None = None) -> float:
    """Center value f0 of the profile of W_{theta,l} (plateau xi^theta f -> l).

    The absorption-free equation is invariant under f -> lam^(2/(m-1)) f(xi/lam),
    which multiplies the plateau by lam^(2/(m-1) + theta); so l grows like
    f0^(1 + theta (m-1)/2). One reference shot gives the answer up to plateau
    noise; the same power law then serves as a Newton-type update.
    """
    if not 0.0 < theta < dim:
        raise ParameterError(f"0 < theta < N violated: theta={theta}, N={dim}")
    if not l > 0:
        raise ValueError("l must be positive")
    expo = 1.0 + theta * (m - 1.0) / 2.0
    ctl = controls or Controls()
    f0 = 1.0
    k = pme_plateau(m, dim, theta, f0, ctl)
    best = (abs(k / l - 1.0), f0)
    for _ in range(20):
        f0 *= (l / k) ** (1.0 / expo)
        k = pme_plateau(m, dim, theta, f0, ctl)
        err = abs(k / l - 1.0)
        best = min(best, (err, f0))
        if err <= tol:
            break
    return best[1]


# -------------------------------------------------------- very singular profile

def find_vss(params: Params, bracket: tuple[float, float] | None = None, tol: float = 1e-10,
             controls: Controls | None = None):
    """Shooting value of the compactly supported profile (exploratory, ``p < p_F`` only)."""
    exps = derive_exponents(params)
    if not params.p < exps.p_fujita:
        raise ParameterError(f"p < p_F violated: p={params.p}, p_F={exps.p_fujita}")
    ode = ProfileODE.full(params)
    lo, hi = bracket if bracket is not None else default_bracket(params)
    ctl = controls or Controls()

    def beyond_contact(traj):
        return traj.tail.kind not in (TailKind.CROSSING, TailKind.CONTACT)

    cert = _bisect(ode, lo, hi, tol, beyond_contact, ctl)
    est = cert.witness_lo
    if hi - lo <= tol and cert.iterations == 0:
        return 0.5 * (cert.lo + cert.hi), cert
    if est.tail.kind is not TailKind.CONTACT:
        slope = est.termination.slope
        scale = float(np.max(np.abs(est.dgdxi)))
        raise ContactNotReached(f"lower witness still crosses: |g'|/max|g'| = {abs(slope) / scale:.3g}")
    return 0.5 * (cert.lo + cert.hi), replace(cert, estimate_trajectory=est)
