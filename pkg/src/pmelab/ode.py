"""Radial profile ODE for self-similar solutions, integrated by shooting.

The profile equation is

    (f^m)'' + (N-1)/xi (f^m)' + a f + b xi f' - c xi^sigma f^p = 0,
    f(0) = A,  f'(0) = 0,

with ``c = 1`` (full equation, ``a = alpha``, ``b = beta``) or ``c = 0``
(porous-medium profiles with arbitrary positive ``a, b``). It is integrated
as a first-order system in ``g = f^m`` and ``g'``, which stays Lipschitz up to
a zero of ``f``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp

from .params import Exponents, Params, derive_exponents, params_from_dict


class IntegrationError(RuntimeError):
    pass


class StepSizeUnderflow(IntegrationError):
    """The adaptive step collapsed; ``state`` holds the last accepted (xi, g, g')."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


class TailKind(str, Enum):
    SLOW = "SlowDecay"
    CRITICAL = "CriticalDecay"
    CROSSING = "Crossing"
    CONTACT = "Contact"
    DIVERGENT = "Divergent"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class TailClass:
    kind: TailKind
    constant: Optional[float] = None  # K for SlowDecay, plateau of xi^(sigma/(p-1)) f for CriticalDecay

    def __str__(self):
        if self.constant is None:
            return self.kind.value
        return f"{self.kind.value}({self.constant:.10g})"


class EventKind(str, Enum):
    REACHED_XI_MAX = "ReachedXiMax"
    CONTACT_ZERO = "ContactZero"
    OVERFLOW = "Overflow"


@dataclass(frozen=True)
class Termination:
    kind: EventKind
    xi: float
    slope: Optional[float] = None  # g' at the zero of f, for ContactZero


@dataclass(frozen=True)
class ProfileODE:
    m: float
    dim: int
    a_coef: float
    b_coef: float
    params: Optional[Params] = None  # present <=> absorption term included

    def __post_init__(self):
        if not (self.a_coef > 0 and self.b_coef > 0):
            raise ValueError("a_coef and b_coef must be positive")
        if self.params is not None:
            exps = derive_exponents(self.params)
            if not (math.isclose(self.a_coef, exps.alpha, rel_tol=1e-12)
                    and math.isclose(self.b_coef, exps.beta, rel_tol=1e-12)):
                raise ValueError("with absorption, (a_coef, b_coef) must equal (alpha, beta)")
            if self.m != self.params.m or self.dim != self.params.dim:
                raise ValueError("m and dim must match params")

    @property
    def absorption(self) -> bool:
        return self.params is not None

    @property
    def slow_exponent(self) -> float:
        """Exponent e with xi^e f -> const on slowly decaying tails (a/b)."""
        return self.a_coef / self.b_coef

    @classmethod
    def full(cls, params: Params) -> "ProfileODE":
        exps = derive_exponents(params)
        return cls(params.m, params.dim, exps.alpha, exps.beta, params)

    @classmethod
    def pme(cls, m: float, dim: int, a_coef: float, b_coef: float) -> "ProfileODE":
        return cls(float(m), int(dim), float(a_coef), float(b_coef))

    @classmethod
    def pme_power(cls, m: float, dim: int, theta: float) -> "ProfileODE":
        """Profiles of W_{theta,l}: a = theta/gamma, b = 1/gamma, gamma = (m-1) theta + 2."""
        gamma = (m - 1.0) * theta + 2.0
        return cls.pme(m, dim, theta / gamma, 1.0 / gamma)

    @classmethod
    def barenblatt(cls, m: float, dim: int) -> "ProfileODE":
        eta = 1.0 / (m * dim - dim + 2.0)
        return cls.pme(m, dim, dim * eta, eta)

    def to_dict(self) -> dict:
        d = {"m": self.m, "dim": self.dim, "a_coef": self.a_coef, "b_coef": self.b_coef}
        d["params"] = self.params.to_dict() if self.params is not None else None
        return d


@dataclass(frozen=True)
class Controls:
    xi_max: float = 1e3
    xi0: Optional[float] = None        # default 1e-8 * max(1, A^((m-1)/2)), capped by the absorption scale
    rel_tol: float = 1e-10
    abs_tol: Optional[float] = None    # default 1e-6 * f_floor^m
    f_floor: Optional[float] = None    # default 1e-12 * A
    contact_tol: float = 1e-6          # |g'| at the zero, relative to max |g'|
    sample_ratio: float = 1.01
    overflow: float = 1e6              # stop once f > overflow * max(A, 1)
    max_rel_change: float = 0.05
    method: str = "LSODA"

    def resolved(self, ode: ProfileODE, A: float) -> "Controls":
        xi0 = self.xi0
        if xi0 is None:
            xi0 = 1e-8 * max(1.0, A ** ((ode.m - 1.0) / 2.0))
            if ode.absorption:
                # keep the absorption term negligible at the start for large A
                p, s = ode.params.p, ode.params.sigma
                xi0 = min(xi0, 1e-4 * (ode.a_coef * A ** (1.0 - p)) ** (1.0 / s))
        f_floor = self.f_floor if self.f_floor is not None else 1e-12 * A
        abs_tol = self.abs_tol if self.abs_tol is not None else 1e-6 * f_floor ** ode.m
        return replace(self, xi0=xi0, f_floor=f_floor, abs_tol=abs_tol)


@dataclass(frozen=True, eq=False)
class ProfileTrajectory:
    ode: ProfileODE
    shooting_value: float
    xi: np.ndarray
    f: np.ndarray
    dgdxi: np.ndarray
    termination: Termination
    controls: Controls
    tail: Optional[TailClass] = None

    def __post_init__(self):
        for name in ("xi", "f", "dgdxi"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def g(self) -> np.ndarray:
        return self.f ** self.ode.m

    def with_tail(self, tail: TailClass) -> "ProfileTrajectory":
        return replace(self, tail=tail)


def series_start(ode: ProfileODE, A: float, xi0: float) -> tuple[float, float]:
    """(g, g') at ``xi0`` from the local expansion g = A^m - a A xi^2 / (2N)."""
    c = ode.a_coef * A / ode.dim
    return A ** ode.m - 0.5 * c * xi0 * xi0, -c * xi0


def _make_rhs(ode: ProfileODE):
    m, N, a, b = ode.m, float(ode.dim), ode.a_coef, ode.b_coef
    inv_m, mm1 = 1.0 / m, m - 1.0
    nm1 = N - 1.0
    absorb = ode.absorption
    s = ode.params.sigma if absorb else 0.0
    p = ode.params.p if absorb else 1.0
    pow_ = math.pow

    def rhs(xi, y):
        g, h = y
        if g <= 0.0:
            return (h, 0.0)
        f = pow_(g, inv_m)
        fp = h / (m * pow_(f, mm1))
        hp = -a * f - b * xi * fp
        if nm1:
            hp -= nm1 / xi * h
        if absorb:
            try:
                hp += pow_(xi, s) * pow_(f, p)
            except OverflowError:  # trial step far past the overflow event
                hp = 1e300
        return (h, hp)

    def jac(xi, y):
        g, h = y
        if g <= 0.0:
            return np.array(((0.0, 1.0), (0.0, -nm1 / xi)))
        f = pow_(g, inv_m)
        fm1 = pow_(f, mm1)
        dfdg = 1.0 / (m * fm1)
        d_hp_dg = -a * dfdg + b * xi * h * mm1 / (m * m) / (fm1 * g)
        d_hp_dh = -b * xi / (m * fm1) - nm1 / xi
        if absorb:
            d_hp_dg += pow_(xi, s) * p * inv_m * pow_(f, p) / g
        return np.array(((0.0, 1.0), (d_hp_dg, d_hp_dh)))

    return rhs, jac


def integrate_profile(ode: ProfileODE, A: float, controls: Controls | None = None,
                      *, start: tuple[float, float, float] | None = None) -> ProfileTrajectory:
    """Shoot the profile ODE from ``f(0) = A``.

    ``start = (xi, g, g')`` replaces the series start; it is used to continue
    a trajectory from an interior state. Samples are logged on a geometric
    grid and refined where ``f`` changes by more than ``max_rel_change``.
    """
    if not A > 0:
        raise ValueError("shooting value must be positive")
    ctl = (controls or Controls()).resolved(ode, A)
    m = ode.m
    if start is None:
        xi0 = ctl.xi0
        g0, h0 = series_start(ode, A, xi0)
    else:
        xi0, g0, h0 = (float(v) for v in start)
    if not ctl.xi_max > xi0:
        raise ValueError("xi_max must exceed the start point")
    rhs, jac = _make_rhs(ode)
    g_floor = ctl.f_floor ** m
    g_over = (ctl.overflow * max(A, 1.0)) ** m

    # A crossing makes the system stiff right at f = 0 (f' blows up), so the
    # zero is located by linear extrapolation once it is closer than
    # reach * xi; a contact touches zero tangentially and is caught as a
    # local minimum of g at the noise level.
    reach = 1e-9
    g_touch = 1e-8 * A ** m

    def hit_zero(xi, y):
        return y[0] + reach * xi * y[1] - g_floor
    hit_zero.terminal = True
    hit_zero.direction = -1

    def hit_touch(xi, y):
        return y[1] if y[0] < g_touch else -1.0
    hit_touch.terminal = True
    hit_touch.direction = 1

    def hit_over(xi, y):
        return y[0] - g_over
    hit_over.terminal = True
    hit_over.direction = 1

    # With absorption, once xi^(sigma/(p-1)) f is above the K_p band and f
    # decays at less than half the critical rate the trajectory is on the
    # blow-up branch. Stopping there avoids a solver stall at the interior
    # minimum of f, where g' -> 0 drowns in rounding of the right-hand side.
    if ode.absorption:
        exps = derive_exponents(ode.params)
        e2, k_hi = exps.crit_decay, 1.1 * exps.k_p

    def hit_turn(xi, y):
        g, h = y
        if g <= 0.0 or xi ** e2 * g ** (1.0 / m) < k_hi:
            return -1.0
        return xi * h / (m * g) + 0.5 * e2
    hit_turn.terminal = True
    hit_turn.direction = 1

    events = (hit_zero, hit_over, hit_touch) + ((hit_turn,) if ode.absorption else ())
    n = max(2, int(math.ceil(math.log(ctl.xi_max / xi0) / math.log(ctl.sample_ratio))) + 1)
    grid = np.geomspace(xi0, ctl.xi_max, n)
    grid[0], grid[-1] = xi0, ctl.xi_max
    kwargs = dict(rtol=ctl.rel_tol, atol=ctl.abs_tol, events=events,
                  t_eval=grid, dense_output=True)
    if ctl.method in ("Radau", "BDF"):
        kwargs["jac"] = jac
    sol = solve_ivp(rhs, (xi0, ctl.xi_max), (g0, h0), method=ctl.method, **kwargs)
    if sol.status == -1:
        last = (float(sol.t[-1]), float(sol.y[0, -1]), float(sol.y[1, -1])) if sol.t.size else (xi0, g0, h0)
        if "step size" in sol.message.lower() or "excess work" in sol.message.lower():
            raise StepSizeUnderflow(f"profile integration failed at xi={last[0]:.6g}: {sol.message}", last)
        raise IntegrationError(sol.message)

    xs, gs, hs = list(sol.t), list(sol.y[0]), list(sol.y[1])
    if sol.t_events[0].size:
        xe, (ge, he) = sol.t_events[0][0], sol.y_events[0][0]
        if he < 0:
            xe = xe - ge / he
        term = Termination(EventKind.CONTACT_ZERO, float(xe), float(he))
        ge = 0.0
    elif sol.t_events[2].size:
        xe, (ge, he) = sol.t_events[2][0], sol.y_events[2][0]
        term = Termination(EventKind.CONTACT_ZERO, float(xe), float(he))
        ge = 0.0
    elif sol.t_events[1].size:
        xe, (ge, he) = sol.t_events[1][0], sol.y_events[1][0]
        term = Termination(EventKind.OVERFLOW, float(xe))
    elif len(sol.t_events) > 3 and sol.t_events[3].size:
        xe, (ge, he) = sol.t_events[3][0], sol.y_events[3][0]
        term = Termination(EventKind.OVERFLOW, float(xe))
    else:
        xe = None
        term = Termination(EventKind.REACHED_XI_MAX, float(ctl.xi_max))
    if xe is not None and (not xs or xe > xs[-1]):
        xs.append(float(xe))
        gs.append(float(ge))
        hs.append(float(he))

    xi = np.asarray(xs)
    g = np.maximum(np.asarray(gs), 0.0)
    h = np.asarray(hs)
    xi, g, h = _refine(sol.sol, xi, g, h, m, ctl)
    return ProfileTrajectory(ode, float(A), xi, g ** (1.0 / m), h, term, ctl)


def _refine(dense, xi, g, h, m, ctl, max_depth=12):
    """Insert dense-output samples where consecutive f values jump."""
    f = g ** (1.0 / m)
    level = 1e3 * ctl.f_floor
    for _ in range(max_depth):
        big = np.maximum(f[:-1], f[1:])
        jump = np.abs(np.diff(f)) > ctl.max_rel_change * big
        jump &= big > level
        idx = np.nonzero(jump)[0]
        if idx.size == 0:
            break
        mids = 0.5 * (xi[idx] + xi[idx + 1])
        ym = dense(mids)
        xi = np.insert(xi, idx + 1, mids)
        g = np.insert(g, idx + 1, np.maximum(ym[0], 0.0))
        h = np.insert(h, idx + 1, ym[1])
        f = g ** (1.0 / m)
    return xi, g, h


def tail_functional(traj: ProfileTrajectory, exponent: float) -> tuple[np.ndarray, np.ndarray]:
    """Sampled curve ``xi -> xi^exponent f(xi)``."""
    return traj.xi, traj.xi ** exponent * traj.f


@dataclass(frozen=True)
class TailTolerances:
    drift_tol: float = 1e-3
    band_tol: float = 1e-2
    growth_tol: float = 0.05


def zero_order(traj: ProfileTrajectory, samples: int = 3) -> float:
    """Local power q in g ~ s^q near the terminal zero, from -g' s / g.

    Uses the last few samples with g > 0; nan when there are none.
    """
    xc = traj.termination.xi
    g, h, xi = traj.g, traj.dgdxi, traj.xi
    ok = np.flatnonzero((g > 0) & (xi < xc))
    if ok.size == 0:
        return math.nan
    idx = ok[-samples:]
    return float(np.median(-h[idx] * (xc - xi[idx]) / g[idx]))


def classify_tail(traj: ProfileTrajectory, exps: Exponents | None = None, window: float = 0.1,
                  tol: TailTolerances = TailTolerances()) -> TailClass:
    """Decide the asymptotic law of a terminated trajectory.

    ``window`` is the trailing fraction of samples examined. For
    absorption-free profiles the slow exponent is ``a/b`` and no critical
    class exists.
    """
    if not 0.0 < window <= 0.5:
        raise ValueError("window must lie in (0, 1/2]")
    term = traj.termination
    if term.kind is EventKind.CONTACT_ZERO:
        scale = float(np.max(np.abs(traj.dgdxi)))
        if abs(term.slope) < traj.controls.contact_tol * scale:
            return TailClass(TailKind.CONTACT)
        # g vanishes like s^q, s = distance to the zero: q = 1 at a crossing,
        # q = m/(m-1) at a porous-medium front (where g' -> 0 only slowly for large m)
        q = zero_order(traj)
        if q > 1.0 + 0.5 / (traj.ode.m - 1.0):
            return TailClass(TailKind.CONTACT)
        return TailClass(TailKind.CROSSING)
    if term.kind is EventKind.OVERFLOW:
        return TailClass(TailKind.DIVERGENT)

    ode = traj.ode
    if exps is None and ode.absorption:
        exps = derive_exponents(ode.params)
    n = traj.xi.size
    k = max(3, int(math.ceil(window * n)))
    xi, f = traj.xi[-k:], traj.f[-k:]
    if np.any(f <= 0):
        return TailClass(TailKind.INDETERMINATE)

    if ode.absorption:
        phi2 = xi ** exps.crit_decay * f
        med2 = float(np.median(phi2))
        drift2 = float((phi2.max() - phi2.min()) / med2)
        if drift2 < tol.drift_tol and abs(med2 / exps.k_p - 1.0) < tol.band_tol:
            return TailClass(TailKind.CRITICAL, med2)

    phi1 = xi ** ode.slow_exponent * f
    med1 = float(np.median(phi1))
    if med1 > 0 and float((phi1.max() - phi1.min()) / med1) < tol.drift_tol:
        return TailClass(TailKind.SLOW, med1)

    if ode.absorption:
        d = np.diff(phi2)
        if np.all(d > 0) and phi2[-1] > (1.0 + tol.growth_tol) * phi2[0]:
            return TailClass(TailKind.DIVERGENT)
    return TailClass(TailKind.INDETERMINATE)


def shoot(ode: ProfileODE, A: float, controls: Controls | None = None, window: float = 0.1,
          tol: TailTolerances = TailTolerances(), max_doublings: int = 3,
          settle=None) -> ProfileTrajectory:
    """Integrate and classify; an Indeterminate verdict doubles xi_max up to ``max_doublings`` times.

    ``settle(traj)`` returning True accepts an Indeterminate trajectory as is.
    """
    ctl = controls or Controls()
    for attempt in range(max_doublings + 1):
        traj = integrate_profile(ode, A, ctl)
        tail = classify_tail(traj, window=window, tol=tol)
        traj = traj.with_tail(tail)
        if tail.kind is not TailKind.INDETERMINATE or attempt == max_doublings:
            return traj
        if settle is not None and settle(traj):
            return traj
        ctl = replace(ctl, xi_max=2.0 * ctl.xi_max)
    raise AssertionError("unreachable")


# ---------------------------------------------------------------- CSV export

def _header(traj: ProfileTrajectory) -> dict:
    term = traj.termination
    ctl = asdict(traj.controls)
    return {
        "ode": traj.ode.to_dict(),
        "shooting_value": traj.shooting_value,
        "controls": ctl,
        "termination": {"kind": term.kind.value, "xi": term.xi, "slope": term.slope},
        "tail": None if traj.tail is None else {"kind": traj.tail.kind.value, "constant": traj.tail.constant},
    }


def trajectory_to_csv(traj: ProfileTrajectory, path=None) -> str:
    """Write ``# {json header}`` then columns xi, f, dgdxi. Returns the text."""
    buf = io.StringIO()
    buf.write("# " + json.dumps(_header(traj)) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["xi", "f", "dgdxi"])
    for row in zip(traj.xi, traj.f, traj.dgdxi):
        w.writerow([repr(float(v)) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def trajectory_from_csv(source) -> ProfileTrajectory:
    """Inverse of :func:`trajectory_to_csv`; ``source`` is a path or the CSV text."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text()
    else:
        text = source
    first, rest = text.split("\n", 1)
    if not first.startswith("# "):
        raise ValueError("missing JSON header line")
    head = json.loads(first[2:])
    rows = list(csv.reader(io.StringIO(rest)))
    if rows[0] != ["xi", "f", "dgdxi"]:
        raise ValueError(f"unexpected columns {rows[0]}")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    o = head["ode"]
    params = params_from_dict(o["params"]) if o["params"] else None
    ode = ProfileODE(float(o["m"]), int(o["dim"]), float(o["a_coef"]), float(o["b_coef"]), params)
    t = head["termination"]
    term = Termination(EventKind(t["kind"]), float(t["xi"]), t["slope"])
    tail = None
    if head["tail"] is not None:
        tail = TailClass(TailKind(head["tail"]["kind"]), head["tail"]["constant"])
    return ProfileTrajectory(ode, float(head["shooting_value"]), data[:, 0], data[:, 1], data[:, 2],
                             term, Controls(**head["controls"]), tail)
