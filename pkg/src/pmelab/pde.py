"""Radial finite-volume solver for u_t = Lap(u^m) - |x|^sigma u^p.

Cells are annuli (intervals for N = 1, counted on both sides of the
origin). Each step applies the exact absorption flow per cell and then an
explicit conservative diffusion update under a local CFL bound, so
positivity and the discrete comparison principle hold. A ledger tracks
mass absorbed and mass lost through the outer boundary.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from . import _kernels
from .params import Params, derive_exponents
from .reference import sphere_area


class NonFiniteState(ArithmeticError):
    def __init__(self, index: int, t: float):
        super().__init__(f"non-finite value in cell {index} at t={t:g}")
        self.index = index
        self.t = t


class DomainTooSmall(ValueError):
    """The requested region (or the mass budget) needs a larger outer radius."""


# ---------------------------------------------------------------- grid

@dataclass(frozen=True)
class GridSpec:
    cells: int = 2048
    R: float = 16.0
    geometric: bool = False
    first: Optional[float] = None  # first cell width for geometric grids

    def build(self, dim: int) -> "RadialGrid":
        if self.geometric:
            return RadialGrid.geometric(self.cells, self.R, dim, self.first)
        return RadialGrid.uniform(self.cells, self.R, dim)


class RadialGrid:
    def __init__(self, edges, dim: int, geometric: bool = False):
        edges = np.asarray(edges, dtype=float)
        if edges[0] != 0.0 or not np.all(np.diff(edges) > 0):
            raise ValueError("edges must start at 0 and increase strictly")
        if dim < 1:
            raise ValueError("dim >= 1")
        self.edges = edges
        self.dim = int(dim)
        self.geometric = geometric
        self.centers = 0.5 * (edges[1:] + edges[:-1])
        w = sphere_area(dim)
        self.volumes = w * np.diff(edges ** dim) / dim
        area = w * edges ** (dim - 1)
        area[0] = 0.0
        self.areas = area
        for a in (self.edges, self.centers, self.volumes, self.areas):
            a.setflags(write=False)

    @classmethod
    def uniform(cls, cells: int, R: float, dim: int) -> "RadialGrid":
        return cls(np.linspace(0.0, R, cells + 1), dim)

    @classmethod
    def geometric(cls, cells: int, R: float, dim: int, first: Optional[float] = None) -> "RadialGrid":
        h0 = first if first is not None else R / cells * 1e-2
        if not 0 < h0 < R / cells:
            raise ValueError("geometric grid needs 0 < first < R/cells")
        # widths h0 q^i summing to R
        def f(d):  # q = 1 + d
            e = cells * math.log1p(d)
            return (h0 * math.expm1(e) / d if e < 700 else math.inf) - R
        q = 1.0 + brentq(f, 1e-14, 1.0, xtol=1e-16)
        edges = np.concatenate(([0.0], np.cumsum(h0 * q ** np.arange(cells))))
        edges[-1] = R
        return cls(edges, dim, geometric=True)

    @property
    def R(self) -> float:
        return float(self.edges[-1])

    @property
    def cells(self) -> int:
        return len(self.centers)

    def scaled(self, factor: float) -> "RadialGrid":
        return RadialGrid(self.edges * factor, self.dim, self.geometric)

    def to_dict(self) -> dict:
        return {"cells": self.cells, "R": self.R, "geometric": self.geometric, "dim": self.dim}

    def same_as(self, other: "RadialGrid") -> bool:
        return self.dim == other.dim and np.array_equal(self.edges, other.edges)

    def abs_weights(self, sigma: float) -> np.ndarray:
        """r^sigma at centres; the origin cell takes the volume average."""
        w = self.centers ** sigma
        w[0] = self.dim / (self.dim + sigma) * self.edges[1] ** sigma
        return w


# ---------------------------------------------------------------- fields

@dataclass
class MassLedger:
    initial_mass: float
    current_mass: float
    absorbed: float = 0.0
    boundary_outflux: float = 0.0

    @property
    def residual(self) -> float:
        """Relative defect of M(t) + absorbed + outflux = M0."""
        scale = abs(self.initial_mass) or 1.0
        return (self.current_mass + self.absorbed + self.boundary_outflux - self.initial_mass) / scale

    def to_dict(self) -> dict:
        d = asdict(self)
        d["residual"] = self.residual
        return d


@dataclass(frozen=True)
class SolverConfig:
    cfl: float = 0.4
    boundary: str = "dirichlet"  # or "reflecting"
    absorption: float = 1.0  # coefficient of the absorption term; 0 gives the pure PME

    def __post_init__(self):
        if self.boundary not in ("dirichlet", "reflecting"):
            raise ValueError(f"unknown boundary mode {self.boundary!r}")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RadialField:
    grid: RadialGrid
    u: np.ndarray
    t: float
    params: Params
    ledger: MassLedger
    boundary_value: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        if self.u.shape != self.grid.centers.shape:
            raise ValueError("values do not match the grid")
        if not np.all(np.isfinite(self.u)) or np.any(self.u < 0):
            raise ValueError("field values must be finite and nonnegative")

    @property
    def mass(self) -> float:
        return float(np.dot(self.grid.volumes, self.u))

    def copy(self) -> "RadialField":
        return RadialField(self.grid, self.u.copy(), self.t, self.params, replace(self.ledger),
                           self.boundary_value)


# ---------------------------------------------------------------- initial data

@dataclass(frozen=True)
class Constant:
    A: float

    def __call__(self, r):
        return np.full_like(np.asarray(r, dtype=float), self.A)


@dataclass(frozen=True)
class PowerTail:
    """A for r <= core, A (r/core)^-theta beyond; the tail constant is A core^theta."""
    A: float
    theta: float
    core: float = 1.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            return self.A * np.minimum(1.0, (np.maximum(r, 1e-300) / self.core) ** (-self.theta))

    @property
    def tail_constant(self) -> float:
        return self.A * self.core ** self.theta


@dataclass(frozen=True)
class TruncatedPower:
    """min(cap, K r^-theta)."""
    K: float
    theta: float
    cap: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.full_like(r, self.cap)
        pos = r > 0
        out[pos] = np.minimum(self.cap, self.K * r[pos] ** (-self.theta))
        return out


@dataclass(frozen=True)
class CompactBump:
    """A (1 - (r/radius)^2)_+."""
    A: float
    radius: float

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.A * np.maximum(1.0 - (r / self.radius) ** 2, 0.0)


@dataclass(frozen=True)
class FromProfile:
    """Slice at time t0 of an evaluator u(r, t)."""
    evaluator: Callable
    t0: float

    def __call__(self, r):
        return np.asarray(self.evaluator(np.asarray(r, dtype=float), self.t0), dtype=float)


DataKind = Union[Constant, PowerTail, TruncatedPower, CompactBump, FromProfile]

_DATA_KINDS = {"Constant": Constant, "PowerTail": PowerTail, "TruncatedPower": TruncatedPower,
               "CompactBump": CompactBump}


def data_from_dict(d: dict) -> DataKind:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _DATA_KINDS:
        raise ValueError(f"unknown data kind {kind!r}; expected one of {sorted(_DATA_KINDS)}")
    return _DATA_KINDS[kind](**d)


def data_to_dict(data) -> dict:
    if isinstance(data, FromProfile):
        return {"kind": "FromProfile", "t0": data.t0, "evaluator": type(data.evaluator).__name__}
    return {"kind": type(data).__name__, **asdict(data)}


def build_initial(data: DataKind, grid: RadialGrid, params: Params, t0: Optional[float] = None) -> RadialField:
    """Cell values by the midpoint rule; the frozen boundary value is the data at R."""
    if grid.dim != params.dim:
        raise ValueError(f"grid dimension {grid.dim} does not match N={params.dim}")
    u = np.maximum(data(grid.centers), 0.0)
    if t0 is None:
        t0 = data.t0 if isinstance(data, FromProfile) else 0.0
    bc = float(np.maximum(data(np.array([grid.R]))[0], 0.0))
    M0 = float(np.dot(grid.volumes, u))
    return RadialField(grid, u, float(t0), params, MassLedger(M0, M0), bc)


# ---------------------------------------------------------------- time stepping

class _Operator:
    """Grid-dependent coefficients, shared by every step on one grid."""

    def __init__(self, grid: RadialGrid, params: Params, solver: SolverConfig):
        c = grid.centers
        h = np.diff(c)
        self.face = grid.areas[1:-1] / h
        self.face_out = grid.areas[-1] / (grid.R - c[-1])
        coef = np.zeros(grid.cells)
        coef[:-1] += self.face
        coef[1:] += self.face
        if solver.boundary == "dirichlet":
            coef[-1] += self.face_out
        self.coef = coef / grid.volumes
        self.weight = grid.abs_weights(params.sigma)
        self.bc_mode = _kernels.BC_DIRICHLET if solver.boundary == "dirichlet" else _kernels.BC_REFLECTING
        self.work = np.empty(2 * grid.cells + 1)


def _advance(field: RadialField, t_target: float, dt_max: float, solver: SolverConfig,
             max_steps: int = 2 ** 62, op: Optional[_Operator] = None) -> int:
    op = op or _Operator(field.grid, field.params, solver)
    P = field.params
    t, absorbed, outflux, steps, bad = _kernels.advance(
        field.u, float(field.t), float(t_target), float(dt_max), int(max_steps), P.m, P.p,
        float(solver.absorption), op.weight, field.grid.volumes, op.face, float(op.face_out),
        op.coef, op.bc_mode, float(field.boundary_value), float(solver.cfl), op.work)
    if bad >= 0:
        raise NonFiniteState(int(bad), t)
    field.t = t
    led = field.ledger
    led.absorbed += absorbed
    led.boundary_outflux += outflux
    led.current_mass = field.mass
    return steps


def step(field: RadialField, dt_max: float, solver: SolverConfig = SolverConfig()) -> RadialField:
    """One step of size min(dt_max, CFL bound); returns a new field."""
    if dt_max < 0:
        raise ValueError("dt_max must be nonnegative")
    out = field.copy()
    if dt_max == 0:
        return out
    _advance(out, field.t + dt_max, dt_max, solver, max_steps=1)
    return out


@dataclass
class Simulation:
    snapshots: list
    ledger_history: list
    steps: int = 0


def simulate(field: RadialField, t_end: float, probes: Sequence[float] = (),
             solver: SolverConfig = SolverConfig(), dt_max: float = math.inf) -> Simulation:
    """Advance to t_end, landing exactly on each probe time.

    The returned snapshots correspond to the probe times (t_end included
    only when listed); the input field is left untouched.
    """
    probes = sorted(float(t) for t in probes)
    if probes and probes[0] < field.t:
        raise ValueError("probe times precede the field time")
    if probes and probes[-1] > t_end:
        raise ValueError("probe times exceed t_end")
    if t_end < field.t:
        raise ValueError("t_end must not precede the field time")
    work = field.copy()
    op = _Operator(work.grid, work.params, solver)
    snaps, hist, total = [], [], 0
    for tp in probes:
        total += _advance(work, tp, dt_max, solver, op=op)
        snaps.append(work.copy())
        hist.append({"t": work.t, **work.ledger.to_dict()})
    if work.t < t_end:
        total += _advance(work, t_end, dt_max, solver, op=op)
    return Simulation(snaps, hist, total)


def comparison_pair(lower: RadialField, upper: RadialField, probes: Sequence[float],
                    solver: SolverConfig = SolverConfig()) -> float:
    """Largest amount by which the lower run exceeds the upper one at the probes.

    Both runs take the same step sequence (the smaller of the two CFL bounds),
    so the result measures the monotonicity of the discrete scheme itself.
    """
    if not lower.grid.same_as(upper.grid) or lower.t != upper.t:
        raise ValueError("comparison needs the same grid and start time")
    a, b = lower.copy(), upper.copy()
    op = _Operator(a.grid, a.params, solver)
    edge = lambda f: f.boundary_value if solver.boundary == "dirichlet" else 0.0
    worst = float(np.max(a.u - b.u))
    for tp in sorted(float(t) for t in probes):
        while a.t < tp:
            dt = min(_kernels.cfl_dt(a.u, a.params.m, op.coef, solver.cfl, edge(a)),
                     _kernels.cfl_dt(b.u, b.params.m, op.coef, solver.cfl, edge(b)), tp - a.t)
            target = tp if a.t + dt >= tp else a.t + dt
            for f in (a, b):
                _advance(f, target, dt, solver, max_steps=1, op=op)
                f.t = target
        worst = max(worst, float(np.max(a.u - b.u)))
    return worst


# ---------------------------------------------------------------- diagnostics

def expanding_set_error(field: RadialField, reference: Callable, c: float,
                        scaling: tuple[float, float]) -> float:
    """t^a' max over r <= c t^b' of |u - reference| at cell centres."""
    ta, tb = scaling
    t = field.t
    if not t > 0:
        raise ValueError("expanding sets need t > 0")
    radius = c * t ** tb
    if radius > field.grid.R:
        raise DomainTooSmall(f"S_c radius {radius:g} exceeds R={field.grid.R:g}")
    r = field.grid.centers
    sel = r <= radius
    sel[0] = True
    ref = np.asarray(reference(r[sel], t), dtype=float)
    return float(t ** ta * np.max(np.abs(field.u[sel] - ref)))


def _rescale_factors(scheme: str, lam: float, params: Params) -> tuple[float, float, float]:
    """(amplitude, space, time) with u_lam(x, t) = amp * u(space * x, time * t)."""
    N, m = params.dim, params.m
    if scheme == "Crit":
        ex = derive_exponents(params)
        return lam ** ex.theta_star, lam, lam ** ex.gamma_crit
    if scheme == "BarN":
        return lam ** N, lam, lam ** (m * N - N + 2.0)
    if scheme == "LogN":
        if not lam > 1:
            raise ValueError("LogN rescaling needs lambda > 1")
        ln = math.log(lam)
        return lam ** N / ln, lam, lam ** (m * N - N + 2.0) / ln ** (m - 1.0)
    raise ValueError(f"unknown rescaling {scheme!r}")


def rescale_field(field: RadialField, lam: float, scheme: str,
                  onto: Optional[RadialGrid] = None) -> RadialField:
    """The rescaled solution as a field.

    Without ``onto`` the values live on the grid shrunk by lam (no
    interpolation); with it they are interpolated by a monotone cubic in
    r, clamped at 0 and held constant past the outermost centre.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    amp, space, time = _rescale_factors(scheme, lam, field.params)
    grid = field.grid.scaled(1.0 / space)
    u = amp * field.u
    if onto is not None:
        if onto.dim != grid.dim:
            raise ValueError("target grid has another dimension")
        ip = PchipInterpolator(grid.centers, u, extrapolate=False)
        r = np.clip(onto.centers, grid.centers[0], grid.centers[-1])
        u = np.maximum(ip(r), 0.0)
        grid = onto
    mass_factor = amp / space ** field.grid.dim
    led = field.ledger
    new_led = MassLedger(led.initial_mass * mass_factor, float(np.dot(grid.volumes, u)),
                         led.absorbed * mass_factor, led.boundary_outflux * mass_factor)
    return RadialField(grid, u, field.t / time, field.params, new_led, amp * field.boundary_value)


# ---------------------------------------------------------------- I/O

def write_snapshot(field: RadialField, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["r", "u"])
        for r, u in zip(field.grid.centers, field.u):
            w.writerow([repr(float(r)), repr(float(u))])
    return path


def read_snapshot(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1]


def field_from_snapshot(path, like: RadialField, t: float) -> RadialField:
    """Rebuild a field from a snapshot CSV written on ``like``'s grid."""
    r, u = read_snapshot(path)
    if not np.array_equal(r, like.grid.centers):
        raise ValueError(f"{path}: snapshot grid differs from the run grid")
    return RadialField(like.grid, u, t, like.params, replace(like.ledger), like.boundary_value)


def write_manifest(path, params: Params, grid: RadialGrid, solver: SolverConfig,
                   probes: Sequence[float], sim: Simulation, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "params": params.to_dict(),
        "grid": grid.to_dict(),
        "boundary": solver.boundary,
        "cfl": solver.cfl,
        "absorption": solver.absorption,
        "probes": list(map(float, probes)),
        "steps": sim.steps,
        "ledger": sim.ledger_history,
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2))
    return path
