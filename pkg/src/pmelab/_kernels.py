"""Compiled inner loops of the radial solver."""
import math

import numpy as np
from numba import njit

BC_DIRICHLET = 0
BC_REFLECTING = 1


@njit(cache=True)
def _powm(u, m):
    if m == 2.0:
        return u * u
    if u <= 0.0:
        return 0.0
    return u ** m


@njit(cache=True)
def cfl_dt(u, m, coef, cfl, edge_val=0.0):
    """Largest dt keeping every cell update a convex combination.

    coef[i] = (sum of face area / centre spacing) / cell volume; edge_val is
    the value held outside the last cell (0 for a reflecting wall).
    """
    n = u.shape[0]
    worst = 0.0
    for i in range(n):
        hi = u[i]
        if i > 0 and u[i - 1] > hi:
            hi = u[i - 1]
        if i < n - 1 and u[i + 1] > hi:
            hi = u[i + 1]
        if i == n - 1 and edge_val > hi:
            hi = edge_val
        s = m * hi ** (m - 1.0) * coef[i] if hi > 0.0 else 0.0
        if s > worst:
            worst = s
    if worst == 0.0:
        return np.inf
    return cfl / worst


@njit(cache=True)
def advance(u, t, t_target, dt_max, max_steps, m, p, absorb, weight, vol, face, face_out,
            coef, bc_mode, bc_val, cfl, work):
    """Step u in place from t towards t_target.

    Each step: exact solution of u' = -absorb * w_i u^p per cell, then an
    explicit conservative diffusion update. ``work`` has length 2n + 1.
    Returns (t, absorbed, outflux, steps, bad) with bad = -1 when every
    value stayed finite, otherwise the first offending cell.
    """
    n = u.shape[0]
    um = work[: n]
    flux = work[n: 2 * n + 1]
    absorbed = 0.0
    c_abs = 0.0
    outflux = 0.0
    c_out = 0.0
    steps = 0
    bcm = _powm(bc_val, m)
    edge_val = bc_val if bc_mode == BC_DIRICHLET else 0.0
    while t < t_target and steps < max_steps:
        dt = cfl_dt(u, m, coef, cfl, edge_val)
        if dt > dt_max:
            dt = dt_max
        last = False
        if t + dt >= t_target:
            dt = t_target - t
            last = True
        if dt <= 0.0:
            break
        # absorption substep, exact per cell
        if absorb != 0.0:
            loss = 0.0
            for i in range(n):
                ui = u[i]
                if ui > 0.0:
                    rate = (p - 1.0) * absorb * weight[i] * dt
                    unew = ui * (1.0 + rate * ui ** (p - 1.0)) ** (-1.0 / (p - 1.0))
                    loss += vol[i] * (ui - unew)
                    u[i] = unew
            y = loss - c_abs
            s = absorbed + y
            c_abs = (s - absorbed) - y
            absorbed = s
        # diffusion substep
        for i in range(n):
            um[i] = _powm(u[i], m)
        flux[0] = 0.0
        for i in range(n - 1):
            flux[i + 1] = face[i] * (um[i + 1] - um[i])
        if bc_mode == BC_DIRICHLET:
            flux[n] = face_out * (bcm - um[n - 1])
        else:
            flux[n] = 0.0
        for i in range(n):
            v = u[i] + dt * (flux[i + 1] - flux[i]) / vol[i]
            if not math.isfinite(v):
                return t, absorbed, outflux, steps, i
            u[i] = v if v > 0.0 else 0.0
        y = -dt * flux[n] - c_out
        s = outflux + y
        c_out = (s - outflux) - y
        outflux = s
        t = t_target if last else t + dt
        steps += 1
    return t, absorbed, outflux, steps, -1
