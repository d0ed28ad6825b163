import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pmelab.params import Params
from pmelab.pde import (CompactBump, Constant, DomainTooSmall, FromProfile, MassLedger,
                        NonFiniteState, PowerTail, RadialField, RadialGrid, SolverConfig, TruncatedPower,
                        build_initial, comparison_pair, data_from_dict, expanding_set_error,
                        field_from_snapshot, read_snapshot, rescale_field, simulate, step, write_manifest,
                        write_snapshot)
from pmelab.reference import BarenblattSpec, homogeneous_exact

P3 = Params(2, 3, 1, 1)
P6 = Params(2, 6, 1, 1)
PME = SolverConfig(absorption=0.0)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_grid_volumes(N):
    g = RadialGrid.uniform(64, 3.0, N)
    ball = 2.0 if N == 1 else (math.pi if N == 2 else 4 * math.pi / 3)
    assert g.volumes.sum() == pytest.approx(ball * 3.0 ** N, rel=1e-13)
    assert g.areas[0] == 0.0
    geo = RadialGrid.geometric(100, 50.0, N, 0.01)
    assert geo.edges[1] == pytest.approx(0.01)
    assert geo.R == 50.0 and np.all(np.diff(geo.edges) > 0)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        build_initial(Constant(1.0), RadialGrid.uniform(8, 1.0, 2), P3)


def test_constant_initial_mass():
    g = RadialGrid.uniform(128, 5.0, 1)
    f = build_initial(Constant(1.0), g, P3)
    assert np.all(f.u == 1.0)
    assert f.ledger.initial_mass == pytest.approx(10.0, rel=1e-14)


def test_truncated_power_formula():
    g = RadialGrid.uniform(200, 4.0, 1)
    f = build_initial(TruncatedPower(1.0, 3.0, 10.0), g, P3)
    r = g.centers
    tail = r ** -3 < 10
    assert np.allclose(f.u[tail], r[tail] ** -3, rtol=1e-15)
    assert np.all(f.u[~tail] == 10.0)


def test_power_tail_and_bump():
    pt = PowerTail(2.0, 1.5, 0.5)
    assert pt(np.array([0.0, 0.5, 2.0])) == pytest.approx([2.0, 2.0, 2.0 * 4 ** -1.5])
    assert pt.tail_constant == pytest.approx(2.0 * 0.5 ** 1.5)
    assert CompactBump(1.0, 1.0)(np.array([0.0, 0.5, 1.5])) == pytest.approx([1.0, 0.75, 0.0])
    assert data_from_dict({"kind": "CompactBump", "A": 1, "radius": 2}) == CompactBump(1, 2)
    with pytest.raises(ValueError):
        data_from_dict({"kind": "Nope"})


def test_from_profile_matches_barenblatt():
    B = BarenblattSpec(2, 1, 1.0)
    g = RadialGrid.uniform(256, 6.0, 1)
    f = build_initial(FromProfile(B, 1.0), g, P3)
    assert f.t == 1.0
    assert np.array_equal(f.u, B(g.centers, 1.0))


def test_zero_step_is_identity():
    g = RadialGrid.uniform(64, 4.0, 2)
    f = build_initial(CompactBump(1.0, 2.0), g, Params(2, 3, 1, 2))
    out = step(f, 0.0)
    assert out.t == f.t and np.array_equal(out.u, f.u) and out is not f


def test_single_step_respects_cfl():
    g = RadialGrid.uniform(64, 4.0, 1)
    f = build_initial(Constant(1.0), g, P3)
    out = step(f, 10.0)
    dr = g.edges[1]
    assert 0 < out.t <= 0.4 * dr ** 2 / (2 * 2 * 1.0) * 1.0000001
    tiny = step(f, 1e-9)
    assert tiny.t == pytest.approx(1e-9)


def test_homogeneous_constant_data():
    P = Params(2, 3, 0, 1, homogeneous_test=True)
    g = RadialGrid.uniform(32, 2.0, 1)
    f = build_initial(Constant(2.0), g, P)
    sim = simulate(f, 10.0, [1.0, 10.0], SolverConfig(boundary="reflecting"), dt_max=1e-2)
    for snap in sim.snapshots:
        assert np.ptp(snap.u) == 0.0
        assert snap.u[0] == pytest.approx(homogeneous_exact(2.0, 3.0, snap.t), rel=1e-4)


def test_probe_at_initial_time():
    g = RadialGrid.uniform(32, 2.0, 1)
    f = build_initial(CompactBump(1.0, 1.0), g, P3)
    sim = simulate(f, 0.0, [0.0])
    assert np.array_equal(sim.snapshots[0].u, f.u) and sim.snapshots[0].t == 0.0
    with pytest.raises(ValueError):
        simulate(f, 1.0, [2.0])


def test_short_barenblatt_run():
    B = BarenblattSpec(2, 1, 1.0)
    g = RadialGrid.uniform(512, 8.0, 1)
    f = build_initial(FromProfile(B, 1.0), g, P3)
    sim = simulate(f, 1.2, [1.1, 1.2], PME)
    for s in sim.snapshots:
        assert np.max(np.abs(s.u - B(g.centers, s.t))) < 3e-3
        assert abs(s.ledger.residual) < 1e-12
        assert s.ledger.absorbed == 0.0


def _random_field(grid, params, values, bc):
    u = np.asarray(values, dtype=float)
    M = float(np.dot(grid.volumes, u))
    return RadialField(grid, u, 0.0, params, MassLedger(M, M), bc)


values = arrays(np.float64, 40, elements=st.floats(0, 3))


@settings(max_examples=25)
@given(values, st.floats(0, 2), st.sampled_from(["dirichlet", "reflecting"]), st.integers(1, 3))
def test_ledger_and_positivity(vals, bc, boundary, N):
    g = RadialGrid.uniform(40, 2.0, N)
    f = _random_field(g, P3, vals, bc)
    sim = simulate(f, 0.05, [0.01, 0.05], SolverConfig(boundary=boundary))
    for s in sim.snapshots:
        assert np.all(s.u >= 0)
        assert abs(s.ledger.residual) <= 1e-9 * max(1.0, s.ledger.initial_mass) / max(s.ledger.initial_mass, 1e-300) \
            or s.ledger.initial_mass == 0


@settings(max_examples=20)
@given(values, arrays(np.float64, 40, elements=st.floats(0, 1)), st.integers(1, 3), st.booleans())
def test_comparison_principle(vals, gap, N, geometric):
    g = RadialGrid.geometric(40, 2.0, N, 0.01) if geometric else RadialGrid.uniform(40, 2.0, N)
    lo = _random_field(g, P6, vals, 0.5)
    hi = _random_field(g, P6, vals + gap, 0.5)
    assert comparison_pair(lo, hi, [0.01, 0.03]) <= 1e-12


def test_self_convergence_in_dt():
    g = RadialGrid.uniform(64, 4.0, 1)
    f = build_initial(CompactBump(1.0, 1.5), g, P3)
    finals = [simulate(f, 0.2, [0.2], dt_max=dt).snapshots[-1].u for dt in (2e-4, 1e-4, 5e-5)]
    d1 = np.max(np.abs(finals[0] - finals[1]))
    d2 = np.max(np.abs(finals[1] - finals[2]))
    assert 1.5 <= d1 / d2 <= 4


def test_non_finite_state_reports_cell():
    g = RadialGrid.uniform(8, 1.0, 1)
    u = np.zeros(8)
    u[3] = 1e200
    f = _random_field(g, Params(2, 3, 1, 1), u, 0.0)
    with pytest.raises(NonFiniteState) as info:
        simulate(f, 1.0, [1.0], SolverConfig(absorption=0.0, cfl=1.0), dt_max=1e-3)
    assert info.value.index in (2, 3, 4)


def test_expanding_set_error_cases():
    B = BarenblattSpec(2, 1, 1.0)
    g = RadialGrid.uniform(256, 8.0, 1)
    f = build_initial(FromProfile(B, 1.0), g, P3)
    same = lambda r, t: f.u[: len(r)]
    assert expanding_set_error(f, same, 1.0, (1 / 3, 1 / 3)) == 0.0
    shifted = lambda r, t: B(r, t) + np.where(r < g.centers[1], 0.25, 0.0)
    assert expanding_set_error(f, shifted, 0.0, (0.0, 1 / 3)) == pytest.approx(0.25)
    with pytest.raises(DomainTooSmall):
        expanding_set_error(f, B, 9.0, (1 / 3, 1 / 3))


def test_rescale_identity_and_semigroup():
    g = RadialGrid.uniform(128, 4.0, 2)
    f = build_initial(CompactBump(1.0, 2.0), g, Params(2, 3, 1, 2))
    f.t = 2.0
    for scheme in ("Crit", "BarN"):
        same = rescale_field(f, 1.0, scheme)
        assert np.array_equal(same.u, f.u) and same.t == f.t
        a = rescale_field(rescale_field(f, 1.7, scheme), 2.3, scheme)
        b = rescale_field(f, 1.7 * 2.3, scheme)
        assert np.allclose(a.u, b.u, rtol=1e-13) and a.t == pytest.approx(b.t, rel=1e-13)
        assert np.allclose(a.grid.edges, b.grid.edges, rtol=1e-13)


def test_rescale_onto_grid_interpolates():
    g = RadialGrid.uniform(400, 8.0, 1)
    B = BarenblattSpec(2, 1, 1.0)
    f = build_initial(FromProfile(B, 1.0), g, P3)
    res = rescale_field(f, 2.0, "BarN", onto=g)
    assert np.all(res.u >= 0)
    assert np.max(np.abs(res.u - B(g.centers, res.t))) < 5e-3


def test_barn_maps_barenblatt_to_itself():
    B = BarenblattSpec(2, 1, 0.6)
    g = RadialGrid.uniform(200, 6.0, 1)
    f = build_initial(FromProfile(B, 1.5), g, P3)
    res = rescale_field(f, 3.0, "BarN")
    assert np.allclose(res.u, B(res.grid.centers, res.t), rtol=1e-12, atol=1e-15)
    assert res.ledger.initial_mass == pytest.approx(f.ledger.initial_mass, rel=1e-12)


def test_logn_with_lambda_e():
    g = RadialGrid.uniform(100, 5.0, 2)
    data = PowerTail(1.0, 2.0)
    f = build_initial(data, g, Params(2, 6, 1, 2))
    res = rescale_field(f, math.e, "LogN")
    assert np.allclose(res.u, math.e ** 2 * data(math.e * res.grid.centers), rtol=1e-13)
    with pytest.raises(ValueError):
        rescale_field(f, 1.0, "LogN")


def test_barn_commutes_with_pme_solver():
    B = BarenblattSpec(2, 1, 1.0)
    g = RadialGrid.uniform(128, 8.0, 1)
    f = build_initial(FromProfile(B, 1.0), g, P3)
    a = rescale_field(simulate(f, 1.5, [1.5], PME).snapshots[-1], 2.0, "BarN")
    g0 = rescale_field(f, 2.0, "BarN")
    b = simulate(g0, a.t, [a.t], PME).snapshots[-1]
    assert np.max(np.abs(a.u - b.u)) / np.max(a.u) < 1e-3


def test_snapshot_and_manifest_round_trip(tmp_path):
    g = RadialGrid.uniform(50, 2.0, 1)
    f = build_initial(CompactBump(1.0, 1.0), g, P3)
    sim = simulate(f, 0.1, [0.1])
    p = write_snapshot(sim.snapshots[0], tmp_path / "s.csv")
    r, u = read_snapshot(p)
    assert np.array_equal(u, sim.snapshots[0].u) and np.array_equal(r, g.centers)
    back = field_from_snapshot(p, f, 0.1)
    assert np.array_equal(back.u, sim.snapshots[0].u)
    m = write_manifest(tmp_path / "m.json", P3, g, SolverConfig(), [0.1], sim)
    doc = json.loads(m.read_text())
    assert doc["boundary"] == "dirichlet" and doc["ledger"][0]["t"] == 0.1


def test_reflecting_constant_with_absorption_profile():
    # sigma > 0: the far field follows the cellwise ODE u' = -r^sigma u^p
    g = RadialGrid.uniform(64, 20.0, 1)
    f = build_initial(Constant(1.0), g, P3)
    s = simulate(f, 1.0, [1.0], SolverConfig(boundary="reflecting")).snapshots[0]
    r = g.centers[-10]
    assert s.u[-10] == pytest.approx((1 + 2 * r) ** -0.5, rel=2e-2)
