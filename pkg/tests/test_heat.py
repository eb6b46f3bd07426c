"""Operator assembly, time stepping, trajectories, curvature commutation."""

import json
import math

import numpy as np
import pytest

from finslerheat import (
    Asym1DNorm,
    CflViolation,
    DegenerateField,
    EuclideanNorm,
    IndexRange,
    MeasureField,
    MetricField,
    RandersNorm,
    RiemannianNorm,
    ScalarField,
    TorusGrid,
    UnsupportedFamily,
    VectorField,
    bochner_residual,
    gradient_energy,
    gradient_field,
    heat_step,
    integrate,
    nonlinear_laplacian,
    solve_heat_flow,
    weighted_laplacian,
)
from finslerheat.geometry import differential_field


def euclid_setup(nodes=64, dim=1):
    grid = TorusGrid(dim, nodes)
    metric = MetricField(grid, EuclideanNorm(dim))
    return grid, metric, MeasureField.lebesgue(grid)


def discrete_eigenvalue(mode: int, h: float) -> float:
    """Exact symbol of the 3-point second difference on a sine mode."""
    return -(2.0 - 2.0 * math.cos(2 * math.pi * mode * h)) / h**2


def shifted_sine(grid, amp=0.5, phase=0.3):
    x = grid.coordinates()[:, 0]
    return ScalarField(grid, 1.0 + amp * np.sin(2 * math.pi * x + phase))


# ---------------------------------------------------------------------------
# assembly structure
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "desc",
    [
        EuclideanNorm(2),
        RiemannianNorm(np.array([[4.0, 1.0], [1.0, 2.0]])),
        RandersNorm(np.eye(2), np.array([0.4, 0.1])),
    ],
    ids=lambda d: d.family,
)
def test_assembly_kernel_and_self_adjointness(desc):
    grid = TorusGrid(2, 16)
    metric = MetricField(grid, desc)
    measure = MeasureField.from_log_density(
        grid, lambda x, y: 0.2 * math.cos(2 * math.pi * x)
    )
    if desc.family == "randers":
        measure = MeasureField.lebesgue(grid)
    rng = np.random.default_rng(0)
    direction = VectorField(grid, rng.standard_normal((grid.n_nodes, 2)) + 0.2)
    asm = weighted_laplacian(metric, measure, direction)
    ones = np.ones(grid.n_nodes)
    assert np.max(np.abs(asm.apply(ones))) <= 1e-12
    sig = measure.sigma
    for _ in range(5):
        f = rng.standard_normal(grid.n_nodes)
        g = rng.standard_normal(grid.n_nodes)
        lhs = float(np.sum(asm.apply(f) * g * sig))
        rhs = float(np.sum(f * asm.apply(g) * sig))
        assert lhs == pytest.approx(rhs, abs=1e-12 * max(1.0, abs(lhs)))


def test_assembly_euclidean_is_three_point_stencil():
    grid, metric, measure = euclid_setup(32)
    direction = VectorField(grid, np.ones((grid.n_nodes, 1)))
    asm = weighted_laplacian(metric, measure, direction)
    rng = np.random.default_rng(1)
    u = rng.standard_normal(grid.n_nodes)
    stencil = (np.roll(u, -1) - 2 * u + np.roll(u, 1)) / grid.h**2
    np.testing.assert_allclose(asm.apply(u), stencil, atol=1e-9)


def test_assembly_diagonal_riemannian_eigenvalue():
    grid = TorusGrid(2, 16)
    metric = MetricField(grid, RiemannianNorm(np.diag([4.0, 1.0])))
    measure = MeasureField.lebesgue(grid)
    x = grid.coordinates()[:, 0]
    u = np.sin(2 * math.pi * x)
    direction = VectorField(grid, np.ones((grid.n_nodes, 2)))
    asm = weighted_laplacian(metric, measure, direction)
    # inverse tensor multiplies the x-stencil by exactly 1/4
    lam = 0.25 * discrete_eigenvalue(1, grid.h)
    np.testing.assert_allclose(asm.apply(u), lam * u, atol=1e-9)


def test_assembly_cross_terms_converge():
    a = np.array([[4.0, 1.0], [1.0, 2.0]])
    a_inv = np.linalg.inv(a)
    errs = []
    for nodes in (16, 32):
        grid = TorusGrid(2, nodes)
        metric = MetricField(grid, RiemannianNorm(a))
        measure = MeasureField.lebesgue(grid)
        pts = grid.coordinates()
        u = np.sin(2 * math.pi * pts[:, 0]) * np.sin(2 * math.pi * pts[:, 1])
        direction = VectorField(grid, np.ones((grid.n_nodes, 2)))
        asm = weighted_laplacian(metric, measure, direction)
        # analytic constant-coefficient value with the full inverse tensor
        uxx = -((2 * math.pi) ** 2) * u
        uyy = uxx
        uxy = (2 * math.pi) ** 2 * np.cos(2 * math.pi * pts[:, 0]) * np.cos(
            2 * math.pi * pts[:, 1]
        )
        exact = a_inv[0, 0] * uxx + 2 * a_inv[0, 1] * uxy + a_inv[1, 1] * uyy
        errs.append(float(np.max(np.abs(asm.apply(u) - exact))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.2)


def test_assembly_weighted_drift_term():
    # A u = u'' - f' u' + O(h^2) for the weighted operator in one dimension
    grid, metric, _ = euclid_setup(128)
    x = grid.coordinates()[:, 0]
    measure = MeasureField(grid, 0.2 * np.cos(2 * math.pi * x))
    u = np.sin(2 * math.pi * x + 0.3)
    direction = VectorField(grid, np.ones((grid.n_nodes, 1)))
    asm = weighted_laplacian(metric, measure, direction)
    upp = -((2 * math.pi) ** 2) * u
    up = 2 * math.pi * np.cos(2 * math.pi * x + 0.3)
    fp = -0.2 * 2 * math.pi * np.sin(2 * math.pi * x)
    exact = upp - fp * up
    gap = np.max(np.abs(asm.apply(u) - exact))
    assert gap <= 100 * grid.h**2 * (2 * math.pi) ** 2


def test_carre_du_champ_matches_quadratic_form():
    # Gamma(u) from the assembly against its defining combination
    grid, metric, measure = euclid_setup(32)
    rng = np.random.default_rng(2)
    direction = VectorField(grid, np.ones((grid.n_nodes, 1)))
    asm = weighted_laplacian(metric, measure, direction)
    u = rng.standard_normal(grid.n_nodes)
    direct = 0.5 * (asm.apply(u * u) - 2.0 * u * asm.apply(u))
    np.testing.assert_allclose(asm.carre_du_champ(u), direct, atol=1e-8)
    assert np.min(asm.carre_du_champ(u)) >= -1e-12


# ---------------------------------------------------------------------------
# nonlinear operator
# ---------------------------------------------------------------------------


def test_nonlinear_laplacian_constant_field():
    grid, metric, measure = euclid_setup(32)
    u = ScalarField(grid, np.full(grid.n_nodes, 3.3))
    np.testing.assert_allclose(nonlinear_laplacian(metric, measure, u).values, 0.0)


def test_nonlinear_laplacian_asym1d_monotone_window():
    grid = TorusGrid(1, 256)
    metric = MetricField(grid, Asym1DNorm(2.0, 1.0))
    measure = MeasureField.lebesgue(grid)
    x = grid.coordinates()[:, 0]
    u = ScalarField(grid, np.sin(2 * math.pi * x))
    out = nonlinear_laplacian(metric, measure, u).values
    # where u is increasing the tensor is p_plus^2, so A u = u'' / 4
    rising = np.cos(2 * math.pi * x) > 0.2
    interior = rising & (np.roll(rising, 1)) & (np.roll(rising, -1))
    exact = -((2 * math.pi) ** 2) * np.sin(2 * math.pi * x) / 4.0
    gap = np.max(np.abs(out[interior] - exact[interior]))
    assert gap <= 100 * grid.h**2 * (2 * math.pi) ** 2


def test_nonlinear_laplacian_randers_translation_equivariance():
    grid = TorusGrid(2, 16)
    metric = MetricField(grid, RandersNorm(np.eye(2), np.array([0.4, 0.1])))
    measure = MeasureField.lebesgue(grid)
    rng = np.random.default_rng(3)
    pts = grid.coordinates()
    vals = np.sin(2 * math.pi * pts[:, 0]) + 0.7 * np.cos(2 * math.pi * pts[:, 1])
    out = nonlinear_laplacian(metric, measure, ScalarField(grid, vals)).values
    shifted = np.roll(vals.reshape(grid.shape), 1, axis=0).ravel()
    out_shifted = nonlinear_laplacian(metric, measure, ScalarField(grid, shifted)).values
    np.testing.assert_allclose(
        out_shifted, np.roll(out.reshape(grid.shape), 1, axis=0).ravel(), atol=1e-12
    )


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------


def test_heat_step_implicit_eigenfunction():
    grid, metric, measure = euclid_setup(64)
    x = grid.coordinates()[:, 0]
    u = ScalarField(grid, 1.0 + 0.5 * np.sin(2 * math.pi * x))
    dt = 1e-3
    out, asm = heat_step(metric, measure, u, dt)
    lam = discrete_eigenvalue(1, grid.h)
    expected = 1.0 + 0.5 * np.sin(2 * math.pi * x) / (1.0 - dt * lam)
    np.testing.assert_allclose(out.values, expected, atol=1e-11)
    assert asm.dt == dt


def test_heat_step_crank_nicolson_eigenfunction():
    grid, metric, measure = euclid_setup(64)
    x = grid.coordinates()[:, 0]
    u = ScalarField(grid, 1.0 + 0.5 * np.sin(2 * math.pi * x))
    dt = 1e-3
    out, _ = heat_step(metric, measure, u, dt, scheme="crank_nicolson")
    lam = discrete_eigenvalue(1, grid.h)
    factor = (1.0 + 0.5 * dt * lam) / (1.0 - 0.5 * dt * lam)
    expected = 1.0 + 0.5 * np.sin(2 * math.pi * x) * factor
    np.testing.assert_allclose(out.values, expected, atol=1e-11)


@pytest.mark.parametrize("scheme", ["implicit_euler", "crank_nicolson", "explicit"])
def test_heat_step_keeps_constants(scheme):
    grid, metric, measure = euclid_setup(32)
    u = ScalarField(grid, np.full(grid.n_nodes, 2.0))
    dt = 1e-4 if scheme == "explicit" else 1e-3
    out, _ = heat_step(metric, measure, u, dt, scheme=scheme)
    np.testing.assert_allclose(out.values, 2.0, atol=1e-12)


def test_heat_step_conserves_mass():
    grid, metric, _ = euclid_setup(64)
    measure = MeasureField.from_log_density(grid, lambda x: 0.3 * math.cos(2 * math.pi * x))
    u = shifted_sine(grid)
    out, _ = heat_step(metric, measure, u, 1e-3)
    assert integrate(out, measure) == pytest.approx(integrate(u, measure), abs=1e-10)


def test_explicit_scheme_cfl_guard():
    grid, metric, measure = euclid_setup(64)
    u = shifted_sine(grid)
    with pytest.raises(CflViolation):
        heat_step(metric, measure, u, grid.h**2, scheme="explicit")
    out, _ = heat_step(metric, measure, u, 0.4 * grid.h**2, scheme="explicit")
    assert np.all(np.isfinite(out.values))


def test_heat_step_rejects_bad_scheme_and_dt():
    grid, metric, measure = euclid_setup(32)
    u = shifted_sine(grid)
    with pytest.raises(UnsupportedFamily):
        heat_step(metric, measure, u, 1e-3, scheme="leapfrog")
    with pytest.raises(ValueError):
        heat_step(metric, measure, u, -1e-3)


# ---------------------------------------------------------------------------
# full flows
# ---------------------------------------------------------------------------


def test_flow_constant_initial_stays_constant():
    grid, metric, measure = euclid_setup(32)
    u0 = ScalarField(grid, np.ones(grid.n_nodes))
    traj = solve_heat_flow(metric, measure, u0, t_final=0.02, dt=1e-3)
    for k in range(traj.n_times):
        np.testing.assert_allclose(traj.fields[k], 1.0, atol=1e-12)
    assert not traj.violations


def test_flow_matches_exact_series_with_refinement():
    errs = []
    for nodes in (32, 64):
        grid, metric, measure = euclid_setup(nodes)
        x = grid.coordinates()[:, 0]
        u0 = ScalarField(grid, 1.0 + 0.5 * np.sin(2 * math.pi * x))
        dt = 0.1 * grid.h**2
        t_final = 0.02
        traj = solve_heat_flow(metric, measure, u0, t_final, dt)
        exact = 1.0 + 0.5 * math.exp(-((2 * math.pi) ** 2) * t_final) * np.sin(
            2 * math.pi * x
        )
        errs.append(float(np.max(np.abs(traj.fields[-1] - exact))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.25)


def test_flow_mass_and_l2_decay():
    grid, metric, _ = euclid_setup(64)
    measure = MeasureField.from_log_density(grid, lambda x: 0.2 * math.cos(2 * math.pi * x))
    u0 = shifted_sine(grid)
    traj = solve_heat_flow(metric, measure, u0, t_final=0.05, dt=5e-4)
    m0 = integrate(u0, measure)
    l2 = []
    for k in range(traj.n_times):
        assert integrate(traj.field_at(k), measure) == pytest.approx(m0, rel=1e-9)
        l2.append(float(np.sum(traj.fields[k] ** 2 * measure.sigma)))
    assert np.all(np.diff(l2) <= 1e-12)


def test_flow_comparison_principle():
    grid, metric, measure = euclid_setup(64)
    rng = np.random.default_rng(4)
    x = grid.coordinates()[:, 0]
    base = 1.0 + 0.3 * np.sin(2 * math.pi * x) + 0.1 * np.cos(4 * math.pi * x)
    above = base + 0.05 * (1.0 + np.sin(6 * math.pi * x + rng.uniform()))
    tu = solve_heat_flow(metric, measure, ScalarField(grid, base), 0.03, 5e-4)
    tv = solve_heat_flow(metric, measure, ScalarField(grid, above), 0.03, 5e-4)
    for k in range(tu.n_times):
        assert np.all(tu.fields[k] <= tv.fields[k] + 1e-9)


def test_flow_range_monitor_records_no_false_positives():
    grid, metric, measure = euclid_setup(64)
    traj = solve_heat_flow(metric, measure, shifted_sine(grid), 0.05, 5e-4)
    assert traj.violations == []


def test_trajectory_index_lookup():
    grid, metric, measure = euclid_setup(32)
    traj = solve_heat_flow(metric, measure, shifted_sine(grid), 0.01, 1e-3)
    assert traj.index_of(0.0) == 0
    assert traj.index_of(0.004) == 4
    assert traj.index_of(0.0042) == 4  # within the half-step window
    with pytest.raises(IndexRange):
        traj.index_of(0.0045)  # dead zone between two recorded times
    with pytest.raises(IndexRange):
        traj.index_of(1.0)


def test_trajectory_export_roundtrip(tmp_path):
    grid, metric, measure = euclid_setup(32)
    traj = solve_heat_flow(metric, measure, shifted_sine(grid), 0.01, 1e-3)
    traj.export(str(tmp_path))
    meta = json.loads((tmp_path / "trajectory.json").read_text())
    assert meta["scheme"] == "implicit_euler"
    assert meta["times"] == [0.0, pytest.approx(0.01)]
    first = (tmp_path / "field_0.000000.csv").read_text().strip().splitlines()
    assert len(first) == grid.n_nodes + 1  # header plus one row per node


def test_flow_fallback_independent_without_degenerate_nodes():
    grid, metric, measure = euclid_setup(64)
    x = grid.coordinates()[:, 0]
    u0 = ScalarField(grid, 1.0 + 0.5 * np.sin(2 * math.pi * x + 0.3))
    t1 = solve_heat_flow(metric, measure, u0, 0.02, 1e-3)
    t2 = solve_heat_flow(metric, measure, u0, 0.02, 1e-3, fallback=np.array([[9.0]]))
    if all(a.degenerate_nodes == 0 for a in t1.assemblies):
        np.testing.assert_array_equal(t1.fields[-1], t2.fields[-1])
    else:
        assert np.max(np.abs(t1.fields[-1] - t2.fields[-1])) <= 1e-8


def test_time_derivative_commutes_with_gradient_energy():
    # centered time difference of F^2(grad u) against twice the
    # differential of Au paired with the gradient; measured constant is
    # about 9, asserted at 20
    grid, metric, measure = euclid_setup(64)
    u0 = ScalarField(grid, shifted_sine(grid).values)
    dt = 2e-4
    traj = solve_heat_flow(metric, measure, u0, 0.02, dt)
    k = traj.n_times // 2
    em = gradient_energy(metric, traj.field_at(k - 1))
    ep = gradient_energy(metric, traj.field_at(k + 1))
    lhs = (ep - em) / (2 * dt)
    au = traj.delta_u(k)
    grad = gradient_field(metric, traj.field_at(k)).values
    dau = differential_field(ScalarField(grid, au)).values
    rhs = 2.0 * np.einsum("ni,ni->n", dau, grad)
    scale = max(1.0, float(np.max(np.abs(rhs))))
    assert np.max(np.abs(lhs - rhs)) <= 20.0 * scale * (dt + grid.h**2)


# ---------------------------------------------------------------------------
# curvature commutation residual
# ---------------------------------------------------------------------------


def test_bochner_residual_second_order():
    vals = []
    for nodes in (32, 64, 128):
        grid, metric, measure = euclid_setup(nodes)
        x = grid.coordinates()[:, 0]
        u = ScalarField(grid, np.sin(2 * math.pi * x + 0.3))
        out = bochner_residual(metric, measure, u)
        vals.append(float(np.max(np.abs(out.residual.values))))
    assert vals[0] / vals[1] == pytest.approx(4.0, rel=0.15)
    assert vals[1] / vals[2] == pytest.approx(4.0, rel=0.15)


def test_bochner_equality_case_one_dimension():
    # with N = n = 1 and constant weight the slack is the residual itself
    grid, metric, measure = euclid_setup(64)
    x = grid.coordinates()[:, 0]
    u = ScalarField(grid, np.sin(2 * math.pi * x + 0.3))
    out = bochner_residual(metric, measure, u, N=1.0)
    scale = (2 * math.pi) ** 4
    assert np.max(np.abs(out.n_form_slack.values)) <= 50 * grid.h**2 * scale


def test_bochner_slack_nonnegative_for_finite_n():
    grid, metric, measure = euclid_setup(64)
    x = grid.coordinates()[:, 0]
    u = ScalarField(grid, np.sin(2 * math.pi * x + 0.3))
    for N in (2.0, 8.0, math.inf):
        out = bochner_residual(metric, measure, u, N=N)
        assert np.min(out.n_form_slack.values) >= -50 * grid.h**2 * (2 * math.pi) ** 4


def test_bochner_rejects_degenerate_and_wrong_family():
    grid, metric, measure = euclid_setup(32)
    x = grid.coordinates()[:, 0]
    with pytest.raises(DegenerateField):
        # gradient vanishes exactly at the quarter-period nodes
        bochner_residual(metric, measure, ScalarField(grid, np.sin(2 * math.pi * x)))
    rmetric = MetricField(grid, Asym1DNorm(2.0, 1.0))
    with pytest.raises(UnsupportedFamily):
        bochner_residual(
            rmetric, measure, ScalarField(grid, np.sin(2 * math.pi * x + 0.3))
        )
    weighted = MeasureField.from_log_density(grid, lambda t: 0.2 * math.cos(2 * math.pi * t))
    with pytest.raises(ValueError):
        bochner_residual(
            metric, weighted, ScalarField(grid, np.sin(2 * math.pi * x + 0.3)), N=1.0
        )
