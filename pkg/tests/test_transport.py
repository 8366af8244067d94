import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from oeduu import counters
from oeduu.darcy import UncertainSample
from oeduu.errors import DimensionError, InvalidParameterError
from oeduu.grid_prior import Grid, gaussian_bumps
from oeduu.transport import (
    ForwardOperator,
    SensorNetwork,
    TransportConfig,
    assemble_dense,
    diffusion_matrix,
    upwind_matrix,
    window_weights,
)

from conftest import still_sample


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def dense_oracle(F, m):
    """Dense implicit Euler with the same spatial matrices; window averages by fine
    quadrature of the piecewise-linear time interpolant."""
    A = np.eye(F.n) + F.dt * F.operator.toarray()
    P = F.sensors.interp.toarray()
    U = [m]
    for _ in range(F.config.n_steps):
        U.append(np.linalg.solve(A, U[-1]))
    S = np.array([P @ u for u in U])  # (K+1, s)
    out = []
    for tau in F.config.obs_times:
        h = F.config.obs_halfwidth
        tt = np.linspace(tau - h, tau + h, 20001)
        vals = np.array([np.interp(tt, F.times, S[:, l]) for l in range(F.s)])
        out.append(np.trapezoid(vals, tt, axis=1) / (2 * h))
    return np.concatenate(out)


def test_config_invariants():
    with pytest.raises(InvalidParameterError):
        TransportConfig(n_steps=5)
    with pytest.raises(InvalidParameterError):
        TransportConfig(kappa=0.0)
    with pytest.raises(InvalidParameterError):
        TransportConfig(obs_times=(7.0, 15.8))
    with pytest.raises(InvalidParameterError):
        TransportConfig(obs_times=(9.0, 7.0))
    with pytest.raises(InvalidParameterError):
        TransportConfig().check_t0(6.5)


def test_sensor_network_validation(small_grid):
    with pytest.raises(InvalidParameterError):
        SensorNetwork.from_points(small_grid, [[0.0, 0.5]])
    with pytest.raises(InvalidParameterError):
        SensorNetwork.from_points(small_grid, np.zeros((0, 2)))
    net = SensorNetwork.lattice(small_grid, (4, 3), (0.15, 0.15))
    assert net.s == 12
    assert np.allclose(net.interp.sum(axis=1), 1.0)


def test_window_weights_linear_exact():
    t = np.sort(np.concatenate([[0.0, 3.0], np.random.default_rng(0).uniform(0, 3, 17)]))
    c = window_weights(t, 0.7, 2.1)
    assert np.isclose(c.sum(), 1.0, rtol=0, atol=1e-14)
    # exact on linear functions of time
    assert np.isclose(c @ (2 * t + 1), 2 * 1.4 + 1, atol=1e-13)
    with pytest.raises(InvalidParameterError):
        window_weights(t, -0.1, 1.0)


def test_zero_input_and_dimension_errors(small_ops):
    F = small_ops[0]
    assert np.array_equal(F.apply(np.zeros(F.n)), np.zeros(F.d))
    assert np.array_equal(F.apply_transpose(np.zeros(F.d)), np.zeros(F.n))
    with pytest.raises(DimensionError):
        F.apply(np.zeros(F.n + 1))
    with pytest.raises(DimensionError):
        F.apply_transpose(np.zeros(F.d - 1))


def test_grid_mismatch(small_grid, small_config, small_sensors):
    other = Grid(9, 9, 1.5, 1.0)
    with pytest.raises(DimensionError):
        ForwardOperator(small_grid, still_sample(other), small_config, small_sensors)


def test_adjoint_identity_many(small_ops, rng):
    worst = 0.0
    for trial in range(50):
        F = small_ops[trial % len(small_ops)]
        m, d = rng.standard_normal(F.n), rng.standard_normal(F.d)
        worst = max(worst, rel(F.apply(m) @ d, m @ F.apply_transpose(d)))
    assert worst <= 1e-12


def test_batched_matches_columns(small_ops, rng):
    F = small_ops[1]
    M = rng.standard_normal((F.n, 3))
    D = rng.standard_normal((F.d, 2))
    assert np.allclose(F.apply(M), np.column_stack([F.apply(c) for c in M.T]), atol=1e-14)
    assert np.allclose(F.apply_transpose(D),
                       np.column_stack([F.apply_transpose(c) for c in D.T]), atol=1e-14)


def test_linearity(small_ops, rng):
    F = small_ops[2]
    m1, m2 = rng.standard_normal((2, F.n))
    a, b = 1.7, -0.3
    lhs = F.apply(a * m1 + b * m2)
    rhs = a * F.apply(m1) + b * F.apply(m2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))


def test_constant_preserved_without_flow(small_grid, small_config, small_sensors):
    F = ForwardOperator(small_grid, still_sample(small_grid), small_config, small_sensors)
    obs = F.apply(np.full(F.n, 2.5))
    assert np.max(np.abs(obs - 2.5)) <= 1e-8


def test_mass_conserved_without_flow(small_grid, small_config, small_sensors, rng):
    F = ForwardOperator(small_grid, still_sample(small_grid), small_config, small_sensors)
    w = small_grid.half_weights()
    U = F.states(rng.uniform(0, 1, F.n))
    mass = U @ w
    assert np.max(np.abs(mass - mass[0])) <= 1e-10 * abs(mass[0])


def test_nonnegativity(small_ops, rng):
    for F in small_ops:
        U = F.states(rng.uniform(0, 1, F.n) * (rng.uniform(size=F.n) > 0.7))
        assert U.min() >= -1e-12


def test_step_matrix_is_m_matrix(small_ops):
    A = small_ops[0].step_matrix.toarray()
    off = A - np.diag(np.diag(A))
    assert off.max() <= 0.0
    # M-matrix: nonnegative inverse
    assert np.linalg.inv(A).min() >= -1e-14


def test_diffusion_rows_sum_to_zero(small_grid):
    L = diffusion_matrix(small_grid, 0.01)
    assert np.allclose(np.asarray(L.sum(axis=1)).ravel(), 0.0, atol=1e-12)
    # symmetric in the trapezoid-weighted inner product
    W = np.diag(small_grid.half_weights())
    S = W @ L.toarray()
    assert np.allclose(S, S.T, atol=1e-12)


def test_upwind_kills_constants(small_grid, rng):
    vx, vy = rng.standard_normal((2, small_grid.n))
    U = upwind_matrix(small_grid, vx, vy)
    assert np.allclose(U @ np.ones(small_grid.n), 0.0, atol=1e-12)


def test_dense_time_stepping_oracle(small_grid, small_sensors):
    cfg = TransportConfig(kappa=2e-3, t1=16.0, n_steps=40)
    F = ForwardOperator(small_grid, still_sample(small_grid), cfg, small_sensors)
    m = gaussian_bumps(small_grid, [[0.75, 0.5]], [0.15], [1.0])
    got = F.apply(m)
    ref = dense_oracle(F, m)
    assert np.max(np.abs(got - ref)) <= 1e-6 * np.max(np.abs(ref))
    # off-center sensors: decay in time under pure diffusion from a central bump
    obs = got.reshape(F.r, F.s)
    far = np.linalg.norm(small_sensors.locations - [0.75, 0.5], axis=1) > 0.3
    assert np.all(np.diff(obs[:, ~far], axis=0) <= 1e-12)


def test_dense_oracle_with_flow(small_ops, rng):
    F = small_ops[3]
    m = rng.standard_normal(F.n)
    ref = dense_oracle(F, m)
    assert np.max(np.abs(F.apply(m) - ref)) <= 1e-6 * np.max(np.abs(ref))


def test_assemble_dense(small_ops, rng):
    F = small_ops[0]
    A = assemble_dense(F)
    assert A.shape == (F.d, F.n)
    m, d = rng.standard_normal(F.n), rng.standard_normal(F.d)
    assert np.allclose(A @ m, F.apply(m), rtol=0, atol=1e-13 * np.abs(A).max() * F.n)
    assert np.allclose(A.T @ d, F.apply_transpose(d), rtol=0, atol=1e-13 * np.abs(A).max() * F.d)
    assert np.linalg.matrix_rank(A) <= min(F.d, F.n)
    with pytest.raises(InvalidParameterError):
        assemble_dense(F, max_n=10)


def test_preconditioned_spectrum_decays(small_ops, small_prior):
    F = small_ops[0]
    Ft = assemble_dense(F) @ small_prior.apply_sqrt_cov(np.eye(F.n))
    sv = sla.svdvals(Ft)
    assert np.any(sv[: min(F.d, F.n) - 1] < 1e-6 * sv[0])


def test_adjoint_reaches_upstream(small_grid, small_config, small_sensors):
    n = small_grid.n
    sample = UncertainSample(small_grid, np.zeros(n), np.full(n, -0.05), np.zeros(n), 0.0)
    F = ForwardOperator(small_grid, sample, small_config, small_sensors)
    e = np.zeros(F.d)
    l = 5
    e[(F.r - 1) * F.s + l] = 1.0
    g = small_grid.reshape(F.apply_transpose(e))
    xs = small_sensors.locations[l, 0]
    # leftward flow: upstream lies at larger x
    up = small_grid.x > xs + 0.1
    assert np.all(np.abs(g[:, up]) > 1e-12)


def test_observation_layout_time_major(small_grid, small_sensors):
    cfg = TransportConfig(kappa=1e-3, n_steps=40)
    F = ForwardOperator(small_grid, still_sample(small_grid), cfg, small_sensors)
    m = gaussian_bumps(small_grid, [[0.5, 0.5]], [0.1], [1.0])
    U = F.states(m)
    P = small_sensors.interp
    j = 2
    expect = F.window[j, : U.shape[0]] @ (U @ P.T.toarray())
    assert np.allclose(F.apply(m)[j * F.s:(j + 1) * F.s], expect, atol=1e-14)


@settings(max_examples=15, deadline=None)
@given(st.floats(-1.0, 1.0))
def test_windows_cover_observation_intervals(t0):
    grid = Grid(5, 4, 1.5, 1.0)
    cfg = TransportConfig(n_steps=37)
    sensors = SensorNetwork.lattice(grid, (2, 2), (0.3, 0.3))
    F = ForwardOperator(grid, still_sample(grid, t0), cfg, sensors)
    assert np.isclose(F.dt, (cfg.t1 - t0) / cfg.n_steps)
    for tau, row in zip(cfg.obs_times, F.window):
        nz = np.flatnonzero(row)
        lo, hi = F.times[nz[0]], F.times[nz[-1]]
        assert lo <= tau - cfg.obs_halfwidth + 1e-12
        assert hi >= tau + cfg.obs_halfwidth - 1e-12
        assert tau - cfg.obs_halfwidth - lo < F.dt + 1e-12
        assert hi - (tau + cfg.obs_halfwidth) < F.dt + 1e-12
        assert np.isclose(row.sum(), 1.0, atol=1e-13)


def test_solve_counter(small_ops, rng):
    F = small_ops[0]
    with counters.track() as delta:
        F.apply(rng.standard_normal((F.n, 3)))
    assert delta["transport"] == 3 * F.last_step
