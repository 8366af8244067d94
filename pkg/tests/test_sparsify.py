import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oeduu.errors import InvalidParameterError
from oeduu.objective import SAAProblem
from oeduu.reduction import ObservationGramians
from oeduu.sparsify import (
    PenaltyConfig,
    continuation,
    cubic_coefficients,
    f_eps,
    is_binary,
    penalty,
    projected_gradient,
    solve_inner,
)


def hermite_oracle(eps):
    """Solve the four C1 interpolation conditions directly in powers of x."""
    a, b = eps / 2, 2 * eps
    A = np.array([
        [1, a, a**2, a**3],
        [0, 1, 2 * a, 3 * a**2],
        [1, b, b**2, b**3],
        [0, 1, 2 * b, 3 * b**2],
    ])
    return np.linalg.solve(A, [0.5, 1 / eps, 1.0, 0.0])


def toy_problem(rng, s=6, r=2, N=3, sigma=0.1):
    grams = []
    for _ in range(N):
        F = rng.standard_normal((s * r, 8))
        grams.append(ObservationGramians(F @ F.T, 0.5 * F @ F.T))
    return SAAProblem(grams, sigma, s, r, method="dense")


@pytest.mark.parametrize("eps", [1.0, 2 / 3, 0.1, 1e-3])
def test_cubic_matches_hermite_system(eps):
    c = cubic_coefficients(eps)
    ref = hermite_oracle(eps)
    assert np.allclose(c, ref, rtol=1e-10, atol=1e-12 * np.abs(ref).max())
    alpha = 0.1
    w = 1.25 * eps / alpha
    assert np.isclose(f_eps(w, eps, alpha)[0], np.polyval(ref[::-1], 1.25 * eps), rtol=1e-12)


@pytest.mark.parametrize("eps,alpha", [(2 / 3, 0.1), (0.05, 0.1), (0.3, 1.0)])
def test_knot_continuity(eps, alpha):
    tiny = 1e-12
    for knot in (eps / (2 * alpha), 2 * eps / alpha):
        vl, dl = f_eps(knot * (1 - tiny), eps, alpha)
        vr, dr = f_eps(knot * (1 + tiny), eps, alpha)
        v, _ = f_eps(knot, eps, alpha)
        assert abs(vl - vr) <= 1e-10 and abs(v - vl) <= 1e-10
        assert abs(dl - dr) <= 1e-8 * max(1.0, abs(dl))
        # finite-difference slope on either side
        h = 1e-7 * knot
        fdl = (f_eps(knot, eps, alpha)[0] - f_eps(knot - h, eps, alpha)[0]) / h
        fdr = (f_eps(knot + h, eps, alpha)[0] - f_eps(knot, eps, alpha)[0]) / h
        assert abs(fdl - fdr) <= 1e-6 * max(1.0, abs(dl)) + 2e-6 * abs(dl)


def test_knot_values():
    eps, alpha = 0.2, 0.1
    assert f_eps(0.0, eps, alpha) == (0.0, alpha / eps)
    assert f_eps(2 * eps / alpha, eps, alpha) == (1.0, 0.0)
    assert f_eps(eps / (2 * alpha), eps, alpha)[0] == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(InvalidParameterError):
        f_eps(0.5, 0.0, alpha)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-4, 1.0), st.floats(0.01, 2.0))
def test_penalty_bounded_monotone(eps, alpha):
    w = np.linspace(0, 1, 401)
    v, d = f_eps(w, eps, alpha)
    assert np.all(v >= 0) and np.all(v <= 1 + 1e-15)
    assert np.all(np.diff(v) >= -1e-15)
    assert np.all(d >= 0)


def test_penalty_derivative_fd(rng):
    eps, alpha = 0.3, 0.1
    w = rng.uniform(0, 1, 200)
    h = 1e-7
    _, d = f_eps(w, eps, alpha)
    fd = (f_eps(w + h, eps, alpha)[0] - f_eps(w - h, eps, alpha)[0]) / (2 * h)
    assert np.allclose(d, fd, atol=1e-5)


@pytest.mark.parametrize("stage", [1, 3, 10, 25])
def test_binary_designs_count_sensors(stage, rng):
    cfg = PenaltyConfig(gamma=1.0, alpha=0.1)
    w = (rng.uniform(size=30) < 0.4).astype(float)
    val, _ = penalty(w, cfg, stage)
    if cfg.eps(stage) <= cfg.alpha / 2:
        assert val == np.count_nonzero(w)
    else:
        assert val <= np.count_nonzero(w)


def test_indicator_limit():
    cfg = PenaltyConfig(alpha=0.1)
    w = 0.3
    for i in range(1, 40):
        e = cfg.eps(i)
        if e <= cfg.alpha * w / 2:
            assert f_eps(w, e, cfg.alpha)[0] == 1.0


def test_stage0_is_scaled_l1():
    cfg = PenaltyConfig(alpha=0.1)
    val, g = penalty(np.ones(7), cfg, 0)
    assert val == pytest.approx(0.7) and np.all(g == 0.1)


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        PenaltyConfig(gamma=-1)
    with pytest.raises(InvalidParameterError):
        PenaltyConfig(eps_schedule=(0.5, 0.6))
    with pytest.raises(InvalidParameterError):
        PenaltyConfig(eps_ratio=1.0)
    with pytest.raises(InvalidParameterError):
        PenaltyConfig().eps(0)
    cfg = PenaltyConfig(eps_schedule=(0.5, 0.1, 0.01))
    assert cfg.eps(2) == 0.1 and cfg.eps(9) == 0.01
    assert PenaltyConfig().eps(3) == pytest.approx((2 / 3) ** 3)


def test_projection_idempotent(rng):
    w = rng.uniform(0, 1, 10)
    g = rng.standard_normal(10)
    p = w + projected_gradient(w, g)
    assert np.all((p >= 0) & (p <= 1))
    assert np.array_equal(p + projected_gradient(p, np.zeros(10)), p)


def test_gamma_zero_fills_design(rng):
    p = toy_problem(rng)
    res = solve_inner(p, np.full(p.s, 0.3), PenaltyConfig(gamma=0.0), 0)
    assert np.all(res.w >= 1 - 1e-3)
    state = continuation(p, PenaltyConfig(gamma=0.0))
    assert state.converged and np.all(state.w_binary == 1)


def test_huge_gamma_empties_design(rng):
    p = toy_problem(rng)
    g0 = np.abs(p.grad_phi_n(np.zeros(p.s))).max()
    cfg = PenaltyConfig(gamma=10 * g0 / 0.1)
    res = solve_inner(p, np.full(p.s, 0.5), cfg, 0)
    assert np.all(res.w <= 1e-8)


def test_inner_descent_and_box(rng):
    p = toy_problem(rng)
    res = solve_inner(p, np.full(p.s, 0.5), PenaltyConfig(gamma=5.0), 2)
    assert np.all(np.diff(res.trace) <= 1e-12 * np.abs(res.trace).max())
    assert np.all((res.w >= 0) & (res.w <= 1))


def scalar_problem(g, h, sigma):
    return SAAProblem([ObservationGramians(np.array([[g]]), np.array([[h]]))], sigma, 1, 1)


@pytest.mark.parametrize("g,h,sigma", [(1.0, 0.5, 1.0), (2.0, 3.0, 0.5), (0.2, 0.1, 2.0)])
def test_scalar_crossover(g, h, sigma):
    p = scalar_problem(g, h, sigma)
    # enumerate {0, 1}: the sensor pays off iff phi(1) + gamma < phi(0) = 0
    gamma_star = -p.phi_n(np.ones(1))
    # the smoothed path is nonconvex; near gamma* it may settle on either vertex
    for factor in (0.25, 4.0):
        st_ = continuation(p, PenaltyConfig(gamma=factor * gamma_star))
        assert st_.converged
        assert st_.w_binary[0] == (1.0 if factor < 1 else 0.0)


def test_continuation_history_and_stream(rng, tmp_path):
    import io
    import json
    p = toy_problem(rng)
    buf = io.StringIO()
    state = continuation(p, PenaltyConfig(gamma=2.0), stream=buf)
    lines = [json.loads(x) for x in buf.getvalue().splitlines()]
    assert [r["stage"] for r in lines] == list(range(state.stage + 1))
    assert lines[0]["eps"] is None
    assert state.converged and is_binary(state.w, 1e-3)
    assert set(np.unique(state.w_binary)) <= {0.0, 1.0}
    assert state.nnz == int(state.w_binary.sum())


def test_warm_start_not_worse_than_cold(rng):
    p = toy_problem(rng, s=8)
    results = {}
    for warm in (True, False):
        cfg = PenaltyConfig(gamma=1.5, warm_start=warm)
        st_ = continuation(p, cfg)
        results[warm] = p.phi_n(st_.w_binary) + cfg.gamma * st_.nnz
    assert results[True] <= results[False] + 1e-8 * abs(results[False])


def test_not_worse_than_thresholded_l1(rng):
    p = toy_problem(rng, s=8)
    cfg = PenaltyConfig(gamma=1.0)
    state = continuation(p, cfg)
    thr = (state.w_l1 > 0.5).astype(float)
    total = lambda w: p.phi_n(w) + cfg.gamma * np.count_nonzero(w)
    assert total(state.w_binary) <= total(thr) + 1e-10


def test_sensor_count_nonincreasing_in_gamma(rng):
    p = toy_problem(rng, s=8)
    counts = [continuation(p, PenaltyConfig(gamma=g)).nnz for g in (0.1, 0.5, 2, 8, 32, 128)]
    assert counts == sorted(counts, reverse=True)
