import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parobs import (EllipticityBounds, Grid, NonUniformSourceError, ObstacleSolver,
                    PenaltySchedule, ProblemSpec, SolverDivergedError, continuation_solve,
                    pucci_diagonal, solve_obstacle_direct, solve_penalized, trace)
from parobs.presets import random_positive_spec, stationary_1d_spec
from parobs.solver import beta


def small_grid(h=1 / 16, t_end=0.25):
    return Grid(extent=((-1, 1),), h=h, dt=h**2, t_range=(0, t_end))


def zero_spec():
    return ProblemSpec(trace(1), small_grid(), -1.0, lambda x, t: 0 * x)


def test_beta_is_exponential_penalty():
    assert beta(0.0, 0.1) == 1.0
    assert beta(0.1, 0.1) == pytest.approx(np.exp(-1))


def test_schedule_validation():
    with pytest.raises(ValueError):
        PenaltySchedule((1e-3, 1e-2))
    with pytest.raises(ValueError):
        PenaltySchedule(())
    with pytest.raises(ValueError):
        PenaltySchedule((1e-2, 1e-8)).check_floor(1 / 64)
    PenaltySchedule((1e-2, 1e-3)).check_floor(1 / 32)


def test_spec_rejects_nonnegative_source():
    with pytest.raises(NonUniformSourceError):
        ProblemSpec(trace(1), small_grid(), 0.0, lambda x, t: 0 * x)


def test_spec_rejects_negative_boundary_data():
    with pytest.raises(ValueError):
        ProblemSpec(trace(1), small_grid(), -1.0, lambda x, t: x)


def test_penalized_stationary_value():
    u, rep = solve_penalized(stationary_1d_spec(h=1 / 256), 1e-3)
    assert float(u((0.5,), u.times[-1])) == pytest.approx(0.125, abs=2e-3)
    assert rep.max_h_eps <= 1.0 + 1e-8
    assert rep.final_residual <= PenaltySchedule().newton_tol
    assert rep.converged


def test_penalized_zero_data_gives_zero():
    u, rep = solve_penalized(zero_spec(), 1e-2)
    assert np.abs(u.values).max() <= PenaltySchedule().newton_tol


def test_direct_stationary_value():
    u, _ = solve_obstacle_direct(stationary_1d_spec(h=1 / 256))
    assert float(u((0.5,), u.times[-1])) == pytest.approx(0.125, abs=1e-3)


def test_direct_travelling_wave_value(wave_direct):
    u = wave_direct["u"]
    assert float(u((0.5,), 0.5)) == pytest.approx(np.e - 2, abs=5e-3)


def test_direct_zero_data_gives_zero():
    u, _ = solve_obstacle_direct(zero_spec())
    assert np.abs(u.values).max() == 0.0


def test_continuation_oracle_gaps(stationary_solve):
    gaps = [r.oracle_gap for r in stationary_solve["reports"]]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] <= 1e-3


@pytest.mark.parametrize("name", ["stationary_solve", "wave_solve", "wave_direct"])
def test_nonnegative_solutions(name, request):
    run = request.getfixturevalue(name)
    assert run["u"].values.min() >= -1e-8


@pytest.mark.parametrize("name", ["stationary_solve", "wave_solve", "wave_direct"])
def test_time_monotonicity(name, request):
    # boundary data nondecreasing in t, initial data a stationary subsolution
    tol = PenaltySchedule().newton_tol
    for rep in request.getfixturevalue(name)["reports"]:
        assert rep.dt_monotonicity_violation >= -10 * tol


def test_divergence_attaches_report():
    spec = stationary_1d_spec(h=1 / 32)
    sched = PenaltySchedule((1e-3,), max_newton=1, max_policy=1)
    with pytest.raises(SolverDivergedError) as info:
        solve_penalized(spec, 1e-3, schedule=sched)
    assert info.value.report.converged is False
    assert info.value.step >= 1


def _boundary(a, b):
    return lambda x, t: a * (1 + x) ** 2 / 4 + b * (1 - x) ** 2 / 4 + 0 * t


@settings(max_examples=8, deadline=None)
@given(a=st.floats(0, 1), b=st.floats(0, 1), da=st.floats(0, 0.5), db=st.floats(0, 0.5))
def test_discrete_comparison(a, b, da, db):
    op = pucci_diagonal(EllipticityBounds(1.0, 2.0), 1)
    tol = PenaltySchedule().newton_tol
    g = small_grid()
    u1, _ = solve_penalized(ProblemSpec(op, g, -1.0, _boundary(a, b)), 1e-2)
    u2, _ = solve_penalized(ProblemSpec(op, g, -1.0, _boundary(a + da, b + db)), 1e-2)
    assert np.all(u1.values <= u2.values + 10 * tol)


@settings(max_examples=8, deadline=None)
@given(eps=st.floats(4e-3, 0.5), f=st.floats(-3.0, -0.2), a=st.floats(0, 2))
def test_penalty_bound_property(eps, f, a):
    spec = ProblemSpec(trace(1), small_grid(), f, _boundary(a, 0.5))
    _, rep = solve_penalized(spec, eps)
    assert 0 <= rep.max_h_eps <= max(1.0, abs(f)) + 1e-8


def test_concurrent_solves_are_independent():
    from concurrent.futures import ThreadPoolExecutor
    specs = [random_positive_spec(s, h=1 / 16, t_end=0.5) for s in range(3)]
    serial = [solve_obstacle_direct(s)[0].values for s in specs]
    with ThreadPoolExecutor(3) as pool:
        parallel = list(pool.map(lambda s: solve_obstacle_direct(s)[0].values, specs))
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a, b)


def test_obstacle_solver_estimator():
    spec = stationary_1d_spec(h=1 / 64, t_end=1 / 64)
    est = ObstacleSolver(epsilons=(1e-2, 1e-3), oracle=True).fit(spec)
    assert len(est.reports_) == 2
    pred = est.predict([[0.5, 1 / 64], [-0.5, 1 / 64]])
    np.testing.assert_allclose(pred, [0.125, 0.0], atol=2e-3)
    assert est.get_params()["epsilons"] == (1e-2, 1e-3)
    direct = ObstacleSolver(method="direct").fit(spec)
    assert direct.reports_[0].method == "direct"
    with pytest.raises(ValueError):
        ObstacleSolver(method="explicit").fit(spec)


def test_continuation_respects_save_stride():
    spec = stationary_1d_spec(h=1 / 32, t_end=1 / 8)
    u, _ = continuation_solve(spec, PenaltySchedule((1e-2, 1e-3)), save_stride=16)
    assert u.times[-1] == pytest.approx(1 / 8)
    assert len(u.times) == spec.grid.nt // 16 + 1
