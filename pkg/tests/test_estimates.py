import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parobs import (Cylinder, Grid, GridFunction, NegativeFieldError, directional_monotonicity,
                    fit_log_envelope, gradient_dominance, growth_and_nondegeneracy,
                    harnack_ratios, log_envelope_fit, regularity_norms, rescale,
                    solve_obstacle_direct)
from parobs.presets import planted_field, stationary_1d_spec, travelling_wave

WAVE_POINT = ((-0.5,), 0.5)


def half_parabola(h=1 / 128, dt=1 / 64, extent=(-1, 1), shift=0.0):
    g = Grid(extent=(extent,), h=h, dt=dt, t_range=(-1 + shift, 1 + shift))
    return planted_field(g, lambda x: 0.5 * np.maximum(x, 0) ** 2)


def test_growth_half_parabola_constants():
    rep = growth_and_nondegeneracy(half_parabola(), ((0.0,), 0.0), [1 / 16, 1 / 8, 1 / 4, 1 / 2])
    assert rep.constants["C"] == pytest.approx(0.5, abs=1e-12)
    assert rep.constants["c"] == pytest.approx(0.5, abs=1e-12)
    assert rep.constants["slope"] == pytest.approx(2.0, abs=1e-9)
    assert rep.passed
    assert rep.table[0][0] == 1 / 16


def test_growth_rejects_small_radii():
    with pytest.raises(ValueError):
        growth_and_nondegeneracy(half_parabola(), ((0.0,), 0.0), [2 / 128, 1 / 8])


def test_regularity_half_parabola():
    u = half_parabola()
    rep = regularity_norms(u, Cylinder((0.0,), 0.0, 0.5))
    assert rep.constants["sup_hessian"] == 1.0
    assert rep.constants["sup_dt"] == 0.0


def test_regularity_travelling_wave(wave_solve):
    u = wave_solve["u"]
    # backward cylinder: the largest s = x + t sampled is 1
    region = Cylinder((0.0,), 0.5, 0.5, "Q-")
    rep = regularity_norms(u, region)
    assert rep.constants["sup_hessian"] == pytest.approx(np.e, abs=0.05)


def test_regularity_refinement_ratio():
    coarse, _ = solve_obstacle_direct(stationary_1d_spec(h=1 / 64))
    fine, _ = solve_obstacle_direct(stationary_1d_spec(h=1 / 128))
    rep = regularity_norms(coarse, Cylinder((0.0,), 1 / 32, 1 / 8), u_refined=fine)
    assert 0.8 <= rep.constants["ratio_hessian"] <= 1.25
    # the steady state has d_t u at round-off level on both grids
    assert rep.constants["ratio_dt"] == 1.0
    assert rep.passed


def test_envelope_fit_planted():
    r = 2.0 ** -np.arange(2, 12)
    C, eps = fit_log_envelope(r, 1 / np.abs(np.log(r)))
    assert eps == pytest.approx(1.0, abs=0.05)
    assert C == pytest.approx(1.0, abs=0.05)


def test_envelope_fit_degenerate_cases():
    assert fit_log_envelope([0.1, 0.01], [0.0, 0.0]) == (0.0, None)
    with pytest.raises(ValueError):
        fit_log_envelope([0.5, 1.5], [1.0, 1.0])


def test_envelope_wave_second_derivative(wave_solve):
    u = wave_solve["u"]
    rep = log_envelope_fit(u, WAVE_POINT, "min_second_derivative", [1 / 32, 1 / 16, 1 / 8, 1 / 4])
    h = u.grid.h
    assert min(row[1] for row in rep.table) >= -h
    assert rep.passed
    assert rep.constants["C_env"] <= h


def test_envelope_wave_time_derivative(wave_solve):
    u = wave_solve["u"]
    rep = log_envelope_fit(u, WAVE_POINT, "max_time_derivative", [1 / 32, 1 / 16, 1 / 8, 1 / 4])
    assert rep.constants["increasing_in_r"]


def test_envelope_needs_three_octaves():
    with pytest.raises(ValueError):
        log_envelope_fit(half_parabola(), ((0.0,), 0.0), "max_time_derivative", [0.1, 0.2, 0.4])


@pytest.mark.parametrize("sigma, expected", [(((1.0,), 0.0), 0.0), (((-1.0,), 0.0), -0.625)])
def test_monotonicity_half_parabola(sigma, expected):
    rep = directional_monotonicity(half_parabola(), sigma, Cylinder((0.0,), 0.0, 0.5))
    assert rep.constants["min"] == pytest.approx(expected, abs=1e-9)


def test_monotonicity_rescaled_wave():
    r = 0.05
    g = Grid(extent=((-0.06, 0.06),), h=2.5e-4, dt=2.5e-5, t_range=(-0.003, 0.003))
    u = GridFunction(g, travelling_wave(g.mesh()[0][None], g.times[:, None]))
    v = rescale(u, ((0.0,), 0.0), r, Grid.reference(1, 64, 64))
    rep = directional_monotonicity(v, ((1.0,), 0.0), Cylinder((0.0,), 0.0, 0.5))
    assert rep.constants["min"] >= -1e-2


def test_monotonicity_needs_unit_direction():
    with pytest.raises(ValueError):
        directional_monotonicity(half_parabola(), ((2.0,), 0.0), Cylinder((0.0,), 0.0, 0.5))


def test_dominance_wave(wave_solve):
    u = wave_solve["u"]
    rep = gradient_dominance(u, Cylinder(WAVE_POINT[0], WAVE_POINT[1], 0.25))
    assert rep.constants["c"] == pytest.approx(1.0, abs=0.05)


def test_dominance_stationary_is_zero():
    rep = gradient_dominance(half_parabola(), Cylinder((0.0,), 0.0, 0.5))
    assert rep.constants["c"] == 0.0


def test_dominance_singular(singular_planted):
    rep = gradient_dominance(singular_planted, Cylinder((0.0, 0.0), 0.0, 0.25),
                             "second_derivative_over_gradient", e=(1.0, 0.0))
    assert rep.constants["c"] == pytest.approx(4.0, abs=2e-3)


def test_dominance_mode_checks():
    with pytest.raises(ValueError):
        gradient_dominance(half_parabola(), Cylinder((0.0,), 0.0, 0.5), "bogus")
    with pytest.raises(ValueError):
        gradient_dominance(half_parabola(), Cylinder((0.0,), 0.0, 0.5),
                           "second_derivative_over_gradient")


def harnack_grid():
    return Grid(extent=((-1, 1),), h=1 / 32, dt=1 / 256, t_range=(-1, 1))


def test_harnack_constant_field():
    rep = harnack_ratios(planted_field(harnack_grid(), lambda x: 1 + 0 * x), ((0.0,), 0.0), 1.0)
    assert rep.constants["ratio1"] == 1.0
    assert rep.constants["m"] == pytest.approx(0.0, abs=1e-12)


def test_harnack_linear_profile():
    rep = harnack_ratios(planted_field(harnack_grid(), lambda x: 2 + x), ((0.0,), 0.0), 1.0)
    assert rep.constants["ratio1"] == pytest.approx(5 / 3, rel=1e-12)


def test_harnack_rejects_negative_field():
    with pytest.raises(NegativeFieldError):
        harnack_ratios(planted_field(harnack_grid(), lambda x: x), ((0.0,), 0.0), 1.0)


@settings(max_examples=25, deadline=None)
@given(coef=st.lists(st.floats(-1, 1), min_size=3, max_size=3), p=st.floats(0.1, 0.9),
       C0=st.floats(0, 2))
def test_harnack_average_below_sup(coef, p, C0):
    g = harnack_grid()
    X = g.mesh()[0][None]
    T = g.times[:, None]
    vals = 4 + coef[0] * np.sin(3 * X) + coef[1] * np.cos(2 * T) + coef[2] * X * T
    rep = harnack_ratios(GridFunction(g, vals), ((0.0,), 0.0), 1.0, C0=C0, p=p)
    assert rep.constants["numerator_consistent"]
    assert rep.constants["ratio2"] <= rep.constants["ratio1"] * (1 + 1e-12)


def test_reports_invariant_under_time_translation():
    a = half_parabola()
    b = half_parabola(shift=5.0)
    radii = [1 / 16, 1 / 8, 1 / 4]
    ra = growth_and_nondegeneracy(a, ((0.0,), 0.0), radii)
    rb = growth_and_nondegeneracy(b, ((0.0,), 5.0), radii)
    np.testing.assert_allclose(ra.table, rb.table)
    da = directional_monotonicity(a, ((-1.0,), 0.0), Cylinder((0.0,), 0.0, 0.5))
    db = directional_monotonicity(b, ((-1.0,), 0.0), Cylinder((0.0,), 5.0, 0.5))
    assert da.constants["min"] == pytest.approx(db.constants["min"], abs=1e-12)


def test_reports_invariant_under_spatial_translation():
    a = half_parabola()
    g = Grid(extent=((2.0, 4.0),), h=1 / 128, dt=1 / 64, t_range=(-1, 1))
    b = planted_field(g, lambda x: 0.5 * np.maximum(x - 3.0, 0) ** 2)
    radii = [1 / 16, 1 / 8, 1 / 4]
    ra = growth_and_nondegeneracy(a, ((0.0,), 0.0), radii)
    rb = growth_and_nondegeneracy(b, ((3.0,), 0.0), radii)
    np.testing.assert_allclose(ra.table, rb.table, atol=1e-12)
    na = regularity_norms(a, Cylinder((0.0,), 0.0, 0.5)).constants
    nb = regularity_norms(b, Cylinder((3.0,), 0.0, 0.5)).constants
    assert na["sup_hessian"] == pytest.approx(nb["sup_hessian"], abs=1e-9)


def test_dominance_zero_when_quantity_vanishes():
    g = Grid(extent=((-1, 1),), h=1 / 32, dt=1 / 64, t_range=(-1, 1))
    u = planted_field(g, lambda x: 1 + x)  # static and linear
    rep = gradient_dominance(u, Cylinder((0.0,), 0.0, 0.5), exclude_contact=False)
    assert rep.constants["c"] == 0.0
    rep = gradient_dominance(u, Cylinder((0.0,), 0.0, 0.5), "second_derivative_over_gradient",
                             e=(1.0,), exclude_contact=False)
    assert rep.constants["c"] == 0.0


def test_growth_slope_error_shrinks_under_refinement():
    radii = [1 / 16, 1 / 8, 1 / 4]
    dev = []
    for h in (1 / 64, 1 / 128):
        u, _ = solve_obstacle_direct(stationary_1d_spec(h=h, t_end=1 / 16))
        rep = growth_and_nondegeneracy(u, ((0.0,), 1 / 32), radii)
        dev.append(abs(rep.constants["slope"] - 2))
    assert dev[1] <= dev[0] + 1e-12


def test_report_serialization(tmp_path):
    rep = growth_and_nondegeneracy(half_parabola(), ((0.0,), 0.0), [1 / 16, 1 / 8, 1 / 4])
    js, cs = rep.save(tmp_path, "demo")
    assert js.name == "demo_growth.json" and cs.name == "demo_growth.csv"
    data = json.loads(js.read_text())
    assert data["constants"]["C"] == pytest.approx(0.5)
    assert cs.read_text().splitlines()[0].startswith("r,")
