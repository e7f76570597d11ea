import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parobs import (Grid, GridFunction, MultivaluedGraphError, NoBoundaryError, cone_test,
                    contact_tolerance, density, extract_contact_set, extract_free_boundary,
                    solve_obstacle_direct, space_graph, time_graph)
from parobs.presets import planted_field, planted_regular, travelling_wave_spec


def half_parabola_field(h=1 / 128, dt=None, t_range=(-1, 1)):
    g = Grid(extent=((-1, 1),), h=h, dt=dt or h, t_range=t_range)
    return planted_field(g, lambda x: 0.5 * np.maximum(x, 0) ** 2)


def test_contact_tolerance_scales_with_h2_and_eps():
    u = half_parabola_field()
    assert contact_tolerance(u) == pytest.approx(0.25 * u.grid.h**2)
    penalized = GridFunction(u.grid, u.values, meta={"eps": 1e-4, "method": "penalized"})
    assert contact_tolerance(penalized) == pytest.approx(0.25 * u.grid.h**2 + 0.5e-4)
    # direct and planted fields carry no penalty layer
    assert contact_tolerance(u.copy(meta={"eps": 1e-4, "planted": True})) == contact_tolerance(u)


def test_contact_set_half_parabola():
    u = half_parabola_field()
    c = extract_contact_set(u, kappa_c=0.5)
    x = u.grid.axes[0]
    expected = x <= 0
    diff = np.nonzero(c.mask[0] != expected)[0]
    assert np.all(np.abs(x[diff]) <= u.grid.h)


def test_contact_set_constant_fields():
    g = Grid(extent=((-1, 1),), h=1 / 8, dt=0.5, t_range=(0, 1))
    assert extract_contact_set(planted_field(g, lambda x: 1 + 0 * x)).empty
    assert extract_contact_set(planted_field(g, lambda x: 0 * x)).full


def test_no_boundary_errors():
    g = Grid(extent=((-1, 1),), h=1 / 8, dt=0.5, t_range=(0, 1))
    for f in (lambda x: 1 + 0 * x, lambda x: 0 * x):
        with pytest.raises(NoBoundaryError):
            extract_free_boundary(planted_field(g, f))


def test_cloud_half_parabola():
    u = half_parabola_field()
    cloud = extract_free_boundary(u)
    assert np.abs(cloud.points[:, 0]).max() <= 2 * u.grid.h
    # normals point into the positivity set
    assert np.all(cloud.normals[:, 0] > 0)


def test_cloud_travelling_wave(wave_solve):
    u = wave_solve["u"]
    cloud = extract_free_boundary(u, extract_contact_set(u))
    x, t = cloud.points[:, 0], cloud.points[:, 1]
    # the point (-t, t) on the exact boundary is at parabolic distance |x + t|
    assert np.abs(x + t).max() <= 2 * u.grid.h


def test_cloud_planted_singular(singular_planted):
    cloud = extract_free_boundary(singular_planted)
    assert np.abs(cloud.points[:, 0]).max() <= 2 * singular_planted.grid.h
    assert (cloud.points[:, 0] > 0).any() and (cloud.points[:, 0] < 0).any()


def test_cloud_points_lie_on_sign_change_edges(wave_solve):
    u = wave_solve["u"]
    cloud = extract_free_boundary(u, extract_contact_set(u))
    h, dt = u.grid.h, u.time_step
    node_x = u.grid.axes[0][cloud.node[:, 1]]
    node_t = u.times[cloud.node[:, 0]]
    d = np.maximum(np.abs(cloud.points[:, 0] - node_x), np.sqrt(np.abs(cloud.points[:, 1] - node_t)))
    assert d.max() <= max(h, np.sqrt(dt)) * (1 + 1e-9)


@pytest.mark.parametrize("r", [4 / 128, 0.125, 0.5])
def test_density_half_parabola(r):
    u = half_parabola_field()
    d = density(u, extract_contact_set(u), ((0.0,), 0.0), r)
    assert abs(d - 0.5) <= 2 * u.grid.h / r


@pytest.mark.parametrize("r", [0.0625, 0.125, 0.25])
def test_density_planted_singular(singular_planted, r):
    u = singular_planted
    d = density(u, extract_contact_set(u), ((0.0, 0.0), 0.0), r)
    assert d <= 2 * u.grid.h / r


def test_density_positive_field_and_radius_floor():
    u = planted_field(Grid(extent=((-1, 1),), h=1 / 32, dt=0.25, t_range=(-1, 1)),
                      lambda x: 1 + 0 * x)
    assert density(u, 1e-4, ((0.0,), 0.0), 0.5) == 0.0
    with pytest.raises(ValueError):
        density(u, 1e-4, ((0.0,), 0.0), 2 / 32)


def test_density_trends():
    h = 1 / 128
    g2 = Grid(extent=((-1, 1), (-1, 1)), h=h, dt=0.25, t_range=(-1, 1))
    reg = planted_regular(g2, (0.6, 0.8))
    sing = planted_field(g2, lambda x1, x2: 0.5 * x1**2)
    radii = [0.5, 0.25, 0.125, 0.0625]
    dr = [density(reg, extract_contact_set(reg), ((0.0, 0.0), 0.0), r) for r in radii]
    ds = [density(sing, extract_contact_set(sing), ((0.0, 0.0), 0.0), r) for r in radii]
    for k in range(1, len(radii)):
        noise = 2 * h / radii[k]
        assert abs(dr[k] - 0.5) <= abs(dr[k - 1] - 0.5) + noise
        assert ds[k] <= ds[k - 1] + noise
    assert abs(dr[-1] - 0.5) <= 2 * h / radii[-1]


def test_time_graph_wave(wave_solve):
    u = wave_solve["u"]
    tg = time_graph(extract_free_boundary(u, extract_contact_set(u)))
    x, tau = tg.table[:, 0], tg.table[:, 1]
    ok = ~tg.flagged
    assert np.abs(tau[ok] + x[ok]).max() <= 2 * u.grid.h
    assert tg.lipschitz_estimate == pytest.approx(1.0, abs=0.15)


def test_time_graph_wave_speed_two():
    u, _ = solve_obstacle_direct(travelling_wave_spec(h=1 / 64, c=2.0))
    tg = time_graph(extract_free_boundary(u))
    assert tg.lipschitz_estimate == pytest.approx(0.5, abs=0.1)


def test_time_graph_stationary_is_degenerate():
    tg = time_graph(extract_free_boundary(half_parabola_field()))
    assert tg.flagged.all()
    assert tg.lipschitz_estimate is None
    assert set(np.unique(tg.table[:, 1])) <= {-np.inf, np.inf}


def test_time_graph_translation_invariant(wave_solve):
    u = wave_solve["u"]
    shifted = GridFunction(u.grid.replace(t_range=(u.grid.t_range[0] + 3.0,
                                                   u.grid.t_range[1] + 3.0)),
                           u.values, u.times + 3.0, meta=u.meta)
    a = time_graph(extract_free_boundary(u)).lipschitz_estimate
    b = time_graph(extract_free_boundary(shifted)).lipschitz_estimate
    assert a == pytest.approx(b, rel=1e-9)


def test_space_graph_half_parabola():
    u = half_parabola_field()
    sg = space_graph(extract_free_boundary(u), [1.0], ((0.0,), 0.5))
    assert np.abs(sg.table[:, 1]).max() <= 2 * u.grid.h
    assert sg.lipschitz_estimate == pytest.approx(0.0, abs=1e-9)
    assert sg.normal[0] == 1.0


def test_space_graph_planted_regular_normal():
    e = np.array([0.6, 0.8])
    g = Grid(extent=((-1, 1), (-1, 1)), h=1 / 128, dt=0.5, t_range=(-0.5, 0.5))
    u = planted_regular(g, e)
    sg = space_graph(extract_free_boundary(u), e, ((0.0, 0.0), 0.5), times=[0.0])
    assert np.abs(sg.normal - e).max() <= 0.02
    # straight boundary: only bin-scale jitter of the crossings, no growth with width
    osc = [o for _, o in sg.c1_modulus_table]
    assert max(osc) <= 0.2
    assert max(osc) - min(osc) <= 1e-9


def test_space_graph_wave_fixed_time(wave_solve):
    u = wave_solve["u"]
    sg = space_graph(extract_free_boundary(u), [1.0], ((-0.5,), 0.25), times=[0.5])
    # g is measured from the window centre x0 = -0.5
    assert np.abs(sg.table[:, 1]).max() <= 2 * u.grid.h


def test_space_graph_multivalued():
    g = Grid(extent=((-1, 1),), h=1 / 64, dt=0.5, t_range=(0, 1))
    u = planted_field(g, lambda x: 0.5 * np.maximum(np.abs(x) - 0.25, 0) ** 2
                      * (np.abs(x) < 0.75) + 0.1 * (np.abs(x) >= 0.75))
    with pytest.raises(MultivaluedGraphError):
        space_graph(extract_free_boundary(u), [1.0], ((0.0,), 1.0))


@settings(max_examples=20, deadline=None)
@given(bump=st.floats(0.0, 3.0))
def test_extraction_locality(bump):
    u = half_parabola_field(h=1 / 64)
    c = extract_contact_set(u)
    far = u.grid.mesh()[0] > 0.5
    vals = u.values + np.where(far, 2 * c.tol + bump, 0.0)[None]
    v = u.copy(values=vals)
    a = extract_free_boundary(u, c).points
    b = extract_free_boundary(v, extract_contact_set(v)).points
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("points, expected", [([(1.0, 0.05)], True), ([(0.05, 1.0)], False),
                                              (np.empty((0, 2)), True)])
def test_cone_examples(points, expected):
    assert cone_test(points, (0.0, 0.0), (0.0, 1.0), np.deg2rad(80)) is expected


def test_cone_rejects_bad_angle():
    with pytest.raises(ValueError):
        cone_test([(1.0, 0.0)], (0.0, 0.0), (0.0, 1.0), np.pi / 2)


def test_exports(tmp_path, wave_solve):
    u = wave_solve["u"]
    cloud = extract_free_boundary(u)
    path = cloud.to_csv(tmp_path / "cloud.csv")
    header = path.read_text().splitlines()[0]
    assert header.startswith("x,t")
    tg = time_graph(cloud)
    assert tg.to_csv(tmp_path / "tau.csv").exists()
