import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from initlab.grid import (
    Circle,
    FlowState,
    FreestreamConditions,
    GridError,
    GridSpec,
    ObstacleError,
    Rectangle,
    apply_boundary_conditions,
    make_grid,
    rasterize_obstacle,
)

FS = FreestreamConditions(u_inf=38.889, nu=38.889 * 0.5 / 150, l0=0.5)


def test_make_grid_spacing():
    g = make_grid(GridSpec(8, 8, 1.0, 1.0))
    assert g.dx == 0.125 and g.dy == 0.125
    g = make_grid(GridSpec(256, 128, 8.0, 4.0))
    assert g.dx == 0.03125 and g.dy == 0.03125
    assert g.shape == (256, 128)


@pytest.mark.parametrize(
    "args, field",
    [((0, 8, 1.0, 1.0), "nx"), ((8, 4, 1.0, 1.0), "ny"), ((-4, 8, 1.0, 1.0), "nx"), ((8, 8, 0.0, 1.0), "lx"), ((8, 8, 1.0, -2.0), "ly")],
)
def test_gridspec_rejects_bad_values(args, field):
    with pytest.raises(GridError, match=field):
        GridSpec(*args)


def test_gridspec_cell_cap():
    with pytest.raises(GridError):
        GridSpec(4096, 2048, 8.0, 4.0)
    GridSpec(64, 64, 1.0, 1.0, max_cells=4096)
    with pytest.raises(GridError):
        GridSpec(65, 64, 1.0, 1.0, max_cells=4096)


def test_coordinates():
    g = make_grid(GridSpec(16, 8, 2.0, 1.0))
    assert g.xc(0) == pytest.approx(0.0625)
    assert g.xf(16) == pytest.approx(2.0)
    x, y = g.u_points()
    assert x.shape == (17, 8) and y.shape == (17, 8)
    x, y = g.v_points()
    assert x.shape == (16, 9)


def test_circle_rasterization_matches_definition():
    g = make_grid(GridSpec(8, 8, 1.0, 1.0))
    m = rasterize_obstacle(g, Circle(0.5, 0.5, 0.3))
    x, y = g.cell_centers()
    expect = (x - 0.5) ** 2 + (y - 0.5) ** 2 < 0.09
    assert np.array_equal(m.solid, expect)
    assert m.n_solid > 0


def test_empty_obstacle_rejected():
    g = make_grid(GridSpec(16, 16, 1.0, 1.0))
    # lies between cell centres: covers no cell
    with pytest.raises(ObstacleError, match="empty obstacle"):
        rasterize_obstacle(g, Rectangle(0.5, 0.5, 0.52, 0.52))


def test_obstacle_at_inlet_rejected():
    g = make_grid(GridSpec(16, 16, 1.0, 1.0))
    with pytest.raises(ObstacleError, match="inlet"):
        rasterize_obstacle(g, Rectangle(0.0, 0.4, 0.3, 0.6))
    with pytest.raises(ObstacleError, match="inlet"):
        rasterize_obstacle(g, Rectangle(0.01, 0.4, 0.3, 0.6))


def test_obstacle_outside_or_too_close_rejected():
    g = make_grid(GridSpec(16, 16, 1.0, 1.0))
    with pytest.raises(ObstacleError):
        rasterize_obstacle(g, Rectangle(0.4, 0.4, 1.2, 0.6))
    with pytest.raises(ObstacleError, match="clearance"):
        rasterize_obstacle(g, Rectangle(0.4, 0.02, 0.6, 0.3))


def test_boundary_cells_definition():
    g = make_grid(GridSpec(32, 32, 1.0, 1.0))
    m = rasterize_obstacle(g, Circle(0.45, 0.5, 0.2))
    s = m.solid
    expect = []
    for i in range(32):
        for j in range(32):
            if s[i, j]:
                continue
            nb = [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)]
            if any(0 <= a < 32 and 0 <= b < 32 and s[a, b] for a, b in nb):
                expect.append((i, j))
    assert sorted(map(tuple, m.boundary_cells.tolist())) == sorted(expect)
    assert not s[:, :][0].any()


def test_mask_symmetry_under_reflection():
    g = make_grid(GridSpec(64, 32, 4.0, 2.0))
    for shape in (Circle(1.0, 1.0, 0.37), Rectangle(0.8, 0.7, 1.3, 1.3)):
        m = rasterize_obstacle(g, shape)
        assert np.array_equal(m.solid, m.solid[:, ::-1])


@settings(max_examples=40, deadline=None)
@given(
    cx=st.floats(0.3, 0.7),
    cy=st.floats(0.3, 0.7),
    r=st.floats(0.05, 0.15),
)
def test_rasterization_deterministic(cx, cy, r):
    g = make_grid(GridSpec(32, 32, 1.0, 1.0))
    try:
        a = rasterize_obstacle(g, Circle(cx, cy, r))
    except ObstacleError:
        return
    b = rasterize_obstacle(g, Circle(cx, cy, r))
    assert np.array_equal(a.solid, b.solid)
    # cell-by-cell evaluation in reverse order agrees with the vectorised mask
    x, y = g.cell_centers()
    for i in reversed(range(32)):
        for j in reversed(range(32)):
            assert a.solid[i, j] == ((x[i, j] - cx) ** 2 + (y[i, j] - cy) ** 2 < r * r)


def test_freestream_validation():
    with pytest.raises(ValueError, match="k_inf"):
        FreestreamConditions(u_inf=1.0, nu=1.0, l0=1.0, k_inf=-0.1)
    with pytest.raises(ValueError, match="u_inf"):
        FreestreamConditions(u_inf=0.0, nu=1.0, l0=1.0)
    assert FS.dynamic_pressure == pytest.approx(926.3, abs=0.1)


def _random_state(g, seed):
    rng = np.random.default_rng(seed)
    nx, ny = g.shape
    return FlowState(
        rng.normal(size=(nx + 1, ny)), rng.normal(size=(nx, ny + 1)), rng.normal(size=(nx, ny)), rng.random((nx, ny)), 0.0
    )


def test_boundary_conditions():
    g = make_grid(GridSpec(32, 16, 2.0, 1.0))
    m = rasterize_obstacle(g, Rectangle(0.4, 0.4, 0.6, 0.6))
    s = _random_state(g, 0)
    out = apply_boundary_conditions(s, FS, m)
    assert np.all(out.u[0] == FS.u_inf)
    assert np.array_equal(out.u[-1], out.u[-2])
    assert np.all(out.v[:, 0] == 0) and np.all(out.v[:, -1] == 0)
    assert np.all(out.u[m.u_wall] == 0) and np.all(out.v[m.v_wall] == 0)
    # faces of solid cells are zero
    i, j = np.argwhere(m.solid)[0]
    assert out.u[i, j] == 0 and out.u[i + 1, j] == 0
    # interior fluid values untouched
    keep = ~m.u_wall
    keep[0] = keep[-1] = False
    assert np.array_equal(out.u[keep], s.u[keep])
    assert np.array_equal(out.p, s.p) and np.array_equal(out.k, s.k)
    # input not mutated
    assert not np.all(s.u[0] == FS.u_inf)


def test_uniform_state_is_fixed_point_without_obstacle():
    from initlab.grid import ObstacleMask

    g = make_grid(GridSpec(16, 16, 1.0, 1.0))
    s = FlowState.zeros(g)
    s.u[:] = FS.u_inf
    out = apply_boundary_conditions(s, FS, ObstacleMask.empty(g))
    for a, b in zip((out.u, out.v, out.p, out.k), (s.u, s.v, s.p, s.k)):
        assert np.array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_boundary_conditions_idempotent(seed):
    g = make_grid(GridSpec(24, 16, 3.0, 2.0))
    m = rasterize_obstacle(g, Circle(1.0, 1.0, 0.3))
    once = apply_boundary_conditions(_random_state(g, seed), FS, m)
    twice = apply_boundary_conditions(once, FS, m)
    for a, b in zip((once.u, once.v, once.p, once.k), (twice.u, twice.v, twice.p, twice.k)):
        assert np.array_equal(a, b)


def test_flowstate_check():
    g = make_grid(GridSpec(8, 8, 1.0, 1.0))
    s = FlowState.zeros(g)
    s.check(g)
    s.k[0, 0] = -1.0
    with pytest.raises(ValueError, match="non-negative"):
        s.check(g)
    s = FlowState.zeros(g)
    s.u[1, 1] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        s.check(g)
    s = FlowState.zeros(g)
    s.p = np.zeros((7, 8))
    with pytest.raises(ValueError, match="shape"):
        s.check(g)
