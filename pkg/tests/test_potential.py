import numpy as np
import pytest

from initlab.grid import Circle, FreestreamConditions, GridSpec, ObstacleMask, Rectangle, make_grid, rasterize_obstacle
from initlab.poisson import divergence
from initlab.potential import (
    SPEED_CLAMP,
    PotentialFlowError,
    clamp_speed,
    conjugate_gradient,
    potential_k_field,
    solve_potential,
)

U = 38.889
FS = FreestreamConditions(u_inf=U, nu=1e-3, l0=1.0)


@pytest.fixture(scope="module")
def cylinder():
    # 128^2 cells, circle well away from the walls
    g = make_grid(GridSpec(128, 128, 8.0, 8.0))
    m = rasterize_obstacle(g, Circle(4.0, 4.0, 0.5))
    return g, m, solve_potential(g, m, FS)


def test_no_obstacle_is_uniform():
    g = make_grid(GridSpec(32, 16, 2.0, 1.0))
    sol = solve_potential(g, ObstacleMask.empty(g), FS)
    assert np.allclose(sol.u, U, rtol=0, atol=1e-8 * U)
    assert np.allclose(sol.v, 0.0, atol=1e-8 * U)
    assert np.allclose(sol.p, 0.0, atol=1e-6 * FS.dynamic_pressure)


def test_cylinder_peak_speed(cylinder):
    g, m, sol = cylinder
    uc = 0.5 * (sol.u[:-1] + sol.u[1:])
    vc = 0.5 * (sol.v[:, :-1] + sol.v[:, 1:])
    speed = np.hypot(uc, vc)[m.fluid]
    assert abs(speed.max() / U - 2.0) <= 0.15 * 2.0


def test_cylinder_stagnation_pressure(cylinder):
    g, m, sol = cylinder
    j = g.ny // 2
    i_front = int(np.argmax(m.solid[:, j])) - 1
    assert not m.solid[i_front, j]
    assert sol.p[i_front, j] == pytest.approx(FS.dynamic_pressure, rel=0.10)


def test_residual_and_divergence(cylinder):
    g, m, sol = cylinder
    assert sol.residual <= 1e-8
    div = divergence(sol.u, sol.v, g)[m.fluid]
    assert np.abs(div).max() <= 10 * 1e-8 * U / g.dx


def test_total_pressure_constant(cylinder):
    g, m, sol = cylinder
    uc = 0.5 * (sol.u[:-1] + sol.u[1:])
    vc = 0.5 * (sol.v[:, :-1] + sol.v[:, 1:])
    p0 = sol.p + 0.5 * FS.rho * (uc**2 + vc**2)
    dev = np.abs(p0[m.fluid] / FS.dynamic_pressure - 1.0)
    assert dev.max() <= 0.05


def test_mirror_symmetry():
    g = make_grid(GridSpec(64, 32, 4.0, 2.0))
    a = solve_potential(g, rasterize_obstacle(g, Rectangle(1.0, 0.55, 1.4, 0.9)), FS, tol=1e-12)
    b = solve_potential(g, rasterize_obstacle(g, Rectangle(1.0, 1.1, 1.4, 1.45)), FS, tol=1e-12)
    scale = np.abs(a.u).max()
    assert np.abs(a.u - b.u[:, ::-1]).max() <= 1e-10 * scale
    assert np.abs(a.v + b.v[:, ::-1]).max() <= 1e-10 * scale
    assert np.abs(a.p - b.p[:, ::-1]).max() <= 1e-10 * np.abs(a.p).max()


def test_velocity_scaling():
    g = make_grid(GridSpec(64, 32, 4.0, 2.0))
    m = rasterize_obstacle(g, Circle(1.2, 1.0, 0.3))
    a = solve_potential(g, m, FS)
    fs2 = FS.scaled(2.0)
    b = solve_potential(g, m, fs2)
    assert np.abs(b.u - 2 * a.u).max() <= 1e-10 * np.abs(b.u).max()
    assert np.abs(b.v - 2 * a.v).max() <= 1e-10 * np.abs(b.u).max()
    deficit_a = FS.dynamic_pressure - a.p
    deficit_b = fs2.dynamic_pressure - b.p
    fluid = m.fluid
    assert np.abs(deficit_b[fluid] - 4 * deficit_a[fluid]).max() <= 1e-10 * np.abs(deficit_b).max()


def test_non_convergence_carries_history():
    g = make_grid(GridSpec(64, 32, 4.0, 2.0))
    m = rasterize_obstacle(g, Circle(1.2, 1.0, 0.3))
    with pytest.raises(PotentialFlowError) as info:
        solve_potential(g, m, FS, tol=1e-12, max_iters=3)
    assert len(info.value.residual_history) == 4
    assert info.value.residual_history[-1] > 1e-12


def test_conjugate_gradient_small_system():
    A = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    x, hist, ok = conjugate_gradient(A, b, 1e-14, 10)
    assert ok
    assert np.allclose(x, np.linalg.solve(A, b), atol=1e-13)


def test_clamp_speed():
    rng = np.random.default_rng(1)
    u = rng.normal(scale=5, size=(17, 8))
    v = rng.normal(scale=5, size=(16, 9))
    cu, cv = clamp_speed(u, v, 4.0)
    speed = np.hypot(0.5 * (cu[:-1] + cu[1:]), 0.5 * (cv[:, :-1] + cv[:, 1:]))
    assert speed.max() <= 4.0 + 1e-12
    # faces are only ever shrunk, never flipped
    assert np.all(np.abs(cu) <= np.abs(u) + 1e-15) and np.all(cu * u >= 0)


def test_potential_k_field():
    g = make_grid(GridSpec(8, 8, 1.0, 1.0))
    assert np.all(potential_k_field(g, FS) == 0.24)
    fs0 = FreestreamConditions(u_inf=1.0, nu=1.0, l0=1.0, k_inf=0.0)
    assert np.all(potential_k_field(g, fs0) == 0.0)
    with pytest.raises(ValueError):
        FreestreamConditions(u_inf=1.0, nu=1.0, l0=1.0, k_inf=-0.24)


def test_clamp_constant():
    assert SPEED_CLAMP == 4.0
