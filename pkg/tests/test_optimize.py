import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sharpdrop.analysis import build_recovery, truncate_star
from sharpdrop.energy import IndicatorConfig, ball_energy_closed_form, ball_radius, eps_energy, interface_measure
from sharpdrop.field import CartGrid3, RadialGrid, ScalarField, inner
from sharpdrop.optimize import (
    W2_MAX,
    MinimizeConfig,
    ResolutionError,
    anneal_eps,
    minimize_eps,
    project_tangent,
    variational_gradient,
    write_iteration_log,
)
from sharpdrop.potentials import PotentialSpec


def random_state(grid, rng):
    r = grid.r if isinstance(grid, RadialGrid) else grid.radius(rng.uniform(-0.3, 0.3, 3))
    vals = sum(rng.uniform(0.3, 1.3) * np.exp(-((r - rng.uniform(0, 1)) / rng.uniform(0.2, 0.6)) ** 2) for _ in range(3))
    return ScalarField(grid, vals * np.ones(grid.shape) + 0.05)


def directional_check(u, eps, V, rng):
    g = u.grid
    r = g.r if isinstance(g, RadialGrid) else g.radius()
    h = ScalarField(g, np.cos(rng.uniform(1, 4) * r + rng.uniform(0, 6)) * np.exp(-r ** 2) * np.ones(g.shape))
    d = 1e-5
    fd = (eps_energy(u + h * d, eps, V).total - eps_energy(u - h * d, eps, V).total) / (2 * d)
    an = inner(variational_gradient(u, eps, V), h)
    return abs(fd - an) / abs(an)


def test_gradient_of_zero_is_zero():
    g = RadialGrid(2.0, 64)
    gr = variational_gradient(ScalarField(g, np.zeros(64)), 0.1, PotentialSpec.atomic(1))
    assert not np.any(gr.values)


def test_gradient_at_well_floor():
    g = RadialGrid(2.0, 256)
    u = ScalarField(g, np.ones(256))
    gr = variational_gradient(u, 0.1)
    v = 4 * math.pi * (2.0 ** 2 / 2 - g.r ** 2 / 6)  # potential of the unit-density ball of radius 2
    # away from the truncation boundary only the Coulomb part survives
    np.testing.assert_allclose(gr.values[:-1], 2 * v[:-1], rtol=1e-3)


@given(st.integers(0, 10 ** 6), st.sampled_from([0.05, 0.1, 0.2]), st.sampled_from(["none", "atomic", "homogeneous"]))
def test_directional_derivative_radial(seed, eps, kind):
    rng = np.random.default_rng(seed)
    V = {"none": PotentialSpec.none(), "atomic": PotentialSpec.atomic(2.0), "homogeneous": PotentialSpec.homogeneous(0.5)}[kind]
    u = random_state(RadialGrid(4.0, 512), rng)
    assert directional_check(u, eps, V, rng) <= 1e-4


def test_directional_derivative_cartesian(rng):
    g = CartGrid3(2.0, 24)
    for _ in range(3):
        assert directional_check(random_state(g, rng), 0.2, PotentialSpec.atomic(1.0), rng) <= 1e-4


def test_project_tangent():
    g = RadialGrid(3.0, 128)
    rng = np.random.default_rng(0)
    u = ScalarField(g, np.exp(-g.r ** 2))
    assert np.abs(project_tangent(u, u).values).max() < 1e-15
    w = ScalarField(g, rng.standard_normal(128))
    w = w - u * (inner(w, u) / inner(u, u))
    np.testing.assert_allclose(project_tangent(w, u).values, w.values, atol=1e-14)
    with pytest.raises(ValueError):
        project_tangent(w, ScalarField(g, np.zeros(128)))


@given(st.integers(0, 10 ** 6))
def test_projection_orthogonal(seed):
    rng = np.random.default_rng(seed)
    g = CartGrid3(1.0, 16)
    u = ScalarField(g, rng.standard_normal(g.shape))
    p = project_tangent(ScalarField(g, rng.standard_normal(g.shape)), u)
    assert abs(inner(p, u)) <= 1e-12 * math.sqrt(inner(p, p) * inner(u, u))


def test_stability_guard():
    g = RadialGrid(4.0, 256)
    with pytest.raises(ValueError, match="guard"):
        MinimizeConfig(eps=0.1, mass=1.0, grid=g, dt=2.0 * 0.1 / W2_MAX * 1.01)
    cfg = MinimizeConfig(eps=0.1, mass=1.0, grid=g)
    assert cfg.dt * W2_MAX / (2 * cfg.eps) <= 1.0
    with pytest.raises(ValueError):
        MinimizeConfig(eps=0.1, mass=1.0, grid=g, init="warm_start")
    with pytest.raises(ValueError):
        MinimizeConfig(eps=-0.1, mass=1.0, grid=g)


def test_flow_invariants(tmp_path):
    g = RadialGrid(4.0, 512)
    cfg = MinimizeConfig(eps=0.1, mass=1.5, grid=g, potential=PotentialSpec.atomic(1.0), tol=1e-5, log_every=1)
    res = minimize_eps(cfg)
    assert res.converged and res.residual <= cfg.tol
    assert res.mass_error <= 1e-10 * cfg.mass
    totals = [h[1].total for h in res.history]
    assert all(b <= a + 1e-10 for a, b in zip(totals, totals[1:]))
    assert res.field.values.min() >= 0
    path = write_iteration_log(res, tmp_path / "it.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,total,gradient,well,potential,coulomb,residual,dt"
    assert len(lines) == len(res.history) + 1
    # warm start at the converged state
    again = minimize_eps(MinimizeConfig(eps=0.1, mass=1.5, grid=g, potential=cfg.potential, tol=1e-5,
                                        init="warm_start", warm=res.field))
    assert again.converged and again.iterations <= 2


def test_descent_from_recovery_field():
    g = RadialGrid(4.0, 1024)
    V = PotentialSpec.atomic(1.0)
    u0 = build_recovery(IndicatorConfig.single_ball(1.0), 0.05, 1.0, grid=g)
    before = eps_energy(u0, 0.05, V).total
    res = minimize_eps(MinimizeConfig(eps=0.05, mass=1.0, grid=g, potential=V, init="warm_start", warm=u0,
                                      tol=1e-3, max_iter=2000))
    assert res.breakdown.total <= before


def test_random_init_is_reproducible():
    g = CartGrid3(1.5, 16)
    a = minimize_eps(MinimizeConfig(eps=0.2, mass=0.5, grid=g, init="random", seed=7, max_iter=20))
    b = minimize_eps(MinimizeConfig(eps=0.2, mass=0.5, grid=g, init="random", seed=7, max_iter=20))
    np.testing.assert_array_equal(a.field.values, b.field.values)


def test_anneal_preconditions():
    g = RadialGrid(4.0, 256)
    base = MinimizeConfig(eps=0.2, mass=1.0, grid=g)
    with pytest.raises(ValueError):
        anneal_eps(1.0, PotentialSpec.none(), [0.1, 0.2], base)
    with pytest.raises(ValueError):
        anneal_eps(1.0, PotentialSpec.none(), [], base)
    with pytest.raises(ResolutionError, match="refine grid: fewer than 6 cells per interface width"):
        anneal_eps(1.0, PotentialSpec.none(), [0.2, 0.05], base)


def test_single_entry_anneal_equals_minimize():
    g = RadialGrid(4.0, 256)
    V = PotentialSpec.atomic(1.0)
    base = MinimizeConfig(eps=0.2, mass=1.0, grid=g, potential=V, tol=1e-4)
    [a] = anneal_eps(1.0, V, [0.2], base)
    b = minimize_eps(base)
    np.testing.assert_array_equal(a.field.values, b.field.values)
    assert a.iterations == b.iterations


def test_anneal_warm_starts():
    g = RadialGrid(6.0, 1024)
    V = PotentialSpec.atomic(0.5)
    res = anneal_eps(1.0, V, [0.2, 0.1, 0.05], MinimizeConfig(eps=0.2, mass=1.0, grid=g, potential=V, tol=1e-3))
    assert len(res) == 3 and all(r.converged for r in res)
    e0 = ball_energy_closed_form(1.0, 0.5)
    gaps = [abs(r.breakdown.total - e0) for r in res]
    assert gaps[0] > gaps[1] > gaps[2]


@pytest.mark.xfail(strict=True, reason="finite-eps bulge at the nucleus keeps e_eps well below the ball value; see ledger")
def test_small_mass_strong_nucleus_near_ball_value():
    g = RadialGrid(8.0, 2048)
    M, Z = 0.1, 2.0
    res = minimize_eps(MinimizeConfig(eps=0.05, mass=M, grid=g, potential=PotentialSpec.atomic(Z), tol=1e-4))
    ref = ball_energy_closed_form(M, Z)
    assert abs(res.breakdown.total - ref) <= 0.10 * abs(ref)


@pytest.mark.xfail(strict=True, reason="interface width eps is 15% of r_M at this mass; see ledger")
def test_tiny_mass_random_init_interface_measure():
    g = RadialGrid(2.0, 2048)
    M = 0.01
    res = minimize_eps(MinimizeConfig(eps=0.02, mass=M, grid=g, init="random", seed=0, tol=1e-4))
    assert res.converged
    per8 = math.pi * ball_radius(M) ** 2 / 2
    assert interface_measure(truncate_star(res.field)) == pytest.approx(per8, rel=0.10)


def test_tiny_mass_random_init_localizes():
    g = RadialGrid(2.0, 1024)
    res = minimize_eps(MinimizeConfig(eps=0.02, mass=0.01, grid=g, init="random", seed=0, tol=1e-3))
    assert res.converged
    rho = res.field.values ** 2 * g.weights
    # a single bump: the mass profile is unimodal and sits near the origin
    inner_mass = rho[g.r < 4 * ball_radius(0.01)].sum()
    assert inner_mass >= 0.99 * rho.sum()
    v = res.field.values
    peak = int(np.argmax(v))
    assert g.r[peak] <= ball_radius(0.01)
    # unimodal up to the far-field remnant of the noise (values ~1e-9 of the peak)
    assert np.all(np.diff(v[peak:]) <= 1e-6 * v[peak])
