import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sharpdrop.field import (
    CartGrid3,
    RadialGrid,
    ScalarField,
    dilate,
    export_profile_csv,
    inner,
    l2_mass,
    load_field,
    mass,
    rescale_mass,
    save_field,
)


def ball_indicator(grid, R=1.0):
    return ScalarField(grid, (grid.r < R).astype(float))


def test_grid_invariants():
    with pytest.raises(ValueError):
        RadialGrid(1.0, 8)
    with pytest.raises(ValueError):
        CartGrid3(1.0, 17)
    with pytest.raises(ValueError):
        CartGrid3(1.0, 8)
    g = RadialGrid(2.0, 16)
    assert g.h == 0.125
    np.testing.assert_allclose(g.r[:2], [0.0625, 0.1875])
    c = CartGrid3(1.0, 16)
    assert c.h == 0.125 and c.shape == (16, 16, 16)
    np.testing.assert_allclose(c.point_to_index(c.index_to_point([3, 4, 5])), [3, 4, 5])


def test_field_is_frozen_and_validated():
    g = RadialGrid(1.0, 16)
    arr = np.ones(16)
    u = ScalarField(g, arr)
    arr[0] = 5.0
    assert u.values[0] == 1.0
    with pytest.raises(ValueError):
        u.values[0] = 2.0
    with pytest.raises(ValueError):
        ScalarField(g, np.full(16, np.nan))
    with pytest.raises(ValueError):
        ScalarField(g, -np.ones(16), nonneg=True)
    with pytest.raises(ValueError):
        ScalarField(g, np.ones(15))


def test_mass_of_zero_field():
    rep = mass(ScalarField(RadialGrid(1.0, 32), np.zeros(32)))
    assert all(v == 0 for v in rep.as_dict().values())


def test_unit_ball_volume():
    g = RadialGrid(4.0, 4096)
    assert abs(mass(ball_indicator(g)).l2_mass - 4 * math.pi / 3) < 1e-5


def test_norms_of_indicator():
    g = RadialGrid(4.0, 4096)
    rep = mass(ball_indicator(g))
    vol = 4 * math.pi / 3
    assert rep.linf_norm == 1.0
    assert rep.l1_norm == pytest.approx(vol, rel=1e-5)
    assert rep.l10_3_norm == pytest.approx(vol ** 0.3, rel=1e-5)
    assert rep.l4_3_norm == pytest.approx(vol ** 0.75, rel=1e-5)


@given(st.floats(0.1, 10.0))
def test_mass_homogeneity(c):
    g = RadialGrid(3.0, 256)
    u = ScalarField(g, np.exp(-g.r ** 2))
    assert l2_mass(u * c) == pytest.approx(c * c * l2_mass(u), rel=1e-12)


def test_quadrature_orders():
    exact = math.pi  # int exp(-2|x|) dx
    errs = [abs(l2_mass(ScalarField(g, np.exp(-g.r))) - exact) for g in (RadialGrid(40.0, n) for n in (64, 128, 256))]
    # at least second order (the r^2 weight makes it higher here)
    assert errs[0] / errs[1] >= 4.0 * 0.95
    assert errs[1] / errs[2] >= 4.0 * 0.95
    # indicator with the jump inside a cell: first order
    vol = 4 * math.pi / 3 * 1.0001 ** 3
    ierr = [abs(mass(ball_indicator(RadialGrid(4.0, n), 1.0001 + 2.0 / n)).l2_mass - vol) for n in (512, 1024)]
    assert ierr[1] < ierr[0]


def test_rescale_examples():
    g = RadialGrid(3.0, 128)
    u = ScalarField(g, np.exp(-g.r ** 2))
    u2 = rescale_mass(u, 2.0)
    np.testing.assert_array_equal(rescale_mass(u2, 2.0).values, u2.values * 1.0)
    u1 = rescale_mass(u, 1.0)
    np.testing.assert_allclose(rescale_mass(u1, 4.0).values, 2.0 * u1.values, rtol=1e-12)
    with pytest.raises(ValueError, match="cannot rescale zero mass"):
        rescale_mass(ScalarField(g, np.zeros(128)), 1.0)


@given(st.integers(0, 2 ** 31), st.floats(1e-3, 1e3))
def test_rescale_hits_target_and_is_idempotent(seed, target):
    g = CartGrid3(1.0, 16)
    u = ScalarField(g, np.random.default_rng(seed).standard_normal(g.shape))
    v = rescale_mass(u, target)
    assert l2_mass(v) == pytest.approx(target, rel=1e-12)
    np.testing.assert_allclose(rescale_mass(v, target).values, v.values, rtol=1e-12)


def test_dilate_identity_and_window():
    g = RadialGrid(4.0, 512)
    u = ScalarField(g, np.exp(-g.r ** 2))
    np.testing.assert_allclose(dilate(u, 1.0).values, u.values, rtol=0, atol=1e-15)
    for lam in (0.49, 2.01):
        with pytest.raises(ValueError):
            dilate(u, lam)


def test_dilate_indicator_volume():
    g = RadialGrid(4.0, 4096)
    u = ball_indicator(g)
    assert l2_mass(dilate(u, 2.0)) / l2_mass(u) == pytest.approx(1 / 8, rel=5e-3)


def test_dilate_bump_scaling_law():
    g = RadialGrid(6.0, 1024)
    u = ScalarField(g, np.exp(-g.r ** 2))
    assert l2_mass(dilate(u, 1.1)) / l2_mass(u) == pytest.approx(1.1 ** -3, abs=1e-3)
    assert l2_mass(dilate(u, 1.1, mass_target=2.5)) == pytest.approx(2.5, rel=1e-12)


def test_dilate_cartesian():
    g = CartGrid3(3.0, 48)
    u = ScalarField(g, np.exp(-g.radius() ** 2) * np.ones(g.shape))
    assert l2_mass(dilate(u, 1.25)) / l2_mass(u) == pytest.approx(1.25 ** -3, rel=2e-2)


@given(st.floats(0.6, 1.6))
def test_dilate_round_trip(lam):
    g = RadialGrid(8.0, 2048)
    u = ScalarField(g, np.exp(-g.r ** 2))
    exact = ScalarField(g, np.exp(-(lam * g.r) ** 2))
    err = math.sqrt(l2_mass(dilate(dilate(u, lam), 1.0 / lam) - u))
    e1 = math.sqrt(l2_mass(dilate(u, lam) - exact))
    e2 = math.sqrt(l2_mass(dilate(exact, 1.0 / lam) - u))
    # the second resampling stretches the first error by lam^{3/2} in L2
    assert err <= 1.01 * (lam ** 1.5 * e1 + e2) + 1e-12


def test_inner_requires_same_grid():
    a = ScalarField(RadialGrid(1.0, 16), np.ones(16))
    b = ScalarField(RadialGrid(2.0, 16), np.ones(16))
    with pytest.raises(ValueError):
        inner(a, b)
    assert inner(a, a) == pytest.approx(4 * math.pi / 3, rel=1e-2)


@pytest.mark.parametrize("grid", [RadialGrid(2.5, 64), CartGrid3(1.5, 16)])
def test_dump_round_trip(tmp_path, grid, rng):
    u = ScalarField(grid, rng.standard_normal(grid.shape))
    path, side = save_field(u, tmp_path / "u.bin")
    v = load_field(path)
    assert v.grid == grid
    np.testing.assert_array_equal(v.values, u.values)
    meta = json.loads(side.read_text())
    assert meta["n"] == grid.n
    assert meta["norms"]["l2_mass"] == pytest.approx(l2_mass(u))
    raw = path.read_bytes()
    assert raw[:8] == b"SDFIELD1"
    assert len(raw) == 32 + 8 * u.values.size


def test_load_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"\0" * 64)
    with pytest.raises(ValueError):
        load_field(p)


def test_profile_csv(tmp_path):
    g = RadialGrid(1.0, 16)
    p = export_profile_csv(ScalarField(g, g.r), tmp_path / "p.csv")
    lines = p.read_text().splitlines()
    assert lines[0] == "r,u" and len(lines) == 17
    r, u = map(float, lines[3].split(","))
    assert r == u == g.r[2]
