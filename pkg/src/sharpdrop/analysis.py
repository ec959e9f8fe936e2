"""Structural tools: truncation, concentration, splitting, recovery sequences,
asymmetry and binding scans."""
from __future__ import annotations

import csv
import functools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import integrate, ndimage, optimize, signal

from .energy import (
    IndicatorConfig,
    EnergyBreakdown,
    _ball_potential_at,
    _cart_potential,
    _shell_average_power,
    ball_energy_closed_form,
    ball_radius,
    coulomb_cross,
    coulomb_solve,
    eps_energy,
    mask_perimeter,
    phi_transform,
    potential_array,
    total_variation,
    transition_profile,
)
from .field import CartGrid3, RadialGrid, ScalarField, dilate, l2_mass, rescale_mass
from .optimize import ResolutionError
from .potentials import PotentialSpec

__all__ = [
    "truncate_star",
    "concentration_center",
    "concentration_ratio",
    "omega",
    "Component",
    "ComponentDecomposition",
    "split_components",
    "Recovery",
    "recovery_sequence",
    "build_recovery",
    "CompositeRecovery",
    "composite_recovery",
    "indicator_field",
    "AsymmetryReport",
    "asymmetry_gamma",
    "ellipsoid_config",
    "BindingScan",
    "binding_scan",
    "GeneralizedMinimizerRecord",
    "check_generalized_minimizer",
]


def truncate_star(u: ScalarField) -> ScalarField:
    """Clamp to [-1, 1]."""
    return u.with_values(np.clip(u.values, -1.0, 1.0))


# --- concentration ---------------------------------------------------------------

def _shell_fraction(s, a: float, R: float):
    """Fraction of the sphere |x| = s lying in the ball B_R(a e1)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    out[s + a <= R] = 1.0
    part = (np.abs(s - a) < R) & (s + a > R)
    if a > 0:
        sp = s[part]
        out[part] = (R * R - (sp - a) ** 2) / (4.0 * sp * a)
    return np.clip(out, 0.0, 1.0)


def _ball_kernel(grid: CartGrid3, R: float) -> np.ndarray:
    k = int(math.floor(R / grid.h + 0.5))
    idx = np.arange(-k, k + 1) * grid.h
    X, Y, Z = np.meshgrid(idx, idx, idx, indexing="ij", sparse=True)
    return (X * X + Y * Y + Z * Z <= R * R).astype(float)


def _ball_masses(a: np.ndarray, grid: CartGrid3, R: float) -> np.ndarray:
    """int_{B_R(x)} a for every cell center x (cells counted by their centers)."""
    return signal.fftconvolve(a, _ball_kernel(grid, R), mode="same") * grid.cell_volume


def _parabolic_offset(fm, f0, fp) -> float:
    den = fm - 2.0 * f0 + fp
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (fm - fp) / den, -0.5, 0.5))


def concentration_center(psi: ScalarField, radius: float = 1.0) -> dict:
    """Locate argmax_a int_{B_radius(a)} |psi| and the maximal ball mass.

    Exhaustive search over cell centers, ties broken by the lexicographically
    smallest coordinates, then a parabolic refinement within one cell.
    """
    a = np.abs(psi.values)
    if not np.any(a):
        raise ValueError("concentration_center needs a nonzero field")
    g = psi.grid
    if isinstance(g, RadialGrid):
        cand = np.concatenate(([0.0], g.r))
        wa = g.weights * a
        vals = np.array([np.sum(wa * _shell_fraction(g.r, c, radius)) for c in cand])
        i = int(np.flatnonzero(vals >= vals.max() * (1 - 1e-9))[0])
        return {"center": np.array([cand[i], 0.0, 0.0]), "unit_ball_mass": float(vals[i])}
    S = _ball_masses(a, g, radius)
    top = S.max()
    idx = tuple(np.argwhere(S >= top * (1 - 1e-9))[0])
    center = g.index_to_point(np.array(idx, dtype=float))
    for ax in range(3):
        lo, hi = list(idx), list(idx)
        lo[ax] -= 1
        hi[ax] += 1
        if lo[ax] < 0 or hi[ax] >= g.n:
            continue
        center[ax] += g.h * _parabolic_offset(S[tuple(lo)], S[idx], S[tuple(hi)])
    return {"center": center, "unit_ball_mass": float(S[idx])}


def concentration_ratio(psi: ScalarField, radius: float = 1.0) -> float:
    """||psi||_BV (sup_a int_{B_1(a)} |psi|)^{1/3} / int |psi|^{4/3}."""
    a = np.abs(psi.values)
    denom = psi.integrate(a ** (4.0 / 3.0))
    if denom <= 0:
        raise ValueError("zero L^{4/3} norm")
    bv = psi.integrate(a) + total_variation(psi.values, psi.grid)
    sup = concentration_center(psi, radius)["unit_ball_mass"]
    return bv * sup ** (1.0 / 3.0) / denom


# --- splitting ---------------------------------------------------------------------

def omega(t):
    """Cut-off: 1 for t <= 0, 0 for t >= 1, quintic smoothstep between (|omega'| <= 15/8)."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return np.clip(1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t), 0.0, 1.0)


@dataclass(eq=False)
class Component:
    field: ScalarField
    center: np.ndarray
    mass: float
    energy_sharp: float
    rho: float = math.nan  # cut radius used to extract it

    def as_dict(self) -> dict:
        return {
            "center": [float(c) for c in self.center],
            "mass": self.mass,
            "energy_sharp": self.energy_sharp,
            "ball_energy": ball_energy_closed_form(self.mass) if self.mass > 0 else 0.0,
            "cut_radius": self.rho,
        }


@dataclass(eq=False)
class ComponentDecomposition:
    components: list
    residual_mass: float
    input_mass: float
    incomplete: bool = False  # no admissible cut was found for some piece
    residual: ScalarField | None = None

    @property
    def total_mass_check(self) -> float:
        return sum(c.mass for c in self.components) + self.residual_mass

    def __len__(self):
        return len(self.components)

    def as_dict(self) -> dict:
        return {
            "components": [dict(index=i, **c.as_dict()) for i, c in enumerate(self.components)],
            "residual_mass": self.residual_mass,
            "input_mass": self.input_mass,
            "total_mass_check": self.total_mass_check,
            "incomplete": self.incomplete,
        }

    def to_json(self, path=None) -> str:
        s = json.dumps(self.as_dict(), indent=2)
        if path is not None:
            Path(path).write_text(s)
        return s


def component_sharp_energy(u: ScalarField, V: PotentialSpec = PotentialSpec()) -> float:
    """Sharp energy of a localized piece through its Phi relaxation:
    int |grad Phi(u*)| - int V u^2 + D(u^2, u^2), with u* the truncation."""
    vals = u.values
    per8 = total_variation(phi_transform(np.clip(vals, -1.0, 1.0)), u.grid)
    rho = vals * vals
    pot = 0.0 if V.is_zero else u.integrate(potential_array(V, u.grid) * rho)
    coul = coulomb_solve(u.with_values(rho)).self_energy if np.any(rho) else 0.0
    return per8 - pot + coul


def _distance_from(grid, c) -> np.ndarray:
    if isinstance(grid, RadialGrid):
        return grid.r
    return np.broadcast_to(grid.radius(c), grid.shape)


def _centroid(grid, rho) -> np.ndarray:
    if isinstance(grid, RadialGrid):
        return np.zeros(3)
    m = float(rho.sum())
    X, Y, Z = grid.mesh()
    return np.array([float((rho * X).sum()), float((rho * Y).sum()), float((rho * Z).sum())]) / m


def split_components(
    u: ScalarField,
    annulus_budget: float,
    radius: float = 1.0,
    max_components: int = 16,
    V: PotentialSpec = PotentialSpec(),
) -> ComponentDecomposition:
    """Greedy decomposition of u into localized pieces.

    At each step the concentration center c of |Phi(u*)| is located and the
    cut radius rho is the first one (scanning outward) whose annulus
    B_{rho+radius}(c) minus B_rho(c) carries at most ``annulus_budget`` of |Phi(u*)|
    while B_rho(c) holds at least that much mass, moved on to the bottom of
    that valley. The piece sqrt(omega_rho) u is split off and the remainder
    sqrt(1 - omega_rho) u carries on, so masses add up exactly. Stops when the
    remainder mass drops below the budget. Component 0 is the one nearest the
    origin; it alone is scored against V. The annulus width and the width of
    the cut-off both equal ``radius``.
    """
    if not annulus_budget > 0:
        raise ValueError("annulus_budget must be positive")
    g = u.grid
    M = l2_mass(u)
    if M <= 0:
        raise ValueError("split_components needs a nonzero field")
    work = np.array(u.values)
    w = g.weights if isinstance(g, RadialGrid) else g.cell_volume
    pieces = []
    incomplete = False
    while len(pieces) < max_components:
        rho_w = work * work
        if float(np.sum(rho_w * w)) < annulus_budget:
            break
        phi = np.abs(phi_transform(np.clip(work, -1.0, 1.0)))
        if not np.any(phi):
            break
        c = concentration_center(ScalarField(g, phi), radius)["center"]
        if isinstance(g, RadialGrid):
            c = np.zeros(3)
        dist = _distance_from(g, c)
        step = g.h
        rmax = float(dist.max())
        # the annulus must fit inside the computational domain
        rhos = np.arange(0.0, max(rmax - radius, 0.0) + 0.5 * step, step)
        # cumulative |Phi| and mass as functions of the distance to c
        order = np.argsort(dist, axis=None, kind="stable")
        dsort = dist.ravel()[order]
        cphi = np.concatenate(([0.0], np.cumsum(np.ravel(phi * w)[order])))
        cmass = np.concatenate(([0.0], np.cumsum(np.ravel(rho_w * w)[order])))
        inside = lambda cum, rr: cum[np.searchsorted(dsort, rr, side="left")]
        ann = inside(cphi, rhos + radius) - inside(cphi, rhos)
        held = inside(cmass, rhos)
        ok = (ann <= annulus_budget) & (held >= annulus_budget)
        if not np.any(ok):
            incomplete = True
            pieces.append((work.copy(), math.inf))
            work[:] = 0.0
            break
        k = int(np.flatnonzero(ok)[0])
        while k + 1 < len(rhos) and ann[k + 1] < ann[k]:
            k += 1
        rho = float(rhos[k])
        om = omega((dist - rho) / radius)
        pieces.append((np.sqrt(om) * work, rho))
        work = np.sqrt(1.0 - om) * work
    comps = []
    for vals, rho in pieces:
        f = ScalarField(g, vals)
        comps.append((f, _centroid(g, vals * vals), l2_mass(f), rho))
    comps.sort(key=lambda t: (float(np.linalg.norm(t[1])), tuple(t[1])))
    out = []
    for i, (f, cen, m, rho) in enumerate(comps):
        e = component_sharp_energy(f, V if i == 0 else PotentialSpec())
        out.append(Component(f, cen, m, e, rho))
    resid = ScalarField(g, work)
    return ComponentDecomposition(out, l2_mass(resid), M, incomplete, resid)


# --- recovery sequence ----------------------------------------------------------------

def _layer_width(eps: float) -> float:
    return max(math.sqrt(eps), 3.0 * eps * math.sqrt(max(-math.log(eps), 0.0)))


@functools.lru_cache(maxsize=1)
def _mass_offset() -> float:
    """I = int (zeta^2 - 1_{s<0}) ds; zeta(s + I) has no first-order mass defect."""
    zeta = transition_profile()
    f = lambda s: float(zeta(np.array([s]))[0])
    neg = integrate.quad(lambda s: f(s) ** 2 - 1.0, -np.inf, 0.0, limit=200)[0]
    pos = integrate.quad(lambda s: f(s) ** 2, 0.0, np.inf, limit=200)[0]
    return neg + pos


def balanced_profile():
    """The optimal profile translated so that zeta(d / eps) keeps the mass of
    the sharp set to first order in eps."""
    zeta, off = transition_profile(), _mass_offset()
    return lambda s: zeta(np.asarray(s, dtype=float) + off)


def _default_grid(cfg: IndicatorConfig, eps: float):
    if len(cfg.balls) == 1 and np.allclose(cfg.balls[0].center, 0.0):
        r = cfg.balls[0].radius
        return RadialGrid(max(3.0 * r, r + 40.0 * eps), 4096)
    raise ValueError("pass a grid for configurations other than one centered ball")


def _signed_distances(cfg: IndicatorConfig, grid, lam: float = 1.0):
    """(signed distance, sign) per component, evaluated at lam * x."""
    if cfg.is_mask:
        mask = cfg.voxel_mask
        h = cfg.grid.h
        d = (ndimage.distance_transform_edt(~mask) - ndimage.distance_transform_edt(mask)) * h
        d = d + np.where(mask, 0.5 * h, -0.5 * h)  # boundary halfway between cell centers
        return [(d, cfg.mask_sign)]
    out = []
    for b in cfg.balls:
        if isinstance(grid, RadialGrid):
            if not np.allclose(b.center, 0.0):
                raise ValueError("radial grids only hold a ball centered at the origin")
            dist = lam * grid.r
        else:
            X, Y, Z = grid.mesh()
            c = b.center
            dist = np.sqrt((lam * X - c[0]) ** 2 + (lam * Y - c[1]) ** 2 + (lam * Z - c[2]) ** 2)
        out.append((np.broadcast_to(dist - b.radius, grid.shape), b.sign))
    return out


def _check_room(cfg: IndicatorConfig, eps: float, grid) -> None:
    w = _layer_width(eps)
    bl = cfg.balls
    for i in range(len(bl)):
        for j in range(i + 1, len(bl)):
            d = float(np.linalg.norm(np.subtract(bl[i].center, bl[j].center)))
            if d < bl[i].radius + bl[j].radius + 2.0 * w:
                raise ResolutionError("eps too large for this configuration")
    if cfg.is_mask:
        lab, n = ndimage.label(cfg.voxel_mask)
        if n > 1:
            for k in range(1, n + 1):
                dk = ndimage.distance_transform_edt(lab != k) * cfg.grid.h
                others = (lab > 0) & (lab != k)
                if np.any(dk[others] < 2.0 * w):
                    raise ResolutionError("eps too large for this configuration")
    ext = grid.r_max if isinstance(grid, RadialGrid) else grid.L
    reach = max((float(np.max(np.abs(b.center))) + b.radius for b in bl), default=0.0)
    if not cfg.is_mask and reach + w > ext:
        raise ValueError("computational domain too small for the transition layers")


def indicator_field(cfg: IndicatorConfig, grid) -> ScalarField:
    """The signed indicator sum_k sign_k 1_{B_k} (cell-center sampling; exact
    shell fractions on radial grids)."""
    if cfg.is_mask:
        return ScalarField(grid, cfg.mask_sign * cfg.voxel_mask.astype(float))
    vals = np.zeros(grid.shape)
    for b in cfg.balls:
        if isinstance(grid, RadialGrid):
            f = grid.faces
            lo, hi = f[:-1], f[1:]
            r = b.radius
            frac = (np.clip(r, lo, hi) ** 3 - lo ** 3) / (hi ** 3 - lo ** 3)
            vals = vals + b.sign * frac
        else:
            vals = vals + b.sign * (grid.radius(b.center) <= b.radius)
    return ScalarField(grid, vals)


@dataclass(eq=False)
class Recovery:
    field: ScalarField
    lam: float  # dilation factor applied
    eps: float


def recovery_sequence(cfg: IndicatorConfig, eps: float, M_target: float | None = None, grid=None) -> Recovery:
    """u_eps = sum_k sign_k zeta(d_k / eps), dilated to mass M_target."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if grid is None:
        grid = cfg.grid if cfg.is_mask else _default_grid(cfg, eps)
    if cfg.is_mask and grid != cfg.grid:
        raise ValueError("mask configs are built on their own grid")
    M_target = cfg.mass if M_target is None else float(M_target)
    if M_target <= 0:
        raise ValueError("target mass must be positive")
    _check_room(cfg, eps, grid)
    zeta = balanced_profile()

    def build(lam):
        vals = np.zeros(grid.shape)
        for d, s in _signed_distances(cfg, grid, lam):
            vals = vals + s * zeta(d / eps)
        return ScalarField(grid, vals)

    u = build(1.0)
    lam = (l2_mass(u) / M_target) ** (1.0 / 3.0)
    if cfg.is_mask:
        v = dilate(u, lam, mass_target=M_target)
    else:
        v = rescale_mass(build(lam), M_target)
    return Recovery(v, lam, eps)


def build_recovery(cfg: IndicatorConfig, eps: float, M_target: float | None = None, grid=None) -> ScalarField:
    return recovery_sequence(cfg, eps, M_target, grid).field


def _shell_mean_V(V: PotentialSpec, s: np.ndarray, d: float) -> np.ndarray:
    """Mean of V over spheres of radius s centered at distance d from the origin."""
    if V.is_zero:
        return np.zeros_like(s)
    if d == 0:
        return potential_array(V, RadialGrid(float(s[-1] + 0.5 * (s[1] - s[0])), len(s)))
    if V.kind == "atomic":
        return V.Z / np.maximum(s, d)
    return V.amplitude * np.array([_shell_average_power(V.nu, float(t), d) for t in s])


@dataclass(eq=False)
class CompositeRecovery:
    """Recovery field of a ball configuration kept as one radial profile per ball.

    The dilated field is sum_k sign_k p(|x - c_k / lam|) with a shared radial
    profile grid; disjointness makes the local terms additive and the
    Coulomb cross terms exact through shell averages.
    """

    cfg: IndicatorConfig
    grid: RadialGrid
    profiles: list
    lam: float
    eps: float

    @property
    def centers(self) -> list:
        return [np.asarray(b.center) / self.lam for b in self.cfg.balls]

    def energy(self, V: PotentialSpec = PotentialSpec()) -> EnergyBreakdown:
        g = self.grid
        grad = well = pot = coul = 0.0
        for p, c in zip(self.profiles, self.centers):
            e = eps_energy(p, self.eps)
            grad += e.gradient_term
            well += e.well_term
            coul += e.coulomb_term
            pot += p.integrate(p.values ** 2 * _shell_mean_V(V, g.r, float(np.linalg.norm(c))))
        cs = self.centers
        for i in range(len(cs)):
            for j in range(i + 1, len(cs)):
                d = float(np.linalg.norm(cs[i] - cs[j]))
                a, b = self.profiles[i], self.profiles[j]
                coul += 2.0 * coulomb_cross(a.with_values(a.values ** 2), b.with_values(b.values ** 2), d)
        return EnergyBreakdown(self.eps, grad, well, pot, coul)

    def mass(self) -> float:
        return float(sum(l2_mass(p) for p in self.profiles))

    def l2_gap(self) -> float:
        """||u_eps - sum_k sign_k 1_{B_k}||_{L^2} with the undilated balls B_k."""
        g = self.grid
        tot = 0.0
        for p, b, c in zip(self.profiles, self.cfg.balls, self.centers):
            shift = float(np.linalg.norm(c - np.asarray(b.center)))
            inside = float(np.sum(g.weights * p.values * _shell_fraction(g.r, shift, b.radius)))
            tot += l2_mass(p) + b.mass - 2.0 * inside
        return math.sqrt(max(tot, 0.0))


def composite_recovery(cfg: IndicatorConfig, eps: float, M_target: float | None = None, n: int = 4096) -> CompositeRecovery:
    if cfg.is_mask or not cfg.balls:
        raise ValueError("composite recovery needs analytic balls")
    if eps <= 0:
        raise ValueError("eps must be positive")
    M_target = cfg.mass if M_target is None else float(M_target)
    w = _layer_width(eps)
    bl = cfg.balls
    for i in range(len(bl)):
        for j in range(i + 1, len(bl)):
            d = float(np.linalg.norm(np.subtract(bl[i].center, bl[j].center)))
            if d < bl[i].radius + bl[j].radius + 2.0 * w:
                raise ResolutionError("eps too large for this configuration")
    rmax = max(b.radius for b in bl)
    g = RadialGrid(max(3.0 * rmax, rmax + 40.0 * eps), n)
    zeta = balanced_profile()

    def profiles(lam):
        return [ScalarField(g, b.sign * zeta((lam * g.r - b.radius) / eps)) for b in bl]

    m1 = sum(l2_mass(p) for p in profiles(1.0))
    lam = (m1 / M_target) ** (1.0 / 3.0)
    ps = profiles(lam)
    k = math.sqrt(M_target / sum(l2_mass(p) for p in ps))
    return CompositeRecovery(cfg, g, [p * k for p in ps], lam, eps)


# --- asymmetry -----------------------------------------------------------------------

@dataclass(frozen=True)
class AsymmetryReport:
    gamma: float
    optimal_shift: tuple
    isoperimetric_deficit: float
    max_potential: float  # max_y int_Omega dx / |x - y|

    def as_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "optimal_shift": list(self.optimal_shift),
            "isoperimetric_deficit": self.isoperimetric_deficit,
            "max_potential": self.max_potential,
        }


def ellipsoid_config(axes, M: float, grid: CartGrid3, center=(0.0, 0.0, 0.0), tol: float = 1e-5) -> IndicatorConfig:
    """Voxel ellipsoid with semi-axes proportional to ``axes`` and volume M.

    The common scale is bisected so that the voxel volume matches M; the
    smooth level set (1 - sum (x_i/a_i)^2) is kept for the perimeter.
    """
    axes = np.asarray(axes, dtype=float)
    X, Y, Z = grid.mesh()
    c = np.asarray(center, dtype=float)
    q = ((X - c[0]) / axes[0]) ** 2 + ((Y - c[1]) / axes[1]) ** 2 + ((Z - c[2]) / axes[2]) ** 2
    vol = lambda s: float(np.count_nonzero(q <= s * s)) * grid.cell_volume
    s0 = (M / (4.0 / 3.0 * math.pi * float(np.prod(axes)))) ** (1.0 / 3.0)
    lo, hi = 0.8 * s0, 1.2 * s0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if vol(mid) < M:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * s0:
            break
    s = hi if abs(vol(hi) - M) <= abs(vol(lo) - M) else lo
    if abs(vol(s) - M) > tol * M * 100:
        raise ValueError("grid too coarse to hit the requested volume")
    return IndicatorConfig(voxel_mask=q <= s * s, grid=grid, level_set=1.0 - q / (s * s))


def asymmetry_gamma(cfg: IndicatorConfig, M: float) -> AsymmetryReport:
    """gamma(Omega) = min_y int (1_B(x) - 1_Omega(x + y)) / |x| dx.

    The shifted integral is the Newtonian potential v_Omega(y), so gamma =
    2 pi r_M^2 - max v_Omega. ``optimal_shift`` is the translation carrying
    Omega back onto the centered ball (minus the maximizer of v_Omega).
    """
    if M <= 0:
        raise ValueError("mass must be positive")
    if abs(cfg.mass - M) > 1e-3 * M:
        raise ValueError(f"set volume {cfg.mass:g} does not match M = {M:g}")
    rM = ball_radius(M)
    if cfg.is_mask:
        g = cfg.grid
        v = _cart_potential(cfg.voxel_mask.astype(float), g)
        idx = np.argwhere(v >= v.max() * (1 - 1e-12))[0]
        # cubic spline of v on a small patch around the discrete maximizer
        lo = np.clip(idx - 4, 0, g.n - 9)
        patch = ndimage.spline_filter(v[lo[0]:lo[0] + 9, lo[1]:lo[1] + 9, lo[2]:lo[2] + 9], order=3)
        f = lambda p: -float(ndimage.map_coordinates(
            patch, (g.point_to_index(p) - lo).reshape(3, 1), order=3, mode="nearest", prefilter=False)[0])
        y0 = g.index_to_point(idx.astype(float))
        simplex = y0 + 0.5 * g.h * np.vstack([np.zeros(3), np.eye(3)])
        res = optimize.minimize(f, y0, method="Nelder-Mead",
                                options={"xatol": 1e-4 * g.h, "fatol": 1e-13, "initial_simplex": simplex})
        inside = np.all(np.abs(res.x - y0) <= g.h)
        y, vmax = (res.x, -res.fun) if inside and -res.fun >= v.max() else (y0, float(v.max()))
        per = mask_perimeter(cfg)
    else:
        balls = cfg.balls
        pot = lambda p: float(sum(_ball_potential_at(b.mass, b.radius, np.linalg.norm(np.subtract(p, b.center))) for b in balls))
        best = None
        for b in balls:
            res = optimize.minimize(lambda p: -pot(p), np.asarray(b.center), method="Nelder-Mead",
                                    options={"xatol": 1e-10, "fatol": 1e-14})
            for cand in (np.asarray(b.center), res.x):
                val = pot(cand)
                if best is None or val > best[1] + 1e-14:
                    best = (np.asarray(cand, dtype=float), val)
        y, vmax = best
        per = sum(4.0 * math.pi * b.radius ** 2 for b in balls)
    gamma = 2.0 * math.pi * rM * rM - vmax
    return AsymmetryReport(float(gamma), tuple(float(-t) for t in y), float(per - 4.0 * math.pi * rM * rM), float(vmax))


# --- binding --------------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BindingScan:
    M: float
    Z: float
    m0: np.ndarray
    split: np.ndarray
    whole: float
    margins: np.ndarray

    @property
    def min_margin(self) -> float:
        return float(self.margins.min())

    @property
    def best_split(self) -> float:
        return float(self.m0[int(np.argmin(self.margins))])

    @property
    def binds(self) -> bool:
        return bool(np.all(self.margins > 0))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m0", "split_energy", "whole_energy", "margin"])
            for a, b, c in zip(self.m0, self.split, self.margins):
                w.writerow([f"{a:.17g}", f"{b:.17g}", f"{self.whole:.17g}", f"{c:.17g}"])
        return path


def binding_scan(M: float, Z: float, n_points: int = 200) -> BindingScan:
    """Compare the ball of mass M (feeling Z/|x|) against splits m0 + (M - m0)
    where only the m0 piece feels the potential."""
    if M <= 0 or Z < 0:
        raise ValueError("need M > 0 and Z >= 0")
    if n_points < 1:
        raise ValueError("n_points must be positive")
    m0 = M * np.arange(1, n_points + 1) / (n_points + 1)
    split = np.array([ball_energy_closed_form(a, Z) + ball_energy_closed_form(M - a, 0.0) for a in m0])
    whole = ball_energy_closed_form(M, Z)
    return BindingScan(M, Z, m0, split, whole, split - whole)


@dataclass(frozen=True)
class GeneralizedMinimizerRecord:
    masses: tuple
    component_energies: tuple
    total: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))
        object.__setattr__(self, "component_energies", tuple(float(e) for e in self.component_energies))
        if not self.masses:
            raise ValueError("record needs at least one component")
        if len(self.masses) != len(self.component_energies):
            raise ValueError("one energy per component")
        if any(m < 0 for m in self.masses):
            raise ValueError("component masses must be nonnegative")
        s = math.fsum(self.component_energies)
        if self.total is None:
            object.__setattr__(self, "total", s)
        elif abs(self.total - s) > 1e-9 * max(1.0, abs(s)):
            raise ValueError("total does not equal the sum of component energies")


def check_generalized_minimizer(rec: GeneralizedMinimizerRecord, M: float, Z: float, tol: float = 1e-9) -> dict:
    """Check a generalized-minimizer candidate against ball values.

    Component 0 feels Z/|x|, the others none. A component is flagged when its
    energy exceeds the ball of the same mass (the best known candidate).
    """
    if abs(math.fsum(rec.masses) - M) > 1e-8 * max(1.0, M):
        raise ValueError(f"component masses sum to {math.fsum(rec.masses):g}, not M = {M:g}")
    balls = [ball_energy_closed_form(m, Z if i == 0 else 0.0) if m > 0 else 0.0 for i, m in enumerate(rec.masses)]
    flags = [i for i, (e, b) in enumerate(zip(rec.component_energies, balls)) if e > b + tol * max(1.0, abs(b))]
    whole = ball_energy_closed_form(M, Z)
    return {
        "valid": True,
        "n_components": len(rec.masses),
        "mass_sum": math.fsum(rec.masses),
        "total": rec.total,
        "ball_energies": balls,
        "flags": flags,
        "whole_ball": whole,
        "margin_vs_whole": rec.total - whole,
    }


def write_generalized_report_csv(rec: GeneralizedMinimizerRecord, report: dict, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "mass", "energy", "ball_energy", "flagged"])
        for i, (m, e, b) in enumerate(zip(rec.masses, rec.component_energies, report["ball_energies"])):
            w.writerow([i, f"{m:.17g}", f"{e:.17g}", f"{b:.17g}", int(i in report["flags"])])
    return path
