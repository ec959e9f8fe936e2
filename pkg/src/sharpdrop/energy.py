"""Diffuse (phase-field) and sharp-interface energies.

The diffuse energy of a field u at interface width eps is

    eps/2 |grad u|^2 + W(u)/(2 eps) - V u^2   integrated,  plus  D(u^2, u^2),

with the triple well W(t) = t^2 (|t|^{2/3} - 1)^2 and the Coulomb form
D(f, g) = 1/2 iint f(x) g(y) / |x - y|. The sharp energy of a set is
Per/8 - int V + D(1, 1).

Gradients are discretized on cell faces (staggered differences), so the
discrete energy has an exact discrete first variation; see
``sharpdrop.optimize.variational_gradient``.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import integrate

from .field import CartGrid3, RadialGrid, ScalarField, l2_mass
from .potentials import PotentialSpec, eval_potential

__all__ = [
    "well_W",
    "well_W_prime",
    "well_W_second",
    "phi_transform",
    "EnergyBreakdown",
    "SharpEnergyBreakdown",
    "Ball",
    "IndicatorConfig",
    "CoulombSolution",
    "coulomb_solve",
    "coulomb_cross",
    "eps_energy",
    "sharp_energy",
    "ball_energy_closed_form",
    "ball_radius",
    "interface_measure",
    "total_variation",
    "line_energy",
    "transition_profile",
    "TransitionProfile",
    "energy_bound_report",
    "CUBE_INV_R_AVERAGE",
]

# int over the unit cube [-1/2, 1/2]^3 of 1/|x|
CUBE_INV_R_AVERAGE = 3.0 * math.log((math.sqrt(3) + 1) / (math.sqrt(3) - 1)) - math.pi / 2


# --- pointwise functions -------------------------------------------------------

def well_W(t):
    """Triple well t^2 (|t|^{2/3} - 1)^2, zero at t in {0, +-1}."""
    t = np.asarray(t, dtype=float)
    a = np.abs(t) ** (2.0 / 3.0)
    return t * t * (a - 1.0) ** 2


def well_W_prime(t):
    t = np.asarray(t, dtype=float)
    at = np.abs(t)
    a = at ** (2.0 / 3.0)
    return 2.0 * t * (a - 1.0) ** 2 + (4.0 / 3.0) * np.sign(t) * at ** (5.0 / 3.0) * (a - 1.0)


def well_W_second(t):
    at = np.abs(np.asarray(t, dtype=float))
    return 2.0 - (80.0 / 9.0) * at ** (2.0 / 3.0) + (70.0 / 9.0) * at ** (4.0 / 3.0)


def phi_transform(t, tol: float = 1e-12):
    """Phi(t) = int_0^t sqrt(W) = sign(t) (t^2/2 - 3/8 |t|^{8/3}) for |t| <= 1."""
    t = np.asarray(t, dtype=float)
    at = np.abs(t)
    if np.any(at > 1.0 + tol):
        raise ValueError("phi_transform needs |t| <= 1: apply truncation first")
    at = np.minimum(at, 1.0)
    return np.sign(t) * (0.5 * at * at - 0.375 * at ** (8.0 / 3.0))


# --- records -----------------------------------------------------------------

@dataclass(frozen=True)
class EnergyBreakdown:
    eps: float
    gradient_term: float
    well_term: float
    potential_term: float  # int V |u|^2, subtracted in total
    coulomb_term: float

    @property
    def total(self) -> float:
        return self.gradient_term + self.well_term - self.potential_term + self.coulomb_term

    @property
    def interfacial(self) -> float:
        return self.gradient_term + self.well_term

    def as_dict(self) -> dict:
        return {
            "eps": self.eps,
            "gradient": self.gradient_term,
            "well": self.well_term,
            "potential": self.potential_term,
            "coulomb": self.coulomb_term,
            "total": self.total,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict())


@dataclass(frozen=True)
class SharpEnergyBreakdown:
    perimeter: float
    potential_term: float
    coulomb_term: float

    @property
    def total(self) -> float:
        return self.perimeter / 8.0 - self.potential_term + self.coulomb_term

    def as_dict(self) -> dict:
        return {
            "perimeter": self.perimeter,
            "potential": self.potential_term,
            "coulomb": self.coulomb_term,
            "total": self.total,
        }


def ball_radius(m: float) -> float:
    return (3.0 * m / (4.0 * math.pi)) ** (1.0 / 3.0)


@dataclass(frozen=True)
class Ball:
    center: tuple
    mass: float
    sign: int = 1

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("ball mass must be positive")
        if self.sign not in (1, -1):
            raise ValueError("ball sign must be +1 or -1")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def radius(self) -> float:
        return ball_radius(self.mass)


@dataclass(frozen=True, eq=False)
class IndicatorConfig:
    """Union of disjoint analytic balls, or a voxel mask on a Cartesian grid.

    A mask config may carry a smooth ``level_set`` (set = {level_set > 0})
    used for the marching-cubes perimeter instead of the binary mask.
    """

    balls: tuple = ()
    voxel_mask: np.ndarray | None = None
    grid: CartGrid3 | None = None
    level_set: np.ndarray | None = None
    mask_sign: int = 1

    def __post_init__(self):
        object.__setattr__(self, "balls", tuple(self.balls))
        if self.level_set is not None and self.voxel_mask is None:
            object.__setattr__(self, "voxel_mask", np.asarray(self.level_set) > 0)
        if self.balls and self.voxel_mask is not None:
            raise ValueError("a config holds either analytic balls or a voxel mask, not both")
        if self.voxel_mask is not None:
            if self.grid is None or np.shape(self.voxel_mask) != self.grid.shape:
                raise ValueError("voxel mask needs a matching CartGrid3")
            object.__setattr__(self, "voxel_mask", np.asarray(self.voxel_mask, dtype=bool))
        bl = self.balls
        for i in range(len(bl)):
            for j in range(i + 1, len(bl)):
                d = np.linalg.norm(np.subtract(bl[i].center, bl[j].center))
                if d < bl[i].radius + bl[j].radius:
                    raise ValueError(f"balls {i} and {j} overlap")

    @classmethod
    def single_ball(cls, mass: float, center=(0.0, 0.0, 0.0)):
        return cls(balls=(Ball(center, mass),))

    @property
    def is_mask(self) -> bool:
        return self.voxel_mask is not None

    @property
    def mass(self) -> float:
        if self.is_mask:
            return float(self.voxel_mask.sum()) * self.grid.cell_volume
        return float(sum(b.mass for b in self.balls))

    def translated(self, v) -> "IndicatorConfig":
        v = np.asarray(v, dtype=float)
        if self.is_mask:
            raise ValueError("translate masks by rebuilding them on the grid")
        return IndicatorConfig(balls=tuple(Ball(tuple(np.add(b.center, v)), b.mass, b.sign) for b in self.balls))


@dataclass(frozen=True, eq=False)
class CoulombSolution:
    potential_field: ScalarField  # v = int rho(y)/|x-y| dy
    self_energy: float  # D(rho, rho) = <rho, v>/2


# --- discrete gradient pieces --------------------------------------------------

def _radial_face_diffs(u: np.ndarray, grid: RadialGrid):
    """Differences across faces 1..n (face n borders the zero exterior)."""
    ext = np.append(u, 0.0)
    d = np.diff(ext) / grid.h  # length n, d[k-1] is across face k
    f = grid.faces[1:]
    A = 4.0 * np.pi * f * f * grid.h
    return d, A


def _cart_face_diffs(u: np.ndarray):
    p = np.pad(u, 1)
    return [np.diff(p, axis=ax)[tuple(slice(1, -1) if a != ax else slice(None) for a in range(3))] for ax in range(3)]


def dirichlet_energy(u: ScalarField) -> float:
    """1/2 int |grad u|^2 with staggered differences and zero exterior."""
    g = u.grid
    if isinstance(g, RadialGrid):
        d, A = _radial_face_diffs(u.values, g)
        return 0.5 * float(np.sum(A * d * d))
    h = g.h
    return 0.5 * h * sum(float(np.sum(d * d)) for d in _cart_face_diffs(u.values))


def neg_laplacian(u: ScalarField) -> np.ndarray:
    """L2 gradient of ``dirichlet_energy`` (discrete -Laplacian)."""
    g = u.grid
    if isinstance(g, RadialGrid):
        d, A = _radial_face_diffs(u.values, g)
        flux = A * d  # through faces 1..n
        inner_flux = np.concatenate(([0.0], flux[:-1]))  # face i (face 0 carries nothing)
        dE = (inner_flux - flux) / g.h
        return dE / g.weights
    h = g.h
    out = np.zeros(g.shape)
    for ax, d in enumerate(_cart_face_diffs(u.values)):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        out += d[tuple(lo)] - d[tuple(hi)]
    return out / (h * h)


# --- Coulomb -----------------------------------------------------------------------

def _radial_potential(q: np.ndarray, grid: RadialGrid) -> np.ndarray:
    """v_i = sum_j G_ij q_j, G_ij = 1/max(r_i, r_j) off the diagonal.

    q_j are cell charges. The diagonal is the exact self interaction of a
    uniform shell, so G is symmetric and the solve is O(n).
    """
    r = grid.r
    inside = np.concatenate(([0.0], np.cumsum(q)[:-1]))  # sum_{j<i}
    outer = q / r
    outside = np.concatenate((np.cumsum(outer[::-1])[::-1][1:], [0.0]))  # sum_{j>i}
    return inside / r + outside + _radial_self_kernel(grid) * q


@functools.lru_cache(maxsize=32)
def _radial_self_kernel_cached(r_max: float, n: int) -> np.ndarray:
    g = RadialGrid(r_max, n)
    a = g.faces[:-1]
    b = g.faces[1:]
    S = (32.0 * np.pi ** 2 / 3.0) * ((b ** 5 - a ** 5) / 5.0 - a ** 3 * (b * b - a * a) / 2.0)
    w = g.weights
    out = S / (w * w)
    out.flags.writeable = False
    return out


def _radial_self_kernel(grid: RadialGrid) -> np.ndarray:
    return _radial_self_kernel_cached(grid.r_max, grid.n)


@functools.lru_cache(maxsize=8)
def _cart_kernel_hat(n: int, h: float) -> np.ndarray:
    m = 2 * n
    k = np.arange(m)
    d = np.minimum(k, m - k) * h
    X, Y, Z = np.meshgrid(d, d, d, indexing="ij", sparse=True)
    with np.errstate(divide="ignore"):
        K = 1.0 / np.sqrt(X * X + Y * Y + Z * Z)
    K[0, 0, 0] = CUBE_INV_R_AVERAGE / h
    K *= h ** 3
    return sfft.rfftn(K, workers=-1)


def _cart_potential(rho: np.ndarray, grid: CartGrid3) -> np.ndarray:
    """Free-space convolution with 1/|x| on the doubled grid.

    Transforms are applied axis by axis so that the zero half of the padded
    input is never transformed and only the physical octant is inverted.
    """
    n = grid.n
    m = 2 * n
    Khat = _cart_kernel_hat(n, grid.h)
    a = sfft.rfft(rho, n=m, axis=2, workers=-1)
    a = sfft.fft(a, n=m, axis=1, workers=-1)
    a = sfft.fft(a, n=m, axis=0, workers=-1)
    a *= Khat
    a = sfft.ifft(a, axis=0, workers=-1)[:n]
    a = sfft.ifft(a, axis=1, workers=-1)[:, :n]
    return sfft.irfft(a, n=m, axis=2, workers=-1)[:, :, :n]


def newton_potential(rho: np.ndarray, grid) -> np.ndarray:
    if isinstance(grid, RadialGrid):
        return _radial_potential(rho * grid.weights, grid)
    return _cart_potential(rho, grid)


def coulomb_solve(density: ScalarField) -> CoulombSolution:
    rho = density.values
    if np.any(rho < 0):
        raise ValueError("Coulomb solve needs a nonnegative density")
    v = newton_potential(rho, density.grid)
    D = 0.5 * density.integrate(rho * v)
    return CoulombSolution(ScalarField(density.grid, v), D)


def coulomb_cross(rho1: ScalarField, rho2: ScalarField, separation: float | None = None) -> float:
    """D(rho1, rho2) = 1/2 iint rho1(x) rho2(y)/|x-y|.

    Cartesian fields share the grid. Radial fields are taken centered at two
    points a distance ``separation`` apart; the potential of rho1 is averaged
    over each spherical shell of rho2 (exact for any separation).
    """
    if rho1.grid != rho2.grid:
        raise ValueError("densities must share a grid")
    g = rho1.grid
    if isinstance(g, CartGrid3):
        v = _cart_potential(rho1.values, g)
        return 0.5 * rho2.integrate(rho2.values * v)
    if separation is None or separation <= 0:
        raise ValueError("radial cross term needs a positive separation")
    d = float(separation)
    v1 = _radial_potential(rho1.values * g.weights, g)
    m1 = float(np.sum(rho1.values * g.weights))
    # F(s) = int_0^s v1(p) p dp, with v1 = m1/p beyond the domain
    nodes = np.concatenate(([0.0], g.r, [g.r_max]))
    vals = np.concatenate(([v1[0]], v1, [m1 / g.r_max])) * nodes
    F = np.concatenate(([0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(nodes))))

    def Fint(s):
        s = np.asarray(s, dtype=float)
        inside = np.interp(np.minimum(s, g.r_max), nodes, F)
        return inside + m1 * np.maximum(s - g.r_max, 0.0)

    t = g.r
    avg = (Fint(d + t) - Fint(np.abs(d - t))) / (2.0 * t * d)
    return 0.5 * float(np.sum(g.weights * rho2.values * avg))


# --- diffuse energy ------------------------------------------------------------------

@functools.lru_cache(maxsize=32)
def _potential_cached(spec: PotentialSpec, grid) -> np.ndarray:
    v = eval_potential(spec, grid).values
    return v


def potential_array(spec: PotentialSpec, grid) -> np.ndarray:
    return _potential_cached(spec, grid)


def eps_energy(u: ScalarField, eps: float, V: PotentialSpec = PotentialSpec()) -> EnergyBreakdown:
    if eps <= 0:
        raise ValueError("eps must be positive")
    vals = u.values
    rho = vals * vals
    grad = eps * dirichlet_energy(u)
    well = u.integrate(well_W(vals)) / (2.0 * eps)
    pot = 0.0 if V.is_zero else u.integrate(potential_array(V, u.grid) * rho)
    coul = 0.5 * u.integrate(rho * newton_potential(rho, u.grid)) if np.any(rho) else 0.0
    return EnergyBreakdown(eps, grad, well, pot, coul)


def total_variation(values: np.ndarray, grid) -> float:
    """Discrete int |grad f| with the zero exterior (isotropic forward differences in 3D)."""
    if isinstance(grid, RadialGrid):
        d = np.diff(np.append(values, 0.0))
        f = grid.faces[1:]
        return float(np.sum(4.0 * np.pi * f * f * np.abs(d)))
    q = np.pad(values, 1)
    dx = np.diff(q, axis=0)[:, :-1, :-1]
    dy = np.diff(q, axis=1)[:-1, :, :-1]
    dz = np.diff(q, axis=2)[:-1, :-1, :]
    return float(np.sum(np.sqrt(dx * dx + dy * dy + dz * dz))) * grid.h ** 2


def interface_measure(u: ScalarField) -> float:
    """Total variation of Phi(u): the discrete int |grad Phi(u)|."""
    return total_variation(phi_transform(u.values), u.grid)


def line_energy(values: np.ndarray, h: float, eps: float, left: float | None = None, right: float | None = None) -> tuple[float, float]:
    """Per-unit-area (gradient, well) energy of a 1D profile across a flat interface.

    ``left``/``right`` are ghost values beyond the ends (default: replicate,
    i.e. zero flux).
    """
    v = np.asarray(values, dtype=float)
    ext = np.concatenate(([v[0] if left is None else left], v, [v[-1] if right is None else right]))
    d = np.diff(ext) / h
    grad = 0.5 * eps * float(np.sum(d * d)) * h
    well = float(np.sum(well_W(v))) * h / (2.0 * eps)
    return grad, well


# --- sharp energy ------------------------------------------------------------------------

def ball_energy_closed_form(M: float, Z: float = 0.0) -> float:
    """Per/8 - Z int_B 1/|x| + D(1_B, 1_B) for the ball of volume M at the origin."""
    if M <= 0:
        raise ValueError("ball mass must be positive")
    r = ball_radius(M)
    return 0.5 * math.pi * r * r - Z * 2.0 * math.pi * r * r + 0.6 * M * M / r


def _ball_potential_at(m: float, r: float, dist):
    """Newtonian potential of a uniform ball (mass m, radius r) at distance dist."""
    dist = np.asarray(dist, dtype=float)
    return np.where(dist >= r, m / np.maximum(dist, 1e-300), m * (3 * r * r - dist * dist) / (2 * r ** 3))


def _shell_average_power(nu: float, s: float, d: float) -> float:
    """Mean of |x|^-nu over the sphere of radius s centered at distance d."""
    if d == 0:
        return s ** (-nu)
    if s == 0:
        return d ** (-nu)
    lo, hi = abs(d - s), d + s
    if abs(nu - 2.0) < 1e-12:
        return (math.log(hi) - math.log(lo)) / (2 * s * d) if lo > 0 else math.inf
    return (hi ** (2 - nu) - lo ** (2 - nu)) / ((2 - nu) * 2 * s * d)


def _ball_potential_integral(V: PotentialSpec, ball: Ball) -> float:
    if V.is_zero:
        return 0.0
    dist = float(np.linalg.norm(ball.center))
    if V.kind == "atomic":
        return float(V.Z * _ball_potential_at(ball.mass, ball.radius, dist))
    r = ball.radius
    f = lambda s: 4 * math.pi * s * s * _shell_average_power(V.nu, s, dist)
    pts = [dist] if 0 < dist < r else None
    val, _ = integrate.quad(f, 0.0, r, points=pts, limit=200)
    return V.amplitude * val


def mask_perimeter(cfg: IndicatorConfig) -> float:
    """Marching-cubes surface area of the mask boundary (or the level set's zero contour)."""
    from skimage import measure

    h = cfg.grid.h
    if cfg.level_set is not None:
        ls = np.asarray(cfg.level_set, dtype=float)
        data, level = np.pad(ls, 1, constant_values=min(-1.0, float(ls.min()))), 0.0
    else:
        data, level = np.pad(cfg.voxel_mask.astype(float), 1), 0.5
    if not (data.min() < level < data.max()):
        return 0.0
    verts, faces, _, _ = measure.marching_cubes(data, level=level, spacing=(h, h, h))
    return float(measure.mesh_surface_area(verts, faces))


def sharp_energy(cfg: IndicatorConfig, V: PotentialSpec = PotentialSpec()) -> SharpEnergyBreakdown:
    if cfg.is_mask:
        g = cfg.grid
        rho = cfg.voxel_mask.astype(float)
        per = mask_perimeter(cfg)
        pot = 0.0 if V.is_zero else float(np.sum(potential_array(V, g) * rho)) * g.cell_volume
        coul = 0.5 * float(np.sum(rho * _cart_potential(rho, g))) * g.cell_volume
        return SharpEnergyBreakdown(per, pot, coul)
    balls = cfg.balls
    per = sum(4 * math.pi * b.radius ** 2 for b in balls)
    pot = sum(_ball_potential_integral(V, b) for b in balls)
    coul = sum(0.6 * b.mass ** 2 / b.radius for b in balls)
    for i in range(len(balls)):
        for j in range(i + 1, len(balls)):
            d = float(np.linalg.norm(np.subtract(balls[i].center, balls[j].center)))
            coul += balls[i].mass * balls[j].mass / d  # 2 D(1_Bi, 1_Bj)
    return SharpEnergyBreakdown(per, pot, coul)


# --- optimal transition profile --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TransitionProfile:
    """zeta with zeta' = -sqrt(W(zeta)), zeta(0) = 1/2, zeta(-inf) = 1, zeta(+inf) = 0."""

    s_lo: float
    s_hi: float
    z_lo: float
    z_hi: float
    sol: object

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = np.empty_like(s)
        mid = (s >= self.s_lo) & (s <= self.s_hi)
        if np.any(mid):
            out[mid] = self.sol(s[mid])[0]
        left = s < self.s_lo
        # 1 - zeta ~ c exp(2 s / 3) as s -> -inf; zeta ~ c exp(-s) as s -> +inf
        out[left] = 1.0 - (1.0 - self.z_lo) * np.exp((2.0 / 3.0) * (s[left] - self.s_lo))
        right = s > self.s_hi
        out[right] = self.z_hi * np.exp(-(s[right] - self.s_hi))
        return np.clip(out, 0.0, 1.0)


@functools.lru_cache(maxsize=1)
def transition_profile(delta: float = 1e-8) -> TransitionProfile:
    rhs = lambda s, z: [-np.sqrt(max(float(well_W(z[0])), 0.0))]
    lo_event = lambda s, z: z[0] - (1.0 - delta)
    hi_event = lambda s, z: z[0] - delta
    lo_event.terminal = hi_event.terminal = True
    back = integrate.solve_ivp(rhs, (0.0, -200.0), [0.5], method="DOP853", rtol=1e-12, atol=1e-14,
                               events=lo_event, dense_output=True)
    fwd = integrate.solve_ivp(rhs, (0.0, 200.0), [0.5], method="DOP853", rtol=1e-12, atol=1e-14,
                              events=hi_event, dense_output=True)
    s_lo = float(back.t[-1])
    s_hi = float(fwd.t[-1])

    def sol(s):
        s = np.asarray(s, dtype=float)
        out = np.empty((1, s.size))
        neg = s < 0
        if np.any(neg):
            out[0, neg] = back.sol(s[neg])[0]
        if np.any(~neg):
            out[0, ~neg] = fwd.sol(s[~neg])[0]
        return out

    return TransitionProfile(s_lo, s_hi, float(back.y[0, -1]), float(fwd.y[0, -1]), sol)


# --- a-priori bound diagnostic -----------------------------------------------------------

def _well_dominance_threshold() -> float:
    # smallest K with |t|^{10/3} <= (5/3) W(t) for all |t| > K
    return (1.0 - math.sqrt(0.6)) ** (-1.5)


def energy_bound_report(u: ScalarField, eps: float, V: PotentialSpec, K0: float, M: float) -> dict:
    """Check gradient + well + Coulomb <= 2 K0 + C1 M + C2 (diagnostic, eps < 1/4).

    V is split at |x| = 1 into an L^{5/2} core and a bounded tail.
    """
    K = _well_dominance_threshold()
    if V.kind == "atomic":
        core = 8.0 * math.pi * V.Z ** 2.5
        tail = V.Z
    elif V.kind == "homogeneous":
        p = 3.0 - 2.5 * V.nu
        core = V.amplitude ** 2.5 * 4.0 * math.pi / p if p > 0 else math.inf
        tail = V.amplitude
    else:
        core, tail = 0.0, 0.0
    C1 = 2.0 * (0.6 * K ** (4.0 / 3.0) + tail)
    C2 = 2.0 * 0.4 * core
    e = eps_energy(u, eps, V)
    lhs = e.gradient_term + e.well_term + e.coulomb_term
    bound = 2.0 * K0 + C1 * M + C2
    return {
        "eps": eps,
        "energy": e.total,
        "K0": K0,
        "lhs": lhs,
        "C1": C1,
        "C2": C2,
        "bound": bound,
        "holds": bool(lhs <= bound),
        "applicable": bool(eps < 0.25 and e.total <= K0 and l2_mass(u) <= M * (1 + 1e-12)),
    }
