"""Mass-constrained minimization of the diffuse energy.

Projected L2 gradient flow on the sphere {||u||^2 = M}: step along the
tangential gradient, clip to u >= 0 (optional), renormalize the mass, and
halve the step whenever the energy goes up. An H^-1 (mass-preserving
Cahn-Hilliard type) flow would be the alternative; the constraint here is
the global L2 mass, so the projected L2 flow is used.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from .energy import (
    EnergyBreakdown,
    ball_radius,
    dirichlet_energy,
    neg_laplacian,
    newton_potential,
    potential_array,
    transition_profile,
    well_W,
    well_W_prime,
    well_W_second,
)
from .field import CartGrid3, RadialGrid, ScalarField, l2_mass
from .potentials import PotentialSpec

log = logging.getLogger(__name__)

__all__ = [
    "MinimizeConfig",
    "MinimizeResult",
    "variational_gradient",
    "project_tangent",
    "minimize_eps",
    "anneal_eps",
    "initial_field",
    "write_iteration_log",
    "ResolutionError",
]

# max |W''| on [0, 1.2]; attained at t = 0
W2_MAX = float(np.max(np.abs(well_W_second(np.linspace(0.0, 1.2, 100001)))))


class ResolutionError(ValueError):
    pass


def stiffness_estimate(grid, eps: float) -> float:
    """Upper estimate of the largest Hessian eigenvalue of the local terms."""
    lap = 8.0 / grid.h ** 2 if isinstance(grid, RadialGrid) else 12.0 / grid.h ** 2
    return eps * lap + W2_MAX / (2.0 * eps)


@dataclass
class MinimizeConfig:
    eps: float
    mass: float
    grid: RadialGrid | CartGrid3
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    init: str = "ball_profile"  # ball_profile | random | warm_start
    init_radius: float | None = None
    seed: int = 0
    noise_scale: float | None = None  # correlation length of random init (default eps)
    warm: ScalarField | None = None
    dt: float | None = None  # default: the stability bound eps / max|W''|
    tol: float = 1e-6
    max_iter: int = 200_000
    nonneg: bool = True
    log_every: int = 100

    def __post_init__(self):
        if self.eps <= 0 or self.mass <= 0:
            raise ValueError("eps and mass must be positive")
        if self.dt is None:
            self.dt = min(self.eps / W2_MAX, 1.9 / stiffness_estimate(self.grid, self.eps))
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.dt * W2_MAX / (2.0 * self.eps) > 1.0 + 1e-12:
            raise ValueError(
                f"dt={self.dt:g} violates the explicit-step guard dt * max|W''| / (2 eps) <= 1"
            )
        if self.init not in ("ball_profile", "random", "warm_start"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.init == "warm_start" and self.warm is None:
            raise ValueError("warm_start init needs a field")


@dataclass(eq=False)
class MinimizeResult:
    field: ScalarField
    breakdown: EnergyBreakdown
    iterations: int
    converged: bool
    residual: float
    mass_error: float
    message: str = ""
    history: list = field(default_factory=list)


# --- energy + first variation on raw arrays --------------------------------------------

def _integrate(grid, f):
    if isinstance(grid, RadialGrid):
        return float(np.sum(grid.weights * f))
    return float(np.sum(f)) * grid.cell_volume


def _energy_and_gradient(vals: np.ndarray, grid, eps: float, V: PotentialSpec, want_grad: bool = True):
    u = ScalarField.__new__(ScalarField)  # skip the copy/validation in the inner loop
    object.__setattr__(u, "grid", grid)
    object.__setattr__(u, "values", vals)
    object.__setattr__(u, "nonneg", False)
    rho = vals * vals
    pot_arr = None if V.is_zero else potential_array(V, grid)
    v = newton_potential(rho, grid)
    e = EnergyBreakdown(
        eps,
        eps * dirichlet_energy(u),
        _integrate(grid, well_W(vals)) / (2.0 * eps),
        0.0 if pot_arr is None else _integrate(grid, pot_arr * rho),
        0.5 * _integrate(grid, rho * v),
    )
    if not want_grad:
        return e, None
    g = eps * neg_laplacian(u) + well_W_prime(vals) / (2.0 * eps) + 2.0 * v * vals
    if pot_arr is not None:
        g -= 2.0 * pot_arr * vals
    return e, g


def variational_gradient(u: ScalarField, eps: float, V: PotentialSpec = PotentialSpec()) -> ScalarField:
    """L2 gradient of the discrete energy:
    -eps Lap u + W'(u)/(2 eps) - 2 V u + 2 (|x|^-1 * u^2) u."""
    _, g = _energy_and_gradient(u.values, u.grid, eps, V)
    return ScalarField(u.grid, g)


def _project(g: np.ndarray, u: np.ndarray, grid) -> np.ndarray:
    uu = _integrate(grid, u * u)
    if uu <= 0:
        raise ValueError("cannot project onto the tangent space at u = 0")
    return g - (_integrate(grid, g * u) / uu) * u


def project_tangent(g: ScalarField, u: ScalarField) -> ScalarField:
    """Remove from g its component along u (tangent space of the mass sphere)."""
    if g.grid != u.grid:
        raise ValueError("fields live on different grids")
    return ScalarField(u.grid, _project(g.values, u.values, u.grid))


def _residual(pg: np.ndarray, u: np.ndarray, grid, nonneg: bool) -> float:
    if nonneg:
        pg = np.where((u <= 0) & (pg > 0), 0.0, pg)
    return math.sqrt(_integrate(grid, pg * pg))


# --- initial data -------------------------------------------------------------------

def initial_field(cfg: MinimizeConfig) -> ScalarField:
    g = cfg.grid
    if cfg.init == "warm_start":
        if cfg.warm.grid != g:
            raise ValueError("warm start lives on a different grid")
        vals = np.array(cfg.warm.values)
    elif cfg.init == "ball_profile":
        R = cfg.init_radius if cfg.init_radius is not None else ball_radius(cfg.mass)
        r = g.r if isinstance(g, RadialGrid) else g.radius()
        vals = transition_profile()((r - R) / cfg.eps)
    else:
        rng = np.random.default_rng(cfg.seed)
        R = cfg.init_radius if cfg.init_radius is not None else 3.0 * ball_radius(cfg.mass)
        sigma = max((cfg.noise_scale or cfg.eps) / g.h, 1.0)
        if isinstance(g, RadialGrid):
            noise = gaussian_filter1d(rng.standard_normal(g.n), sigma=sigma)
            env = np.exp(-((g.r / R) ** 2))
        else:
            noise = gaussian_filter(rng.standard_normal(g.shape), sigma=sigma)
            env = np.exp(-((g.radius() / R) ** 2))
        # positive part of smoothed noise: separate blobs that can seed several drops
        vals = np.maximum(noise, 0.0) * env
    vals = np.broadcast_to(vals, g.shape).astype(float)
    if cfg.nonneg:
        vals = np.maximum(vals, 0.0)
    m = _integrate(g, vals * vals)
    if m <= 0:
        raise ValueError("initial field has zero mass")
    return ScalarField(g, vals * math.sqrt(cfg.mass / m))


# --- the flow --------------------------------------------------------------------------

def minimize_eps(cfg: MinimizeConfig) -> MinimizeResult:
    g, eps, V, M = cfg.grid, cfg.eps, cfg.potential, cfg.mass
    u = initial_field(cfg).values.copy()
    E, grad = _energy_and_gradient(u, g, eps, V)
    pg = _project(grad, u, g)
    res = _residual(pg, u, g, cfg.nonneg)
    dt0 = dt = cfg.dt
    history = [(0, E, res, dt)]
    streak = 0
    converged = False
    message = ""
    it = 0
    for it in range(1, cfg.max_iter + 1):
        if res <= cfg.tol:
            converged = True
            it -= 1
            break
        while True:
            trial = u - dt * pg
            if cfg.nonneg:
                np.maximum(trial, 0.0, out=trial)
            m = _integrate(g, trial * trial)
            if m > 0:
                trial *= math.sqrt(M / m)
                E_t, grad_t = _energy_and_gradient(trial, g, eps, V)
                if E_t.total <= E.total + 1e-10:
                    break
            dt *= 0.5
            streak = 0
            if dt < 1e-12 * dt0:
                message = f"step collapse at iteration {it} (dt={dt:.3e})"
                log.warning(message)
                return _result(u, g, E, it - 1, False, res, M, message, history)
        u, E, grad = trial, E_t, grad_t
        pg = _project(grad, u, g)
        res = _residual(pg, u, g, cfg.nonneg)
        streak += 1
        if streak >= 10 and dt < dt0:
            dt = min(2.0 * dt, dt0)
            streak = 0
        if cfg.log_every and it % cfg.log_every == 0:
            history.append((it, E, res, dt))
    else:
        converged = res <= cfg.tol
        message = "" if converged else f"max_iter={cfg.max_iter} reached, residual {res:.3e}"
    history.append((it, E, res, dt))
    return _result(u, g, E, it, converged, res, M, message, history)


def _result(u, g, E, it, converged, res, M, message, history):
    f = ScalarField(g, u)
    return MinimizeResult(f, E, it, converged, res, abs(l2_mass(f) - M), message, history)


def write_iteration_log(result: MinimizeResult, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "total", "gradient", "well", "potential", "coulomb", "residual", "dt"])
        for it, E, res, dt in result.history:
            w.writerow([it] + [f"{x:.17g}" for x in (E.total, E.gradient_term, E.well_term,
                                                     E.potential_term, E.coulomb_term, res, dt)])
    return path


def cells_per_eps(grid, eps: float) -> float:
    return eps / grid.h


def anneal_eps(mass: float, V: PotentialSpec, eps_schedule, base_cfg: MinimizeConfig) -> list[MinimizeResult]:
    """Minimize along a decreasing eps schedule, warm-starting each stage."""
    sched = [float(e) for e in eps_schedule]
    if not sched:
        raise ValueError("empty eps schedule")
    if any(e <= 0 for e in sched) or any(b >= a for a, b in zip(sched, sched[1:])):
        raise ValueError("eps schedule must be strictly decreasing and positive")
    if cells_per_eps(base_cfg.grid, sched[-1]) < 6:
        raise ResolutionError("refine grid: fewer than 6 cells per interface width")
    results = []
    warm = None
    for eps in sched:
        cfg = replace(base_cfg, eps=eps, mass=mass, potential=V, dt=None)
        if warm is not None:
            cfg = replace(cfg, init="warm_start", warm=warm)
        res = minimize_eps(cfg)
        log.info("eps=%g total=%.10g iters=%d converged=%s", eps, res.breakdown.total, res.iterations, res.converged)
        results.append(res)
        warm = res.field
    return results
