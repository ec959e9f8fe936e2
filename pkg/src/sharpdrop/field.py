"""Grids and scalar fields on radial (1D in |x|) and Cartesian 3D meshes.

Both grids are uniform and cell-centered; integrals use the midpoint rule
with weight ``4 pi r^2 h`` (radial) or ``h^3`` (Cartesian). Fields are
taken to vanish outside the computational domain.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.ndimage import map_coordinates

__all__ = [
    "RadialGrid",
    "CartGrid3",
    "ScalarField",
    "MassReport",
    "mass",
    "rescale_mass",
    "dilate",
    "inner",
    "save_field",
    "load_field",
    "export_profile_csv",
]


@dataclass(frozen=True)
class RadialGrid:
    r_max: float
    n: int

    def __post_init__(self):
        if self.n < 16:
            raise ValueError(f"radial grid needs n >= 16, got {self.n}")
        if not self.r_max > 0:
            raise ValueError("r_max must be positive")

    @property
    def h(self) -> float:
        return self.r_max / self.n

    @property
    def r(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.h

    @property
    def faces(self) -> np.ndarray:
        """Cell faces r_{i+1/2}, i = -1..n-1 (n+1 values, first is 0)."""
        return np.arange(self.n + 1) * self.h

    @property
    def weights(self) -> np.ndarray:
        r = self.r
        return 4.0 * np.pi * r * r * self.h

    @property
    def shape(self) -> tuple:
        return (self.n,)

    def coords(self) -> np.ndarray:
        return self.r


@dataclass(frozen=True)
class CartGrid3:
    L: float  # box half width
    n: int

    def __post_init__(self):
        if self.n < 16 or self.n % 2:
            raise ValueError(f"Cartesian grid needs even n >= 16, got {self.n}")
        if not self.L > 0:
            raise ValueError("box half width must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def x(self) -> np.ndarray:
        """1D cell-center coordinates shared by all three axes."""
        return -self.L + (np.arange(self.n) + 0.5) * self.h

    @property
    def cell_volume(self) -> float:
        return self.h ** 3

    @property
    def weights(self) -> float:
        return self.h ** 3

    @property
    def shape(self) -> tuple:
        return (self.n, self.n, self.n)

    def mesh(self):
        x = self.x
        return np.meshgrid(x, x, x, indexing="ij", sparse=True)

    def radius(self, center=(0.0, 0.0, 0.0)) -> np.ndarray:
        X, Y, Z = self.mesh()
        c = np.asarray(center, dtype=float)
        return np.sqrt((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2)

    def index_to_point(self, idx) -> np.ndarray:
        return -self.L + (np.asarray(idx, dtype=float) + 0.5) * self.h

    def point_to_index(self, p) -> np.ndarray:
        """Fractional index of a point (cell centers at integers)."""
        return (np.asarray(p, dtype=float) + self.L) / self.h - 0.5


Grid = Union[RadialGrid, CartGrid3]


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Values on a grid. The array is copied and frozen on construction."""

    grid: Grid
    values: np.ndarray
    nonneg: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite values")
        if self.nonneg and v.min() < 0:
            raise ValueError("field flagged nonnegative has negative values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def radial(self) -> bool:
        return isinstance(self.grid, RadialGrid)

    def with_values(self, values, nonneg: bool | None = None) -> "ScalarField":
        return ScalarField(self.grid, values, self.nonneg if nonneg is None else nonneg)

    def integrate(self, f: np.ndarray) -> float:
        """Midpoint quadrature of a pointwise array on this field's grid."""
        return _integrate(self.grid, f)

    def __mul__(self, c):
        return self.with_values(self.values * c, nonneg=self.nonneg and c >= 0)

    __rmul__ = __mul__

    def __add__(self, other: "ScalarField"):
        _same_grid(self, other)
        return self.with_values(self.values + other.values, nonneg=False)

    def __sub__(self, other: "ScalarField"):
        _same_grid(self, other)
        return self.with_values(self.values - other.values, nonneg=False)

    def __neg__(self):
        return self.with_values(-self.values, nonneg=False)


def _same_grid(a: ScalarField, b: ScalarField):
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


def _integrate(grid: Grid, f: np.ndarray) -> float:
    if isinstance(grid, RadialGrid):
        return float(np.sum(grid.weights * f))
    return float(np.sum(f) * grid.cell_volume)


def inner(a: ScalarField, b: ScalarField) -> float:
    """L2 inner product with the grid's quadrature weights."""
    _same_grid(a, b)
    return _integrate(a.grid, a.values * b.values)


@dataclass(frozen=True)
class MassReport:
    l2_mass: float
    l1_norm: float
    linf_norm: float
    l10_3_norm: float
    l4_3_norm: float

    def as_dict(self) -> dict:
        return {
            "l2_mass": self.l2_mass,
            "l1_norm": self.l1_norm,
            "linf_norm": self.linf_norm,
            "l10_3_norm": self.l10_3_norm,
            "l4_3_norm": self.l4_3_norm,
        }


def mass(u: ScalarField) -> MassReport:
    a = np.abs(u.values)
    q = lambda f: _integrate(u.grid, f)
    return MassReport(
        l2_mass=q(a * a),
        l1_norm=q(a),
        linf_norm=float(a.max()) if a.size else 0.0,
        l10_3_norm=q(a ** (10.0 / 3.0)) ** 0.3,
        l4_3_norm=q(a ** (4.0 / 3.0)) ** 0.75,
    )


def l2_mass(u: ScalarField) -> float:
    return _integrate(u.grid, u.values * u.values)


def rescale_mass(u: ScalarField, target: float) -> ScalarField:
    """Multiply u by a constant so that its L2 mass equals ``target``."""
    m = l2_mass(u)
    if m <= 0:
        raise ValueError("cannot rescale zero mass")
    if target < 0:
        raise ValueError("target mass must be nonnegative")
    return u.with_values(u.values * np.sqrt(target / m))


def dilate(u: ScalarField, lam: float, mass_target: float | None = None) -> ScalarField:
    """Return v(x) = u(lam * x) by linear interpolation (zero outside the domain).

    With ``mass_target`` the result is renormalized to that L2 mass.
    """
    if not 0.5 <= lam <= 2.0:
        raise ValueError(f"dilation factor {lam} outside the resampling window [1/2, 2]")
    g = u.grid
    if isinstance(g, RadialGrid):
        r = g.r
        # extend to r=0 by even symmetry and to r_max by the zero exterior
        xp = np.concatenate(([0.0], r, [g.r_max]))
        fp = np.concatenate(([u.values[0]], u.values, [0.0]))
        vals = np.interp(lam * r, xp, fp, right=0.0)
    else:
        X, Y, Z = np.meshgrid(g.x, g.x, g.x, indexing="ij")
        coords = np.stack([g.point_to_index(lam * X), g.point_to_index(lam * Y), g.point_to_index(lam * Z)])
        vals = map_coordinates(u.values, coords, order=1, mode="constant", cval=0.0)
    v = u.with_values(vals)
    if mass_target is not None:
        v = rescale_mass(v, mass_target)
    return v


# --- field dump format -------------------------------------------------------
# header: 8-byte magic, int64 grid kind (0 radial, 1 cartesian), int64 n,
# float64 extent (r_max or L); then float64 values, all little-endian.

_MAGIC = b"SDFIELD1"
_HEADER = struct.Struct("<8sqqd")


def save_field(u: ScalarField, path) -> tuple[Path, Path]:
    """Write the binary dump and a JSON sidecar with norms; returns both paths."""
    path = Path(path)
    g = u.grid
    kind, extent = (0, g.r_max) if isinstance(g, RadialGrid) else (1, g.L)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, kind, g.n, float(extent)))
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = {
        "grid": "radial" if kind == 0 else "cartesian",
        "n": g.n,
        "extent": float(extent),
        "h": g.h,
        "nonneg": u.nonneg,
        "norms": mass(u).as_dict(),
    }
    sidecar.write_text(json.dumps(meta, indent=2))
    return path, sidecar


def load_field(path) -> ScalarField:
    with open(path, "rb") as fh:
        magic, kind, n, extent = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a field dump")
        data = np.frombuffer(fh.read(), dtype="<f8")
    grid = RadialGrid(extent, n) if kind == 0 else CartGrid3(extent, n)
    return ScalarField(grid, data.reshape(grid.shape))


def export_profile_csv(u: ScalarField, path) -> Path:
    if not u.radial:
        raise ValueError("profile export needs a radial field")
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("r,u\n")
        for r, v in zip(u.grid.r, u.values):
            fh.write(f"{r:.17g},{v:.17g}\n")
    return path
