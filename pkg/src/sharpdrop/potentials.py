"""External potentials: none, atomic Z/|x| and homogeneous a|x|^-nu."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import CartGrid3, RadialGrid, ScalarField

__all__ = ["PotentialSpec", "eval_potential", "potential_values", "classify", "numeric_long_range"]


@dataclass(frozen=True)
class PotentialSpec:
    kind: str = "none"  # none | atomic | homogeneous
    Z: float = 0.0
    nu: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "atomic", "homogeneous"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "atomic" and self.Z < 0:
            raise ValueError("atomic charge Z must be >= 0")
        if self.kind == "homogeneous":
            if not 0 < self.nu < 3:
                raise ValueError("homogeneous exponent must lie in (0, 3)")
            if self.amplitude <= 0:
                raise ValueError("homogeneous amplitude must be positive")

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def atomic(cls, Z: float):
        return cls("atomic", Z=float(Z))

    @classmethod
    def homogeneous(cls, nu: float, amplitude: float = 1.0):
        return cls("homogeneous", nu=float(nu), amplitude=float(amplitude))

    @property
    def is_zero(self) -> bool:
        return self.kind == "none" or (self.kind == "atomic" and self.Z == 0)

    @property
    def charge(self) -> float:
        """Coefficient of 1/|x| (0 unless atomic)."""
        return self.Z if self.kind == "atomic" else 0.0

    def as_dict(self) -> dict:
        if self.kind == "atomic":
            return {"kind": "atomic", "Z": self.Z}
        if self.kind == "homogeneous":
            return {"kind": "homogeneous", "nu": self.nu, "amplitude": self.amplitude}
        return {"kind": "none"}

    @classmethod
    def from_dict(cls, d: dict | None) -> "PotentialSpec":
        if not d:
            return cls.none()
        kind = d.get("kind", "none")
        if kind == "atomic":
            return cls.atomic(d.get("Z", 0.0))
        if kind == "homogeneous":
            return cls.homogeneous(d.get("nu", 1.0), d.get("amplitude", 1.0))
        return cls(kind)

    def __call__(self, r):
        return potential_values(self, r)


def potential_values(spec: PotentialSpec, r) -> np.ndarray:
    """V at distance(s) r from the origin."""
    r = np.asarray(r, dtype=float)
    if spec.kind == "none":
        return np.zeros_like(r)
    with np.errstate(divide="ignore"):
        if spec.kind == "atomic":
            return spec.Z / r
        return spec.amplitude * r ** (-spec.nu)


def eval_potential(spec: PotentialSpec, grid) -> ScalarField:
    if isinstance(grid, RadialGrid):
        r = grid.r
    elif isinstance(grid, CartGrid3):
        r = np.broadcast_to(grid.radius(), grid.shape)
    else:
        raise TypeError(f"unsupported grid {grid!r}")
    return ScalarField(grid, potential_values(spec, r), nonneg=True)


def classify(spec: PotentialSpec) -> dict:
    """Check V against V in L^{5/2}+L^inf (decaying) and the long-range condition.

    Splitting at |x| = 1, the singular piece r^-nu lies in L^{5/2} near the
    origin iff 5 nu / 2 < 3. The long-range test is liminf t * inf_{|x|=t} V.
    """
    if spec.kind == "none":
        return {
            "satisfies_hyp_V": True,
            "long_range": False,
            "report": "V = 0: trivially in L^{5/2}+L^inf and decaying; t*V(t) = 0, not long-range",
        }
    if spec.kind == "atomic":
        return {
            "satisfies_hyp_V": True,
            "long_range": False,
            "report": (
                f"V = {spec.Z:g}/|x|: singular part on |x|<1 is in L^{{5/2}} (5/2 < 3), "
                f"tail bounded and decaying; t*V(t) = {spec.Z:g} stays bounded, not long-range"
            ),
        }
    nu = spec.nu
    certified = nu < 6.0 / 5.0
    long_range = nu < 1.0
    parts = []
    if certified:
        parts.append(f"|x|^-{nu:g} is in L^{{5/2}} near 0 and bounded, decaying outside B_1")
    else:
        parts.append(f"L^{{5/2}}+L^inf decomposition not certified for nu = {nu:g} >= 6/5")
    if long_range:
        parts.append(f"t*V(t) = a t^{1 - nu:g} -> infinity: long-range")
    else:
        parts.append(f"t*V(t) = a t^{1 - nu:g} stays bounded: not long-range")
    return {"satisfies_hyp_V": certified, "long_range": long_range, "report": "; ".join(parts)}


def numeric_long_range(spec: PotentialSpec, ts=(10.0, 100.0, 1000.0)) -> bool:
    """Independent check of the long-range condition by sampling t * min_{|x|=t} V.

    Sampled on a Fibonacci sphere so it does not rely on radial symmetry. The
    sequence is declared divergent when it increases across every decade with
    a positive log-log slope (power-law growth), bounded otherwise.
    """
    k = np.arange(64) + 0.5
    polar = np.arccos(1 - 2 * k / 64)
    az = np.pi * (1 + 5 ** 0.5) * k
    dirs = np.stack([np.cos(az) * np.sin(polar), np.sin(az) * np.sin(polar), np.cos(polar)], axis=1)
    seq = np.array([t * float(np.min(potential_values(spec, np.linalg.norm(t * dirs, axis=1)))) for t in ts])
    if np.any(seq <= 0):
        return False
    slopes = np.diff(np.log10(seq)) / np.diff(np.log10(ts))
    return bool(np.all(slopes > 1e-6))
