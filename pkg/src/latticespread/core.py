"""Lattice geometry, coupling-model descriptors and unit conventions.

The lattice constant is fixed to ``a = 1``; every wavenumber (``k_A``) is the
dimensionless product ``k_A * a``.  Site indices are row-major,
``i = iy * n_x + ix``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np


class LatticeError(ValueError):
    """Invalid geometry or model parameters."""


@dataclass(frozen=True)
class LatticeGeometry:
    """Finite rectangular Bravais lattice centred on ``origin_site``.

    Parameters
    ----------
    counts : (n_x, n_y)
        Sites per axis; ``n_y == 1`` for a chain.
    spacings : (a_x, a_y)
        Lattice spacings in units of ``a``.
    """

    counts: tuple[int, int]
    spacings: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        nx, ny = (int(c) for c in self.counts)
        ax, ay = (float(s) for s in self.spacings)
        if nx < 1 or ny < 1:
            raise LatticeError(f"site counts must be >= 1, got {self.counts}")
        if not (ax > 0 and ay > 0 and math.isfinite(ax) and math.isfinite(ay)):
            raise LatticeError(f"spacings must be positive, got {self.spacings}")
        object.__setattr__(self, "counts", (nx, ny))
        object.__setattr__(self, "spacings", (ax, ay))

    @classmethod
    def chain(cls, n: int, spacing: float = 1.0) -> "LatticeGeometry":
        return cls((n, 1), (spacing, 1.0))

    @classmethod
    def square(cls, n: int, spacing: float = 1.0) -> "LatticeGeometry":
        return cls((n, n), (spacing, spacing))

    @classmethod
    def rectangular(cls, nx: int, ny: int, ax: float, ay: float) -> "LatticeGeometry":
        return cls((nx, ny), (ax, ay))

    @property
    def dimension(self) -> int:
        return 1 if self.counts[1] == 1 else 2

    @property
    def n_sites(self) -> int:
        return self.counts[0] * self.counts[1]

    @property
    def center(self) -> tuple[int, int]:
        """Grid coordinates ``(ix, iy)`` of the centre site."""
        return ((self.counts[0] - 1) // 2, (self.counts[1] - 1) // 2)

    @property
    def origin_site(self) -> int:
        cx, cy = self.center
        return cy * self.counts[0] + cx

    def grid_index(self, site: int) -> tuple[int, int]:
        self._check_site(site)
        iy, ix = divmod(int(site), self.counts[0])
        return ix, iy

    def site_index(self, ix: int, iy: int = 0) -> int:
        nx, ny = self.counts
        if not (0 <= ix < nx and 0 <= iy < ny):
            raise LatticeError(f"grid point ({ix}, {iy}) outside {nx}x{ny} lattice")
        return iy * nx + ix

    def position(self, site: int) -> np.ndarray:
        """Cartesian position of ``site`` relative to the centre site."""
        ix, iy = self.grid_index(site)
        cx, cy = self.center
        return np.array([(ix - cx) * self.spacings[0], (iy - cy) * self.spacings[1]])

    def positions(self) -> np.ndarray:
        """``(N, 2)`` array of all site positions in index order."""
        nx, ny = self.counts
        cx, cy = self.center
        ix = np.tile(np.arange(nx), ny)
        iy = np.repeat(np.arange(ny), nx)
        return np.column_stack([(ix - cx) * self.spacings[0], (iy - cy) * self.spacings[1]])

    def _check_site(self, site: int) -> None:
        if not (0 <= int(site) < self.n_sites):
            raise LatticeError(f"site {site} out of range [0, {self.n_sites})")

    def to_dict(self) -> dict:
        return {"counts": list(self.counts), "spacings": list(self.spacings)}

    @classmethod
    def from_dict(cls, data: dict) -> "LatticeGeometry":
        _reject_unknown(data, {"counts", "spacings"}, "geometry")
        return cls(tuple(data["counts"]), tuple(data.get("spacings", (1.0, 1.0))))


@dataclass(frozen=True)
class PowerLaw:
    """Real hopping ``1 / r**alpha`` (energy unit ``1/a**alpha``)."""

    alpha: float

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise LatticeError(f"alpha must be > 0, got {self.alpha}")

    kind = "powerlaw"


@dataclass(frozen=True)
class Waveguide:
    """Ideal one-dimensional waveguide QED, energies in units of gamma_A."""

    k_A: float

    def __post_init__(self):
        if not (self.k_A > 0 and math.isfinite(self.k_A)):
            raise LatticeError(f"k_A must be > 0, got {self.k_A}")

    kind = "waveguide"


@dataclass(frozen=True)
class FreeSpace:
    """Three-dimensional vacuum dipole-dipole coupling with fixed polarization."""

    k_A: float
    polarization: tuple[complex, complex, complex] = field(default=(1.0, 0.0, 0.0))

    def __post_init__(self):
        if not (self.k_A > 0 and math.isfinite(self.k_A)):
            raise LatticeError(f"k_A must be > 0, got {self.k_A}")
        d = tuple(complex(c) for c in self.polarization)
        if len(d) != 3:
            raise LatticeError("polarization must be a 3-vector")
        norm = math.sqrt(sum(abs(c) ** 2 for c in d))
        if abs(norm - 1.0) > 1e-12:
            raise LatticeError(f"polarization must be a unit vector, |d| = {norm!r}")
        object.__setattr__(self, "polarization", d)

    kind = "freespace"

    @property
    def dipole(self) -> np.ndarray:
        return np.asarray(self.polarization, dtype=complex)


CouplingModel = Union[PowerLaw, Waveguide, FreeSpace]


def model_to_dict(model: CouplingModel) -> dict:
    if isinstance(model, PowerLaw):
        return {"type": "powerlaw", "alpha": model.alpha}
    if isinstance(model, Waveguide):
        return {"type": "waveguide", "k_A": model.k_A}
    if isinstance(model, FreeSpace):
        pol = [[c.real, c.imag] for c in model.polarization]
        return {"type": "freespace", "k_A": model.k_A, "polarization": pol}
    raise TypeError(f"unknown coupling model {model!r}")


def model_from_dict(data: dict) -> CouplingModel:
    kind = data.get("type")
    if kind == "powerlaw":
        _reject_unknown(data, {"type", "alpha"}, "model")
        return PowerLaw(float(data["alpha"]))
    if kind == "waveguide":
        _reject_unknown(data, {"type", "k_A"}, "model")
        return Waveguide(float(data["k_A"]))
    if kind == "freespace":
        _reject_unknown(data, {"type", "k_A", "polarization"}, "model")
        pol = []
        for c in data["polarization"]:
            if isinstance(c, (list, tuple)):
                pol.append(complex(float(c[0]), float(c[1])))
            else:
                pol.append(complex(float(c)))
        return FreeSpace(float(data["k_A"]), tuple(pol))
    raise LatticeError(f"unknown model type {kind!r}")


def energy_unit(model: CouplingModel) -> str:
    """Unit tag for energies (and the matching time unit) of ``model``."""
    if isinstance(model, PowerLaw):
        return "1/a^alpha"
    return "gamma_A"


def time_unit(model: CouplingModel) -> str:
    if isinstance(model, PowerLaw):
        return "t0=a^alpha"
    return "1/gamma_A"


def polarization_from_angles(theta: float, phi: float) -> tuple[float, float, float]:
    """Unit dipole from polar angle ``theta`` (from z) and azimuth ``phi``."""
    return (
        math.sin(theta) * math.cos(phi),
        math.sin(theta) * math.sin(phi),
        math.cos(theta),
    )


def tilted_polarization(tilt: float = math.pi / 12) -> tuple[float, float, float]:
    """``sin(tilt)/sqrt(2) (x + y) + cos(tilt) z``, the 2D-array dipole."""
    s = math.sin(tilt) / math.sqrt(2.0)
    return (s, s, math.cos(tilt))


def _reject_unknown(data: dict, allowed: set, where: str) -> None:
    extra = set(data) - allowed
    if extra:
        raise LatticeError(f"unknown keys in {where}: {sorted(extra)}")
