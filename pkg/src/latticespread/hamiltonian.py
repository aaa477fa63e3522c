"""Single-excitation effective Hamiltonians.

All three coupling models are translation invariant, so a Hamiltonian is
stored as a table of couplings indexed by the displacement ``r_i - r_j``.
``Hamiltonian.apply`` multiplies by the full ``N x N`` matrix through an FFT
convolution with that table, which is what makes 93 x 93 arrays tractable;
``Hamiltonian.dense`` materializes the matrix for small systems.

Energies are in units of gamma_A for the light-mediated models (the atomic
frequency is removed by the rotating frame, leaving ``-i/2`` on the
diagonal) and in units of ``1/a**alpha`` for power-law hopping.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.fft

from .core import (
    CouplingModel,
    FreeSpace,
    LatticeError,
    LatticeGeometry,
    PowerLaw,
    Waveguide,
)

DENSE_LIMIT = 2000

_fft_workers = 1


def set_fft_workers(n: int) -> None:
    """Cap the worker threads used by the FFT-based matrix-free apply."""
    global _fft_workers
    _fft_workers = max(1, int(n))


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    """Translation-invariant single-excitation Hamiltonian.

    ``table[dy + n_y - 1, dx + n_x - 1]`` is the matrix element between two
    sites whose grid indices differ by ``(dx, dy)``; the centre entry is the
    diagonal.
    """

    geometry: LatticeGeometry
    table: np.ndarray
    model: Optional[CouplingModel] = None
    hermitian: bool = False

    def __post_init__(self):
        nx, ny = self.geometry.counts
        table = np.ascontiguousarray(self.table, dtype=np.complex128)
        if table.shape != (2 * ny - 1, 2 * nx - 1):
            raise LatticeError(
                f"coupling table shape {table.shape} does not match geometry {nx}x{ny}"
            )
        if not np.all(np.isfinite(table)):
            raise LatticeError("coupling table contains non-finite entries")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    @property
    def n(self) -> int:
        return self.geometry.n_sites

    @property
    def hermitian_flag(self) -> bool:
        return self.hermitian

    @property
    def diagonal(self) -> complex:
        nx, ny = self.geometry.counts
        return complex(self.table[ny - 1, nx - 1])

    def coupling(self, dx: int, dy: int = 0) -> complex:
        """Matrix element for the grid displacement ``(dx, dy)``."""
        nx, ny = self.geometry.counts
        if abs(dx) >= nx or abs(dy) >= ny:
            raise LatticeError(f"displacement ({dx}, {dy}) exceeds the lattice")
        return complex(self.table[dy + ny - 1, dx + nx - 1])

    def dense(self, limit: int = DENSE_LIMIT) -> np.ndarray:
        """Materialize the ``N x N`` matrix (refuses ``N > limit``)."""
        if self.n > limit:
            raise LatticeError(
                f"N={self.n} exceeds the dense limit {limit}; use apply() instead"
            )
        nx, ny = self.geometry.counts
        ix = np.tile(np.arange(nx), ny)
        iy = np.repeat(np.arange(ny), nx)
        dx = ix[:, None] - ix[None, :] + nx - 1
        dy = iy[:, None] - iy[None, :] + ny - 1
        return self.table[dy, dx]

    @property
    def matrix(self) -> np.ndarray:
        return self._dense_cached

    @cached_property
    def _dense_cached(self) -> np.ndarray:
        m = self.dense()
        m.setflags(write=False)
        return m

    @cached_property
    def _fft_plan(self):
        nx, ny = self.geometry.counts
        ly = scipy.fft.next_fast_len(2 * ny - 1) if ny > 1 else 1
        lx = scipy.fft.next_fast_len(2 * nx - 1)
        padded = np.zeros((ly, lx), dtype=np.complex128)
        dy = np.arange(-(ny - 1), ny)
        dx = np.arange(-(nx - 1), nx)
        padded[np.ix_(dy % ly, dx % lx)] = self.table
        return (ly, lx), scipy.fft.fft2(padded, workers=_fft_workers)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Return ``M @ v`` without forming ``M`` (FFT convolution)."""
        nx, ny = self.geometry.counts
        v = np.asarray(v, dtype=np.complex128)
        if v.shape != (self.n,):
            raise LatticeError(f"vector of shape {v.shape} does not match N={self.n}")
        shape, kernel = self._fft_plan
        vf = scipy.fft.fft2(v.reshape(ny, nx), s=shape, workers=_fft_workers)
        out = scipy.fft.ifft2(vf * kernel, workers=_fft_workers)
        return np.ascontiguousarray(out[:ny, :nx]).reshape(self.n)

    def norm_bound(self) -> float:
        """Upper bound on the 2-norm: the l1 norm of the coupling table."""
        return float(np.abs(self.table).sum())

    def collective_decay(self) -> np.ndarray:
        """Dense ``Gamma = i (M - M^dagger)``, the collective decay matrix."""
        m = self.dense()
        return 1j * (m - m.conj().T)

    def export_table_csv(self, path) -> None:
        """Write the coupling table as CSV columns ``dx, dy, re, im``."""
        nx, ny = self.geometry.counts
        ax, ay = self.geometry.spacings
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dx", "dy", "re", "im"])
            for jy in range(2 * ny - 1):
                for jx in range(2 * nx - 1):
                    val = self.table[jy, jx]
                    w.writerow(
                        [
                            _fmt((jx - nx + 1) * ax),
                            _fmt((jy - ny + 1) * ay),
                            _fmt(val.real),
                            _fmt(val.imag),
                        ]
                    )


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _displacements(geometry: LatticeGeometry) -> tuple[np.ndarray, np.ndarray]:
    nx, ny = geometry.counts
    ax, ay = geometry.spacings
    dx = np.arange(-(nx - 1), nx) * ax
    dy = np.arange(-(ny - 1), ny) * ay
    return np.meshgrid(dx, dy)


def from_couplings(
    geometry: LatticeGeometry,
    coupling: Callable[[np.ndarray, np.ndarray], np.ndarray],
    diagonal: complex = 0.0,
    model: Optional[CouplingModel] = None,
    hermitian: Optional[bool] = None,
) -> Hamiltonian:
    """Build a Hamiltonian from a vectorized ``coupling(x, y)`` of displacement.

    ``coupling`` is evaluated on every non-zero displacement (in units of
    ``a``) and must be even, ``J(-r) = J(r)``.
    """
    X, Y = _displacements(geometry)
    nx, ny = geometry.counts
    R = np.hypot(X, Y)
    off = np.ones_like(R, dtype=bool)
    off[ny - 1, nx - 1] = False
    if np.any(R[off] == 0.0):
        raise LatticeError("coincident sites: zero separation between distinct sites")
    table = np.zeros(R.shape, dtype=np.complex128)
    table[off] = coupling(X[off], Y[off])
    table[ny - 1, nx - 1] = diagonal
    if hermitian is None:
        hermitian = bool(np.all(table.imag == 0.0))
    return Hamiltonian(geometry, table, model, hermitian)


def build_power_law(geometry: LatticeGeometry, alpha: float) -> Hamiltonian:
    """Real symmetric hopping ``1/|r_i - r_j|**alpha`` with zero diagonal."""
    model = PowerLaw(alpha)
    if geometry.n_sites < 2:
        raise LatticeError("power-law Hamiltonian needs at least two sites")
    return from_couplings(
        geometry,
        lambda x, y: np.hypot(x, y) ** (-model.alpha),
        0.0,
        model,
        hermitian=True,
    )


def build_nearest_neighbor(geometry: LatticeGeometry, hopping: float = 1.0) -> Hamiltonian:
    """Tight-binding hopping between sites one lattice spacing apart."""
    ax, ay = geometry.spacings

    def J(x, y):
        near = np.isclose(np.abs(x), ax) & (y == 0) | np.isclose(np.abs(y), ay) & (x == 0)
        return np.where(near, hopping, 0.0)

    return from_couplings(geometry, J, 0.0, None, hermitian=bool(np.isreal(hopping)))


def build_waveguide(geometry: LatticeGeometry, k_A: float) -> Hamiltonian:
    """Waveguide-QED chain: ``-(i/2) exp(i k_A |x_i - x_j|)``, diagonal ``-i/2``.

    The outgoing-wave phase ``exp(+i k_A r)`` matches the free-space Green's
    tensor and gives ``Re omega = (1/4) sum_eps cot((k_A + eps k)/2)``.  The
    opposite phase convention yields ``-M*`` and identical probabilities.
    """
    model = Waveguide(k_A)
    if geometry.dimension != 1:
        raise LatticeError("the waveguide model is defined for 1D chains only")
    return from_couplings(
        geometry,
        lambda x, y: -0.5j * np.exp(1j * model.k_A * np.abs(x)),
        -0.5j,
        model,
        hermitian=False,
    )


def green_tensor_free_space(r_vec, k_A: float) -> np.ndarray:
    """Dyadic Green's tensor of vacuum at separation ``r_vec`` (3-vector).

    ``G = exp(ikr)/(4 pi k^2 r^3) [(k^2 r^2 + ikr - 1) I + (-k^2 r^2 - 3ikr + 3) rr]``
    """
    r_vec = np.asarray(r_vec, dtype=float).reshape(3)
    r = float(np.linalg.norm(r_vec))
    if r == 0.0:
        raise LatticeError("Green's tensor is singular at r = 0")
    if not k_A > 0:
        raise LatticeError(f"k_A must be > 0, got {k_A}")
    kr = k_A * r
    rhat = r_vec / r
    pref = np.exp(1j * kr) / (4.0 * math.pi * k_A**2 * r**3)
    a = kr**2 + 1j * kr - 1.0
    b = -(kr**2) - 3j * kr + 3.0
    return pref * (a * np.eye(3) + b * np.outer(rhat, rhat))


def free_space_coupling(x, y, k_A: float, dipole: np.ndarray) -> np.ndarray:
    """``-(3 pi / k_A) d* . G(r) . d`` for in-plane displacements ``(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.hypot(x, y)
    proj = (x * dipole[0] + y * dipole[1]) / r
    proj2 = np.abs(proj) ** 2
    kr = k_A * r
    bracket = (kr**2 + 1j * kr - 1.0) + (-(kr**2) - 3j * kr + 3.0) * proj2
    return -(3.0 / (4.0 * k_A**3 * r**3)) * np.exp(1j * kr) * bracket


def build_free_space(
    geometry: LatticeGeometry, k_A: float, polarization=(1.0, 0.0, 0.0)
) -> Hamiltonian:
    """Atoms in vacuum, all dipoles along ``polarization``; sites in the x-y plane."""
    model = FreeSpace(k_A, tuple(polarization))
    d = model.dipole
    return from_couplings(
        geometry,
        lambda x, y: free_space_coupling(x, y, model.k_A, d),
        -0.5j,
        model,
        hermitian=False,
    )


def build(geometry: LatticeGeometry, model: CouplingModel) -> Hamiltonian:
    """Dispatch on the coupling model."""
    if isinstance(model, PowerLaw):
        return build_power_law(geometry, model.alpha)
    if isinstance(model, Waveguide):
        return build_waveguide(geometry, model.k_A)
    if isinstance(model, FreeSpace):
        return build_free_space(geometry, model.k_A, model.polarization)
    raise TypeError(f"unknown coupling model {model!r}")
