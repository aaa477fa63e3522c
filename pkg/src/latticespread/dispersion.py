"""Dispersion relations, their derivatives, Hessian determinants and zero sets.

One-dimensional dispersions of all three coupling models are finite sums of
polylogarithms on the unit circle,

    omega(q) = diag + sum_s c_s [Li_s(e^{i(kappa+q)}) + Li_s(e^{i(kappa-q)})],

so every derivative is again such a sum (``d/dq`` lowers the order by one).
Closed forms, truncated lattice sums and finite differences are provided as
independent cross-checks.  In 2D the power-law sum is folded onto a uniform
k-grid and evaluated with one FFT; the free-space dispersion uses a Gaussian
regularized reciprocal-space sum.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.optimize
import scipy.special

from . import kernels
from .core import (
    CouplingModel,
    FreeSpace,
    LatticeError,
    PowerLaw,
    Waveguide,
    energy_unit,
)
from .polylog import clausen2, clausen3, polylog_unit_circle

TWO_PI = 2.0 * math.pi


class SingularPointError(LatticeError):
    """Evaluation at a point where the dispersion or a derivative diverges."""


# ---------------------------------------------------------------------------
# 1D dispersions


@dataclass(frozen=True)
class PolylogDispersion:
    """``diag + sum_s c_s [Li_s(e^{i(kappa+q)}) + Li_s(e^{i(kappa-q)})]``.

    Parameters
    ----------
    terms : sequence of ``(s, c_s)``
    kappa : phase wavenumber (``k_A`` for light-mediated couplings, 0 otherwise)
    diagonal : on-site term
    k_A : light-cone wavenumber used for the subradiant mask (None: no light cone)
    """

    terms: tuple
    kappa: float = 0.0
    diagonal: complex = 0.0
    k_A: Optional[float] = None
    unit: str = ""
    label: str = ""

    @property
    def singular_points(self) -> tuple[float, ...]:
        """Wavenumbers in ``[-pi, pi]`` where high enough derivatives diverge."""
        pts = {float(_wrap_pi(self.kappa)), float(_wrap_pi(-self.kappa))}
        return tuple(sorted(pts))

    def derivative(self, k, n: int = 0) -> np.ndarray:
        """Complex ``d^n omega / dk^n``; ``nan`` where it diverges."""
        k = np.asarray(k, dtype=float)
        out = np.zeros(k.shape, dtype=np.complex128)
        if n == 0:
            out += self.diagonal
        plus = self.kappa + k
        minus = self.kappa - k
        for s, c in self.terms:
            lp = polylog_unit_circle(s - n, plus)
            lm = polylog_unit_circle(s - n, minus)
            out += c * ((1j) ** n * lp + (-1j) ** n * lm)
        return out

    def omega(self, k) -> np.ndarray:
        return self.derivative(k, 0)

    def d1(self, k) -> np.ndarray:
        """Group velocity ``d Re omega / dk``."""
        return self.derivative(k, 1).real

    def d2(self, k) -> np.ndarray:
        return self.derivative(k, 2).real

    def d3(self, k) -> np.ndarray:
        return self.derivative(k, 3).real

    def subradiant(self, k) -> np.ndarray:
        return subradiant_mask_1d(k, self.k_A)


@dataclass(frozen=True)
class CallableDispersion:
    """Dispersion given by user callables (test bands, smooth batteries).

    Missing derivatives are filled in by central differences.
    """

    func: Callable
    first: Optional[Callable] = None
    second: Optional[Callable] = None
    third: Optional[Callable] = None
    singular_points: tuple = ()
    k_A: Optional[float] = None
    unit: str = ""
    label: str = ""
    h: float = 1e-4

    def derivative(self, k, n: int = 0) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        exact = {0: self.func, 1: self.first, 2: self.second, 3: self.third}.get(n)
        if exact is not None:
            return np.asarray(exact(k), dtype=np.complex128) + np.zeros(k.shape)
        if n == 0 or n > 3:
            raise ValueError(f"derivative order {n} unavailable")
        lower = lambda x: self.derivative(x, n - 1)  # noqa: E731
        return (lower(k + self.h) - lower(k - self.h)) / (2 * self.h)

    def omega(self, k):
        return self.derivative(k, 0)

    def d1(self, k):
        return self.derivative(k, 1).real

    def d2(self, k):
        return self.derivative(k, 2).real

    def d3(self, k):
        return self.derivative(k, 3).real

    def subradiant(self, k) -> np.ndarray:
        return subradiant_mask_1d(k, self.k_A)


Dispersion1D = Union[PolylogDispersion, CallableDispersion]


def _wrap_pi(k) -> np.ndarray:
    """Map wavenumbers to ``[-pi, pi)``."""
    return np.remainder(np.asarray(k, dtype=float) + math.pi, TWO_PI) - math.pi


def subradiant_mask_1d(k, k_A: Optional[float]) -> np.ndarray:
    """``|k| > k_A`` after folding ``k`` into the first Brillouin zone."""
    k = np.asarray(k, dtype=float)
    if k_A is None:
        return np.ones(k.shape, dtype=bool)
    return np.abs(_wrap_pi(k)) > k_A


def free_space_coefficients(k_A: float, dx2: float) -> list[tuple[int, complex]]:
    """Polylog coefficients of a free-space chain along x; ``dx2 = |d_x|^2``."""
    k = float(k_A)
    return [
        (1, -(3.0 / (4.0 * k)) * (1.0 - dx2)),
        (2, -(3.0j / (4.0 * k * k)) * (1.0 - 3.0 * dx2)),
        (3, -(3.0 / (4.0 * k**3)) * (3.0 * dx2 - 1.0)),
    ]


def dispersion_for(model: CouplingModel) -> PolylogDispersion:
    """Exact infinite-chain dispersion of a 1D coupling model."""
    unit = energy_unit(model)
    if isinstance(model, PowerLaw):
        return PolylogDispersion(((model.alpha, 1.0),), 0.0, 0.0, None, unit,
                                 f"powerlaw alpha={model.alpha:g}")
    if isinstance(model, Waveguide):
        return PolylogDispersion(((0, -0.5j),), model.k_A, -0.5j, model.k_A, unit,
                                 f"waveguide k_A={model.k_A:g}")
    if isinstance(model, FreeSpace):
        dx2 = float(abs(model.dipole[0]) ** 2)
        return PolylogDispersion(tuple(free_space_coefficients(model.k_A, dx2)),
                                 model.k_A, -0.5j, model.k_A, unit,
                                 f"free space k_A={model.k_A:g} |d_x|^2={dx2:g}")
    raise TypeError(f"unknown coupling model {model!r}")


# ---------------------------------------------------------------------------
# closed forms


@dataclass
class ClosedForm:
    omega: np.ndarray
    d1: Optional[np.ndarray]
    d2: Optional[np.ndarray]
    note: str = ""


def closed_form_1d(model: CouplingModel, k) -> ClosedForm:
    """Elementary closed forms for ``alpha = 1, 2, 3`` and the waveguide.

    ``k`` may lie in any period; it is folded as needed.  Raises
    :class:`SingularPointError` at ``k = 0`` (power law) or ``k = +-k_A``
    (waveguide).  For the waveguide only ``Re omega`` is returned; away from
    ``+-k_A`` the imaginary part is zero and at ``+-k_A`` it is a delta
    function, which is reported in ``note`` rather than evaluated.
    """
    k = np.asarray(k, dtype=float)
    if isinstance(model, PowerLaw):
        th = np.remainder(k, TWO_PI)
        if np.any(th == 0.0):
            raise SingularPointError("power-law dispersion is singular at k = 0 (mod 2 pi)")
        a = model.alpha
        s2 = np.sin(0.5 * th) ** 2
        if a == 1:
            return ClosedForm(-np.log(4.0 * s2) + 0j, -1.0 / np.tan(0.5 * th), 0.5 / s2)
        if a == 2:
            om = (3 * th**2 - 6 * math.pi * th + 2 * math.pi**2) / 6.0
            return ClosedForm(om + 0j, th - math.pi, np.ones_like(th))
        if a == 3:
            return ClosedForm(2.0 * clausen3(th) + 0j, -2.0 * clausen2(th), np.log(4.0 * s2))
        raise ValueError(f"no elementary closed form for alpha={a}")
    if isinstance(model, Waveguide):
        ka = model.k_A
        for sign in (1, -1):
            if np.any(np.remainder(k + sign * ka, TWO_PI) == 0.0):
                raise SingularPointError(f"waveguide dispersion is singular at k = +-k_A = +-{ka:g}")
        re = np.zeros_like(k)
        d1 = np.zeros_like(k)
        d2 = np.zeros_like(k)
        for eps in (1, -1):
            u = 0.5 * (ka + eps * k)
            cot = 1.0 / np.tan(u)
            csc2 = 1.0 / np.sin(u) ** 2
            re += 0.25 * cot
            d1 += -0.125 * eps * csc2
            d2 += 0.125 * csc2 * cot
        return ClosedForm(re + 0j, d1, d2, "Im omega = 0 away from k = +-k_A (delta terms there)")
    raise ValueError(f"no elementary closed form for {model!r}")


# ---------------------------------------------------------------------------
# truncated lattice sums


@dataclass
class LatticeSum1D:
    omega: np.ndarray
    tail_bound: float
    cutoff: int
    d1: Optional[np.ndarray] = None
    d2: Optional[np.ndarray] = None


def power_law_tail(alpha: float, R: int) -> float:
    """Bound on ``2 sum_{r>R} r^-alpha`` (both directions)."""
    if alpha <= 1:
        return math.inf
    return 2.0 * R ** (1.0 - alpha) / (alpha - 1.0)


def coupling_function(model: CouplingModel) -> tuple[Callable, complex]:
    """``(J(r), J(0))`` for integer separations ``r >= 1`` along a chain."""
    if isinstance(model, PowerLaw):
        return (lambda r: np.asarray(r, float) ** (-model.alpha) + 0j), 0.0
    if isinstance(model, Waveguide):
        return (lambda r: -0.5j * np.exp(1j * model.k_A * np.asarray(r, float))), -0.5j
    if isinstance(model, FreeSpace):
        from .hamiltonian import free_space_coupling

        d = model.dipole
        return (lambda r: free_space_coupling(np.asarray(r, float), 0.0 * np.asarray(r, float),
                                              model.k_A, d)), -0.5j
    raise TypeError(f"unknown coupling model {model!r}")


def lattice_sum_dispersion(
    couplings: Union[CouplingModel, Callable],
    k,
    R: int = 100_000,
    diagonal: complex = 0.0,
    derivs: bool = False,
) -> LatticeSum1D:
    """``omega(k) = J(0) + sum_{0<|r|<=R} J(|r|) e^{-ikr}`` for an even chain coupling.

    ``couplings`` is a model or a vectorized callable ``J(r)`` for ``r >= 1``.
    The returned tail bound is exact for power laws and ``inf`` otherwise
    (the caller then has to judge convergence).
    """
    R = int(R)
    if R < 1:
        raise LatticeError(f"cutoff R must be >= 1, got {R}")
    tail = math.inf
    if isinstance(couplings, (PowerLaw, Waveguide, FreeSpace)):
        J, diagonal = coupling_function(couplings)
        if isinstance(couplings, PowerLaw):
            tail = power_law_tail(couplings.alpha, R)
    else:
        J = couplings
    r = np.arange(1, R + 1, dtype=float)
    coef = np.ascontiguousarray(np.asarray(J(r), dtype=np.complex128))
    kk = np.ascontiguousarray(np.asarray(k, dtype=float).ravel())
    C, _ = kernels.trig_sums(coef, kk)
    shape = np.shape(k)
    omega = (diagonal + 2.0 * C).reshape(shape)
    out = LatticeSum1D(omega, tail, R)
    if derivs:
        _, S1 = kernels.trig_sums(np.ascontiguousarray(coef * r), kk)
        C2, _ = kernels.trig_sums(np.ascontiguousarray(coef * r * r), kk)
        out.d1 = (-2.0 * S1).reshape(shape)
        out.d2 = (-2.0 * C2).reshape(shape)
    return out


# ---------------------------------------------------------------------------
# 1D grids and derivatives


def k_grid_1d(n: int, k_lo: float = -math.pi) -> np.ndarray:
    """``n`` uniform points covering ``[k_lo, k_lo + 2 pi)``."""
    if n < 1:
        raise LatticeError("grid needs at least one point")
    return k_lo + TWO_PI * np.arange(n) / n


def _near_singular(k: np.ndarray, points: Sequence[float], width: float) -> np.ndarray:
    mask = np.zeros(k.shape, dtype=bool)
    for p in points:
        mask |= np.abs(_wrap_pi(k - p)) < width
    return mask


def derivatives_1d(
    source,
    k,
    scheme: str = "central",
    h: Optional[float] = None,
    periodic: Optional[bool] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives of ``Re omega`` on the grid ``k``.

    Parameters
    ----------
    source : dispersion object, callable ``omega(k)``, or sampled values on ``k``
    scheme : ``"analytic"`` (needs a dispersion object) or ``"central"``
    h : step for callables; defaults to the grid spacing
    periodic : for sampled values, whether the grid spans one full period;
        detected from the spacing when omitted.  Non-periodic end points are nan.
    """
    k = np.asarray(k, dtype=float)
    if k.ndim != 1 or k.size < 5:
        raise LatticeError("derivative grid needs at least 5 points")
    dk = np.diff(k)
    if not np.allclose(dk, dk[0], rtol=1e-9, atol=0):
        raise LatticeError("derivative grid must be uniform")
    spacing = float(dk[0])
    if scheme == "analytic":
        if not hasattr(source, "derivative"):
            raise LatticeError("analytic derivatives need a dispersion object")
        return source.d1(k), source.d2(k)
    if scheme != "central":
        raise ValueError(f"unknown derivative scheme {scheme!r}")
    if callable(source) or hasattr(source, "omega"):
        f = source.omega if hasattr(source, "omega") else source
        step = spacing if h is None else float(h)
        fp = np.real(f(k + step))
        f0 = np.real(f(k))
        fm = np.real(f(k - step))
        return (fp - fm) / (2 * step), (fp - 2 * f0 + fm) / step**2
    vals = np.real(np.asarray(source))
    if vals.shape != k.shape:
        raise LatticeError("sampled values do not match the grid")
    if periodic is None:
        periodic = math.isclose(spacing * k.size, TWO_PI, rel_tol=1e-9)
    fp = np.roll(vals, -1)
    fm = np.roll(vals, 1)
    d1 = (fp - fm) / (2 * spacing)
    d2 = (fp - 2 * vals + fm) / spacing**2
    if not periodic:
        d1[[0, -1]] = np.nan
        d2[[0, -1]] = np.nan
    return d1, d2


@dataclass
class StationarySet:
    """Zeros of ``d^2 Re omega`` with the group velocity at each."""

    inflection_points: np.ndarray
    group_velocities: np.ndarray
    kind: str = "inflection"

    def __len__(self) -> int:
        return len(self.inflection_points)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "k": [float(x) for x in self.inflection_points],
            "v_g": [float(x) for x in self.group_velocities],
        }


def _bracketed_roots(f: Callable, k: np.ndarray, vals: np.ndarray, blocked: np.ndarray,
                     scale: float, accept: float, xtol: float) -> list[float]:
    roots = []
    n = k.size
    if not scale > 0:
        # identically zero (flat band): no isolated roots
        return roots
    for i in range(n):
        j = (i + 1) % n
        a, b = k[i], k[i + 1] if i + 1 < n else k[0] + TWO_PI
        if blocked[i] or blocked[j]:
            continue
        fa, fb = vals[i], vals[j]
        if not (np.isfinite(fa) and np.isfinite(fb)):
            continue
        if fa == 0.0:
            roots.append(a)
            continue
        if fa * fb > 0 or fb == 0.0:
            continue
        root = scipy.optimize.brentq(lambda x: float(f(np.array([x]))[0]), a, b,
                                     xtol=xtol, rtol=4 * np.finfo(float).eps)
        # a sign change through a pole is not a root
        if abs(float(f(np.array([root]))[0])) <= accept * scale:
            roots.append(root)
    return roots


def find_inflection_points(
    dispersion,
    n_grid: int = 4096,
    k_lo: float = -math.pi,
    mask_width: Optional[float] = None,
    tol: float = 1e-8,
) -> StationarySet:
    """Zeros of ``d^2 Re omega`` over one period ``[k_lo, k_lo + 2 pi)``.

    Sign changes of the sampled second derivative are refined with a
    bracketing solver.  Cells within ``mask_width`` (default: one grid spacing)
    of a singular point are skipped.  ``dispersion`` may also be a pair
    ``(k, d2)`` of samples, in which case roots are linearly interpolated and
    group velocities are nan.  A sampled grid spanning exactly one period
    is treated as periodic.
    """
    if isinstance(dispersion, tuple):
        k, d2 = (np.asarray(a, dtype=float) for a in dispersion)
        if k.size < 64:
            raise LatticeError("inflection search needs at least 64 samples")
        spacing = float(k[1] - k[0])
        periodic = math.isclose(spacing * k.size, TWO_PI, rel_tol=1e-9)
        roots = []
        for i in range(k.size if periodic else k.size - 1):
            j = (i + 1) % k.size
            a, b = d2[i], d2[j]
            if np.isfinite(a) and np.isfinite(b) and a * b < 0:
                roots.append(k[i] - a * spacing / (b - a))
            elif a == 0.0:
                roots.append(k[i])
        return StationarySet(np.array(sorted(roots)), np.full(len(roots), np.nan))
    if n_grid < 64:
        raise LatticeError("inflection search needs at least 64 samples")
    k = k_grid_1d(n_grid, k_lo)
    width = TWO_PI / n_grid if mask_width is None else mask_width
    blocked = _near_singular(k, getattr(dispersion, "singular_points", ()), width)
    d2 = dispersion.d2(k)
    scale = float(np.nanmax(np.abs(np.where(blocked, np.nan, d2)))) if not blocked.all() else 1.0
    roots = _bracketed_roots(dispersion.d2, k, d2, blocked, scale, tol, 1e-14)
    roots = np.array(sorted(roots))
    v = dispersion.d1(roots) if roots.size else np.empty(0)
    return StationarySet(roots, np.asarray(v, dtype=float))


def find_curvature_extrema(
    dispersion,
    n_grid: int = 4096,
    k_lo: float = -math.pi,
    mask_width: Optional[float] = None,
) -> StationarySet:
    """Local minima of ``|d^2 Re omega|`` that are not zeros (``d^3 = 0``, ``d^2 != 0``)."""
    k = k_grid_1d(n_grid, k_lo)
    width = TWO_PI / n_grid if mask_width is None else mask_width
    blocked = _near_singular(k, getattr(dispersion, "singular_points", ()), width)
    d3 = dispersion.d3(k)
    scale = float(np.nanmax(np.abs(np.where(blocked, np.nan, d3)))) if not blocked.all() else 1.0
    cand = _bracketed_roots(dispersion.d3, k, d3, blocked, scale, 1e-6, 1e-14)
    keep = []
    for r in cand:
        d2 = float(dispersion.d2(np.array([r]))[0])
        # d|d2|/dk changes sign from - to + at a minimum of |d2|
        h = 1e-5
        d3m = float(dispersion.d3(np.array([r - h]))[0])
        d3p = float(dispersion.d3(np.array([r + h]))[0])
        if d2 != 0.0 and np.sign(d2) * d3m < 0 < np.sign(d2) * d3p:
            keep.append(r)
    roots = np.array(sorted(keep))
    v = dispersion.d1(roots) if roots.size else np.empty(0)
    return StationarySet(roots, np.asarray(v, dtype=float), kind="curvature-minimum")


# ---------------------------------------------------------------------------
# dispersion grids (1D and 2D) and export


@dataclass
class DispersionGrid:
    """Samples of ``omega`` over one Brillouin zone.

    In 1D ``kx`` is the grid and ``ky`` is None; ``d1``/``d2`` hold the
    derivatives of ``Re omega``.  In 2D fields are indexed ``[iy, ix]`` and
    ``grad``/``hessian``/``det_hessian`` hold the finite-difference fields.
    """

    kx: np.ndarray
    omega: np.ndarray
    ky: Optional[np.ndarray] = None
    d1: Optional[np.ndarray] = None
    d2: Optional[np.ndarray] = None
    grad: Optional[tuple] = None
    hessian: Optional[tuple] = None
    det_hessian: Optional[np.ndarray] = None
    subradiant_mask: Optional[np.ndarray] = None
    unit: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return 1 if self.ky is None else 2

    def write_csv(self, path, derivs: bool = True) -> None:
        """Columns ``kx, ky, re_omega, im_omega, d1, d2, subradiant`` (1D) or
        ``kx, ky, re_omega, im_omega, det_hessian, subradiant`` (2D).

        ``derivs=False`` drops ``d1, d2`` from the 1D table.
        """
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if self.dimension == 1:
                extra = ["d1", "d2"] if derivs else []
                w.writerow(["kx", "ky", "re_omega", "im_omega", *extra, "subradiant"])
                nan = np.full(self.kx.shape, np.nan)
                d1 = self.d1 if self.d1 is not None else nan
                d2 = self.d2 if self.d2 is not None else nan
                mask = self._mask()
                for i in range(self.kx.size):
                    cols = [_fmt(d1[i]), _fmt(d2[i])] if derivs else []
                    w.writerow([_fmt(self.kx[i]), _fmt(0.0), _fmt(self.omega[i].real),
                                _fmt(self.omega[i].imag), *cols, int(mask[i])])
            else:
                w.writerow(["kx", "ky", "re_omega", "im_omega", "det_hessian", "subradiant"])
                det = self.det_hessian if self.det_hessian is not None else np.full(self.omega.shape, np.nan)
                mask = self._mask()
                for iy in range(self.ky.size):
                    for ix in range(self.kx.size):
                        w.writerow([_fmt(self.kx[ix]), _fmt(self.ky[iy]),
                                    _fmt(self.omega[iy, ix].real), _fmt(self.omega[iy, ix].imag),
                                    _fmt(det[iy, ix]), int(mask[iy, ix])])

    def _mask(self) -> np.ndarray:
        if self.subradiant_mask is None:
            return np.ones(self.omega.shape, dtype=bool)
        return self.subradiant_mask


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dispersion_grid_1d(
    dispersion,
    n: int = 4096,
    k_lo: float = -math.pi,
    scheme: str = "analytic",
    mask_width: Optional[float] = None,
) -> DispersionGrid:
    """Sample a 1D dispersion and its derivatives; singular points become nan.

    ``k_lo = -k_A`` gives the shifted zone ``[-k_A, 2 pi - k_A)``.
    """
    k = k_grid_1d(n, k_lo)
    width = TWO_PI / n if mask_width is None else mask_width
    blocked = _near_singular(k, getattr(dispersion, "singular_points", ()), width)
    with np.errstate(all="ignore"):
        om = np.asarray(dispersion.omega(k), dtype=np.complex128)
        om = np.where(blocked, np.nan, om)
        if scheme == "analytic":
            d1, d2 = dispersion.d1(k), dispersion.d2(k)
        else:
            d1, d2 = derivatives_1d(om, k, "central", periodic=True)
    d1 = np.where(blocked, np.nan, d1)
    d2 = np.where(blocked, np.nan, d2)
    return DispersionGrid(k, om, d1=d1, d2=d2,
                          subradiant_mask=subradiant_mask_1d(k, getattr(dispersion, "k_A", None)),
                          unit=getattr(dispersion, "unit", ""),
                          meta={"scheme": scheme, "label": getattr(dispersion, "label", "")})


def k_grid_2d(n: int, spacings=(1.0, 1.0), m: Optional[int] = None):
    """Uniform grids covering ``[-pi/a_x, pi/a_x)`` and ``[-pi/a_y, pi/a_y)``."""
    m = n if m is None else m
    ax, ay = spacings
    kx = (-math.pi + TWO_PI * np.arange(n) / n) / ax
    ky = (-math.pi + TWO_PI * np.arange(m) / m) / ay
    return kx, ky


def fd_fields_2d(omega: np.ndarray, hx: float, hy: float, periodic: bool = True):
    """Central-difference gradient and Hessian of ``Re omega`` (``[iy, ix]`` layout).

    The mixed partial uses the four-point diagonal stencil.  Any stencil
    touching a nan node yields nan; without periodic wrap the border is nan.
    """
    f = np.real(np.asarray(omega))

    def sh(dy, dx):
        return np.roll(f, (-dy, -dx), axis=(0, 1))

    gx = (sh(0, 1) - sh(0, -1)) / (2 * hx)
    gy = (sh(1, 0) - sh(-1, 0)) / (2 * hy)
    hxx = (sh(0, 1) - 2 * f + sh(0, -1)) / hx**2
    hyy = (sh(1, 0) - 2 * f + sh(-1, 0)) / hy**2
    hxy = (sh(1, 1) - sh(1, -1) - sh(-1, 1) + sh(-1, -1)) / (4 * hx * hy)
    if not periodic:
        for a in (gx, gy, hxx, hyy, hxy):
            a[[0, -1], :] = np.nan
            a[:, [0, -1]] = np.nan
    return (gx, gy), (hxx, hxy, hyy)


@dataclass
class ContourSet:
    """Zero contours; each polyline is an ``(M, 2)`` array of ``(kx, ky)``.

    ``closed[i]`` marks polylines that return to their start.  ``winding[i]``
    counts how many periods a closed polyline wraps around each axis; a
    contractible loop has winding ``(0, 0)``.
    """

    polylines: list
    closed: list
    winding: list
    level: float = 0.0

    def loops(self) -> list:
        """Closed, contractible polylines."""
        return [p for p, c, w in zip(self.polylines, self.closed, self.winding)
                if c and w == (0, 0)]

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "polylines": [
                {"closed": bool(c), "winding": list(w),
                 "points": [[float(a), float(b)] for a, b in p]}
                for p, c, w in zip(self.polylines, self.closed, self.winding)
            ],
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)
            fh.write("\n")


def zero_contours(field2d: np.ndarray, kx: np.ndarray, ky: np.ndarray,
                  periodic: bool = True) -> ContourSet:
    """Marching-squares zero set of ``field2d[iy, ix]`` with linear interpolation.

    Vertices lie on grid edges whose endpoint values have strictly opposite
    sign (zero counts as negative).
    """
    f = np.ascontiguousarray(np.asarray(field2d, dtype=float))
    n0, n1 = f.shape
    segs = kernels.marching_squares(f, periodic)
    hx = kx[1] - kx[0]
    hy = ky[1] - ky[0]

    def point(e):
        base, vertical = divmod(int(e), 2)
        i, j = divmod(base, n1)
        if vertical:
            i2, j2 = (i + 1) % n0, j
        else:
            i2, j2 = i, (j + 1) % n1
        a, b = f[i, j], f[i2, j2]
        t = a / (a - b)
        if vertical:
            return kx[0] + j * hx, ky[0] + (i + t) * hy
        return kx[0] + (j + t) * hx, ky[0] + i * hy

    adj: dict[int, list[int]] = {}
    for s, (e0, e1) in enumerate(segs):
        adj.setdefault(int(e0), []).append(s)
        adj.setdefault(int(e1), []).append(s)
    used = np.zeros(len(segs), dtype=bool)
    period = (hx * n1, hy * n0)
    polylines, closed, winding = [], [], []

    def walk(start_edge, seg):
        edges = [start_edge]
        e = start_edge
        while seg is not None and not used[seg]:
            used[seg] = True
            a, b = segs[seg]
            e = int(b) if int(a) == e else int(a)
            edges.append(e)
            nxt = [s for s in adj[e] if not used[s]]
            seg = nxt[0] if nxt else None
        return edges

    # open chains start at degree-one edges
    order = sorted(adj, key=lambda e: (len(adj[e]) != 1, e))
    for e in order:
        for s in adj[e]:
            if used[s]:
                continue
            edges = walk(e, s)
            pts = np.array([point(x) for x in edges])
            is_closed = len(edges) > 2 and edges[0] == edges[-1]
            w = (0, 0)
            if periodic:
                pts, w = _unwrap(pts, period, is_closed)
            polylines.append(pts)
            closed.append(is_closed)
            winding.append(w)
    return ContourSet(polylines, closed, winding)


def _unwrap(pts: np.ndarray, period, is_closed: bool):
    out = pts.copy()
    for ax in (0, 1):
        d = np.diff(pts[:, ax])
        jumps = -np.round(d / period[ax]) * period[ax]
        out[1:, ax] = pts[0, ax] + np.cumsum(d + jumps)
    if not is_closed:
        return out, (0, 0)
    w = tuple(int(round((out[-1, a] - out[0, a]) / period[a])) for a in (0, 1))
    return out, w


def hessian_det_2d(
    omega: np.ndarray,
    kx: np.ndarray,
    ky: np.ndarray,
    periodic: bool = True,
    unit: str = "",
) -> tuple[np.ndarray, ContourSet]:
    """``det H = H_xx H_yy - H_xy^2`` by central differences, and its zero contours."""
    omega = np.asarray(omega)
    if min(omega.shape) < 64:
        raise LatticeError("Hessian grids need at least 64 points per axis")
    hx = float(kx[1] - kx[0])
    hy = float(ky[1] - ky[0])
    _, (hxx, hxy, hyy) = fd_fields_2d(omega, hx, hy, periodic)
    det = hxx * hyy - hxy**2
    return det, zero_contours(det, kx, ky, periodic)


def det_unit(energy: str) -> str:
    """Unit tag of ``det H`` for a dispersion carrying ``energy`` units."""
    return f"({energy})^2*a^4" if energy else "a^4"


def dispersion_grid_2d(omega: np.ndarray, kx: np.ndarray, ky: np.ndarray,
                       periodic: bool = True, k_A: Optional[float] = None,
                       spacings=(1.0, 1.0), unit: str = "", meta=None) -> tuple[DispersionGrid, ContourSet]:
    """Bundle a sampled 2D dispersion with its FD fields and det-H contours."""
    hx = float(kx[1] - kx[0])
    hy = float(ky[1] - ky[0])
    grad, hess = fd_fields_2d(omega, hx, hy, periodic)
    det = hess[0] * hess[2] - hess[1] ** 2
    contours = zero_contours(det, kx, ky, periodic)
    KX, KY = np.meshgrid(kx, ky)
    mask = None if k_A is None else subradiant_mask_2d(KX, KY, k_A)
    grid = DispersionGrid(kx, np.asarray(omega, dtype=np.complex128), ky=ky, grad=grad,
                          hessian=hess, det_hessian=det, subradiant_mask=mask,
                          unit=unit, meta={"det_unit": det_unit(unit), **(meta or {})})
    return grid, contours


def subradiant_mask_2d(kx, ky, k_A: float) -> np.ndarray:
    """``|k| > k_A`` for points of the first Brillouin zone."""
    return np.hypot(kx, ky) > k_A


# ---------------------------------------------------------------------------
# 2D power-law lattice sum


def _taper(u: np.ndarray) -> np.ndarray:
    """1 on ``u < 1/2``, raised-cosine roll-off to 0 at ``u = 1``."""
    return np.where(u < 0.5, 1.0, np.where(u < 1.0, 0.5 * (1.0 + np.cos(math.pi * (2 * u - 1))), 0.0))


def lattice_sum_dispersion_2d(
    J: Callable,
    n: int,
    R: int = 400,
    spacings=(1.0, 1.0),
    m: Optional[int] = None,
    taper: bool = True,
):
    """``omega(k) = sum_{0<|r|<=R} J(r) e^{-i k.r}`` on an ``n x m`` zone grid.

    The couplings are folded modulo the grid and transformed with one FFT,
    which is exact on the uniform grid.  A raised-cosine taper over
    ``R/2 < |r| <= R`` (``|r|`` in lattice units) removes the ripple a
    sharp cutoff leaves in second derivatives of slowly decaying sums.

    Returns ``(kx, ky, omega[iy, ix])``.
    """
    m = n if m is None else m
    ax, ay = spacings
    ix = np.arange(-R, R + 1)
    X, Y = np.meshgrid(ix, ix)
    rr = np.hypot(X, Y)
    keep = (rr > 0) & (rr <= R)
    w = _taper(rr[keep] / R) if taper else np.ones(keep.sum())
    vals = np.asarray(J(X[keep] * ax, Y[keep] * ay), dtype=np.complex128) * w
    folded = np.zeros((m, n), dtype=np.complex128)
    np.add.at(folded, (Y[keep] % m, X[keep] % n), vals)
    om = np.fft.fftshift(np.fft.fft2(folded))
    kx, ky = k_grid_2d(n, spacings, m)
    return kx, ky, om


def power_law_dispersion_2d(alpha: float, n: int, R: int = 400, spacings=(1.0, 1.0),
                            mask_width: Optional[float] = None):
    """Power-law lattice-sum dispersion with the ``k = 0`` node set to nan."""
    kx, ky, om = lattice_sum_dispersion_2d(lambda x, y: np.hypot(x, y) ** (-alpha), n, R, spacings)
    KX, KY = np.meshgrid(kx, ky)
    width = (kx[1] - kx[0]) if mask_width is None else mask_width
    om = np.where(np.hypot(KX, KY) < width * 0.5 + 1e-12, np.nan, om)
    return kx, ky, om


# ---------------------------------------------------------------------------
# regularized free-space dispersion in 2D


GAUSS_CUTOFF = 27.631021115928547  # -ln(1e-12)


def lambda_branch(k_A: float, p2) -> np.ndarray:
    """``sqrt(k_A^2 - p^2)`` on the principal branch (imaginary part >= 0)."""
    return np.sqrt(np.asarray(k_A**2 - p2, dtype=np.complex128))


def reg_integrals(p2, k_A: float, a_ho: float) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian-regularized transverse integrals ``(I0, I2)`` at in-plane ``|p|^2``.

    ``I0 = C pi e^{-a^2 L^2/2} (-i + erfi(a L/sqrt 2)) / L`` with
    ``C = e^{-a^2 p^2/2}/(2 pi k_A^2)``, written through the Faddeeva function
    as ``-i pi C w(a L/sqrt 2)/L``, and ``I2 = L^2 I0 - C sqrt(2 pi)/a``.
    """
    p2 = np.asarray(p2, dtype=float)
    lam = lambda_branch(k_A, p2)
    if np.any(np.abs(lam) < 1e-12 * k_A):
        raise SingularPointError("light-cone singularity: |p| = k_A")
    C = np.exp(-0.5 * a_ho**2 * p2) / (TWO_PI * k_A**2)
    I0 = -1j * math.pi * C * scipy.special.wofz(a_ho * lam / math.sqrt(2.0)) / lam
    I2 = lam**2 * I0 - C * math.sqrt(TWO_PI) / a_ho
    return I0, I2


def g_star(px, py, k_A: float, a_ho: float) -> np.ndarray:
    """Regularized reciprocal-space Green's tensor components, shape ``(..., 3, 3)``."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    I0, I2 = reg_integrals(px**2 + py**2, k_A, a_ho)
    g = np.zeros(px.shape + (3, 3), dtype=np.complex128)
    g[..., 0, 0] = -(k_A**2 - px**2) * I0
    g[..., 1, 1] = -(k_A**2 - py**2) * I0
    g[..., 2, 2] = -(k_A**2 * I0 - I2)
    g[..., 0, 1] = g[..., 1, 0] = px * py * I0
    return g


def _projected_g(px, py, k_A, a_ho, d):
    I0, I2 = reg_integrals(px**2 + py**2, k_A, a_ho)
    dc = np.conj(d)
    out = -(k_A**2 - px**2) * I0 * (dc[0] * d[0])
    out += -(k_A**2 - py**2) * I0 * (dc[1] * d[1])
    out += -(k_A**2 * I0 - I2) * (dc[2] * d[2])
    out += px * py * I0 * (dc[0] * d[1] + dc[1] * d[0])
    return out


@dataclass
class RegularizedResult:
    omega: np.ndarray
    shells: tuple[int, int]
    tail: float


def regularized_dispersion_2d(
    kx,
    ky,
    k_A: float,
    polarization,
    a_ho: float = 0.1,
    spacings=(1.0, 1.0),
    G_cutoff: Optional[int] = None,
    tail_tol: float = 1e-8,
) -> RegularizedResult:
    """Free-space array dispersion ``omega(k)/gamma_A`` from the reciprocal sum.

    ``omega = -(3 pi / k_A) e^{k_A^2 a^2/2} / (a_x a_y) sum_G d* . g*(G - k) . d``
    up to a k-independent constant.  ``Re omega`` is the physical part.
    ``G_cutoff`` is the number of reciprocal shells per axis; by default it is
    chosen so the Gaussian factor falls below 1e-12 on the last shell.

    Raises when a point lies on a light cone or when the last shell still
    contributes more than ``tail_tol`` relative to the sum.
    """
    if a_ho <= 0:
        raise LatticeError("a_ho must be positive")
    if not k_A > 0:
        raise LatticeError("k_A must be positive")
    ax, ay = spacings
    d = np.asarray(polarization, dtype=np.complex128)
    if abs(np.linalg.norm(d) - 1.0) > 1e-12:
        raise LatticeError("polarization must be a unit vector")
    kx = np.asarray(kx, dtype=float)
    ky = np.asarray(ky, dtype=float)
    KX, KY = np.broadcast_arrays(kx, ky)
    bx, by = TWO_PI / ax, TWO_PI / ay
    p_max = math.sqrt(2.0 * GAUSS_CUTOFF) / a_ho
    kmax_x = float(np.max(np.abs(KX))) if KX.size else 0.0
    kmax_y = float(np.max(np.abs(KY))) if KY.size else 0.0
    if G_cutoff is None:
        nx = int(math.ceil((p_max + kmax_x) / bx))
        ny = int(math.ceil((p_max + kmax_y) / by))
    else:
        if G_cutoff < 1:
            raise LatticeError("G_cutoff must be >= 1")
        nx = ny = int(G_cutoff)
    total = np.zeros(KX.shape, dtype=np.complex128)
    last = np.zeros(KX.shape, dtype=float)
    for gy in range(-ny, ny + 1):
        for gx in range(-nx, nx + 1):
            term = _projected_g(gx * bx - KX, gy * by - KY, k_A, a_ho, d)
            total += term
            if max(abs(gx) / max(nx, 1), abs(gy) / max(ny, 1)) == 1:
                last += np.abs(term)
    scale = np.maximum(np.abs(total), 1e-300)
    tail = float(np.max(last / scale)) if total.size else 0.0
    if tail > tail_tol:
        raise LatticeError(
            f"reciprocal sum not converged: last-shell relative contribution {tail:.2e} "
            f"at {nx}x{ny} shells"
        )
    pref = -(3.0 * math.pi / k_A) * math.exp(0.5 * k_A**2 * a_ho**2) / (ax * ay)
    return RegularizedResult(pref * total, (nx, ny), tail)


def ring_distance(kx, ky, k_A: float, spacings=(1.0, 1.0), images: int = 2) -> np.ndarray:
    """Distance from ``k`` to the nearest light-cone ring ``|k - G| = k_A``."""
    ax, ay = spacings
    KX, KY = np.broadcast_arrays(np.asarray(kx, float), np.asarray(ky, float))
    out = np.full(KX.shape, np.inf)
    for gy in range(-images, images + 1):
        for gx in range(-images, images + 1):
            r = np.hypot(KX - gx * TWO_PI / ax, KY - gy * TWO_PI / ay)
            out = np.minimum(out, np.abs(r - k_A))
    return out


def regularized_grid(
    n: int,
    k_A: float,
    polarization,
    a_ho: float = 0.1,
    spacings=(1.0, 1.0),
    mask_cells: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Regularized dispersion on an ``n x n`` zone grid.

    Nodes within ``mask_cells`` grid spacings of a light-cone ring are nan so
    that derivative stencils skip the singular set.
    """
    kx, ky = k_grid_2d(n, spacings)
    KX, KY = np.meshgrid(kx, ky)
    h = max(kx[1] - kx[0], ky[1] - ky[0])
    near = ring_distance(KX, KY, k_A, spacings) < mask_cells * h
    om = np.full(KX.shape, np.nan, dtype=np.complex128)
    res = regularized_dispersion_2d(KX[~near], KY[~near], k_A, polarization, a_ho, spacings)
    om[~near] = res.omega
    return kx, ky, om
