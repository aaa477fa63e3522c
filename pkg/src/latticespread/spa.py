"""Stationary-phase approximation of single-site waveforms in 1D.

For ``psi(x, t) = (1/2 pi) int dk exp(i k x - i omega(k) t)`` the stationary
points solve ``v_g(k) = x/t`` and each contributes

    exp(i(k x - Re omega t)) exp(Im omega t) exp(-i pi/4 sgn w2) / sqrt(2 pi t |w2|)

with ``w2 = d^2 Re omega``.  Keeping the full phases reproduces the
interference between several stationary points (subsidiary peak trains).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.optimize

from .core import LatticeError
from .dispersion import (
    TWO_PI,
    _near_singular,
    find_curvature_extrema,
    find_inflection_points,
    k_grid_1d,
)


class CausticError(ArithmeticError):
    """A stationary point coincides with an inflection point."""


@dataclass(frozen=True)
class ToSurvival:
    """Rescale ``sum_x |psi|^2`` to the survival probability ``p``."""

    p: float

    def __post_init__(self):
        if not (0.0 < self.p <= 1.0):
            raise LatticeError(f"survival normalization must lie in (0, 1], got {self.p}")


class _VelocityTable:
    """Cached samples of ``v_g`` used to bracket stationary points.

    Roots for many velocities are refined together by vectorized bisection,
    which needs only one dispersion call per iteration.
    """

    def __init__(self, dispersion, n_grid: int, k_lo: float, subradiant_only: bool):
        self.dispersion = dispersion
        self.k = k_grid_1d(n_grid, k_lo)
        width = TWO_PI / n_grid
        blocked = _near_singular(self.k, getattr(dispersion, "singular_points", ()), width)
        if subradiant_only:
            blocked |= ~dispersion.subradiant(self.k)
        self.blocked = blocked
        with np.errstate(all="ignore"):
            self.v = np.where(blocked, np.nan, dispersion.d1(self.k))
        finite = self.v[np.isfinite(self.v)]
        self.vmax = float(np.abs(finite).max()) if finite.size else 0.0
        self.tol = 1e-9 * max(self.vmax, 1.0)
        self.extrema = self._velocity_extrema()

    def _d1(self, q):
        with np.errstate(all="ignore"):
            return np.asarray(self.dispersion.d1(q), dtype=float)

    def _velocity_extrema(self) -> np.ndarray:
        """Refined ``(k, v_g)`` at the local extrema of the sampled ``v_g``."""
        v = self.v
        prev, nxt = np.roll(v, 1), np.roll(v, -1)
        ok = np.isfinite(prev) & np.isfinite(v) & np.isfinite(nxt)
        ext = ok & (((v > prev) & (v >= nxt)) | ((v < prev) & (v <= nxt)))
        h = self.k[1] - self.k[0]
        out = []
        for i in np.nonzero(ext)[0]:
            sign = 1.0 if v[i] > prev[i] else -1.0
            res = scipy.optimize.minimize_scalar(
                lambda q: -sign * float(self._d1(np.array([q]))[0]),
                bounds=(self.k[i] - h, self.k[i] + h), method="bounded",
                options={"xatol": 1e-12})
            out.append((float(res.x), float(self._d1(np.array([res.x]))[0])))
        return np.array(out).reshape(-1, 2)

    def roots_many(self, velocities) -> list[np.ndarray]:
        """Stationary points for each velocity, ascending in ``k``."""
        velocities = np.atleast_1d(np.asarray(velocities, dtype=float))
        k, n = self.k, self.k.size
        h = k[1] - k[0]
        owners, lo, hi, glo = [], [], [], []
        exact = [[] for _ in velocities]
        for j, v in enumerate(velocities):
            g = self.v - v
            nxt = np.roll(g, -1)
            fin = np.isfinite(g) & np.isfinite(nxt)
            for i in np.nonzero(fin & (g == 0))[0]:
                exact[j].append(k[i])
            idx = np.nonzero(fin & (g * nxt < 0))[0]
            owners.append(np.full(idx.size, j))
            lo.append(k[idx])
            hi.append(np.where(idx + 1 < n, k[(idx + 1) % n], k[0] + TWO_PI))
            glo.append(g[idx])
        owners = np.concatenate(owners) if owners else np.empty(0, int)
        a = np.concatenate(lo) if lo else np.empty(0)
        b = np.concatenate(hi) if hi else np.empty(0)
        sa = np.sign(np.concatenate(glo)) if glo else np.empty(0)
        vv = velocities[owners]
        for _ in range(60):
            mid = 0.5 * (a + b)
            gm = self._d1(mid) - vv
            left = np.sign(gm) == sa
            a = np.where(left, mid, a)
            b = np.where(left, b, mid)
            if np.all(b - a < 1e-14):
                break
        r = 0.5 * (a + b)
        # a sign change through a pole is not a root
        good = np.abs(self._d1(r) - vv) <= self.tol if r.size else np.empty(0, bool)
        out = []
        for j, v in enumerate(velocities):
            found = list(r[(owners == j) & good]) + exact[j]
            for ke, ve in self.extrema:
                if abs(ve - v) <= self.tol and all(abs(ke - f) > h for f in found):
                    found.append(ke)
            out.append(_dedupe(_wrap_into(np.array(found, dtype=float), k[0])))
        return out

    def roots(self, v: float) -> np.ndarray:
        return self.roots_many([v])[0]


def _dedupe(roots: np.ndarray) -> np.ndarray:
    roots = np.sort(roots)
    if roots.size > 1:
        roots = roots[np.concatenate([[True], np.diff(roots) > 1e-11])]
        if roots[-1] - roots[0] > TWO_PI - 1e-11:
            roots = roots[:-1]
    return roots


def _wrap_into(k: np.ndarray, k_lo: float) -> np.ndarray:
    return k_lo + np.remainder(k - k_lo, TWO_PI)


def stationary_points(dispersion, v: float, n_grid: int = 4096, k_lo: float = -math.pi,
                      subradiant_only: bool = False) -> np.ndarray:
    """All ``k`` in ``[k_lo, k_lo + 2 pi)`` with ``d Re omega/dk = v``, ascending."""
    if not math.isfinite(v):
        raise LatticeError("velocity must be finite")
    return _VelocityTable(dispersion, n_grid, k_lo, subradiant_only).roots(float(v))


def spa_amplitude(dispersion, x: float, t: float, points=None, n_grid: int = 4096,
                  k_lo: float = -math.pi, subradiant_only: bool = False) -> complex:
    """Stationary-phase amplitude at ``(x, t)``; raises :class:`CausticError` at caustics."""
    if not t > 0:
        raise LatticeError("SPA needs t > 0")
    if points is None:
        points = stationary_points(dispersion, x / t, n_grid, k_lo, subradiant_only)
    return _amplitude(dispersion, x, t, np.asarray(points, dtype=float))


def _amplitude(dispersion, x, t, pts) -> complex:
    if pts.size == 0:
        return 0j
    om = dispersion.omega(pts)
    w2 = dispersion.d2(pts)
    if np.any(np.abs(w2) < 1e-10):
        raise CausticError(f"stationary point at a caustic (|d2 omega| < 1e-10) for x={x:g}, t={t:g}")
    phase = pts * x - om.real * t - 0.25 * math.pi * np.sign(w2)
    terms = np.exp(1j * phase) * np.exp(om.imag * t) / np.sqrt(TWO_PI * t * np.abs(w2))
    return complex(terms.sum())


@dataclass
class SpaWaveform:
    """Stationary-phase ``|psi|^2`` over an x grid at one time.

    ``caustic[i]`` marks positions whose stationary points sit on (or within
    the tolerance of) an inflection point; their value is nan.
    """

    x: np.ndarray
    t: float
    amplitudes: np.ndarray
    values: np.ndarray
    points: list
    caustic: np.ndarray
    normalization: float = 1.0
    meta: dict = field(default_factory=dict)

    def write_csv(self, path, config_hash: Optional[str] = None) -> None:
        """Snapshot CSV schema (``site, x, y, prob, re, im``) plus a JSON sidecar."""
        scale = math.sqrt(self.normalization)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["site", "x", "y", "prob", "re", "im"])
            for i, xv in enumerate(self.x):
                a = self.amplitudes[i] * scale
                w.writerow([i, _fmt(xv), _fmt(0.0), _fmt(self.values[i]), _fmt(a.real), _fmt(a.imag)])
        side = {"method": "spa", "time": self.t, "normalization": self.normalization,
                "caustic_sites": [int(i) for i in np.nonzero(self.caustic)[0]],
                "config_hash": config_hash, **self.meta}
        base = str(path)[:-4] if str(path).endswith(".csv") else str(path)
        with open(base + ".json", "w") as fh:
            json.dump(side, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def spa_waveform(
    dispersion,
    x,
    t: float,
    normalization: Optional[ToSurvival] = None,
    subradiant_only: bool = False,
    n_grid: int = 4096,
    k_lo: float = -math.pi,
    caustic_tol: float = 1e-6,
) -> SpaWaveform:
    """Evaluate the SPA on an x grid; optionally rescale to a survival probability."""
    if not t > 0:
        raise LatticeError("SPA needs t > 0")
    x = np.asarray(x, dtype=float)
    table = _VelocityTable(dispersion, n_grid, k_lo, subradiant_only)
    infl = find_inflection_points(dispersion, n_grid, k_lo).inflection_points
    amps = np.zeros(x.shape, dtype=np.complex128)
    caustic = np.zeros(x.shape, dtype=bool)
    used = []
    all_pts = table.roots_many(x / t)
    for i, xv in enumerate(x):
        pts = all_pts[i]
        used.append(pts)
        near = infl.size and pts.size and np.min(
            np.abs(np.remainder(pts[:, None] - infl[None, :] + math.pi, TWO_PI) - math.pi)
        ) < caustic_tol
        if near:
            caustic[i] = True
            amps[i] = np.nan
            continue
        try:
            amps[i] = _amplitude(dispersion, xv, t, pts)
        except CausticError:
            caustic[i] = True
            amps[i] = np.nan
    vals = np.abs(amps) ** 2
    norm = 1.0
    if normalization is not None:
        total = float(np.nansum(vals))
        if total <= 0:
            raise LatticeError("SPA waveform is identically zero; cannot normalize")
        norm = normalization.p / total
        vals = vals * norm
    return SpaWaveform(x, float(t), amps, vals, used, caustic, norm,
                       {"subradiant_only": subradiant_only})


@dataclass(frozen=True)
class PeakPrediction:
    k: float
    v_g: float
    x: float
    direction: str
    kind: str = "inflection"


def predicted_peaks(dispersion, t: float, include_minima: bool = False,
                    subradiant_only: bool = False, n_grid: int = 4096,
                    k_lo: float = -math.pi) -> list[PeakPrediction]:
    """Peak trajectories ``x = v_g(k*) t`` from the inflection points.

    With ``include_minima`` the local minima of ``|d^2 Re omega|`` are added;
    they carry a density-of-states maximum without a caustic.
    """
    sets = [find_inflection_points(dispersion, n_grid, k_lo)]
    if include_minima:
        sets.append(find_curvature_extrema(dispersion, n_grid, k_lo))
    out = []
    for s in sets:
        for k, v in zip(s.inflection_points, s.group_velocities):
            if subradiant_only and not bool(dispersion.subradiant(np.array([k]))[0]):
                continue
            direction = "right" if v > 0 else "left" if v < 0 else "static"
            out.append(PeakPrediction(float(k), float(v), float(v * t), direction, s.kind))
    out.sort(key=lambda p: p.x)
    return out
