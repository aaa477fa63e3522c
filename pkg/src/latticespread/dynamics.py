"""Time evolution ``psi(t) = exp(-i H t) psi(0)`` and waveform snapshots.

The default propagator is an Arnoldi (Krylov) exponential integrator that
only needs matrix-vector products, so it runs on matrix-free Hamiltonians.
Dense eigendecomposition is available for small systems and serves as the
reference in tests.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .core import LatticeError, LatticeGeometry, energy_unit, model_to_dict, time_unit
from .hamiltonian import Hamiltonian

log = logging.getLogger(__name__)


class PropagationError(RuntimeError):
    """The Krylov propagator failed to reach the requested accuracy."""


@dataclass
class WaveformSnapshot:
    time: float
    amplitudes: np.ndarray
    geometry: Optional[LatticeGeometry] = None
    time_unit: str = ""

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        self.probabilities = np.abs(self.amplitudes) ** 2

    @property
    def survival(self) -> float:
        return float(self.probabilities.sum())


def survival_probability(snapshot: WaveformSnapshot) -> float:
    """Total remaining population ``sum |psi_i|^2``."""
    return snapshot.survival


class _DenseOperator:
    def __init__(self, matrix: np.ndarray):
        m = np.asarray(matrix, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise LatticeError("Hamiltonian matrix must be square")
        if not np.all(np.isfinite(m)):
            raise LatticeError("Hamiltonian matrix contains non-finite entries")
        self.matrix = m
        self.n = m.shape[0]
        self.hermitian = bool(np.allclose(m, m.conj().T, rtol=0, atol=0))
        self.geometry = None
        self.model = None

    def apply(self, v):
        return self.matrix @ v

    def dense(self, limit=None):
        return self.matrix

    def norm_bound(self):
        return float(np.abs(self.matrix).sum(axis=0).max())


def _as_operator(H):
    if isinstance(H, Hamiltonian):
        return H
    return _DenseOperator(H)


class KrylovPropagator:
    """Adaptive-step Arnoldi approximation of ``exp(-i tau H) v``.

    Parameters
    ----------
    apply : callable
        Matrix-vector product ``v -> H v``.
    n : int
        Dimension.
    tol : float
        Local error target per step, relative to the current vector norm.
    m : int
        Krylov subspace dimension.
    """

    def __init__(self, apply: Callable, n: int, tol: float = 1e-12, m: int = 30,
                 norm_hint: Optional[float] = None):
        self.apply = apply
        self.n = n
        self.tol = tol
        self.m = max(2, min(m, n))
        self.norm_hint = norm_hint
        self.tau = None
        self.steps = 0
        self.matvecs = 0

    def _arnoldi(self, v, beta):
        m, n = self.m, self.n
        V = np.empty((m + 1, n), dtype=np.complex128)
        Hm = np.zeros((m + 1, m), dtype=np.complex128)
        V[0] = v / beta
        scale = 0.0
        for j in range(m):
            w = self.apply(V[j])
            self.matvecs += 1
            # classical Gram-Schmidt, twice
            h = V[: j + 1].conj() @ w
            w = w - h @ V[: j + 1]
            h2 = V[: j + 1].conj() @ w
            w = w - h2 @ V[: j + 1]
            Hm[: j + 1, j] = h + h2
            hn = np.linalg.norm(w)
            scale = max(scale, np.abs(Hm[: j + 1, j]).max(), hn)
            Hm[j + 1, j] = hn
            if hn <= 1e-13 * max(scale, 1e-300):
                return V[: j + 1], Hm[: j + 1, : j + 1], 0.0, True
            V[j + 1] = w / hn
        return V[:m], Hm[:m, :m], float(Hm[m, m - 1].real), False

    def propagate(self, v: np.ndarray, dt: float) -> np.ndarray:
        """Advance ``v`` by ``dt`` (may take several internal steps)."""
        t = 0.0
        v = np.asarray(v, dtype=np.complex128).copy()
        while t < dt:
            beta = float(np.linalg.norm(v))
            if beta == 0.0:
                return v
            V, Hm, h_next, exact = self._arnoldi(v, beta)
            remaining = dt - t
            if exact:
                tau = remaining
                y = scipy.linalg.expm(-1j * tau * Hm)[:, 0]
            else:
                ritz = float(np.abs(np.linalg.eigvals(Hm)).max()) if self.tau is None else 0.0
                tau = remaining if self.tau is None else min(remaining, self.tau)
                if self.tau is None and ritz > 0:
                    tau = min(tau, 0.5 * self.m / ritz)
                target = self.tol
                for _ in range(60):
                    E = scipy.linalg.expm(-1j * tau * Hm)
                    y = E[:, 0]
                    err = h_next * abs(y[-1])
                    if err <= target:
                        break
                    shrink = 0.9 * (target / err) ** (1.0 / self.m)
                    tau *= min(0.5, max(0.1, shrink))
                    if tau < 1e-14 * max(dt, 1.0):
                        break
                else:
                    err = float("inf")
                if err > target:
                    raise PropagationError(
                        f"Krylov step {self.steps} at t+{t:.6g}: residual {err:.3e} "
                        f"exceeds tolerance {target:.1e} (tau={tau:.3e})"
                    )
                grow = 2.0 if err == 0 else min(2.0, 0.9 * (target / err) ** (1.0 / self.m))
                self.tau = max(tau * max(grow, 1.0), tau)
            v = beta * (y @ V)
            t += tau
            self.steps += 1
        return v


def _initial_state(n: int, site: int) -> np.ndarray:
    if not (0 <= site < n):
        raise LatticeError(f"initial site {site} out of range [0, {n})")
    psi = np.zeros(n, dtype=np.complex128)
    psi[site] = 1.0
    return psi


def _check_times(times: Sequence[float]) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise LatticeError("times must be a non-empty 1D list")
    if np.any(times < 0) or np.any(np.diff(times) <= 0):
        raise LatticeError("times must be non-negative and strictly increasing")
    return times


def evolve(
    H,
    times: Sequence[float],
    initial_site: Optional[int] = None,
    method: str = "krylov",
    tol: float = 1e-8,
    krylov_dim: int = 30,
    initial_state: Optional[np.ndarray] = None,
) -> list[WaveformSnapshot]:
    """Evolve a single-site excitation and return one snapshot per time.

    Parameters
    ----------
    H : Hamiltonian or (N, N) array
    times : ascending non-negative times
    initial_site : defaults to the geometry's centre site (0 for bare matrices)
    method : ``"krylov"`` (matrix-free) or ``"eig"`` (dense diagonalization)
    tol : target relative 2-norm accuracy per requested time
    """
    op = _as_operator(H)
    times = _check_times(times)
    geometry = getattr(op, "geometry", None)
    if initial_state is not None:
        psi0 = np.asarray(initial_state, dtype=np.complex128).copy()
        if psi0.shape != (op.n,):
            raise LatticeError("initial_state has the wrong length")
    else:
        if initial_site is None:
            initial_site = geometry.origin_site if geometry is not None else 0
        psi0 = _initial_state(op.n, int(initial_site))
    unit = time_unit(op.model) if getattr(op, "model", None) is not None else ""

    if method == "eig":
        states = _evolve_eig(op, psi0, times)
    elif method == "krylov":
        states = _evolve_krylov(op, psi0, times, tol, krylov_dim)
    else:
        raise ValueError(f"unknown propagation method {method!r}")
    return [WaveformSnapshot(float(t), s, geometry, unit) for t, s in zip(times, states)]


def _evolve_eig(op, psi0, times):
    m = op.dense()
    if op.hermitian:
        w, V = np.linalg.eigh(m)
        c = V.conj().T @ psi0
    else:
        w, V = scipy.linalg.eig(m)
        c = scipy.linalg.solve(V, psi0)
    return [psi0.copy() if t == 0 else V @ (np.exp(-1j * w * t) * c) for t in times]


def _evolve_krylov(op, psi0, times, tol, krylov_dim):
    # local tolerance well below the per-time target; steps accumulate
    prop = KrylovPropagator(op.apply, op.n, tol=min(1e-3 * tol, 1e-11), m=krylov_dim)
    out = []
    psi = psi0
    t_prev = 0.0
    for t in times:
        if t > t_prev:
            psi = prop.propagate(psi, t - t_prev)
        out.append(psi.copy())
        t_prev = t
    log.debug("krylov: %d steps, %d matvecs", prop.steps, prop.matvecs)
    return out


@dataclass
class Profile:
    """Probabilities along a line through the lattice."""

    coords: np.ndarray
    values: np.ndarray
    sites: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    line: str = "chain"


_LINES = ("row", "column", "diagonal", "antidiagonal", "radial")


def cross_section(snapshot: WaveformSnapshot, line: str = "row", offset: int = 0) -> Profile:
    """Probability profile along ``line`` through the centre site.

    ``line`` is one of ``row``, ``column``, ``diagonal``, ``antidiagonal`` or
    ``radial`` (annulus-averaged, mirrored to negative radii so it can be
    classified like a line cut).  In 1D every line is the chain itself.
    """
    geo = snapshot.geometry
    if geo is None:
        raise LatticeError("snapshot has no geometry attached")
    if line not in _LINES:
        raise LatticeError(f"invalid line {line!r}; expected one of {_LINES}")
    p = snapshot.probabilities
    nx, ny = geo.counts
    ax, ay = geo.spacings
    cx, cy = geo.center
    if geo.dimension == 1:
        sites = np.arange(nx)
        return Profile((sites - cx) * ax, p.copy(), sites, "chain")
    grid = p.reshape(ny, nx)
    if line == "radial":
        return _radial(grid, geo)
    if line == "row":
        iy = cy + offset
        if not 0 <= iy < ny:
            raise LatticeError(f"row offset {offset} outside lattice")
        ix = np.arange(nx)
        return Profile((ix - cx) * ax, grid[iy, ix].copy(), iy * nx + ix, line)
    if line == "column":
        ix = cx + offset
        if not 0 <= ix < nx:
            raise LatticeError(f"column offset {offset} outside lattice")
        iy = np.arange(ny)
        return Profile((iy - cy) * ay, grid[iy, ix].copy(), iy * nx + ix, line)
    s = np.arange(-max(nx, ny), max(nx, ny) + 1)
    ix = cx + s
    iy = cy + s + offset if line == "diagonal" else cy - s + offset
    ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    if not ok.any():
        raise LatticeError(f"{line} offset {offset} outside lattice")
    s, ix, iy = s[ok], ix[ok], iy[ok]
    return Profile(s * math.hypot(ax, ay), grid[iy, ix].copy(), iy * nx + ix, line)


def _radial(grid: np.ndarray, geo: LatticeGeometry) -> Profile:
    pos = geo.positions()
    r = np.hypot(pos[:, 0], pos[:, 1])
    step = min(geo.spacings)
    b = np.rint(r / step).astype(int)
    sums = np.bincount(b, weights=grid.ravel())
    counts = np.bincount(b)
    ok = counts > 0
    radii = np.nonzero(ok)[0] * step
    vals = sums[ok] / counts[ok]
    coords = np.concatenate([-radii[:0:-1], radii])
    values = np.concatenate([vals[:0:-1], vals])
    return Profile(coords, values, np.empty(0, dtype=int), "radial")


def config_hash(config) -> str:
    """Git-style blob hash of the canonical JSON of ``config``."""
    payload = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    header = f"blob {len(payload)}\0".encode()
    return hashlib.sha1(header + payload).hexdigest()


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_snapshot_csv(
    snapshot: WaveformSnapshot,
    path,
    model=None,
    config=None,
    method: str = "exact",
) -> None:
    """CSV ``site, x, y, prob, re, im`` plus a ``.json`` sidecar next to it."""
    geo = snapshot.geometry
    n = snapshot.amplitudes.size
    pos = geo.positions() if geo is not None else np.column_stack([np.arange(n), np.zeros(n)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site", "x", "y", "prob", "re", "im"])
        for i in range(n):
            a = snapshot.amplitudes[i]
            w.writerow(
                [i, _fmt(pos[i, 0]), _fmt(pos[i, 1]), _fmt(snapshot.probabilities[i]),
                 _fmt(a.real), _fmt(a.imag)]
            )
    side = {
        "time": snapshot.time,
        "time_unit": snapshot.time_unit,
        "survival": snapshot.survival,
        "method": method,
        "model": model_to_dict(model) if model is not None else None,
        "energy_unit": energy_unit(model) if model is not None else None,
        "geometry": geo.to_dict() if geo is not None else None,
        "config_hash": config_hash(config) if config is not None else None,
    }
    with open(_sidecar(path), "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sidecar(path) -> str:
    path = str(path)
    return (path[:-4] if path.endswith(".csv") else path) + ".json"


def read_snapshot_csv(path) -> tuple[WaveformSnapshot, dict]:
    """Inverse of :func:`write_snapshot_csv` (geometry restored from the sidecar)."""
    with open(_sidecar(path)) as fh:
        side = json.load(fh)
    amps = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            amps.append(complex(float(row["re"]), float(row["im"])))
    geo = LatticeGeometry.from_dict(side["geometry"]) if side.get("geometry") else None
    snap = WaveformSnapshot(side["time"], np.array(amps), geo, side.get("time_unit", ""))
    return snap, side
