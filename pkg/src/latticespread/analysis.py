"""Peak detection, split/unsplit classification and the band-topology checks.

Splitting is judged by velocity, not by peak count: a run is ``Split`` when
two peak tracks move apart with opposite velocities above a floor and the
profile between them is depleted.  The depletion test keeps an expanding
plateau whose edges carry bright fringes (but whose interior stays filled)
from being called split.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.signal import find_peaks

from .core import LatticeError
from .dispersion import (
    TWO_PI,
    CallableDispersion,
    derivatives_1d,
    fd_fields_2d,
    k_grid_1d,
)
from .dynamics import Profile, WaveformSnapshot, cross_section


# ---------------------------------------------------------------------------
# peaks


@dataclass(frozen=True)
class Peak:
    position: float
    height: float
    index: int


def smooth(profile: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; the window shrinks at the ends."""
    p = np.asarray(profile, dtype=float)
    if window <= 1:
        return p.copy()
    ker = np.ones(window)
    num = np.convolve(p, ker, mode="same")
    den = np.convolve(np.ones_like(p), ker, mode="same")
    return num / den


def local_maxima(values: np.ndarray) -> list[tuple[int, int]]:
    """Runs ``(start, stop)`` of equal values that exceed both neighbours."""
    v = np.asarray(values, dtype=float)
    n = v.size
    out = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and v[j + 1] == v[i]:
            j += 1
        left_ok = i == 0 or v[i - 1] < v[i]
        right_ok = j == n - 1 or v[j + 1] < v[i]
        if left_ok and right_ok:
            out.append((i, j))
        i = j + 1
    return out


def detect_peaks(
    profile,
    window: int = 7,
    threshold_frac: float = 0.25,
    coords: Optional[np.ndarray] = None,
) -> list[Peak]:
    """Dominant maxima of the smoothed profile.

    Parameters
    ----------
    profile : 1D probabilities
    window : odd moving-average width in sites
    threshold_frac : keep maxima above this fraction of the smoothed maximum
    coords : site coordinates (defaults to the index)

    Plateaus report their centre; isolated maxima are refined by a parabola
    through the three top samples.  Maxima closer than ``window`` sites are
    merged into the higher one.
    """
    p = np.asarray(profile, dtype=float)
    if p.size == 0:
        raise LatticeError("empty profile")
    if window < 1 or window % 2 == 0:
        raise LatticeError(f"window must be a positive odd integer, got {window}")
    if not 0.0 < threshold_frac < 1.0:
        raise LatticeError("threshold_frac must lie in (0, 1)")
    x = np.arange(p.size, dtype=float) if coords is None else np.asarray(coords, dtype=float)
    s = smooth(p, window)
    top = float(s.max())
    if top <= 0:
        return []
    found = []
    for i, j in local_maxima(s):
        if s[i] < threshold_frac * top:
            continue
        if i == j and 0 < i < p.size - 1:
            y0, y1, y2 = s[i - 1], s[i], s[i + 1]
            den = y0 - 2 * y1 + y2
            off = 0.5 * (y0 - y2) / den if den != 0 else 0.0
            off = min(max(off, -0.5), 0.5)
            pos = x[i] + off * (x[i + 1] - x[i])
            idx = i
        else:
            idx = (i + j) // 2
            pos = 0.5 * (x[i] + x[j])
        found.append(Peak(float(pos), float(s[idx]), int(idx)))
    # merge close maxima, keeping the higher one
    found.sort(key=lambda q: -q.height)
    kept: list[Peak] = []
    for q in found:
        if all(abs(q.index - k.index) >= window for k in kept):
            kept.append(q)
    kept.sort(key=lambda q: q.position)
    return kept


# ---------------------------------------------------------------------------
# classification


@dataclass
class Track:
    times: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    heights: list = field(default_factory=list)
    rate: float = float("nan")

    def fit(self) -> None:
        if len(self.times) >= 2:
            self.rate = float(np.polyfit(self.times, self.positions, 1)[0])


@dataclass
class ClassificationResult:
    """Outcome of :func:`classify_spreading`.

    ``peak_tracks`` lists per-time ``(position, height)`` peaks and ``tracks``
    holds the linked trajectories with their fitted velocities.
    """

    label: str
    peak_tracks: list
    tracks: list
    separation_rates: list
    diagnostics: dict

    def to_json(self, sources: Sequence[str] = ()) -> dict:
        return {
            "label": self.label,
            "rule": "velocity-based: opposite-sign tracks above rate_floor with a depleted gap",
            "peaks": [[[p, h] for p, h in row] for row in self.peak_tracks],
            "tracks": [
                {"times": t.times, "positions": t.positions, "heights": t.heights, "rate": t.rate}
                for t in self.tracks
            ],
            "rates": self.separation_rates,
            "params": self.diagnostics,
            "inputs": list(sources),
        }

    def write_json(self, path, sources: Sequence[str] = ()) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(sources), fh, indent=2, sort_keys=True)
            fh.write("\n")


def snapshot_digest(snapshot: WaveformSnapshot) -> str:
    """SHA-1 of the snapshot's time and amplitude bytes."""
    h = hashlib.sha1()
    h.update(np.float64(snapshot.time).tobytes())
    h.update(np.ascontiguousarray(snapshot.amplitudes).tobytes())
    return h.hexdigest()


def _profiles(snapshots, line: str) -> tuple[list[float], list[Profile]]:
    times, profs = [], []
    for s in snapshots:
        if isinstance(s, WaveformSnapshot):
            times.append(float(s.time))
            if s.geometry is None:
                x = np.arange(s.probabilities.size) - (s.probabilities.size - 1) // 2
                profs.append(Profile(x.astype(float), s.probabilities.copy()))
            else:
                profs.append(cross_section(s, line))
        else:
            t, prof = s
            times.append(float(t))
            profs.append(prof)
    return times, profs


def wavefront_speed(times, profiles, window: int = 7, level: float = 0.01) -> float:
    """Largest ``(outermost |x| with smoothed profile >= level * max) / t``."""
    best = 0.0
    for t, prof in zip(times, profiles):
        if t <= 0:
            continue
        s = smooth(prof.values, window)
        inside = np.nonzero(s >= level * s.max())[0]
        if inside.size:
            best = max(best, float(np.max(np.abs(prof.coords[inside]))) / t)
    return best


def _link_tracks(times, peaks_per_time, gate_speed, gate_pad) -> list[Track]:
    tracks: list[Track] = []
    active: list[Track] = []
    for ti, (t, peaks) in enumerate(zip(times, peaks_per_time)):
        if ti == 0:
            for p in peaks:
                tr = Track([t], [p.position], [p.height])
                tracks.append(tr)
                active.append(tr)
            continue
        t_prev = times[ti - 1]
        gate = gate_speed * (t - t_prev) + gate_pad
        pairs = []
        for a, tr in enumerate(active):
            if tr.times[-1] != t_prev:
                continue
            x0 = tr.positions[-1]
            pred = x0 * (t / t_prev) if t_prev > 0 else x0
            for b, p in enumerate(peaks):
                d = abs(p.position - pred)
                if d <= gate:
                    pairs.append((d, a, b))
        pairs.sort()
        used_a, used_b = set(), set()
        for d, a, b in pairs:
            if a in used_a or b in used_b:
                continue
            used_a.add(a)
            used_b.add(b)
            tr = active[a]
            tr.times.append(t)
            tr.positions.append(peaks[b].position)
            tr.heights.append(peaks[b].height)
        for b, p in enumerate(peaks):
            if b not in used_b:
                tr = Track([t], [p.position], [p.height])
                tracks.append(tr)
                active.append(tr)
    for tr in tracks:
        tr.fit()
    return tracks


def classify_spreading(
    snapshots,
    window: int = 7,
    threshold_frac: float = 0.25,
    rate_floor: Optional[float] = None,
    dip_frac: float = 0.5,
    line: str = "row",
    min_track_len: Optional[int] = None,
) -> ClassificationResult:
    """Label a time series of waveforms ``Split`` or ``Unsplit``.

    Parameters
    ----------
    snapshots : WaveformSnapshots or ``(time, Profile)`` pairs, at least 3 times
    window, threshold_frac : peak-detection parameters
    rate_floor : minimum |velocity| of a separating track; defaults to 5% of
        the wavefront speed
    dip_frac : the smoothed profile between the two separating peaks must
        drop to this fraction of the lower peak at the last time
    line : cross-section for 2D snapshots
    min_track_len : number of times a track must span (default: all but one)
    """
    times, profs = _profiles(snapshots, line)
    if len(times) < 3:
        raise LatticeError("classification needs at least 3 times")
    if any(p.values.shape != profs[0].values.shape for p in profs):
        raise LatticeError("inconsistent snapshot lengths")
    order = np.argsort(times)
    times = [times[i] for i in order]
    profs = [profs[i] for i in order]
    spacing = float(np.min(np.abs(np.diff(profs[0].coords)))) if profs[0].coords.size > 1 else 1.0
    peaks = [detect_peaks(p.values, window, threshold_frac, p.coords) for p in profs]
    speed = wavefront_speed(times, profs, window)
    floor = 0.05 * speed if rate_floor is None else float(rate_floor)
    tracks = _link_tracks(times, peaks, speed, 2 * window * spacing)
    need = max(2, len(times) - 1) if min_track_len is None else int(min_track_len)
    long_tracks = [t for t in tracks if len(t.times) >= need]
    movers_l = [t for t in long_tracks if t.rate < -floor]
    movers_r = [t for t in long_tracks if t.rate > floor]
    label = "Unsplit"
    gap = None
    if movers_l and movers_r:
        left = max(movers_l, key=lambda t: t.heights[-1])
        right = max(movers_r, key=lambda t: t.heights[-1])
        last = profs[-1]
        s = smooth(last.values, window)
        lo, hi = sorted((left.positions[-1], right.positions[-1]))
        between = (last.coords > lo) & (last.coords < hi)
        if left.times[-1] == times[-1] and right.times[-1] == times[-1] and between.any():
            floor_val = float(s[between].min())
            ref = min(left.heights[-1], right.heights[-1])
            gap = floor_val / ref if ref > 0 else math.inf
            if gap <= dip_frac:
                label = "Split"
    diag = {
        "window": window,
        "threshold_frac": threshold_frac,
        "rate_floor": floor,
        "wavefront_speed": speed,
        "dip_frac": dip_frac,
        "gap_ratio": gap,
        "min_track_len": need,
        "line": line,
        "times": times,
    }
    return ClassificationResult(
        label,
        [[(p.position, p.height) for p in row] for row in peaks],
        tracks,
        [t.rate for t in long_tracks],
        diag,
    )



def packet_maxima(values, coords, prominence_frac: float = 0.05) -> dict:
    """Raw (unsmoothed) local maxima on each side of the origin.

    A maximum counts when its prominence is at least ``prominence_frac`` of
    the largest value on that side, which ignores the tiny site-to-site
    ripple that open systems pick up from radiating modes.  Returns
    ``{"left": n, "right": n}``.
    """
    values = np.asarray(values, dtype=float)
    coords = np.asarray(coords, dtype=float)
    out = {}
    for name, side in (("left", coords < 0), ("right", coords > 0)):
        v = np.nan_to_num(values[side])
        if v.size < 3 or v.max() <= 0:
            out[name] = 0
            continue
        idx, _ = find_peaks(v, prominence=prominence_frac * v.max())
        out[name] = int(idx.size)
    return out

# ---------------------------------------------------------------------------
# moment integrals and band topology


@dataclass
class IdentityResult:
    value: float
    applicable: bool
    note: str = ""


def moment_integrals(source, n: int, n_grid: int = 4096, k_lo: float = -math.pi) -> IdentityResult:
    """``(1/2 pi) int d^n Re omega dk`` over one period by the trapezoid rule.

    ``source`` is a dispersion object (analytic derivatives), or samples of
    ``omega`` on a uniform periodic grid (central differences).  Dispersions
    with singular points in the zone are flagged as not applicable.
    """
    if n not in (1, 2):
        raise LatticeError("moment order must be 1 or 2")
    if hasattr(source, "derivative"):
        sing = getattr(source, "singular_points", ())
        if sing:
            return IdentityResult(float("nan"), False,
                                  f"singular points {list(sing)} inside the zone")
        k = k_grid_1d(n_grid, k_lo)
        vals = source.d1(k) if n == 1 else source.d2(k)
    else:
        om = np.asarray(source)
        if not np.all(np.isfinite(om)):
            return IdentityResult(float("nan"), False, "masked samples inside the zone")
        k = k_grid_1d(om.size, k_lo)
        d1, d2 = derivatives_1d(om, k, periodic=True)
        vals = d1 if n == 1 else d2
    vals = np.asarray(vals, dtype=float)
    if not np.all(np.isfinite(vals)):
        return IdentityResult(float("nan"), False, "derivative diverges inside the zone")
    # periodic trapezoid rule == mean of the samples
    return IdentityResult(float(np.mean(vals)), True)


def gauss_bonnet_check(source, h=None, n: int = 512, periodic: bool = True) -> IdentityResult:
    """``(1/2 pi) sum det H / (1 + |grad omega|^2)^{3/2} dk_x dk_y`` (midpoint rule).

    ``source`` is either a sampled ``omega[iy, ix]`` over one zone with grid
    spacing ``h`` (scalar or ``(hx, hy)``) or a callable ``omega(kx, ky)``
    sampled on an ``n x n`` grid of ``[-pi, pi)^2``.
    """
    if callable(source):
        k = k_grid_1d(n)
        KX, KY = np.meshgrid(k, k)
        om = np.asarray(source(KX, KY), dtype=float)
        hx = hy = TWO_PI / n
    else:
        om = np.real(np.asarray(source))
        if h is None:
            hx, hy = TWO_PI / om.shape[1], TWO_PI / om.shape[0]
        else:
            hx, hy = (h, h) if np.isscalar(h) else h
    if not np.all(np.isfinite(om)):
        return IdentityResult(float("nan"), False, "masked nodes in the zone")
    (gx, gy), (hxx, hxy, hyy) = fd_fields_2d(om, hx, hy, periodic)
    det = hxx * hyy - hxy**2
    integrand = det / (1.0 + gx**2 + gy**2) ** 1.5
    if not periodic:
        # border stencils are undefined; integrate the interior nodes
        return IdentityResult(float(np.nansum(integrand) * hx * hy / TWO_PI), True,
                              "interior nodes only")
    return IdentityResult(float(np.sum(integrand) * hx * hy / TWO_PI), True)


def sign_coverage(values, rel_tol: float = 1e-3) -> dict:
    """Whether a field takes both signs, and the fraction of near-zero samples."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {"has_positive": False, "has_negative": False, "zero_measure_estimate": 0.0}
    scale = float(np.max(np.abs(v)))
    near = np.abs(v) <= rel_tol * scale if scale > 0 else np.ones(v.shape, bool)
    return {
        "has_positive": bool(np.any(v > rel_tol * scale)),
        "has_negative": bool(np.any(v < -rel_tol * scale)),
        "zero_measure_estimate": float(near.mean()),
    }


# ---------------------------------------------------------------------------
# smooth test batteries


def _trig_band(coefs: Sequence[tuple[int, float, float]], label: str) -> CallableDispersion:
    """``sum a cos(m k) + b sin(m k)`` with exact derivatives."""

    def make(order):
        def f(k):
            k = np.asarray(k, dtype=float)
            out = np.zeros_like(k)
            for m, a, b in coefs:
                # d^n/dk^n of e^{imk} is (im)^n e^{imk}
                z = (1j * m) ** order * np.exp(1j * m * k)
                out += a * z.real + b * z.imag
            return out
        return f

    return CallableDispersion(make(0), make(1), make(2), make(3), label=label)


def _exp_cos(c: float) -> CallableDispersion:
    def f0(k):
        return np.exp(c * np.cos(k))

    def f1(k):
        return -c * np.sin(k) * f0(k)

    def f2(k):
        return (c * c * np.sin(k) ** 2 - c * np.cos(k)) * f0(k)

    def f3(k):
        s, co = np.sin(k), np.cos(k)
        return (3 * c * c * s * co + c * s - c**3 * s**3) * f0(k)

    return CallableDispersion(f0, f1, f2, f3, label=f"exp({c:g} cos k)")


def _log_band(b: float) -> CallableDispersion:
    # omega = log(b - cos k), b > 1
    def f0(k):
        return np.log(b - np.cos(k))

    def f1(k):
        return np.sin(k) / (b - np.cos(k))

    def f2(k):
        d = b - np.cos(k)
        return (np.cos(k) * d - np.sin(k) ** 2) / d**2

    return CallableDispersion(f0, f1, f2, label=f"log({b:g} - cos k)")


def smooth_battery_1d() -> list[CallableDispersion]:
    """Ten smooth periodic 1D dispersions (one of them flat)."""
    return [
        _trig_band([(1, -2.0, 0.0)], "-2 cos k"),
        _trig_band([(1, -2.0, 0.0), (2, 0.7, 0.0)], "-2 cos k + 0.7 cos 2k"),
        _trig_band([(1, 1.0, 0.0), (2, 0.0, 0.3)], "cos k + 0.3 sin 2k"),
        _trig_band([(1, -1.0, 0.0), (3, 0.2, 0.0), (5, -0.05, 0.0)], "odd harmonics"),
        _trig_band([(1, 0.0, 1.0), (2, 0.5, 0.0)], "sin k + 0.5 cos 2k"),
        _trig_band([(m, (-1) ** m / m**4, 0.0) for m in range(1, 40)], "sum (-1)^m cos(mk)/m^4"),
        _exp_cos(1.0),
        _exp_cos(-0.6),
        _log_band(1.5),
        _trig_band([], "flat"),
    ]


def smooth_battery_2d() -> list[tuple[str, Callable]]:
    """Five smooth periodic 2D dispersions ``omega(kx, ky)``."""
    return [
        ("cos kx + cos ky", lambda x, y: np.cos(x) + np.cos(y)),
        ("cos kx + cos ky + 0.3 cos(kx+ky)", lambda x, y: np.cos(x) + np.cos(y) + 0.3 * np.cos(x + y)),
        ("anisotropic", lambda x, y: -2.0 * np.cos(x) - 0.5 * np.cos(y) + 0.2 * np.cos(2 * x - y)),
        ("exp(0.8 cos kx) cos ky", lambda x, y: np.exp(0.8 * np.cos(x)) * np.cos(y)),
        ("sin kx sin ky + cos 2kx", lambda x, y: np.sin(x) * np.sin(y) + np.cos(2 * x)),
    ]


def nogo_suite(n_grid: int = 4096, gb_grid: int = 512) -> dict:
    """Run the moment, inflection and Gauss-Bonnet checks on the smooth batteries."""
    from .dispersion import find_inflection_points

    rows = []
    ok = True
    for disp in smooth_battery_1d():
        m1 = moment_integrals(disp, 1, n_grid)
        m2 = moment_integrals(disp, 2, n_grid)
        k = k_grid_1d(n_grid)
        flat = float(np.ptp(disp.omega(k).real)) == 0.0
        st = find_inflection_points(disp, n_grid)
        both = bool(np.any(st.group_velocities > 0) and np.any(st.group_velocities < 0))
        passed = abs(m1.value) < 1e-9 and abs(m2.value) < 1e-9 and (flat or (len(st) >= 2 and both))
        ok &= passed
        rows.append({"dispersion": disp.label, "moment1": m1.value, "moment2": m2.value,
                     "inflections": len(st), "both_signs": both, "flat": flat, "pass": passed})
    gb_rows = []
    for name, f in smooth_battery_2d():
        coarse = gauss_bonnet_check(f, n=gb_grid // 2).value
        fine = gauss_bonnet_check(f, n=gb_grid).value
        converging = abs(fine) < abs(coarse) or max(abs(fine), abs(coarse)) < 1e-12
        passed = abs(fine) < 1e-3 and converging
        ok &= passed
        gb_rows.append({"dispersion": name, "coarse": coarse, "fine": fine, "pass": passed})
    return {"pass": bool(ok), "moments": rows, "gauss_bonnet": gb_rows}
