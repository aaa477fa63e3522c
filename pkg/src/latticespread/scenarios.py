"""Named, config-driven runs that chain every stage into an output bundle.

Bundle layout under ``<out>/<name>/``::

    manifest.json         config echo, versions, checksums, result summary
    timing.json           wall-clock times (kept out of the manifest so the
                          manifest is bitwise reproducible)
    snapshots/*.csv       waveforms (+ JSON sidecars)
    dispersion/*.csv      dispersion grids
    contours.json         det-Hessian zero contours (2D) or inflection points (1D)
    classification.json   split/unsplit verdict per cross-section
    spa/*.csv             stationary-phase waveforms (1D, when enabled)

The bundle is assembled in a temporary sibling directory and renamed into
place only after every stage has succeeded.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import os
import platform
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__, kernels
from .analysis import classify_spreading, detect_peaks, packet_maxima, snapshot_digest
from .core import (
    FreeSpace,
    LatticeError,
    LatticeGeometry,
    PowerLaw,
    Waveguide,
    _reject_unknown,
    model_from_dict,
    model_to_dict,
    tilted_polarization,
)
from .dispersion import (
    dispersion_for,
    dispersion_grid_1d,
    dispersion_grid_2d,
    find_curvature_extrema,
    find_inflection_points,
    power_law_dispersion_2d,
    regularized_grid,
    ring_distance,
    subradiant_mask_2d,
)
from .dynamics import config_hash, cross_section, evolve, write_snapshot_csv
from .hamiltonian import build, set_fft_workers
from .spa import ToSurvival, predicted_peaks, spa_waveform

log = logging.getLogger(__name__)

PI = math.pi

ANALYSIS_DEFAULTS = {
    "window": 7,
    "threshold_frac": 0.25,
    "rate_floor": None,
    "dip_frac": 0.5,
    "lines": ["row"],
}

DISPERSION_DEFAULTS = {
    "kind": "auto",
    "grid": 4096,
    "grid_2d": 256,
    "cutoff_2d": 400,
    "a_ho": 0.1,
}

SPA_DEFAULTS = {
    "enabled": False,
    "subradiant_only": False,
    "include_minima": False,
    "normalize": True,
}


class ScenarioError(RuntimeError):
    """A scenario stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce one run; round-trips through JSON."""

    name: str
    model: object
    geometry: LatticeGeometry
    times: list
    description: str = ""
    method: str = "auto"
    initial_site: Optional[int] = None
    tol: float = 1e-8
    analysis: dict = field(default_factory=dict)
    dispersion: dict = field(default_factory=dict)
    spa: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    _KEYS = {"name", "model", "geometry", "times", "description", "method", "initial_site",
             "tol", "analysis", "dispersion", "spa", "notes"}

    def __post_init__(self):
        self.analysis = _merge(ANALYSIS_DEFAULTS, self.analysis, "analysis")
        self.dispersion = _merge(DISPERSION_DEFAULTS, self.dispersion, "dispersion")
        self.spa = _merge(SPA_DEFAULTS, self.spa, "spa")
        self.times = [float(t) for t in self.times]
        if not self.name or any(c in self.name for c in "/\\"):
            raise LatticeError(f"invalid scenario name {self.name!r}")
        if len(self.times) == 0 or any(t < 0 for t in self.times) or any(
            b <= a for a, b in zip(self.times, self.times[1:])
        ):
            raise LatticeError("times must be non-negative and strictly increasing")
        if self.method not in ("auto", "krylov", "eig"):
            raise LatticeError(f"unknown method {self.method!r}")
        if isinstance(self.model, Waveguide) and self.geometry.dimension != 1:
            raise LatticeError("waveguide scenarios must use a 1D chain")
        if self.initial_site is not None:
            self.geometry._check_site(self.initial_site)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "model": model_to_dict(self.model),
            "geometry": self.geometry.to_dict(),
            "times": list(self.times),
            "method": self.method,
            "initial_site": self.initial_site,
            "tol": self.tol,
            "analysis": copy.deepcopy(self.analysis),
            "dispersion": copy.deepcopy(self.dispersion),
            "spa": copy.deepcopy(self.spa),
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        _reject_unknown(data, cls._KEYS, "scenario config")
        for key in ("name", "model", "geometry", "times"):
            if key not in data:
                raise LatticeError(f"scenario config is missing '{key}'")
        return cls(
            name=data["name"],
            model=model_from_dict(data["model"]),
            geometry=LatticeGeometry.from_dict(data["geometry"]),
            times=list(data["times"]),
            description=data.get("description", ""),
            method=data.get("method", "auto"),
            initial_site=data.get("initial_site"),
            tol=float(data.get("tol", 1e-8)),
            analysis=data.get("analysis", {}),
            dispersion=data.get("dispersion", {}),
            spa=data.get("spa", {}),
            notes=list(data.get("notes", [])),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())


def _merge(defaults: dict, given: Optional[dict], where: str) -> dict:
    given = dict(given or {})
    _reject_unknown(given, set(defaults), where)
    out = copy.deepcopy(defaults)
    out.update(given)
    return out


# ---------------------------------------------------------------------------
# builtin registry


def _chain(n=751):
    return LatticeGeometry.chain(n)


def _square(n=93):
    return LatticeGeometry.square(n)


_ILLUSTRATIVE_TIMES = "snapshot times are illustrative"


def _builtins() -> list[ScenarioConfig]:
    tilted = tilted_polarization()
    rect = LatticeGeometry.rectangular(93, 93, 0.4, 0.8)
    out = [
        ScenarioConfig("fig2a", PowerLaw(1.0), _chain(), [1, 2, 4],
                       "1/r hopping chain: unsplit spreading"),
        ScenarioConfig("fig2b", PowerLaw(2.0), _chain(), [20, 40, 60],
                       "1/r^2 hopping chain: expanding plateau, unsplit"),
        ScenarioConfig("fig2c", PowerLaw(3.0), _chain(), [20, 40, 60],
                       "1/r^3 hopping chain: two-packet splitting",
                       spa={"enabled": True}),
        ScenarioConfig("fig3a_wg", Waveguide(0.3 * PI), _chain(), [20, 50, 100],
                       "waveguide chain: stationary peaks, unsplit",
                       notes=["k_A = 0.3 pi is a documented substitute; source value unspecified",
                              _ILLUSTRATIVE_TIMES]),
        ScenarioConfig("fig3b_par_0.6pi", FreeSpace(0.6 * PI, (1, 0, 0)), _chain(), [20, 50, 100],
                       "free-space chain, dipoles along the chain, k_A = 0.6 pi: unsplit",
                       notes=[_ILLUSTRATIVE_TIMES]),
        ScenarioConfig("fig3b_par_0.15pi", FreeSpace(0.15 * PI, (1, 0, 0)), _chain(), [2, 4, 6],
                       "free-space chain, dipoles along the chain, k_A = 0.15 pi: split",
                       spa={"enabled": True, "subradiant_only": True, "include_minima": True},
                       notes=[_ILLUSTRATIVE_TIMES]),
        ScenarioConfig("fig3c_perp_0.3pi", FreeSpace(0.3 * PI, (0, 1, 0)), _chain(), [50, 100, 150],
                       "free-space chain, dipoles across the chain, k_A = 0.3 pi: split with peak trains",
                       spa={"enabled": True, "subradiant_only": True},
                       notes=[_ILLUSTRATIVE_TIMES]),
        ScenarioConfig("fig3c_perp_0.6pi", FreeSpace(0.6 * PI, (0, 1, 0)), _chain(), [20, 50, 100],
                       "free-space chain, dipoles across the chain, k_A = 0.6 pi: unsplit",
                       notes=[_ILLUSTRATIVE_TIMES]),
        ScenarioConfig("fig4a", FreeSpace(0.3 * PI, tilted), _square(), [10, 20, 30],
                       "93x93 free-space array, tilted dipoles, k_A = 0.3 pi: split",
                       analysis={"lines": ["diagonal", "row"]},
                       dispersion={"kind": "none"},
                       notes=[_ILLUSTRATIVE_TIMES]),
        ScenarioConfig("fig4b", FreeSpace(1.2 * PI, tilted), _square(), [10, 20, 30],
                       "93x93 free-space array, tilted dipoles, k_A = 1.2 pi: weak unsplit diffusion",
                       analysis={"lines": ["diagonal", "row"]},
                       dispersion={"kind": "none"},
                       notes=[_ILLUSTRATIVE_TIMES]),
        ScenarioConfig("sm_fig_s3_spa", PowerLaw(3.0), _chain(), [20, 40, 60],
                       "stationary-phase benchmark on the 1/r^3 chain",
                       spa={"enabled": True}),
        ScenarioConfig("sm_fig_s4", PowerLaw(2.0), _square(), [3, 6, 9],
                       "93x93 1/r^2 array: det-Hessian loop and axial splitting",
                       analysis={"lines": ["row", "diagonal"], "window": 1},
                       dispersion={"kind": "powerlaw_2d"},
                       notes=["window 1: packets are only a few sites wide at these times"]),
        ScenarioConfig("sm_fig_s5", FreeSpace(0.3 * PI, tilted), _square(), [10, 20, 30],
                       "free-space array k_A = 0.3 pi: regularized det-Hessian contours",
                       analysis={"lines": ["diagonal", "row"]},
                       dispersion={"kind": "regularized_2d"},
                       notes=[_ILLUSTRATIVE_TIMES]),
        ScenarioConfig("sm_fig_s5_1.2pi", FreeSpace(1.2 * PI, tilted), _square(), [10, 20, 30],
                       "free-space array k_A = 1.2 pi: contours beside the light cone",
                       analysis={"lines": ["diagonal", "row"]},
                       dispersion={"kind": "regularized_2d"},
                       notes=[_ILLUSTRATIVE_TIMES]),
    ]
    for axis, pol in (("x", (1, 0, 0)), ("y", (0, 1, 0)), ("z", (0, 0, 1))):
        out.append(
            ScenarioConfig(f"sm_fig_s6_{axis}", FreeSpace(0.5 * PI, pol), rect, [5, 10, 15],
                           f"rectangular array a_x=0.4, a_y=0.8, dipoles along {axis}",
                           analysis={"lines": ["row", "column"]},
                           dispersion={"kind": "none"},
                           notes=["a_x, a_y and k_A = 0.5 pi are illustrative", _ILLUSTRATIVE_TIMES])
        )
    return out


def list_scenarios() -> list[tuple[str, str]]:
    """Builtin scenario names with one-line descriptions, in registry order."""
    return [(c.name, c.description) for c in _builtins()]


def get_scenario(name: str) -> ScenarioConfig:
    for c in _builtins():
        if c.name == name:
            return c
    raise LatticeError(f"unknown scenario {name!r}; see 'list'")


# ---------------------------------------------------------------------------
# running


def _file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


@dataclass
class Bundle:
    path: Path
    manifest: dict
    snapshots: list
    classification: dict


def run_scenario(config: ScenarioConfig, out_dir, threads: int = 1) -> Bundle:
    """Run every stage and write the bundle to ``<out_dir>/<config.name>``.

    Any stage failure raises :class:`ScenarioError` naming the stage; the
    partial bundle is removed and an existing bundle is left untouched.
    """
    set_fft_workers(threads)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{config.name}.", dir=out_dir))
    timing = {}
    try:
        result = _run_stages(config, tmp, timing)
        final = out_dir / config.name
        _dump(tmp / "timing.json", timing)
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    result.path = final
    return result


def _stage(name, timing):
    class _Ctx:
        def __enter__(self):
            self.t0 = time.perf_counter()
            log.info("stage %s", name)
            return self

        def __exit__(self, et, ev, tb):
            timing[name] = time.perf_counter() - self.t0
            if ev is not None and not isinstance(ev, (ScenarioError, KeyboardInterrupt)):
                raise ScenarioError(name, ev) from ev
            return False

    return _Ctx()


def _run_stages(config: ScenarioConfig, root: Path, timing: dict) -> Bundle:
    cfg = config.to_dict()
    chash = config_hash(cfg)
    summary: dict = {}
    geo = config.geometry
    (root / "snapshots").mkdir()
    (root / "dispersion").mkdir()

    with _stage("hamiltonian", timing):
        H = build(geo, config.model)

    with _stage("dynamics", timing):
        method = config.method
        if method == "auto":
            method = "eig" if H.n <= 2000 else "krylov"
        snaps = evolve(H, config.times, config.initial_site, method=method, tol=config.tol)
        for s in snaps:
            write_snapshot_csv(s, root / "snapshots" / f"t_{s.time:g}.csv", config.model, cfg,
                               method="exact-" + method)
        summary["survival"] = [s.survival for s in snaps]
        summary["method"] = method

    with _stage("analysis", timing):
        a = config.analysis
        lines = ["chain"] if geo.dimension == 1 else list(a["lines"])
        per_line = {}
        sources = [snapshot_digest(s) for s in snaps]
        for line in lines:
            res = classify_spreading(snaps, a["window"], a["threshold_frac"], a["rate_floor"],
                                     a["dip_frac"], line if line != "chain" else "row")
            per_line[line] = res.to_json(sources)
            last = cross_section(snaps[-1], line if line != "chain" else "row")
            per_line[line]["packet_maxima"] = packet_maxima(last.values, last.coords)
        overall = "Split" if any(r["label"] == "Split" for r in per_line.values()) else "Unsplit"
        classification = {"label": overall, "sections": per_line, "config_hash": chash}
        _dump(root / "classification.json", classification)
        summary["label"] = overall
        summary["labels"] = {k: v["label"] for k, v in per_line.items()}

    if config.spa["enabled"] and geo.dimension == 1:
        with _stage("spa", timing):
            summary["spa"] = _spa_stage(config, snaps, root, chash)

    kind = config.dispersion["kind"]
    if kind == "auto":
        kind = "1d" if geo.dimension == 1 else "none"
    if kind != "none":
        with _stage("dispersion", timing):
            summary["dispersion"] = _dispersion_stage(config, kind, root)

    files = sorted(p for p in root.rglob("*") if p.is_file() and p.name != "timing.json")
    manifest = {
        "name": config.name,
        "config": cfg,
        "config_hash": chash,
        "notes": list(config.notes),
        "versions": {
            "latticespread": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
            "kernels": kernels.BACKEND,
        },
        "summary": summary,
        "checksums": {str(p.relative_to(root)): _file_sha256(p) for p in files},
        "timing_file": "timing.json",
    }
    _dump(root / "manifest.json", manifest)
    return Bundle(root, manifest, snaps, classification)


def _spa_stage(config, snaps, root: Path, chash: str) -> dict:
    (root / "spa").mkdir()
    disp = dispersion_for(config.model)
    opts = config.spa
    k_lo = -PI if isinstance(config.model, PowerLaw) else -config.model.k_A
    x = config.geometry.positions()[:, 0]
    out = {"predicted": [], "peaks": []}
    for s in snaps:
        if s.time <= 0:
            continue
        norm = ToSurvival(min(1.0, s.survival)) if opts["normalize"] else None
        w = spa_waveform(disp, x, s.time, norm, subradiant_only=opts["subradiant_only"], k_lo=k_lo)
        w.meta["model"] = model_to_dict(config.model)
        w.write_csv(root / "spa" / f"t_{s.time:g}.csv", chash)
        vals = np.nan_to_num(w.values)
        window = config.analysis["window"]
        spa_peaks = detect_peaks(vals, window, config.analysis["threshold_frac"], x)
        exact_peaks = detect_peaks(s.probabilities, window, config.analysis["threshold_frac"], x)
        preds = predicted_peaks(disp, s.time, include_minima=opts["include_minima"],
                                subradiant_only=opts["subradiant_only"], k_lo=k_lo)
        out["predicted"].append({"time": s.time,
                                 "peaks": [{"k": p.k, "v_g": p.v_g, "x": p.x, "kind": p.kind}
                                           for p in preds]})
        out["peaks"].append({"time": s.time,
                             "spa": [p.position for p in spa_peaks],
                             "exact": [p.position for p in exact_peaks],
                             "spa_packet_maxima": packet_maxima(vals, x),
                             "exact_packet_maxima": packet_maxima(s.probabilities, x)})
    return out


def _dispersion_stage(config, kind: str, root: Path) -> dict:
    d = config.dispersion
    model = config.model
    if kind == "1d":
        return write_dispersion_1d(model, root, int(d["grid"]))
    return write_dispersion_2d(model, kind, root, int(d["grid_2d"]), int(d["cutoff_2d"]),
                               float(d["a_ho"]), config.geometry.spacings)


def write_dispersion_1d(model, root, grid: int = 4096) -> dict:
    """Write ``dispersion/omega_1d.csv`` and the inflection data in ``contours.json``."""
    root = Path(root)
    (root / "dispersion").mkdir(parents=True, exist_ok=True)
    disp = dispersion_for(model)
    k_lo = -PI if isinstance(model, PowerLaw) else -model.k_A
    dispersion_grid_1d(disp, grid, k_lo).write_csv(root / "dispersion" / "omega_1d.csv")
    infl = find_inflection_points(disp, grid, k_lo).to_dict()
    ext = find_curvature_extrema(disp, grid, k_lo).to_dict()
    _dump(root / "contours.json", {"inflection_points": infl, "curvature_minima": ext})
    return {"inflection_k": infl["k"], "inflection_v_g": infl["v_g"]}


def write_dispersion_2d(model, kind: str, root, grid: int = 256, cutoff: int = 400,
                        a_ho: float = 0.1, spacings=(1.0, 1.0)) -> dict:
    """Write ``dispersion/omega_2d.csv`` and the det-Hessian zero contours.

    ``kind`` is ``powerlaw_2d`` (real-space lattice sum) or ``regularized_2d``
    (Gaussian-regularized reciprocal sum for free-space coupling).
    """
    root = Path(root)
    (root / "dispersion").mkdir(parents=True, exist_ok=True)
    if kind == "powerlaw_2d":
        if not isinstance(model, PowerLaw):
            raise LatticeError("powerlaw_2d dispersion needs a power-law model")
        kx, ky, om = power_law_dispersion_2d(model.alpha, grid, cutoff, spacings)
        k_A = None
    elif kind == "regularized_2d":
        if not isinstance(model, FreeSpace):
            raise LatticeError("regularized_2d dispersion needs a free-space model")
        kx, ky, om = regularized_grid(grid, model.k_A, model.polarization, a_ho, spacings)
        k_A = model.k_A
    else:
        raise LatticeError(f"unknown dispersion kind {kind!r}")
    grid_obj, contours = dispersion_grid_2d(om, kx, ky, True, k_A, spacings,
                                            unit=("1/a^alpha" if k_A is None else "gamma_A"))
    grid_obj.write_csv(root / "dispersion" / "omega_2d.csv")
    payload = contours.to_json()
    payload["det_unit"] = grid_obj.meta["det_unit"]
    info = {"n_polylines": len(contours.polylines), "n_loops": len(contours.loops())}
    if k_A is not None:
        dists = []
        inside = []
        for p, c, w in zip(contours.polylines, contours.closed, contours.winding):
            dists.append(float(np.min(ring_distance(p[:, 0], p[:, 1], k_A, spacings))))
            inside.append(bool(c and tuple(w) == (0, 0)
                               and np.all(subradiant_mask_2d(p[:, 0], p[:, 1], k_A))))
        payload["ring_distance"] = dists
        payload["inside_subradiant"] = inside
        info["min_ring_distance"] = min(dists) if dists else None
        info["closed_inside_subradiant"] = int(sum(inside))
    with open(root / "contours.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return info
