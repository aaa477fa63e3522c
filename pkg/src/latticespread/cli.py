"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 runtime or numerical failure.  Every
failure writes one JSON line to stderr (``{"code": .., "kind": .., ...}``)
followed by a human-readable line.  Data goes to files; stdout carries only
``list`` output and ``--dry-run`` configs.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys
from pathlib import Path
from typing import Optional

from .core import (
    FreeSpace,
    LatticeError,
    LatticeGeometry,
    PowerLaw,
    Waveguide,
    model_to_dict,
    tilted_polarization,
)

log = logging.getLogger("latticespread")

THREADS_ENV = "LATTICESPREAD_THREADS"


class UsageError(Exception):
    """Bad invocation: exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# argument parsing helpers

_PI_RE = re.compile(r"^\s*([-+]?\d*\.?\d*(?:[eE][-+]?\d+)?)\s*\*?\s*pi\s*$")


def parse_number(text: str) -> float:
    """Float, optionally written as a multiple of pi (``0.3pi``, ``pi``)."""
    m = _PI_RE.match(text)
    if m:
        coef = m.group(1)
        coef = 1.0 if coef in ("", "+") else -1.0 if coef == "-" else float(coef)
        return coef * math.pi
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def parse_times(text: str) -> list[float]:
    try:
        return [parse_number(t) for t in text.split(",") if t.strip()]
    except argparse.ArgumentTypeError as exc:
        raise argparse.ArgumentTypeError(f"bad time list {text!r}: {exc}") from None


def parse_polarization(text: str):
    named = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}
    if text in named:
        return named[text]
    if text == "tilted":
        return tilted_polarization()
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"polarization must be x, y, z, tilted or three comma-separated numbers, got {text!r}")
    try:
        vec = [complex(p.replace(" ", "")) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad polarization {text!r}") from None
    norm = math.sqrt(sum(abs(c) ** 2 for c in vec))
    if norm == 0:
        raise argparse.ArgumentTypeError("polarization must be non-zero")
    return tuple(c / norm for c in vec)


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=_positive_int, default=None,
                   help=f"worker threads for FFTs (default ${THREADS_ENV} or 1)")
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--dry-run", action="store_true",
                   help="print the resolved configuration as JSON and exit")


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--model", choices=["powerlaw", "waveguide", "freespace"])
    g.add_argument("--alpha", type=parse_number, help="power-law exponent")
    g.add_argument("--k-a", dest="k_A", type=parse_number,
                   help="resonant wavenumber k_A*a (accepts e.g. 0.3pi)")
    g.add_argument("--polarization", type=parse_polarization,
                   help="x, y, z, tilted, or 'dx,dy,dz' (complex allowed, normalized)")


def _geometry_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("geometry")
    g.add_argument("--n", type=_positive_int, help="chain length")
    g.add_argument("--nx", type=_positive_int)
    g.add_argument("--ny", type=_positive_int)
    g.add_argument("--ax", type=parse_number, help="spacing along x (units of a)")
    g.add_argument("--ay", type=parse_number, help="spacing along y (units of a)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latticespread",
                     description="Single-excitation spreading on long-range lattices.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("run", help="run a builtin scenario or a config file into a bundle")
    p.add_argument("--scenario", help="builtin scenario name (see 'list')")
    p.add_argument("--config", type=Path, help="scenario JSON file")
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--name", help="override the scenario name (bundle directory)")
    p.add_argument("--times", type=parse_times)
    p.add_argument("--method", choices=["auto", "eig", "krylov"])
    _model_flags(p)
    _common(p)

    p = sub.add_parser("simulate", help="evolve a single-site excitation and write snapshots")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, default=Path("out/simulate"))
    p.add_argument("--times", type=parse_times)
    p.add_argument("--method", choices=["auto", "eig", "krylov"])
    p.add_argument("--initial-site", type=int)
    p.add_argument("--tol", type=float)
    _model_flags(p)
    _geometry_flags(p)
    _common(p)

    p = sub.add_parser("dispersion", help="1D dispersion table (optionally with derivatives)")
    p.add_argument("--config", type=Path)
    p.add_argument("--grid", type=_positive_int, default=4096)
    p.add_argument("--k-lo", type=parse_number, help="zone start (default -k_A or -pi)")
    p.add_argument("--derivs", action="store_true", help="add d1, d2 columns")
    p.add_argument("--out", type=Path, default=Path("dispersion.csv"))
    _model_flags(p)
    _common(p)

    p = sub.add_parser("hessian", help="2D dispersion, det-Hessian field and zero contours")
    p.add_argument("--config", type=Path)
    p.add_argument("--grid", type=_positive_int, default=256)
    p.add_argument("--cutoff", type=_positive_int, default=400,
                   help="real-space cutoff of the power-law sum")
    p.add_argument("--a-ho", type=parse_number, default=0.1,
                   help="Gaussian regularization length (free space)")
    p.add_argument("--ax", type=parse_number)
    p.add_argument("--ay", type=parse_number)
    p.add_argument("--out", type=Path, default=Path("out/hessian"))
    _model_flags(p)
    _common(p)

    p = sub.add_parser("spa", help="stationary-phase waveforms for a 1D model")
    p.add_argument("--config", type=Path)
    p.add_argument("--times", type=parse_times)
    p.add_argument("--n", type=_positive_int, help="number of sites in the x grid")
    p.add_argument("--subradiant-only", action="store_true")
    p.add_argument("--include-minima", action="store_true",
                   help="also predict peaks from minima of |d2 omega|")
    p.add_argument("--survival", type=float,
                   help="rescale each waveform to this total probability")
    p.add_argument("--out", type=Path, default=Path("out/spa"))
    _model_flags(p)
    _common(p)

    p = sub.add_parser("classify", help="label snapshot CSVs Split or Unsplit")
    p.add_argument("snapshots", nargs="+", type=Path, help="snapshot CSV files (>= 3 times)")
    p.add_argument("--window", type=_positive_int, default=7)
    p.add_argument("--threshold-frac", type=float, default=0.25)
    p.add_argument("--rate-floor", type=float)
    p.add_argument("--dip-frac", type=float, default=0.5)
    p.add_argument("--line", default="row",
                   choices=["row", "column", "diagonal", "antidiagonal", "radial"])
    p.add_argument("--out", type=Path, default=Path("classification.json"))
    _common(p)

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("--suite", choices=["nogo"], default="nogo")
    p.add_argument("--grid", type=_positive_int, default=4096, help="1D grid size")
    p.add_argument("--grid-2d", type=_positive_int, default=512, help="2D grid size")
    p.add_argument("--out", type=Path, help="write the JSON report here")
    _common(p)

    p = sub.add_parser("list", help="list builtin scenarios")
    _common(p)
    return parser


# ---------------------------------------------------------------------------
# config resolution (flags override config values)


def _conflict(a: str, b: str, detail: str = "") -> UsageError:
    return UsageError(f"conflicting inputs: {a} vs {b}" + (f" ({detail})" if detail else ""))


def _resolve_model(args, base, base_src: str):
    kind = getattr(args, "model", None)
    if kind and base is not None and base.kind != kind:
        raise _conflict(f"--model {kind}", base_src, f"model type {base.kind}")
    kind = kind or (base.kind if base is not None else None)
    if kind is None:
        raise UsageError("no model given: use --model or --config")
    alpha, k_A, pol = args.alpha, args.k_A, args.polarization
    if kind == "powerlaw":
        if k_A is not None or pol is not None:
            raise UsageError("--k-a/--polarization do not apply to the powerlaw model")
        alpha = alpha if alpha is not None else getattr(base, "alpha", None)
        if alpha is None:
            raise UsageError("powerlaw model needs --alpha")
        return PowerLaw(alpha)
    if alpha is not None:
        raise UsageError(f"--alpha does not apply to the {kind} model")
    k_A = k_A if k_A is not None else getattr(base, "k_A", None)
    if k_A is None:
        raise UsageError(f"{kind} model needs --k-a")
    if kind == "waveguide":
        if pol is not None:
            raise UsageError("--polarization does not apply to the waveguide model")
        return Waveguide(k_A)
    pol = pol if pol is not None else getattr(base, "polarization", (1.0, 0.0, 0.0))
    return FreeSpace(k_A, tuple(pol))


def _load_config(path: Path):
    from .scenarios import ScenarioConfig

    try:
        return ScenarioConfig.load(path)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None


def _resolve_geometry(args, base: Optional[LatticeGeometry], base_src: str) -> LatticeGeometry:
    if args.n is not None and (args.nx is not None or args.ny is not None):
        raise _conflict("--n", "--nx/--ny")
    counts = list(base.counts) if base is not None else [751, 1]
    spacings = list(base.spacings) if base is not None else [1.0, 1.0]
    if args.n is not None:
        if base is not None and base.dimension == 2:
            raise _conflict("--n (chain)", base_src, "2D geometry")
        counts = [args.n, 1]
    if args.nx is not None:
        counts[0] = args.nx
    if args.ny is not None:
        counts[1] = args.ny
    if args.ax is not None:
        spacings[0] = args.ax
    if args.ay is not None:
        spacings[1] = args.ay
    return LatticeGeometry(tuple(counts), tuple(spacings))


def _scenario_config(args, geometry_flags: bool):
    """ScenarioConfig from ``--scenario``/``--config`` plus flag overrides."""
    from .scenarios import ScenarioConfig, get_scenario

    scenario = getattr(args, "scenario", None)
    if scenario and args.config:
        raise _conflict(f"--scenario {scenario}", f"--config {args.config}")
    base, src = None, ""
    if scenario:
        base, src = get_scenario(scenario), f"--scenario {scenario}"
    elif args.config:
        base, src = _load_config(args.config), f"--config {args.config}"
    if base is None:
        data = {"name": args.command, "times": None}
    else:
        data = base.to_dict()
    model = _resolve_model(args, base.model if base else None, src)
    data["model"] = model_to_dict(model)
    if geometry_flags:
        geo = _resolve_geometry(args, base.geometry if base else None, src)
    elif base is not None:
        geo = base.geometry
    else:
        raise UsageError("run needs --scenario or --config")
    data["geometry"] = geo.to_dict()
    if getattr(args, "name", None):
        data["name"] = args.name
    if args.times is not None:
        data["times"] = args.times
    if data.get("times") is None:
        raise UsageError("no times given: use --times or --config")
    if args.method is not None:
        data["method"] = args.method
    if getattr(args, "initial_site", None) is not None:
        data["initial_site"] = args.initial_site
    if getattr(args, "tol", None) is not None:
        data["tol"] = args.tol
    if isinstance(model, Waveguide) and geo.dimension != 1:
        raise UsageError("the waveguide model needs a 1D chain")
    return ScenarioConfig.from_dict(data)


def _model_only(args):
    """Model for commands that need no geometry; ``--config`` supplies defaults."""
    base, src = None, ""
    if getattr(args, "config", None):
        cfg = _load_config(args.config)
        base, src = cfg.model, f"--config {args.config}"
    return _resolve_model(args, base, src)


# ---------------------------------------------------------------------------
# commands


def _cmd_list(args) -> dict:
    from .scenarios import list_scenarios

    if args.dry_run:
        return {"command": "list"}
    for name, desc in list_scenarios():
        print(f"{name}\t{desc}")
    return {}


def _plan_run(args):
    cfg = _scenario_config(args, geometry_flags=False)
    return cfg, {"command": "run", "out": str(args.out), "config": cfg.to_dict()}


def _exec_run(args, cfg, threads):
    from .scenarios import run_scenario

    bundle = run_scenario(cfg, args.out, threads)
    log.info("bundle written to %s (label %s)", bundle.path, bundle.manifest["summary"]["label"])


def _plan_simulate(args):
    cfg = _scenario_config(args, geometry_flags=True)
    return cfg, {"command": "simulate", "out": str(args.out), "config": cfg.to_dict()}


def _exec_simulate(args, cfg, threads):
    from .dynamics import config_hash, evolve, write_snapshot_csv
    from .hamiltonian import build

    H = build(cfg.geometry, cfg.model)
    method = cfg.method if cfg.method != "auto" else ("eig" if H.n <= 2000 else "krylov")
    snaps = evolve(H, cfg.times, cfg.initial_site, method=method, tol=cfg.tol)
    args.out.mkdir(parents=True, exist_ok=True)
    cdict = cfg.to_dict()
    for s in snaps:
        write_snapshot_csv(s, args.out / f"t_{s.time:g}.csv", cfg.model, cdict,
                           method="exact-" + method)
    log.info("config hash %s", config_hash(cdict))


def _plan_dispersion(args):
    model = _model_only(args)
    if args.k_lo is not None:
        k_lo = args.k_lo
    else:
        k_lo = -math.pi if isinstance(model, PowerLaw) else -model.k_A
    if args.grid < 5:
        raise UsageError("--grid must be at least 5")
    eff = {"command": "dispersion", "model": model_to_dict(model), "grid": args.grid,
           "k_lo": k_lo, "derivs": bool(args.derivs), "out": str(args.out)}
    return (model, k_lo), eff


def _exec_dispersion(args, plan, threads):
    from .dispersion import dispersion_for, dispersion_grid_1d

    model, k_lo = plan
    grid = dispersion_grid_1d(dispersion_for(model), args.grid, k_lo)
    if args.out.parent != Path(""):
        args.out.parent.mkdir(parents=True, exist_ok=True)
    grid.write_csv(args.out, derivs=args.derivs)


def _plan_hessian(args):
    model = _model_only(args)
    if isinstance(model, Waveguide):
        raise UsageError("hessian needs a 2D model: powerlaw or freespace")
    kind = "powerlaw_2d" if isinstance(model, PowerLaw) else "regularized_2d"
    base_sp = [1.0, 1.0]
    if args.config:
        base_sp = list(_load_config(args.config).geometry.spacings)
    spacings = (args.ax if args.ax is not None else base_sp[0],
                args.ay if args.ay is not None else base_sp[1])
    if args.grid < 64:
        raise UsageError("--grid must be at least 64")
    eff = {"command": "hessian", "model": model_to_dict(model), "kind": kind,
           "grid": args.grid, "cutoff": args.cutoff, "a_ho": args.a_ho,
           "spacings": list(spacings), "out": str(args.out)}
    return (model, kind, spacings), eff


def _exec_hessian(args, plan, threads):
    from .scenarios import write_dispersion_2d

    model, kind, spacings = plan
    info = write_dispersion_2d(model, kind, args.out, args.grid, args.cutoff, args.a_ho, spacings)
    log.info("contours: %s", info)


def _plan_spa(args):
    base_times, base_n = None, 751
    if args.config:
        cfg = _load_config(args.config)
        base_times = cfg.times
        if cfg.geometry.dimension != 1:
            raise UsageError(f"--config {args.config} is 2D; spa supports 1D chains only")
        base_n = cfg.geometry.counts[0]
    model = _model_only(args)
    times = args.times if args.times is not None else base_times
    if not times:
        raise UsageError("spa needs --times")
    if any(t <= 0 for t in times):
        raise UsageError("spa times must be > 0")
    n = args.n if args.n is not None else base_n
    eff = {"command": "spa", "model": model_to_dict(model), "times": times, "n": n,
           "subradiant_only": bool(args.subradiant_only),
           "include_minima": bool(args.include_minima), "survival": args.survival,
           "out": str(args.out)}
    return (model, times, n), eff


def _exec_spa(args, plan, threads):
    from .dispersion import dispersion_for
    from .dynamics import config_hash
    from .spa import ToSurvival, predicted_peaks, spa_waveform

    model, times, n = plan
    disp = dispersion_for(model)
    k_lo = -math.pi if isinstance(model, PowerLaw) else -model.k_A
    x = LatticeGeometry.chain(n).positions()[:, 0]
    norm = ToSurvival(args.survival) if args.survival is not None else None
    args.out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(args.effective)
    preds = []
    for t in times:
        w = spa_waveform(disp, x, t, norm, subradiant_only=args.subradiant_only, k_lo=k_lo)
        w.meta["model"] = model_to_dict(model)
        w.write_csv(args.out / f"t_{t:g}.csv", chash)
        pk = predicted_peaks(disp, t, args.include_minima, args.subradiant_only, k_lo=k_lo)
        preds.append({"time": t, "peaks": [{"k": p.k, "v_g": p.v_g, "x": p.x,
                                            "direction": p.direction, "kind": p.kind}
                                           for p in pk]})
    with open(args.out / "predicted_peaks.json", "w") as fh:
        json.dump(preds, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plan_classify(args):
    for p in args.snapshots:
        if not p.exists():
            raise UsageError(f"snapshot file not found: {p}")
    if len(args.snapshots) < 3:
        raise UsageError("classify needs at least 3 snapshot files")
    eff = {"command": "classify", "snapshots": [str(p) for p in args.snapshots],
           "window": args.window, "threshold_frac": args.threshold_frac,
           "rate_floor": args.rate_floor, "dip_frac": args.dip_frac, "line": args.line,
           "out": str(args.out)}
    return None, eff


def _exec_classify(args, plan, threads):
    from .analysis import classify_spreading, packet_maxima, snapshot_digest
    from .dynamics import cross_section, read_snapshot_csv

    snaps = [read_snapshot_csv(p)[0] for p in args.snapshots]
    snaps.sort(key=lambda s: s.time)
    res = classify_spreading(snaps, args.window, args.threshold_frac, args.rate_floor,
                             args.dip_frac, args.line)
    payload = res.to_json([snapshot_digest(s) for s in snaps])
    last = cross_section(snaps[-1], args.line)
    payload["packet_maxima"] = packet_maxima(last.values, last.coords)
    with open(args.out, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    log.info("label %s", res.label)


def _plan_verify(args):
    return None, {"command": "verify", "suite": args.suite, "grid": args.grid,
                  "grid_2d": args.grid_2d, "out": str(args.out) if args.out else None}


class SuiteFailure(RuntimeError):
    pass


def _exec_verify(args, plan, threads):
    from .analysis import nogo_suite

    report = nogo_suite(args.grid, args.grid_2d)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    failed = [r["dispersion"] for r in report["moments"] + report["gauss_bonnet"] if not r["pass"]]
    if failed:
        raise SuiteFailure(f"nogo suite failed for: {', '.join(failed)}")
    log.info("nogo suite passed (%d 1D, %d 2D cases)",
             len(report["moments"]), len(report["gauss_bonnet"]))


_PLANNERS = {
    "run": _plan_run,
    "simulate": _plan_simulate,
    "dispersion": _plan_dispersion,
    "hessian": _plan_hessian,
    "spa": _plan_spa,
    "classify": _plan_classify,
    "verify": _plan_verify,
}

_EXECUTORS = {
    "run": _exec_run,
    "simulate": _exec_simulate,
    "dispersion": _exec_dispersion,
    "hessian": _exec_hessian,
    "spa": _exec_spa,
    "classify": _exec_classify,
    "verify": _exec_verify,
}


# ---------------------------------------------------------------------------
# entry point


def _report(code: int, kind: str, exc: BaseException, **extra) -> int:
    msg = str(exc).replace("\n", " ")
    record = {"code": code, "kind": kind, "type": type(exc).__name__, "message": msg, **extra}
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
    sys.stderr.write(f"latticespread: {kind} error: {msg}\n")
    return code


def _kind(exc: BaseException) -> str:
    import numpy as np

    from .dynamics import PropagationError

    numeric = (ArithmeticError, PropagationError, np.linalg.LinAlgError)
    return "numerical" if isinstance(exc, numeric) else "runtime"


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env is None or env == "":
        return 1
    try:
        return _positive_int(env)
    except argparse.ArgumentTypeError as exc:
        raise UsageError(f"{THREADS_ENV}={env!r}: {exc}") from None


def main(argv=None) -> int:
    """Run the CLI; returns the process exit code."""
    from .scenarios import ScenarioError

    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s", force=True)
        threads = _threads(args)
        if args.command == "list":
            eff = _cmd_list(args)
            if args.dry_run:
                print(json.dumps({**eff, "threads": threads}, indent=2, sort_keys=True))
            return 0
        try:
            plan, eff = _PLANNERS[args.command](args)
        except LatticeError as exc:
            raise UsageError(str(exc)) from exc
        eff["threads"] = threads
        args.effective = eff
        if args.dry_run:
            print(json.dumps(eff, indent=2, sort_keys=True))
            return 0
    except UsageError as exc:
        return _report(1, "usage", exc)

    from .hamiltonian import set_fft_workers

    set_fft_workers(threads)
    try:
        _EXECUTORS[args.command](args, plan, threads)
    except ScenarioError as exc:
        return _report(2, _kind(exc.cause), exc.cause, stage=exc.stage)
    except KeyboardInterrupt as exc:
        return _report(2, "runtime", exc)
    except Exception as exc:  # noqa: BLE001 - every failure must map to an exit code
        log.debug("traceback", exc_info=True)
        return _report(2, _kind(exc), exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
