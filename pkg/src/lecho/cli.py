"""Command-line front end: single signals, fits, batch sweeps and reports.

Subcommands map onto library calls:

``fid``      free induction decay of the configured system
``pcurve``   scaled polarization ``P^k(t)``
``echo``     Loschmidt echo of scheme 1 or 2
``otoc``     multiple-quantum coherence weights of the reversed evolution
``fit``      fit a curve CSV with the logistic or Abragam model
``sweep``    the full configured sweep, written as CSV/JSON into ``--out``
``report``   data tables (second moment, decay ordering, normalized echoes,
             rate relation) assembled from a directory of curve CSVs
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import config as cfgmod
from .analysis import (
    FitError,
    fit_abragam,
    fit_linear_rate,
    fit_logistic,
    fit_rate_relation,
    half_height_time,
)
from .hamiltonians import PERTURBATION_MODELS, PerturbationSpec, native_t2
from .io import curve_to_csv, dumps, read_curve, write_bundle, write_text_atomic
from .protocols import (
    REFERENCE_K,
    EchoCurve,
    coherence_weights,
    fid_curve,
    normalize_to_reference,
    polarization_curve,
    scheme_echo_curve,
)
from .spin import SpinSystem

log = logging.getLogger("lecho")

#: Abragam fits of polarization curves use the initial decay down to this level.
ABRAGAM_FLOOR = 0.5


def _fit_pcurve(curve):
    return fit_abragam(curve, floor=ABRAGAM_FLOOR)


class CommandError(RuntimeError):
    """Failure reported to the user with exit code 1."""


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------

_WORKER_SYSTEM: Optional[SpinSystem] = None


def _init_worker(system_dict):
    global _WORKER_SYSTEM
    _WORKER_SYSTEM = SpinSystem.from_dict(system_dict)


def _run_task(task: dict) -> dict:
    system = _WORKER_SYSTEM
    times = np.asarray(task["times"])
    if task["kind"] == "pcurve":
        curve = polarization_curve(system, task["k"], times, mode=task["mode"], omega_e=task["omega_e"])
    else:
        pert = PerturbationSpec(task["model"], task["strength"], task["seed"])
        curve = scheme_echo_curve(system, task["scheme"], task["k"], times, perturbation=pert,
                                  placement=task["placement"], mode=task["mode"],
                                  omega_e=task["omega_e"])
    return dict(task, times=curve.times.tolist(), values=curve.values.tolist())


def _tasks(cfg: cfgmod.RunConfig) -> list[dict]:
    times = cfg.time_grid.values().tolist()
    common = {"mode": cfg.mode, "omega_e": cfg.omega_e, "times": times, "seed": cfg.seed}
    tasks = []
    pk = set()
    for sch in cfg.schemes:
        ks = list(sch.k)
        if REFERENCE_K[sch.scheme] not in ks:
            ks.append(REFERENCE_K[sch.scheme])
        for k in ks:
            if k > 0:
                pk.add(k)
            for s in cfg.perturbation.strengths:
                tasks.append(dict(common, kind="echo", scheme=sch.scheme, k=k, strength=s,
                                  model=cfg.perturbation.model,
                                  placement=cfg.perturbation.placement))
    pk.add(1.0)
    for k in sorted(pk):
        tasks.append(dict(common, kind="pcurve", scheme="p-curve", k=k, strength=0.0))
    return tasks


def _task_key(t: dict):
    return (0 if t["kind"] == "echo" else 1, str(t["scheme"]), t["k"], t["strength"])


def _curve_name(t: dict) -> str:
    if t["kind"] == "pcurve":
        return f"pcurve_k{t['k']:.4f}"
    return f"echo_s{t['scheme']}_k{t['k']:.4f}_sigma{t['strength']:.4f}"


def _execute(tasks: list[dict], system: SpinSystem, workers: int) -> list[dict]:
    if workers <= 1:
        _init_worker(system.to_dict())
        results = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(system.to_dict(),)) as pool:
            results = list(pool.map(_run_task, tasks))
    return sorted(results, key=_task_key)


def _safe_fit(fn, curve) -> tuple[Optional[dict], Optional[str]]:
    try:
        return fn(curve).to_dict(), None
    except (FitError, ValueError, np.linalg.LinAlgError) as exc:
        return None, str(exc)


def rate_relation_points(echoes: dict, t2: float, schemes) -> list[dict]:
    """``(x, y) = (T2^k / T_sigma, T2^k / T3^k)`` for every decaying curve.

    ``echoes`` maps ``(scheme, k, strength)`` to half-height times (or None).
    ``T_sigma`` is the half-height time of the scheme's reference curve,
    which is itself left out.
    """
    points = []
    for sch in schemes:
        strengths = sorted({key[2] for key in echoes if key[0] == sch.scheme})
        for s in strengths:
            t_sigma = echoes.get((sch.scheme, REFERENCE_K[sch.scheme], s))
            if t_sigma is None:
                continue
            for k in sorted(sch.k):
                t3 = echoes.get((sch.scheme, k, s))
                # the reference curve sits on y = x by construction
                if k <= 0 or k == REFERENCE_K[sch.scheme] or t3 is None:
                    continue
                t2k = t2 / k
                points.append({"scheme": sch.scheme, "k": k, "sigma_strength": s,
                               "T_sigma": t_sigma, "T3": t3, "T2k": t2k,
                               "x": t2k / t_sigma, "y": t2k / t3})
    return points


def _rate_fit(points: list[dict]) -> dict:
    out = {"A": None, "sqrtA": None, "points": points, "fit": None}
    if len(points) < 2:
        out["note"] = "fewer than two decaying curves; rate relation not fitted"
        return out
    fit = fit_rate_relation([p["x"] for p in points], [p["y"] for p in points])
    out.update(A=fit.params["A"], sqrtA=fit.derived["sqrtA"], fit=fit.to_dict())
    return out


def run(cfg: cfgmod.RunConfig) -> dict[str, str]:
    """Compute every configured curve and fit; return ``{filename: text}``."""
    system = cfg.system.build(cfg.seed)
    t2 = native_t2(system)
    log.info("system: %d sites, T2 = %.1f us, omega_e/2pi = %.2f kHz", system.n_sites, t2 * 1e6,
             cfg.omega_e / (2e3 * math.pi))
    tasks = _tasks(cfg)
    log.info("%d curves on %d time points with %d worker(s)", len(tasks), len(tasks[0]["times"]),
             cfg.workers)
    results = _execute(tasks, system, cfg.workers)

    files: dict[str, str] = {}
    curves, fits = [], []
    half_heights = {}
    second_moment = []
    for r in results:
        name = _curve_name(r)
        meta = {"scheme": r["scheme"], "k": r["k"], "mode": r["mode"], "sigma_strength": r["strength"]}
        curve = EchoCurve(r["times"], r["values"], meta=meta)
        if "csv" in cfg.outputs.formats:
            files[name + ".csv"] = curve_to_csv(curve, seed=cfg.seed)
        hh = half_height_time(curve)
        entry = {"name": name, "kind": r["kind"], "scheme": r["scheme"], "k": r["k"],
                 "sigma_strength": r["strength"], "n_points": len(curve), "half_height": hh}
        if r["kind"] == "echo":
            half_heights[(r["scheme"], r["k"], r["strength"])] = hh
            model, fn = "logistic", fit_logistic
        else:
            model, fn = "abragam", _fit_pcurve
        fit, err = _safe_fit(fn, curve) if (hh is not None or r["kind"] == "pcurve") else (
            None, "curve never reaches half height on this grid")
        entry["fit"] = {"model": model, "file": f"fit_{name}.json" if fit else None, "error": err}
        if fit is not None:
            fits.append({"curve": name, **fit})
            if "json" in cfg.outputs.formats:
                files[f"fit_{name}.json"] = dumps(fit)
            if r["kind"] == "pcurve":
                second_moment.append({"k": r["k"], "rate_trace": r["k"] / t2,
                                      "rate_abragam": fit["derived"]["inv_T2"]})
        curves.append(entry)

    sm = {"points": second_moment, "fit": None}
    if len(second_moment) >= 2:
        sm["fit"] = fit_linear_rate([p["k"] for p in second_moment],
                                    [p["rate_abragam"] for p in second_moment]).to_dict()
    summary = {
        "system": dict(system.to_dict(), T2=t2, seed=cfg.seed),
        "config": cfg.to_dict(),
        "curves": curves,
        "fits": fits,
        "second_moment": sm,
        "rate_relation": _rate_fit(rate_relation_points(half_heights, t2, cfg.schemes)),
    }
    files["summary.json"] = dumps(summary)
    return files


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


def report(paths: list) -> dict:
    """Data tables from curve CSVs found in ``paths`` (files or directories)."""
    csvs = []
    summary_t2 = None
    for p in map(Path, paths):
        if p.is_dir():
            csvs.extend(sorted(p.glob("*.csv")))
            s = p / "summary.json"
            if s.is_file():
                summary_t2 = json.loads(s.read_text()).get("system", {}).get("T2")
        elif p.is_file():
            csvs.append(p)
        else:
            raise CommandError(f"missing input {p}")
    if not csvs:
        raise CommandError("nothing to report: no curve CSV files in the inputs")
    curves = [read_curve(p) for p in csvs]
    pcurves = sorted((c for c in curves if c.meta["scheme"] == "p-curve"), key=lambda c: c.meta["k"])
    echoes = [c for c in curves if c.meta["scheme"] in (1, 2)]

    moment_rows = []
    for c in pcurves:
        fit, err = _safe_fit(_fit_pcurve, c)
        if fit is not None:
            moment_rows.append({"k": c.meta["k"], "inv_T2k": fit["derived"]["inv_T2"]})
    t2 = summary_t2
    if t2 is None:
        free = [p for p in moment_rows if p["k"] == 1.0]
        t2 = 1.0 / free[0]["inv_T2k"] if free else None

    ordering_rows, normalized_rows = [], []
    by_key = {}
    for c in echoes:
        key = (c.meta["scheme"], c.meta["k"], c.meta["sigma_strength"])
        by_key[key] = c
        ordering_rows.append({"scheme": key[0], "k": key[1], "sigma_strength": key[2],
                              "T3": half_height_time(c)})
    ordering_rows.sort(key=lambda r: (r["scheme"], r["sigma_strength"], r["k"]))
    for (scheme, k, s), c in sorted(by_key.items()):
        ref = by_key.get((scheme, REFERENCE_K[scheme], s))
        if ref is None or k == 0:
            continue
        norm = normalize_to_reference(c, ref, interpolate=True)
        for t, v, ok in zip(norm.times, norm.values, norm.valid):
            if ok:
                normalized_rows.append({"scheme": scheme, "k": k, "sigma_strength": s, "t_s": k * t, "value": v})

    tables = {"second_moment": {"points": moment_rows, "fit": None},
              "decay_ordering": ordering_rows, "normalized_echoes": normalized_rows}
    if len(moment_rows) >= 2:
        tables["second_moment"]["fit"] = fit_linear_rate(
            [p["k"] for p in moment_rows], [p["inv_T2k"] for p in moment_rows]).to_dict()
    if t2 is None:
        tables["rate_relation"] = {"A": None, "sqrtA": None, "points": [],
                                   "note": "T2 unknown: no summary.json and no k=1 p-curve"}
    else:
        hh = {(r["scheme"], r["k"], r["sigma_strength"]): r["T3"] for r in ordering_rows}
        schemes = [cfgmod.SchemeSpec(s, tuple(sorted({k for (sc, k, _) in hh if sc == s})))
                   for s in sorted({key[0] for key in hh})]
        tables["rate_relation"] = _rate_fit(rate_relation_points(hh, t2, schemes))
    return tables


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="geometry and perturbation seed")
    p.add_argument("--mode", choices=cfgmod.MODES, help="effective or microscopic propagation")
    p.add_argument("--workers", type=int, help="worker processes for sweeps")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lecho", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("fid", help="free induction decay")
    _common(p)

    p = sub.add_parser("pcurve", help="scaled polarization P^k(t)")
    _common(p)
    p.add_argument("--k", type=float, required=True)

    p = sub.add_parser("echo", help="Loschmidt echo")
    _common(p)
    p.add_argument("--scheme", type=int, choices=(1, 2), required=True)
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--strength", type=float, default=0.0, help="perturbation strength (units of 1/T2)")
    p.add_argument("--model", choices=PERTURBATION_MODELS, help="perturbation model")
    p.add_argument("--placement", choices=cfgmod.PLACEMENTS, help="perturbation placement")

    p = sub.add_parser("otoc", help="multiple-quantum coherence weights")
    _common(p)
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--t", type=float, required=True, help="evolution time per segment (s)")
    p.add_argument("--excitation", choices=("collective", "local"), default="collective")

    p = sub.add_parser("fit", help="fit a curve CSV")
    p.add_argument("--model", choices=("logistic", "abragam"), required=True)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, help="write the FitResult JSON here")
    p.add_argument("--floor", type=float, help="abragam: fit only the decay down to this fraction")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("sweep", help="run the configured sweep")
    _common(p)

    p = sub.add_parser("report", help="data tables from curve CSVs")
    p.add_argument("--input", nargs="*", default=[], help="CSV files or directories")
    p.add_argument("--out", type=Path, help="write the report JSON here")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    return cfgmod.apply_overrides(cfg, seed=args.seed, mode=args.mode, workers=args.workers,
                                  out=args.out)


def _emit_curve(curve: EchoCurve, cfg: cfgmod.RunConfig, name: str, args, label: str) -> None:
    for t, v in zip(curve.times, curve.values):
        print(f"t={t:.6e} s  {label}={v:.6f}")
    if args.out is not None:
        write_bundle(cfg.outputs.directory, {name + ".csv": curve_to_csv(curve, seed=cfg.seed)})


def _cmd_signal(args) -> None:
    cfg = _load_config(args)
    system = cfg.system.build(cfg.seed)
    times = cfg.time_grid.values()
    if args.command == "fid":
        _emit_curve(fid_curve(system, times), cfg, "fid", args, "F")
    elif args.command == "pcurve":
        curve = polarization_curve(system, args.k, times, mode=cfg.mode, omega_e=cfg.omega_e)
        _emit_curve(curve, cfg, f"pcurve_k{args.k:.4f}", args, "P")
    else:
        model = args.model or cfg.perturbation.model
        placement = args.placement or cfg.perturbation.placement
        pert = PerturbationSpec(model, args.strength, cfg.seed)
        curve = scheme_echo_curve(system, args.scheme, args.k, times, perturbation=pert,
                                  placement=placement, mode=cfg.mode, omega_e=cfg.omega_e)
        _emit_curve(curve, cfg, f"echo_s{args.scheme}_k{args.k:.4f}_sigma{args.strength:.4f}",
                    args, "M")


def _cmd_otoc(args) -> None:
    cfg = _load_config(args)
    system = cfg.system.build(cfg.seed)
    w = coherence_weights(system, args.k, args.t, mode=cfg.mode, omega_e=cfg.omega_e,
                          excitation=args.excitation)
    for q, v in w.items():
        print(f"q={q:+d}  w={v:.6e}")
    print(f"sum={sum(w.values()):.6f}")
    if args.out is not None:
        write_bundle(cfg.outputs.directory, {
            f"otoc_k{args.k:.4f}_t{args.t:.6e}.json": dumps({"k": args.k, "t": args.t, "weights": w})
        })


def _cmd_fit(args) -> None:
    if not args.input.is_file():
        raise CommandError(f"missing input file {args.input}")
    curve = read_curve(args.input)
    try:
        if args.model == "logistic":
            text = dumps(fit_logistic(curve))
        else:
            text = dumps(fit_abragam(curve, floor=args.floor))
    except FitError as exc:
        raise CommandError(f"fit failed: {exc}") from None
    if args.out is not None:
        write_text_atomic(args.out, text)
    sys.stdout.write(text)


def _cmd_sweep(args) -> None:
    cfg = _load_config(args)
    files = run(cfg)
    written = write_bundle(cfg.outputs.directory, files)
    print(f"wrote {len(written)} files to {cfg.outputs.directory}")


def _cmd_report(args) -> None:
    text = dumps(report(args.input))
    if args.out is not None:
        write_text_atomic(args.out, text)
    else:
        sys.stdout.write(text)


_COMMANDS = {"fid": _cmd_signal, "pcurve": _cmd_signal, "echo": _cmd_signal, "otoc": _cmd_otoc,
             "fit": _cmd_fit, "sweep": _cmd_sweep, "report": _cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        _COMMANDS[args.command](args)
    except cfgmod.ConfigError as exc:
        print(f"lecho: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (CommandError, ValueError, OSError) as exc:
        print(f"lecho: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
