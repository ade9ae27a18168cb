"""Command-line front end.

Exit codes::

    0  success
    1  unexpected internal error
    2  usage error (bad flags)
    3  invalid configuration (schema violation)
    4  parity mode requested with an incompatible scheme or initial state
    5  missing input file
    6  validation found mismatches
    7  data collapse or fit failed
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (SweepDataset, collapse, crossing_points, ensemble_rows,
                       fit_area_law, fit_log_profile, fit_time_growth)
from .circuit import AngleScheme, CircuitParams, run_ensemble
from .config import RunConfig, config_from_dict, load_config
from .exceptions import CollapseError, ConfigError, SchemeModeError
from .lattice import LatticeSpec
from .oracle import coupled_run

log = logging.getLogger("rbclab")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MODE = 4
EXIT_MISSING = 5
EXIT_VALIDATION = 6
EXIT_ANALYSIS = 7


# -- persistence ------------------------------------------------------------------


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out: Path, config: RunConfig, command: str, extra=None):
    out.mkdir(parents=True, exist_ok=True)
    man = {"command": command, "rbclab_version": __version__, "timestamp": _now(),
           "master_seed": config.master_seed, "config": config.resolved()}
    if extra:
        man.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(man, fh, indent=2)


def _cell_name(L, p):
    return f"L{L}_p{p:.6f}"


def run_cell(params: CircuitParams, config: RunConfig, out: Path, workers=None):
    """One ensemble; per-trajectory JSON lines go to ``<out>/<cell>.jsonl``."""
    fh = None
    on_record = None
    if config.jsonl:
        fh = open(out / f"{_cell_name(params.lattice.L, params.p)}.jsonl", "w")

        def on_record(rec):
            fh.write(json.dumps({"seed": str(rec.seed),
                                 "values": {k: v.tolist() for k, v in rec.values.items()},
                                 "counts": list(rec.counts)}) + "\n")
    try:
        res = run_ensemble(params, config.n_traj, config.master_seed, workers, on_record)
    finally:
        if fh is not None:
            fh.close()
    return res


def sweep(config: RunConfig, out: Path, workers=None, command="sweep",
          progress=True) -> SweepDataset:
    """Run every (L, p) cell, skipping cells already completed in ``out``.

    Each finished cell is stored as ``cells/<cell>.json`` tagged with the
    params digest; ``results.csv`` is rebuilt from the cell files in axis
    order, so an interrupted sweep resumes to an identical CSV.
    """
    out.mkdir(parents=True, exist_ok=True)
    cells = out / "cells"
    cells.mkdir(exist_ok=True)
    write_manifest(out, config, command)
    rows = []
    for L in config.L:
        for p in config.p:
            params = config.params(L, p)
            path = cells / f"{_cell_name(L, p)}.json"
            cached = None
            if path.exists():
                with open(path) as fh:
                    cached = json.load(fh)
                if (cached.get("digest") != params.digest()
                        or cached.get("n_traj") != config.n_traj
                        or cached.get("master_seed") != config.master_seed):
                    cached = None
            if cached is None:
                if progress:
                    log.info("cell L=%d p=%.4f (%d trajectories)", L, p, config.n_traj)
                res = run_cell(params, config, out, workers)
                cached = {"digest": params.digest(), "n_traj": config.n_traj,
                          "master_seed": config.master_seed,
                          "rows": ensemble_rows(params, res)}
                tmp = path.with_suffix(".tmp")
                with open(tmp, "w") as fh:
                    json.dump(cached, fh)
                tmp.replace(path)
            rows.extend(cached["rows"])
    first = config.params(config.L[0], config.p[0])
    ds = SweepDataset(rows, {"scheme": json.dumps(first.scheme.to_dict()),
                             "dim": config.dim, "boundary": config.boundary,
                             "mode": first.mode, "measure": first.measure.value})
    ds.to_csv(out / "results.csv")
    return ds


# -- recipes ------------------------------------------------------------------------

P_GRID = [round(x, 4) for x in np.linspace(0.0, 1.0, 21)]


def _even(x, minimum=4):
    return max(minimum, 2 * int(round(x / 2)))


def recipe_configs(fig: str, scale: float = 1.0, n_traj: int | None = None) -> list[dict]:
    """Preset configs for each figure; ``scale`` multiplies the default sizes.

    At ``scale=1`` the largest size is a quarter of the largest one in the
    published figures; ``scale=4`` restores it.
    """
    s = lambda L: _even(L * scale)  # noqa: E731
    nt = n_traj
    if fig == "fig3":
        return [dict(name="fig3", dim=1, L=[s(64), s(128), s(256), s(512)], p=P_GRID,
                     observables=["magic_density", "mutual_magic_half"],
                     n_traj=nt or 1000)]
    if fig == "fig4":
        L = s(512)
        Ld = [s(128), s(256)]
        return [
            dict(name="fig4a", dim=1, L=[L], p=[0.5], observables=["mutual_magic_profile"],
                 n_traj=nt or 1000),
            *[dict(name=f"fig4b_L{x}", dim=1, L=[x], p=[0.5], n_traj=nt or 500,
                   observables=[{"name": "mutual_magic_half",
                                 "times": _log_times(2 * x)}]) for x in Ld],
        ]
    if fig == "fig5":
        return [dict(name="fig5", dim=1, boundary="open", L=[s(64), s(128), s(256)],
                     p=[round(x, 4) for x in np.linspace(0.35, 0.65, 13)],
                     observables=["topo_magic"], n_traj=nt or 1000)]
    if fig == "fig6":
        return [dict(name="fig6", dim=1, L=[s(64), s(128), s(256), s(512)], p=P_GRID,
                     scheme={"kind": "dilute", "theta": "pi/4", "q": "2/N"},
                     observables=["magic_total", "magic_density", "mutual_magic_half"],
                     n_traj=nt or 1000)]
    if fig == "fig7":
        return [dict(name="fig7", dim=2, L=[s(8), s(16), s(32)], p=P_GRID,
                     observables=["magic_density", "mutual_magic_half"], n_traj=nt or 200)]
    if fig == "fig8":
        L = _even(32 * scale, 8)
        return [dict(name="fig8", dim=2, L=[L], p=[0.75], n_traj=nt or 200,
                     observables=[{"name": "mutual_magic_profile",
                                   "region": list(range(1, L // 4 + 1))}])]
    if fig == "fig9":
        return [dict(name="fig9", dim=2, L=[s(8), s(16), s(32)], p=P_GRID,
                     scheme={"kind": "dilute", "theta": "pi/4", "q": "2/N"},
                     observables=["magic_total", "magic_density", "mutual_magic_half"],
                     n_traj=nt or 200)]
    raise ConfigError(f"unknown recipe {fig!r}")


def _log_times(t_max: int, per_octave: int = 4) -> list[int]:
    t = np.unique(np.round(2 ** np.arange(0, math.log2(t_max) + 1e-9, 1 / per_octave)))
    return sorted({int(x) for x in t} | {t_max})


def run_recipe(fig, scale, out: Path, n_traj=None, workers=None, seed=0) -> dict:
    report = {"recipe": fig, "scale": scale, "outputs": []}
    for d in recipe_configs(fig, scale, n_traj):
        d = dict(d, master_seed=seed, output=str(out / d["name"]))
        cfg = config_from_dict(d)
        ds = sweep(cfg, Path(cfg.output), workers, command=f"recipe {fig}")
        report["outputs"].append(cfg.output)
        if fig == "fig4" and d["name"] == "fig4a":
            c = ds.arrays("mutual_magic_profile")
            report["log_fit"] = fit_log_profile(c["x"], c["mean"], c["stderr"],
                                                L=cfg.L[0]).to_dict()
        elif fig == "fig4":
            c = ds.arrays("mutual_magic_half")
            report.setdefault("time_fits", {})[str(cfg.L[0])] = fit_time_growth(
                c["x"], c["mean"], c["stderr"]).to_dict()
        elif fig == "fig5":
            report["collapse"] = collapse(ds, "topo_magic").to_dict()
        elif fig == "fig7":
            report["crossings"] = crossing_points(ds, "mutual_magic_half")
        elif fig == "fig8":
            c = ds.arrays("mutual_magic_profile")
            report["area_fit"] = fit_area_law(c["x"], c["mean"], c["stderr"],
                                              L=cfg.L[0]).to_dict()
    with open(out / f"{fig}_report.json", "w") as fh:
        json.dump(report, fh, indent=2, default=float)
    return report


# -- commands -----------------------------------------------------------------------


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config)
    over = {"n_traj": args.n_traj, "master_seed": args.seed, "output": args.output}
    if getattr(args, "L", None):
        over["L"] = args.L
    if getattr(args, "p", None):
        over["p"] = args.p
    if getattr(args, "jsonl", False):
        over["jsonl"] = True
    return cfg.with_overrides(**over)


def cmd_run(args):
    cfg = _config_from_args(args)
    cfg = cfg.with_overrides(L=cfg.L[:1], p=cfg.p[:1])
    out = Path(cfg.output)
    write_manifest(out, cfg, "run")
    params = cfg.params(cfg.L[0], cfg.p[0])
    res = run_cell(params, cfg, out, args.workers)
    ds = SweepDataset(ensemble_rows(params, res))
    ds.to_csv(out / "results.csv")
    with open(out / "ensemble.json", "w") as fh:
        json.dump(res.to_dict(), fh, indent=2)
    for r in ds.rows:
        print(f"{r['observable']:>22s} x={r['x']:<8g} {r['mean']:.6g} +- {r['stderr']:.2g}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _config_from_args(args)
    sweep(cfg, Path(cfg.output), args.workers)
    print(Path(cfg.output) / "results.csv")
    return EXIT_OK


def cmd_dynamics(args):
    cfg = _config_from_args(args)
    obs = []
    for o in cfg.observables:
        name = o["name"] if isinstance(o, dict) else o
        obs.append(name)
    out = Path(cfg.output)
    rows = []
    for L in cfg.L:
        t_max = cfg.params(L, cfg.p[0]).t_max
        times = (list(range(0, t_max + 1, args.stride)) if args.stride
                 else _log_times(t_max))
        sub = cfg.with_overrides(L=[L], observables=[{"name": n, "times": times}
                                                     for n in obs])
        ds = sweep(sub, out / f"L{L}", args.workers, command="dynamics")
        rows.extend(ds.rows)
    SweepDataset(rows).to_csv(out / "results.csv")
    print(out / "results.csv")
    return EXIT_OK


def _dataset(path):
    if not Path(path).is_file():
        raise FileNotFoundError(f"input file {path} not found")
    return SweepDataset.from_csv(path)


def cmd_collapse(args):
    ds = _dataset(args.input)
    res = collapse(ds, args.observable, tuple(args.pc_range), tuple(args.nu_range),
                   p_window=tuple(args.p_window) if args.p_window else None)
    print(json.dumps({"p_c": res.p_c, "nu": res.nu, "quality": res.quality}))
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(res.to_dict(), fh)
    return EXIT_OK


def cmd_fit(args):
    ds = _dataset(args.input)
    c = ds.arrays(args.observable, L=args.L, p=args.p)
    if c["x"].size == 0:
        raise CollapseError("no rows match the requested observable/L/p")
    L = args.L or int(c["L"][0])
    boot = {"n_bootstrap": args.bootstrap, "random_state": 0}
    try:
        if args.kind == "log":
            res = fit_log_profile(c["x"], c["mean"], c["stderr"], L=L, **boot)
        elif args.kind == "time":
            res = fit_time_growth(c["x"], c["mean"], c["stderr"], **boot)
        else:
            res = fit_area_law(c["x"], c["mean"], c["stderr"], L=L, **boot)
    except ConfigError as e:
        raise CollapseError(str(e)) from None
    print(json.dumps(res.to_dict()))
    return EXIT_OK


_SCHEMES = {
    "fixed": lambda: AngleScheme.fixed(),
    "clifford": lambda: AngleScheme.fixed(0),
    "dilute": lambda: AngleScheme.dilute(0.5),
    "random": lambda: AngleScheme.random(),
}


def cmd_validate(args):
    if args.dim == 1:
        lat = LatticeSpec(1, args.sites, not args.open)
    else:
        L = int(round(math.sqrt(args.sites)))
        if L * L != args.sites:
            raise ConfigError("2D validation needs a square number of sites")
        lat = LatticeSpec(2, L, not args.open)
    params = CircuitParams(lat, args.p, _SCHEMES[args.scheme](), mode="full")
    steps = args.steps or 2 * lat.L
    bad = []
    n_checks = 0
    for seed in range(args.seeds):
        rep = coupled_run(params, seed, steps)
        n_checks += rep.n_checks
        if not rep.passed:
            bad.append(rep.to_dict())
    summary = {"params": params.to_dict(), "seeds": args.seeds, "n_steps": steps,
               "n_checks": n_checks, "failed_seeds": len(bad), "passed": not bad,
               "failures": bad}
    text = json.dumps(summary, indent=2, default=float)
    if args.report:
        Path(args.report).write_text(text)
    print(json.dumps({k: summary[k] for k in ("seeds", "n_checks", "failed_seeds",
                                               "passed")}))
    return EXIT_OK if not bad else EXIT_VALIDATION


def cmd_recipe(args):
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rep = run_recipe(args.figure, args.scale, out, args.n_traj, args.workers, args.seed)
    print(json.dumps({k: v for k, v in rep.items() if k != "outputs"}, default=float))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rbclab", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, cfg=True):
        if cfg:
            p.add_argument("config", help="YAML run configuration")
            p.add_argument("--L", type=int, nargs="+")
            p.add_argument("--p", type=float, nargs="+")
            p.add_argument("--n-traj", type=int)
            p.add_argument("--seed", type=int, help="master seed")
            p.add_argument("--output", "-o")
            p.add_argument("--jsonl", action="store_true",
                           help="write per-trajectory JSON lines")
        p.add_argument("--workers", type=int,
                       help="trajectory threads (default: $RBCLAB_WORKERS or 1)")

    p = sub.add_parser("run", help="single ensemble (first L and p of the config)")
    common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", help="grid over p x L, resumable")
    common(p)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("dynamics", help="time-resolved observables")
    common(p)
    p.add_argument("--stride", type=int, default=0,
                   help="sample every STRIDE steps (default: log-spaced times)")
    p.set_defaults(func=cmd_dynamics)

    p = sub.add_parser("collapse", help="finite-size-scaling collapse of a sweep CSV")
    p.add_argument("input")
    p.add_argument("--observable", default="topo_magic")
    p.add_argument("--pc-range", type=float, nargs=2, default=(0.3, 0.7))
    p.add_argument("--nu-range", type=float, nargs=2, default=(0.5, 3.0))
    p.add_argument("--p-window", type=float, nargs=2)
    p.add_argument("--report")
    p.set_defaults(func=cmd_collapse)

    p = sub.add_parser("fit", help="log-profile, time-growth or area-law fit")
    p.add_argument("input")
    p.add_argument("--kind", choices=("log", "time", "area"), required=True)
    p.add_argument("--bootstrap", type=int, default=0, metavar="N",
                   help="resample the points N times for the slope error")
    p.add_argument("--observable", required=True)
    p.add_argument("--L", type=int)
    p.add_argument("--p", type=float)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("validate", help="coupled runs against the dense reference")
    p.add_argument("--sites", type=int, default=6)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--dim", type=int, choices=(1, 2), default=1)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--scheme", choices=sorted(_SCHEMES), default="fixed")
    p.add_argument("--steps", type=int)
    p.add_argument("--open", action="store_true", help="open boundaries")
    p.add_argument("--report")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("recipe", help="preset reproducing one figure")
    p.add_argument("figure", choices=[f"fig{i}" for i in range(3, 10)])
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--n-traj", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", "-o", default="rbclab-recipes")
    common(p, cfg=False)
    p.set_defaults(func=cmd_recipe)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        return args.func(args)
    except SchemeModeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODE
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except CollapseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
