"""Command-line entry point: ``rstopo <command> [flags]``.

Exit codes: 0 success, 2 usage, 3 unreadable or malformed input, 4 numeric
failure.  Errors are a single ``error code=<n> kind=<kind> message=<text>``
line on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .diagram import (DiagramFormatError, ModelConfig, PersistenceDiagram, ProjectedDiagram,
                      project, read_diagram, write_diagram)
from .estimation import FitError, FittedModel, OptimizerSettings, QuadratureSpec, fit
from .field import kde_grid, read_cloud, superlevel_h0, superlevel_h1, write_cloud, write_grid
from .inference import CORRECTIONS, order_stat_test, parameter_compare
from .pipeline import DEFAULT_BANDWIDTH, DEFAULT_GRID, modelled_diagram, two_circles_pipeline
from .replication import (ChainOptions, ReplicateEnsemble, Schedule, read_ensemble_diagrams,
                          replicate)
from .svg import emit_svg

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NUMERIC = 0, 2, 3, 4


class InputError(Exception):
    """Missing or malformed input file."""


class UsageError(Exception):
    pass


# --- flag parsing helpers ---------------------------------------------------------

def _schedule(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"schedule must be nb,nr,nR integers: {text!r}")
    if len(parts) != 3 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"schedule must be three positive integers: {text!r}")
    return parts


def _grid(text: str) -> tuple[int, int]:
    try:
        parts = tuple(int(p) for p in text.lower().replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must be H,W: {text!r}")
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2 or min(parts) < 2:
        raise argparse.ArgumentTypeError(f"grid must be two integers >= 2: {text!r}")
    return parts


def _dim(text: str):
    if text == "unknown":
        return text
    try:
        d = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--dim must be a positive integer or 'unknown': {text!r}")
    if d < 1:
        raise argparse.ArgumentTypeError("--dim must be positive")
    return d


def _corrections(text: str) -> tuple[str, ...]:
    names = tuple(c.strip() for c in text.split(",") if c.strip())
    bad = [c for c in names if c not in CORRECTIONS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"unknown correction(s) {bad}; choose from {sorted(CORRECTIONS)}")
    return names


def _positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number: {text!r}")
    return v


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--K", type=int, default=2, help="largest cluster-term order (default 2)")
    p.add_argument("--delta-star", type=_positive_float, default=1.0,
                   help="interaction-distance tuning constant (default 1)")
    p.add_argument("--dim", type=_dim, default=2, help="data dimension or 'unknown' (default 2)")


def _chain_flags(p: argparse.ArgumentParser, default_schedule=(500, 20, 50)) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--schedule", type=_schedule, default=default_schedule,
                   help="block length, blocks per chain, chains: nb,nr,nR (default 500,20,50)")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                   help="parallel chains (results do not depend on this)")
    p.add_argument("--xbar", choices=("live", "frozen"), default="live")
    p.add_argument("--order", choices=("sequential", "shuffled"), default="sequential")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rstopo", description="Replicate and test persistence diagrams.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo-two-circles", help="full pipeline on a sampled two-circles cloud")
    _model_flags(p)
    _chain_flags(p)
    p.add_argument("--bandwidth", type=_positive_float, default=DEFAULT_BANDWIDTH)
    p.add_argument("--grid", type=_grid, default=DEFAULT_GRID)
    p.add_argument("--J", type=int, default=5, help="number of order statistics (default 5)")
    p.add_argument("--essential", choices=("close", "exclude"), default="close")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("pd", help="point cloud -> KDE -> superlevel persistence diagram")
    p.add_argument("cloud", type=Path, help="CSV with header x,y")
    p.add_argument("--bandwidth", type=_positive_float, default=DEFAULT_BANDWIDTH)
    p.add_argument("--grid", type=_grid, default=DEFAULT_GRID)
    p.add_argument("--degree", type=int, choices=(0, 1), default=None,
                   help="only this degree (default: both)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("fit", help="diagram -> fitted model JSON")
    p.add_argument("diagram", type=Path)
    _model_flags(p)
    p.add_argument("--degree", type=int, default=None, help="expected degree (default: from file)")
    p.add_argument("--essential", choices=("close", "exclude"), default="exclude")
    p.add_argument("--seed", type=int, default=0, help="jitter seed for the extra starts")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("replicate", help="model + diagram -> replicate ensemble directory")
    p.add_argument("diagram", type=Path)
    p.add_argument("model", type=Path, help="model.json written by 'fit'")
    p.add_argument("--essential", choices=("close", "exclude"), default="exclude")
    _chain_flags(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("test", help="diagram + ensemble -> order-statistic p-values")
    p.add_argument("diagram", type=Path)
    p.add_argument("ensemble", type=Path, help="directory written by 'replicate'")
    p.add_argument("--J", type=int, default=5)
    p.add_argument("--essential", choices=("close", "exclude"), default="exclude")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("compare", help="two diagrams -> per-parameter tests")
    p.add_argument("diagram_a", type=Path)
    p.add_argument("diagram_b", type=Path)
    _model_flags(p)
    _chain_flags(p)
    p.add_argument("--alpha", type=_positive_float, default=0.05)
    p.add_argument("--corrections", type=_corrections, default=("bh", "bonferroni"))
    p.add_argument("--essential", choices=("close", "exclude"), default="exclude")
    p.add_argument("--out", type=Path, required=True)
    return ap


# --- helpers ------------------------------------------------------------------------

def _json_dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _manifest(args: argparse.Namespace, out: Path, extra: dict | None = None) -> None:
    flags = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "workers"):
            continue
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, tuple):
            v = list(v)
        flags[k] = v
    manifest = {"version": __version__, "command": args.command, "flags": flags}
    if extra:
        manifest.update(extra)
    _json_dump(manifest, out / "run.json")


def _read_diagram(path: Path, degree=None) -> PersistenceDiagram:
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    return read_diagram(path, degree=degree)


def _modelled(pd: PersistenceDiagram, essential: str) -> PersistenceDiagram:
    out = modelled_diagram(pd, essential)
    if len(out) < 2:
        raise UsageError(f"diagram has {len(out)} modelled points; need at least 2")
    return out


def _schedule_of(args) -> Schedule:
    nb, nr, nR = args.schedule
    return Schedule(burn_in=args.burn_in, n_b=nb, n_r=nr, n_R=nR, seed=args.seed)


def _options_of(args) -> ChainOptions:
    return ChainOptions(xbar=args.xbar, order=args.order)


# --- commands ---------------------------------------------------------------------------

def cmd_demo_two_circles(args) -> int:
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    res = two_circles_pipeline(seed=args.seed, bandwidth=args.bandwidth, grid=args.grid,
                               schedule=_schedule_of(args), K=args.K, delta_star=args.delta_star,
                               data_dim=args.dim, J=args.J, essential=args.essential,
                               options=_options_of(args), workers=args.workers)
    write_cloud(res.cloud, out / "cloud.csv")
    write_grid(res.grid, out / "field.rstg")
    write_diagram(res.h0, out / "diagram_h0.csv")
    write_diagram(res.h1, out / "diagram_h1.csv")
    write_diagram(res.diagram, out / "diagram_modelled.csv")
    (out / "model.json").write_text(res.fitted.to_json() + "\n", encoding="utf-8")
    res.ensemble.write(out / "ensemble")
    report = res.report.to_dict()
    report["h1_prominent"] = res.h1_prominent
    report["acceptance_rate"] = res.ensemble.acceptance_rate
    _json_dump(report, out / "report.json")
    (out / "report.txt").write_text(res.report.table() + "\n", encoding="utf-8")
    emit_svg([res.h0.finite(), res.h1.finite()], out / "diagram.svg", "superlevel diagrams")
    emit_svg(res.report, out / "report.svg")
    _manifest(args, out)
    print(res.report.table())
    return EXIT_OK


def cmd_pd(args) -> int:
    if not args.cloud.is_file():
        raise InputError(f"no such file: {args.cloud}")
    try:
        cloud = read_cloud(args.cloud)
    except ValueError as exc:
        raise InputError(f"{args.cloud}: {exc}") from exc
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    g = kde_grid(cloud, args.bandwidth, args.grid)
    degrees = (0, 1) if args.degree is None else (args.degree,)
    diagrams = []
    for k in degrees:
        pd = superlevel_h0(g) if k == 0 else superlevel_h1(g)
        write_diagram(pd, out / f"diagram_h{k}.csv")
        diagrams.append(pd.finite())
        print(f"degree {k}: {len(pd)} points ({int(pd.essential.sum())} essential)")
    emit_svg(diagrams, out / "diagram.svg", "superlevel diagrams")
    _manifest(args, out)
    return EXIT_OK


def cmd_fit(args) -> int:
    pd = _modelled(_read_diagram(args.diagram, args.degree), args.essential)
    ppd = project(pd)
    cfg = ModelConfig.for_diagram(ppd, args.K, args.delta_star, args.dim, pd.degree)
    fm = fit(ppd, cfg, settings=OptimizerSettings(jitter_seed=args.seed))
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.json").write_text(fm.to_json() + "\n", encoding="utf-8")
    _manifest(args, out)
    th = fm.theta_hat
    print(" ".join(f"{n}={v:.6g}" for n, v in zip(th.names(), th.as_array())))
    return EXIT_OK


def _load_model(path: Path, ppd: ProjectedDiagram) -> FittedModel:
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    try:
        return FittedModel.from_dict(d, ppd)
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: missing or invalid field {exc}") from exc
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc


def cmd_replicate(args) -> int:
    pd = _modelled(_read_diagram(args.diagram), args.essential)
    ppd = project(pd)
    fm = _load_model(args.model, ppd)
    if not fm.converged:
        raise FitError(f"{args.model}: model did not converge")
    ens = replicate(ppd, fm, _schedule_of(args), workers=args.workers, options=_options_of(args))
    out = args.out
    ens.write(out)
    _manifest(args, out)
    print(f"{len(ens)} replicates, acceptance rate {ens.acceptance_rate:.4f}")
    return EXIT_OK


def cmd_test(args) -> int:
    pd = _modelled(_read_diagram(args.diagram), args.essential)
    if not (args.ensemble / "ensemble.json").is_file():
        raise InputError(f"no such file: {args.ensemble / 'ensemble.json'}")
    try:
        reps, meta = read_ensemble_diagrams(args.ensemble)
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.ensemble / 'ensemble.json'}:{exc.lineno}: {exc.msg}") from exc
    report = order_stat_test(pd, reps, args.J)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    _json_dump(report.to_dict(), out / "report.json")
    (out / "report.txt").write_text(report.table() + "\n", encoding="utf-8")
    emit_svg(report, out / "report.svg")
    _manifest(args, out, {"ensemble_seed": meta.get("seed")})
    print(report.table())
    return EXIT_OK


def cmd_compare(args) -> int:
    pd_a = _modelled(_read_diagram(args.diagram_a), args.essential)
    pd_b = _modelled(_read_diagram(args.diagram_b), args.essential)
    if pd_a.degree != pd_b.degree:
        raise UsageError(f"diagrams have different degrees ({pd_a.degree}, {pd_b.degree})")
    rep = parameter_compare(pd_a, pd_b, args.K, args.delta_star, args.dim, _schedule_of(args),
                            args.alpha, args.corrections, options=_options_of(args),
                            workers=args.workers)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    _json_dump(rep.to_dict(), out / "report.json")
    (out / "report.txt").write_text(rep.table() + "\n", encoding="utf-8")
    _manifest(args, out)
    print(rep.table())
    return EXIT_OK


COMMANDS = {
    "demo-two-circles": cmd_demo_two_circles,
    "pd": cmd_pd,
    "fit": cmd_fit,
    "replicate": cmd_replicate,
    "test": cmd_test,
    "compare": cmd_compare,
}


def _fail(code: int, kind: str, msg: str) -> int:
    msg = " ".join(str(msg).split())
    print(f"error code={code} kind={kind} message={msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "workers", 1) < 1:
        return _fail(EXIT_USAGE, "usage", "--workers must be at least 1")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except (InputError, DiagramFormatError) as exc:
        return _fail(EXIT_PARSE, "parse", exc)
    except FitError as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)


if __name__ == "__main__":
    sys.exit(main())
