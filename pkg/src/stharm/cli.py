"""Command-line runner: ``stharm list | describe NAME | run NAME-or-CONFIG [flags]``.

Exit codes: 0 when every assertion passes, 2 when one fails, 1 on errors,
64 for an unknown experiment or bad usage.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import os
import sys
import traceback
from typing import Optional, Sequence

from .errors import StharmError
from .experiments import OUTPUT_ENV, REGISTRY, ExperimentConfig, get_experiment, output_dir, write_outcome

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAILED = 2
EXIT_USAGE = 64


def _vector(text: str) -> tuple:
    return tuple(float(s) for s in str(text).replace(" ", "").split(",") if s)


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# key in [run] -> (config field, converter)
RUN_KEYS = {
    "seed": ("seed", int),
    "h": ("h", float),
    "paths": ("n_paths", int),
    "horizon": ("horizon", float),
    "r": ("R", float),
    "p": ("p", float),
    "q": ("q", float),
    "b": ("b", float),
    "x0": ("x0", _vector),
    "v": ("v", _vector),
    "drop_ricci": ("drop_ricci", _bool),
    "csv_times": ("csv_times", str),
    "inner": ("inner", str),
    "out": ("out", str),
}


def read_config(path: str) -> ExperimentConfig:
    """Parse an INI file with sections [experiment], [space], [target], [map] and [run].

    ``[map]`` takes ``id`` plus any map parameters (Python literals).
    """
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(path)
    if not parser.has_option("experiment", "name"):
        raise StharmError(f"{path}: missing [experiment] name")
    cfg = ExperimentConfig(parser.get("experiment", "name"))
    if parser.has_section("space"):
        sec = parser["space"]
        cfg.space = sec.get("id")
        cfg.space_dim = sec.getint("dim") if "dim" in sec else None
    if parser.has_section("target"):
        sec = parser["target"]
        cfg.target = sec.get("id")
        cfg.target_dim = sec.getint("dim") if "dim" in sec else None
    if parser.has_section("map"):
        sec = dict(parser["map"])
        cfg.map = sec.pop("id", None)
        cfg.map_params = {k: _literal(v) for k, v in sec.items()}
    if parser.has_section("run"):
        for key, raw in parser["run"].items():
            if key not in RUN_KEYS:
                raise StharmError(f"{path}: unknown key {key!r} in [run]")
            if raw.strip() == "":
                continue
            name, conv = RUN_KEYS[key]
            setattr(cfg, name, conv(raw))
    return cfg


def _columns_epilog() -> str:
    lines = ["CSV columns per experiment:"]
    for exp in REGISTRY.values():
        lines.append(f"  {exp.name}")
        lines += [f"    {k}: {v}" for k, v in exp.columns.items()]
    lines.append(f"Set {OUTPUT_ENV} to redirect output directories (a --out flag still wins).")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stharm", description="Stochastic analysis experiments for space-time harmonic maps."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list registered experiments")
    d = sub.add_parser("describe", help="show defaults and output columns of an experiment")
    d.add_argument("experiment")
    r = sub.add_parser(
        "run", help="run an experiment by name or from an INI config file",
        epilog=_columns_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    r.add_argument("target", metavar="EXPERIMENT|CONFIG", help="registry name or path to an .ini file")
    r.add_argument("--space", help="model space id (flat, sphere, hyperbolic, cigar)")
    r.add_argument("--space-dim", type=int)
    r.add_argument("--target", dest="target_id", help="target id (flat, sphere, hyperbolic)")
    r.add_argument("--target-dim", type=int)
    r.add_argument("--map", help="catalog map id")
    r.add_argument("--map-param", action="append", default=[], metavar="KEY=VALUE", help="map parameter (repeatable)")
    r.add_argument("--x0", type=_vector, help="start point, comma separated")
    r.add_argument("--v", type=_vector, help="direction, comma separated")
    r.add_argument("--paths", type=int, dest="n_paths")
    r.add_argument("--seed", type=int)
    r.add_argument("--h", type=float)
    r.add_argument("--horizon", type=float)
    r.add_argument("--R", type=float)
    r.add_argument("--p", type=float)
    r.add_argument("--q", type=float)
    r.add_argument("--b", type=float, help="ratio bound for the bounded-dilatation route")
    r.add_argument("--drop-ricci", action="store_true", default=None, help="remove the Ricci damping (negative control)")
    r.add_argument("--csv-times", choices=["final", "all"])
    r.add_argument("--inner", help="experiment repeated by the determinism check")
    r.add_argument("--out", help="output directory")
    r.add_argument("--quiet", action="store_true", help="do not print the summary")
    return parser


def _flag_config(name: str, args) -> ExperimentConfig:
    params = {}
    for item in args.map_param:
        if "=" not in item:
            raise StharmError(f"--map-param expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        params[k.strip()] = _literal(v.strip())
    return ExperimentConfig(
        name, space=args.space, space_dim=args.space_dim, target=args.target_id, target_dim=args.target_dim,
        map=args.map, map_params=params, x0=args.x0, v=args.v, seed=args.seed, h=args.h, n_paths=args.n_paths,
        horizon=args.horizon, R=args.R, p=args.p, q=args.q, b=args.b, drop_ricci=args.drop_ricci,
        csv_times=args.csv_times, inner=args.inner,
    )


def cmd_list(out=None) -> int:
    out = out or sys.stdout
    width = max(len(n) for n in REGISTRY)
    for exp in REGISTRY.values():
        print(f"{exp.name:<{width}}  {exp.summary}", file=out)
        print(f"{'':<{width}}  [{exp.anchor}]", file=out)
    return EXIT_OK


def cmd_describe(name: str, out=None) -> int:
    out = out or sys.stdout
    try:
        exp = get_experiment(name)
    except KeyError:
        print(f"unknown experiment {name!r}; see 'stharm list'", file=sys.stderr)
        return EXIT_USAGE
    print(exp.describe(), file=out)
    return EXIT_OK


def cmd_run(args, out=None) -> int:
    out = out or sys.stdout
    target = args.target
    try:
        if target.endswith(".ini") or os.path.isfile(target):
            base = read_config(target)
        else:
            base = ExperimentConfig(target)
    except (OSError, StharmError, ValueError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if base.experiment not in REGISTRY:
        print(f"unknown experiment {base.experiment!r}; see 'stharm list'", file=sys.stderr)
        return EXIT_USAGE
    exp = REGISTRY[base.experiment]
    try:
        cfg = exp.resolve(base.merged(_flag_config(base.experiment, args)))
        directory = output_dir(cfg, args.out)
        outcome = exp.run(cfg)
        write_outcome(outcome, directory, cfg)
    except StharmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except Exception:  # unexpected failures still map to the error exit code
        traceback.print_exc()
        return EXIT_ERROR
    if not args.quiet:
        for line in outcome.report.summary_lines():
            print(line, file=out)
        print(f"artifacts in {directory}", file=out)
    return EXIT_OK if outcome.report.passed else EXIT_FAILED


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command == "list":
        return cmd_list()
    if args.command == "describe":
        return cmd_describe(args.experiment)
    return cmd_run(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
