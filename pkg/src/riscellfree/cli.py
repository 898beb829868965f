"""Command-line entry point: ``riscellfree <experiment> [options]``."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import RisCellFreeError
from .runner import KINDS, ExperimentSpec, run
from .scenario import PRESETS, VARIANTS, load_config, preset


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _pairs(text):
    out = []
    for item in text.split(","):
        dh, _, dv = item.partition("x")
        out.append((float(dh), float(dv or dh)))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riscellfree", description=__doc__)
    parser.add_argument("experiment", choices=KINDS)
    src = parser.add_mutually_exclusive_group()
    src.add_argument("--config", help="YAML configuration file")
    src.add_argument("--preset", choices=sorted(PRESETS), default=None, help="named configuration (default: desk)")
    parser.add_argument("--full-scale", action="store_true", help="use the full-size preset instead of the desk one")
    parser.add_argument("--seed", type=int, default=None, help="master seed (default: from the configuration)")
    parser.add_argument("--trials", type=int, default=1000, help="Monte Carlo trials per point")
    parser.add_argument("--realizations", type=int, default=1, help="network drops")
    parser.add_argument("--out", default=None, help="output directory for samples.csv and report.json")
    parser.add_argument("--variants", default="ris_cellfree", help=f"comma-separated subset of {','.join(VARIANTS)}")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--p-grid", type=_floats, default=None, help="unblocked probabilities for sweep_blocking")
    parser.add_argument("--sizes", type=_pairs, default=None, help="element sizes in wavelengths, e.g. 0.25x0.25,0.5x0.5")
    parser.add_argument("--spacings", type=_floats, default=None, help="element spacings in wavelengths for fixed_area")
    parser.add_argument("--m-list", type=_ints, default=None, help="ascending AP counts for asymptotics")
    return parser


def spec_from_args(args) -> ExperimentSpec:
    if args.config:
        cfg = load_config(args.config)
    else:
        name = args.preset or ("full" if args.full_scale else "desk")
        cfg = preset(name)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    params = {}
    for key in ("p_grid", "sizes", "spacings", "m_list"):
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    return ExperimentSpec(
        kind=args.experiment,
        config=cfg,
        variants=tuple(v.strip() for v in args.variants.split(",") if v.strip()),
        trials=args.trials,
        realizations=args.realizations,
        seed=cfg.seed,
        out=args.out,
        threads=args.threads,
        params=params,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = run(spec_from_args(args))
    except (RisCellFreeError, OSError, ValueError) as exc:
        record = {"status": "error", "type": type(exc).__name__, "message": str(exc)}
        path = getattr(exc, "path", None)
        if path is not None:
            record["field"] = path
        print(json.dumps(record), file=sys.stderr)
        return 2
    if not args.out:
        sys.stdout.write(result.json_text())
    return 0


if __name__ == "__main__":
    sys.exit(main())
