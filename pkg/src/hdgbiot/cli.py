"""Command-line entry point ``hdgbiot``.

Examples
--------
::

    hdgbiot --study spatial --degree 1 --levels 4 --out runs/k1
    hdgbiot --study temporal --degree 3 --dt-ladder "T/8,T/16,T/32" --out runs/dt
    hdgbiot --study properties --seed 7 --out runs/props
    hdgbiot --config study.cfg --degree 2

Settings from ``--config`` are applied first; explicit flags override them.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .properties import run_property_suite
from .study import PARAM_KEYS, STUDY_KINDS, StudyConfig, StudyError, rate_summary, read_config_file, run_spatial_study, run_temporal_study

log = logging.getLogger("hdgbiot")


_FLAG_HELP = {
    "study": "kind of run (default: spatial)",
    "degree": "polynomial degree k",
    "levels": "number of meshes in a spatial study",
    "coarse_n": "squares per side of the coarsest spatial mesh",
    "final_time": "final time T",
    "dt_ladder": 'time steps of a temporal study, e.g. "T/8,T/16,T/32"',
    "dt_scale": "spatial studies use dt = DT_SCALE * h^(k+2)",
    "temporal_mesh": "squares per side of the temporal-study mesh",
    "out": "output directory",
    "seed": "random seed of the property suite",
    "ah_sign": "sign of the a_h consistency terms (test hook; 1 is the method)",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hdgbiot", description="HDG Navier-Stokes/Biot convergence studies and property checks.")
    types = {"degree": int, "levels": int, "coarse_n": int, "temporal_mesh": int, "seed": int,
             "final_time": float, "dt_scale": float, "ah_sign": float}
    for key, text in _FLAG_HELP.items():
        flag = "--" + key.replace("_", "-")
        if key == "study":
            p.add_argument(flag, choices=STUDY_KINDS, help=text)
        else:
            p.add_argument(flag, type=types.get(key, str), help=text)
    p.add_argument("--dump-fields", action="store_true", default=None, help="write final coefficients of every level")
    for key in PARAM_KEYS:
        p.add_argument("--" + key.replace("_", "-"), type=float, help=f"override model parameter {key}")
    p.add_argument("--config", help="file of 'key = value' lines; flags override it")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def config_from_args(args) -> StudyConfig:
    values = read_config_file(args.config) if args.config else {}
    for key in list(_FLAG_HELP) + ["dump_fields"] + list(PARAM_KEYS):
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    return StudyConfig.from_mapping(values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = config_from_args(args)
    except (OSError, ValueError) as exc:
        print(f"hdgbiot: invalid configuration: {exc}", file=sys.stderr)
        return 2
    try:
        if config.study == "properties":
            report = run_property_suite(config)
            for c in report.failures():
                print(f"FAIL {c.name}: {c.value:.3e} (required {c.relation} {c.tolerance:.1e})")
            print(f"{len(report.checks) - len(report.failures())} of {len(report.checks)} checks passed; reports in {config.out}")
            return 0 if report.passed else 1
        runner = run_spatial_study if config.study == "spatial" else run_temporal_study
        report = runner(config)
    except StudyError as exc:
        print(f"hdgbiot: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"hdgbiot: {exc}", file=sys.stderr)
        return 2
    print(f"final rates: {rate_summary(report)}; reports in {config.out}")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
