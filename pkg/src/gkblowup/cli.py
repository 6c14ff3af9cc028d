"""Command line: ``run``, ``verify`` and ``print-config-template``.

Exit status: 0 when every criterion passes, 1 on a failed verdict, 2 on a
configuration error.
"""

import argparse
import os
import sys

from .config import RunConfig, template
from .errors import ConfigInvalid, UnknownStage

# compile time dominates on grid-sized workloads; must be set before jax loads
_XLA_DEFAULT = "--xla_backend_optimization_level=0"


def _parser():
    p = argparse.ArgumentParser(prog="gkblowup", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run every stage"), ("verify", "run a single stage")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config", metavar="PATH", help="JSON run configuration (defaults if omitted)")
        s.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
        s.add_argument("--seed", metavar="N", type=int, help="random seed (overrides seed)")
        if name == "verify":
            s.add_argument("--stage", metavar="NAME", required=True,
                           help="model, lift, positivity, deform or convergence")
    sub.add_parser("print-config-template", help="print the default configuration")
    return p


def _load(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig.from_dict()
    if args.seed is not None:
        cfg = cfg.replace("seed", args.seed)
    return cfg


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "print-config-template":
        print(template())
        return 0
    try:
        cfg = _load(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    os.environ.setdefault("XLA_FLAGS", _XLA_DEFAULT)
    from .pipeline import STAGES, run_scenario

    out = args.out or cfg["output"]["dir"]
    stages = STAGES if args.command == "run" else (args.stage,)
    try:
        report, _ = run_scenario(cfg, out, stages)
    except UnknownStage as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for name, res in report["stages"].items():
        status = "pass" if res["passed"] else "FAIL"
        extra = f"  ({res['error']})" if res["error"] else ""
        print(f"{name:12s} {status}{extra}")
    if report["certified"]:
        print(f"certified (c, t) = ({report['certified']['c']!r}, {report['certified']['t']!r})")
    print(f"verdict: {report['verdict']}  ->  {os.path.join(out, 'report.json')}")
    return 0 if report["verdict"] == "pass" else 1


if __name__ == "__main__":
    sys.exit(main())
