"""Command line entry point: ``pyfwdrates [options] {simulate,estimate,solve,value,check,all}``."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from . import __version__
from .pipeline import FWR_PIPELINE, STAGES


def _parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="pyfwdrates",
        description="Simulate a multi-state model, estimate forward/backward transition rates and value cash flows.",
    )
    parser.add_argument("stage", nargs="?", default="all", choices=STAGES + ("all",),
                        help="stage to run; later stages read earlier artifacts from --out (default: all)")
    parser.add_argument("--config", default="", help="YAML or JSON run configuration")
    parser.add_argument("--config-url", default="", help="URL of a run configuration")
    parser.add_argument("--out", default="", help="output directory (overrides output.dir and FWR_OUT)")
    parser.add_argument("--threads", type=int, default=0, help="joblib workers")
    parser.add_argument("--strict-determinism", action="store_true",
                        help="serial reductions, byte-identical reports across runs")
    parser.add_argument("--dump-surfaces", action="store_true", help="write every surface as CSV")
    parser.add_argument("--dump-paths", type=int, nargs="?", const=10, default=-1, metavar="N",
                        help="write the first N paths as CSV (default N: 10)")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    args = _parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    pipe = FWR_PIPELINE(path_to_config=args.config, url_to_config=args.config_url, out_dir=args.out,
                        threads=args.threads, strict=args.strict_determinism,
                        dump_surfaces=args.dump_surfaces, dump_paths=args.dump_paths)
    if pipe.ok:
        pipe.run(args.stage)
    if pipe.error:
        print(f"pyfwdrates: {pipe.reason}", file=sys.stderr)
    return abs(pipe.status_code)


if __name__ == "__main__":
    sys.exit(main())
