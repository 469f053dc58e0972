"""Command-line entry point: ``actloc <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 input error, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .errors import ActlocError, FormatError, InvalidInputError

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3

logger = logging.getLogger("actloc")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    S = argparse.SUPPRESS
    g.add_argument("--config", default=S, help="TOML configuration file")
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--out-dir", dest="out_dir", default=S)
    g.add_argument("--threads", type=int, default=S, help="worker processes (0 = all cores)")
    g.add_argument("--engine", choices=("kde", "kmeans"), default=S)
    g.add_argument("--theta", type=float, default=S, help="KDE contribution threshold")
    g.add_argument("--min-size", dest="min_size", type=int, default=S, help="k-means minimum cluster size")
    g.add_argument("--min-events", dest="min_events", type=int, default=S)
    g.add_argument("-v", "--verbose", action="store_true", default=S)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    S = argparse.SUPPRESS
    parser = _Parser(prog="actloc", description="Activity-location detection from geo-tagged events.",
                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_, parents=[common])
        return sp

    sp = add("stats", "dataset statistics (users, events, in/out of region)")
    sp.add_argument("--events", default=S)
    sp = add("cluster", "detect clusters and cluster-count distributions")
    sp.add_argument("--events", default=S)
    sp = add("distances", "pairwise cluster distances, histogram and KS test")
    sp.add_argument("--events", default=S)
    sp.add_argument("--reference", dest="reference_distances", default=S)
    sp = add("transitions", "zone-to-zone transition matrix and comparison")
    sp.add_argument("--events", default=S)
    sp.add_argument("--zones", default=S)
    sp.add_argument("--reference", dest="reference_od", default=S)
    sp.add_argument("--all-days", dest="weekdays_only", action="store_false", default=S)
    sp = add("compare-zones", "share of users per zone against reference zone statistics")
    sp.add_argument("--events", default=S)
    sp.add_argument("--zones", default=S)
    sp.add_argument("--reference", dest="reference_zones", default=S)
    sp = add("breakdown", "users by the regions their clusters fall in")
    sp.add_argument("--events", default=S)
    sp.add_argument("--regions", default=S)
    sp.add_argument("--home", dest="home_region", default=S)
    sp = add("synth", "generate synthetic events with ground truth")
    sp.add_argument("synth_spec", nargs="?", default=S, help="JSON list of user specs")
    sp.add_argument("--users", dest="synth_users", type=int, default=S,
                    help="generate a random corpus of this many users instead")
    sp = add("score", "precision/recall/RMSE of detected clusters against ground truth")
    sp.add_argument("--clusters", default=S)
    sp.add_argument("--truth", default=S)
    sp.add_argument("--radius", dest="match_radius_m", type=float, default=S)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    command = args.pop("command")
    config_path = args.pop("config", None)
    verbose = args.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = pipeline.load_config(config_path, args)
        pipeline.run(command, cfg)
    except (InvalidInputError, FormatError, OSError, ActlocError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error: %s", exc)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
