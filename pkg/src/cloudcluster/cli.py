# ************************************************************
# Copyright (c) 2020, Kyle Williams - All Rights Reserved.
# You may use, distribute and modify this code under the
# terms of the BSD-3 license. You should have received a copy
# of the BSD-3 license with this file.
# If not, visit: https://opensource.org/licenses/BSD-3-Clause
# ************************************************************
import argparse
import logging
import sys

import yaml

from cloudcluster.experiment import ConfigError, ExperimentConfig, OutputError, emit_csv, read_config, run_experiment
from cloudcluster.optimizer import DEFAULT_CAPS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloudcluster",
        description="Optimize cluster thresholds and emit expected-loss curves from a YAML config."
    )
    parser.add_argument("config", help="Path to YAML experiment configuration.")
    parser.add_argument("-o", "--output", default="curves.csv", help="CSV output path.")
    parser.add_argument("--seed", type=int, help="Override the config seed.")
    parser.add_argument("--cluster-cap", type=int, help="Largest cluster evaluated exactly.")
    parser.add_argument("--fc-cap", type=int, help="Largest cluster count evaluated exactly at the fusion center.")
    parser.add_argument("--curves", nargs="+", help="Curves to compute.")
    parser.add_argument("--trials", type=int, help="Monte Carlo trials for the exact_monte_carlo curve.")
    parser.add_argument("--jobs", type=int, help="Parallel workers over sweep points.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level.")
    return parser


## Apply command line overrides to the raw config mapping.
def apply_overrides(data: dict, args) -> dict:
    data = dict(data or {})
    for flag, key in (("seed", "seed"), ("curves", "curves"), ("trials", "trials"), ("jobs", "n_jobs")):
        if getattr(args, flag) is not None:
            data[key] = getattr(args, flag)
    caps = data.get("caps", DEFAULT_CAPS)
    if isinstance(caps, dict):
        caps = (caps.get("cluster", DEFAULT_CAPS[0]), caps.get("fc", DEFAULT_CAPS[1]))
    if args.cluster_cap is not None:
        data["caps"] = caps = [args.cluster_cap, list(caps)[1]]
    if args.fc_cap is not None:
        data["caps"] = [list(caps)[0], args.fc_cap]
    return data


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    try:
        data = read_config(args.config)
    except OSError as error:
        print("Could not read " + args.config + ": " + str(error.strerror or error), file=sys.stderr)
        return EXIT_IO
    except yaml.YAMLError as error:
        print("Could not parse " + args.config + ": " + str(error), file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as error:
        print(str(error), file=sys.stderr)
        return EXIT_CONFIG

    try:
        config = ExperimentConfig.from_dict(apply_overrides(data, args))
    except ConfigError as error:
        print(str(error), file=sys.stderr)
        return EXIT_CONFIG

    try:
        emit_csv(run_experiment(config), args.output)
    except OutputError as error:
        print(str(error), file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
