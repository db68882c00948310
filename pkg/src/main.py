"""
particleswarm - command-line entry point for the experiment commands.
"""
import argparse
import sys

from src.config import MAX_SEED, ExperimentConfig, load_config
from src.errors import ConfigError, DataError, ParticleSwarmError
from src.experiments import cmd_convergence_study, cmd_forecast, cmd_replication_study, cmd_simulate
from src.logger import get_logger

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def build_parser():
    parser = argparse.ArgumentParser(prog="particleswarm", description="Particle swarm filter experiments")
    commands = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file")
    common.add_argument("--out", required=True, help="output CSV path")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--workers", type=int, help="worker processes; never changes output bytes")

    simulate = commands.add_parser("simulate", parents=[common], help="simulate a data series")
    simulate.add_argument("--with-states", action="store_true", help="also write the latent states")

    forecast = commands.add_parser("forecast", parents=[common], help="swarm forecasts with intervals")
    forecast.add_argument("--data", required=True, help="input 't,y' CSV")
    forecast.add_argument("--estimator", choices=("hat", "check"), help="pre- or post-resampling estimates")

    replicate = commands.add_parser("replicate", parents=[common], help="replication study of the f2 estimate")
    replicate.add_argument("--data", help="input 't,y' CSV; simulated from the config when absent")
    replicate.add_argument("--drop-first", action="store_true", help="leave t = 1 out of the output")

    commands.add_parser("converge", parents=[common], help="N_X and N_theta convergence-rate study")
    return parser


def run(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = cfg.with_overrides(seed=args.seed, workers=args.workers)
    if cfg.workers < 1:
        raise ConfigError(f"must be at least 1, got {cfg.workers}", key="--workers")
    if not 0 <= cfg.seed <= MAX_SEED:
        raise ConfigError(f"must be in [0, {MAX_SEED}], got {cfg.seed}", key="--seed")

    if args.command == "simulate":
        cmd_simulate(cfg, args.out, with_states=args.with_states)
    elif args.command == "forecast":
        cmd_forecast(cfg, args.data, args.out, estimator=args.estimator)
    elif args.command == "replicate":
        cmd_replication_study(cfg, args.out, data_path=args.data, drop_first=args.drop_first)
    elif args.command == "converge":
        cmd_convergence_study(cfg, args.out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        return EXIT_CONFIG
    except DataError as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    except ParticleSwarmError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERICAL
    except OSError as e:
        logger.error(f"IO error: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
