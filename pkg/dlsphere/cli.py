import argparse
import json
import logging
import sys
from typing import List, Optional

from .core import BudgetError, ConfigError, DimensionError, UnsupportedConstellationError
from .harness import cmd_ber, cmd_complexity, cmd_decode, cmd_gen_data, cmd_train
from .records import DEFAULT_PROFILE, PROFILES, ExperimentConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_IO = 4


def _number_list(kind):
    def parse(text: str):
        try:
            return [kind(part) for part in text.split(',') if part.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(f'expected comma separated numbers, got {text!r}') from e
    return parse


def _experiment_flags() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    source = parent.add_mutually_exclusive_group()
    source.add_argument('--config', help='JSON experiment config')
    source.add_argument('--profile', choices=PROFILES,
                        help='built-in config used when --config is not given. Defaults to "desk".')
    parent.add_argument('--seed', type=int, help='override the config seed')
    parent.add_argument('--out', help='override the output directory')
    parent.add_argument('--snr', type=_number_list(float), help='SNR grid in dB, e.g. "8,12,16"')
    parent.add_argument('--q', type=_number_list(int), help='number of radii, e.g. "3" or "3,10"')
    parent.add_argument('--trials', type=int, help='Monte Carlo trials per SNR point')
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='dlsphere',
                                     description='Sphere decoding with learned search radii')
    parser.add_argument('-v', '--verbose', action='store_true', help='log at DEBUG level')
    commands = parser.add_subparsers(dest='command', required=True)
    experiment = _experiment_flags()
    commands.add_parser('gen-data', parents=[experiment],
                        help='generate labelled datasets, one per SNR point and q')
    commands.add_parser('train', parents=[experiment], help='train one radius network per dataset')
    commands.add_parser('ber', parents=[experiment], help='bit error rate of every detector')
    commands.add_parser('complexity', parents=[experiment],
                        help='measured and expected decoding cost of SDIRS and DL-SD')
    decode = commands.add_parser('decode', help='decode one observation with a trained model')
    decode.add_argument('--model', required=True, help='trained model file')
    decode.add_argument('--observation', required=True, help='observation file')
    decode.add_argument('--mode', choices=('se', 'fp'), default='se', help='enumeration order')
    return parser


def load_config(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.load(args.config)
    else:
        config = ExperimentConfig.profile(args.profile or DEFAULT_PROFILE)
    return config.with_overrides(seed=args.seed, out_dir=args.out, snr_grid_db=args.snr, q=args.q,
                                 trials=args.trials)


def run(args) -> None:
    if args.command == 'decode':
        report = cmd_decode(args.model, args.observation, args.mode)
        print(json.dumps(report.to_record(), sort_keys=True))
        return
    config = load_config(args)
    logging.info(f'{args.command}: {config:s}')
    if args.command == 'gen-data':
        outputs = cmd_gen_data(config)
    elif args.command == 'train':
        outputs = [outcome.model_path for outcome in cmd_train(config)]
    elif args.command == 'ber':
        outputs = [cmd_ber(config)]
    else:
        outputs = list(cmd_complexity(config))
    for path in outputs:
        print(path)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(levelname)s %(message)s')
    try:
        run(args)
    except BudgetError as e:
        logging.error(str(e))
        return EXIT_BUDGET
    except (ConfigError, DimensionError, UnsupportedConstellationError) as e:
        logging.error(str(e))
        return EXIT_CONFIG
    except OSError as e:
        logging.error(str(e))
        return EXIT_IO
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
