import argparse
import dataclasses
import sys

import torch

from .bench import cmd_bench
from .config import get_config, thread_cap
from .errors import ConfigError, DeterraError
from .logs import get_logger, set_level
from .pipeline import (
    cmd_collect,
    cmd_eval,
    cmd_finetune,
    cmd_fit,
    cmd_halfmoons,
    cmd_pretrain,
    store_config,
)
from .selftest import cmd_selftest
from .storage import get_storage

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_SELFTEST = 3

VERBS = ("collect", "fit", "pretrain", "finetune", "eval", "halfmoons", "selftest", "bench")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deterra", description="Delay-constrained CF-MIMO pretraining pipeline")
    parser.add_argument("verb", choices=VERBS)
    parser.add_argument("--config", default=None, help="YAML or JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="overrides the configured seed")
    parser.add_argument("--out", default=None, help="artifact directory (or S3 prefix)")
    parser.add_argument("--policy", default=None, help="policy tag under policies/ (eval, finetune warm start)")
    mode = parser.add_mutually_exclusive_group()
    mode.add_argument("--deterministic", dest="deterministic", action="store_true", default=None)
    mode.add_argument("--stochastic", dest="deterministic", action="store_false")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(args: argparse.Namespace) -> int:
    cfg = get_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed, seeds=[args.seed])
    threads = thread_cap()
    if threads is not None:
        torch.set_num_threads(threads)
    storage = get_storage(cfg.storage, args.out or cfg.output_dir)
    store_config(cfg, storage)

    if args.verb == "collect":
        cmd_collect(cfg, storage, cfg.seed)
    elif args.verb == "fit":
        cmd_fit(cfg, storage)
    elif args.verb == "pretrain":
        cmd_pretrain(cfg, storage, cfg.seed)
    elif args.verb == "finetune":
        cmd_finetune(cfg, storage, args.policy)
    elif args.verb == "eval":
        if not args.policy:
            raise ConfigError("eval needs --policy <tag> (a stored policy or 'lyapunov')")
        cmd_eval(cfg, storage, args.policy, cfg.seed, args.deterministic)
    elif args.verb == "halfmoons":
        cmd_halfmoons(cfg, storage, cfg.seed)
    elif args.verb == "selftest":
        if not cmd_selftest(cfg, cfg.seed).passed:
            return EXIT_SELFTEST
    elif args.verb == "bench":
        cmd_bench(cfg, storage)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        set_level("DEBUG")
    try:
        return run(args)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        return EXIT_CONFIG
    except DeterraError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
