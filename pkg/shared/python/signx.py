"""
Command-line entry point for the SignX pipeline.

    python shared/python/signx.py synth|train-stage1|train-stage2|compile|augment|train-cslr|decode|eval|prune-report|pipeline
        [--config PATH] [--seed INT] [--out DIR] [--resume] [--stage-scale {desk|paper-shapes}]
"""

import sys
import argparse

import utils
from runconfig import load_run_config
from stages import PIPELINE_ORDER, PRUNE_REPORT_STAGE, run_pipeline
from sxtypes import SCALE, SignXError


COMMANDS = PIPELINE_ORDER + [PRUNE_REPORT_STAGE, 'pipeline']


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog = 'signx', description = 'Latent-space sign language recognition pipeline')
    parser.add_argument('command', choices = COMMANDS, help = 'Stage to run, or "pipeline" for all stages in order')
    parser.add_argument('--config', default = None, help = 'Run configuration file ([section] / key = value)')
    parser.add_argument('--seed', type = int, default = None, help = 'Root seed (overrides [pipeline] seed)')
    parser.add_argument('--out', default = 'out', help = 'Artifact directory (default: out)')
    parser.add_argument('--resume', action = 'store_true', help = 'Skip completed stages and continue CSLR training')
    parser.add_argument('--stage-scale', choices = [s.value for s in SCALE], default = None, help = 'Model widths (default: desk)')
    return parser

def run(argv: list[str] | None = None) -> int:
    """
    Parse arguments and run the selected stage(s).

    Returns:
        int: 0 on success, 1 on a pipeline error (one line 'CODE: message' on stderr).
    """

    args = build_parser().parse_args(argv)
    utils.load_environment()

    try:
        config = load_run_config(args.config)

        if args.seed is not None:
            config.with_seed(args.seed)
        if args.stage_scale is not None:
            config.with_scale(args.stage_scale)

        run_pipeline(config, args.command, args.out, args.resume)
    except SignXError as e:
        utils.print_error(f'{args.command} failed')
        print(str(e).splitlines()[0], file = sys.stderr)
        return 1

    return 0

def main() -> None:
    """
    Main entry point for command-line usage.
    """
    sys.exit(run())

if __name__ == '__main__':
    main()
