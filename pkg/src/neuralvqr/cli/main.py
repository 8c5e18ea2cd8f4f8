#!/usr/bin/env python3
"""
neuralvqr command-line experiment runner

Exit codes: 0 success, 1 validation error, 2 runtime error,
3 sweep finished with failed cells, 130 interrupted.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from ..logging_setup import configure_logging
from ..types.errors import ConfigInvalidError, NeuralVqrError
from ..types.experiment import ExperimentConfig
from .runner import ExperimentRunner

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL_SWEEP = 3
EXIT_INTERRUPTED = 130


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='neuralvqr',
        description='Neural conditional vector quantile regression experiments',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Train every seed of an experiment
  neuralvqr train --config experiments/banana.yaml

  # Calibrate and evaluate prediction sets for one trained run
  neuralvqr conformal --config experiments/banana.yaml --model runs/banana/seed-0

  # Funnel dimension sweep on four workers, skipping finished cells
  neuralvqr sweep --config experiments/funnel.yaml --workers 4 --resume

  # Serve a trained model
  neuralvqr serve --model runs/banana/seed-0 --calibrations runs/banana/seed-0-conformal
        """
    )
    parser.add_argument('--verbose', '-v', action='store_true', help='Debug logging and tracebacks')

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    def with_config(p, seed=True, out=True):
        p.add_argument('--config', '-c', required=True, help='Experiment YAML file')
        if seed:
            p.add_argument('--seed', type=int, help='Run only this seed instead of the config seed list')
        if out:
            p.add_argument('--out', '-o', help='Output directory (default: the config output_dir)')
        return p

    with_config(subparsers.add_parser('train', help='Train models'))

    conformal = with_config(subparsers.add_parser('conformal', help='Calibrate and evaluate prediction sets'))
    conformal.add_argument('--model', '-m', help='Run directory holding model.json (default: the seed run)')

    metrics = with_config(subparsers.add_parser('metrics', help='Evaluate distribution metrics of trained runs'))
    metrics.add_argument('--model', '-m', help='Run directory holding model.json (default: the seed run)')

    sweep = with_config(subparsers.add_parser('sweep', help='Train a dataset x method x dimension x seed grid'),
                        seed=False)
    sweep.add_argument('--resume', action='store_true', help='Skip cells whose run directory is complete')
    sweep.add_argument('--workers', type=int, help='Cells trained concurrently')

    with_config(subparsers.add_parser('gen-data', help='Write sample tables'))

    serve = subparsers.add_parser('serve', help='Serve a trained model over HTTP')
    serve.add_argument('--model', '-m', required=True, help='Run directory holding model.json')
    serve.add_argument('--calibrations', help='Directory of calibration-*.json (default: the model directory)')
    serve.add_argument('--host', default=None, help='Bind address (default: $HOST or 0.0.0.0)')
    serve.add_argument('--port', type=int, default=None, help='Port (default: $PORT or 8080)')

    return parser


def cmd_serve(args) -> int:
    import uvicorn

    from ..api.server import create_app

    app = create_app(args.model, args.calibrations)
    host = args.host or os.environ.get('HOST', '0.0.0.0')
    port = args.port or int(os.environ.get('PORT', 8080))
    logger.info(f"serving {args.model} on {host}:{port}")
    uvicorn.run(app, host=host, port=port)
    return EXIT_OK


def run(args) -> int:
    if args.command == 'serve':
        return cmd_serve(args)

    config_path = Path(args.config)
    config = ExperimentConfig.load(config_path)
    # train and sweep write run trees under --out; the other verbs write their outputs there directly
    runner = ExperimentRunner(
        config, base_dir=config_path.parent,
        out_dir=args.out if args.command in ('train', 'sweep') else None,
        resume=getattr(args, 'resume', False), workers=getattr(args, 'workers', None),
    )

    if args.command == 'train':
        manifests = runner.cmd_train(args.seed)
        for manifest in manifests:
            print(f"seed {manifest.seed}: {manifest.status.value}, "
                  f"median epoch {manifest.median_epoch_ms:.1f} ms, "
                  f"median inference {manifest.median_inference_ms:.1f} ms")

    elif args.command == 'conformal':
        frame = runner.cmd_conformal(args.model, args.seed, args.out)
        print(frame.to_string(index=False))

    elif args.command == 'metrics':
        frame = runner.cmd_metrics(args.model, args.seed, args.out)
        print(frame.to_string(index=False))

    elif args.command == 'gen-data':
        for path in runner.cmd_gen_data(args.seed, args.out):
            print(path)

    elif args.command == 'sweep':
        frame, summary = runner.cmd_sweep()
        print(summary.to_string(index=False))
        failed = frame[frame['status'] == 'failed']
        if not failed.empty:
            print(f"\n{len(failed)} of {len(frame)} cell(s) failed", file=sys.stderr)
            return EXIT_PARTIAL_SWEEP

    return EXIT_OK


def main(argv: Optional[List[str]] = None):
    """Main CLI entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        sys.exit(EXIT_VALIDATION)

    configure_logging('DEBUG' if args.verbose else None)

    try:
        code = run(args)
    except KeyboardInterrupt:
        print("\nOperation cancelled by user", file=sys.stderr)
        sys.exit(EXIT_INTERRUPTED)
    except ConfigInvalidError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
    except (ValueError, FileNotFoundError) as e:
        if args.verbose:
            import traceback
            traceback.print_exc()
        label = e.code if isinstance(e, NeuralVqrError) else 'invalid_input'
        print(f"Error [{label}]: {e}", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)
    except Exception as e:
        if args.verbose:
            import traceback
            traceback.print_exc()
        label = e.code if isinstance(e, NeuralVqrError) else 'runtime_error'
        print(f"Error [{label}]: {e}", file=sys.stderr)
        sys.exit(EXIT_RUNTIME)

    sys.exit(code)


if __name__ == '__main__':
    main()
