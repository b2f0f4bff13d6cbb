"""
Command-line entry point: train, translate, rf, probe-rf, inspect
"""
import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

from dotenv import load_dotenv

from .config import config_from_dict, describe_discriminators, load_config
from .errors import ConfigError, CropError, FaceganError, FrameStoreError, NetSpecError, ProbeError
from .imaging import CropSpec, load_frame_store
from .netspec import (
    ConvStackSpec,
    PatchDiscriminator,
    build_discriminator,
    empirical_rf_probe,
    format_stack,
    parse_stack,
    receptive_field,
    rf_trace,
    synthesize_stack,
    MAX_SEARCH_LAYERS,
)
from .utils import format_rf_trace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_VALIDATION = 2

# Errors that mean the user's input was rejected before anything ran
VALIDATION_ERRORS = (ConfigError, CropError, NetSpecError, ProbeError, FrameStoreError)


def configure_logging():
    """Diagnostics to standard error; level from FACEGAN_LOG_LEVEL"""
    level = os.getenv('FACEGAN_LOG_LEVEL', 'INFO').upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[logging.StreamHandler(sys.stderr)],
    )


def run_train(config_path: str, overrides: Sequence[str] = (), resume: Optional[str] = None) -> int:
    """Validate the config, then run the training loop"""
    from .training import train_loop

    try:
        config = load_config(config_path, overrides)
    except ConfigError as e:
        logger.error(f"Invalid config: {e}")
        return EXIT_VALIDATION

    try:
        state = train_loop(config, resume=resume)
    except (FrameStoreError, CropError) as e:
        logger.error(f"Invalid training data: {e}")
        return EXIT_VALIDATION
    except FaceganError as e:
        logger.error(f"Training aborted: {e}")
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        logger.info("Training interrupted by user")
        return EXIT_RUNTIME

    print(f"trained to step {state.step}; outputs in {config.output_dir}")
    return EXIT_OK


def run_translate(checkpoint: str, direction: str, input_dir: str, output_dir: str,
                  crop: Optional[str] = None, prefetch: int = 8, device: str = '', workers: int = 0) -> int:
    from .inference import TranslationJob, translate_frames

    try:
        store = load_frame_store(input_dir, direction[0])
        crop_spec = CropSpec.parse(crop) if crop else None
        job = TranslationJob(checkpoint, direction, store, output_dir, crop_spec, prefetch, device, workers)
    except VALIDATION_ERRORS as e:
        logger.error(f"Invalid translation request: {e}")
        return EXIT_VALIDATION

    try:
        count = translate_frames(job)
    except CropError as e:
        logger.error(f"Invalid crop: {e}")
        return EXIT_VALIDATION
    except FaceganError as e:
        logger.error(f"Translation failed: {e}")
        return EXIT_RUNTIME

    print(f"wrote {count} frames to {output_dir}")
    return EXIT_OK


def run_rf(stack: Optional[str] = None, target: Optional[int] = None, max_layers: int = MAX_SEARCH_LAYERS) -> int:
    """Print the analytic receptive field and its per-layer (r, j) trace"""
    try:
        if target is not None:
            layers = synthesize_stack(target, max_layers)
            print(f"stack: {format_stack(layers)}")
        elif stack:
            layers = parse_stack(stack)
        else:
            raise NetSpecError("give a stack string or --target")
    except NetSpecError as e:
        logger.error(str(e))
        print(str(e), file=sys.stderr)
        return EXIT_VALIDATION

    print(format_rf_trace(rf_trace(layers)))
    print(f"receptive field: {receptive_field(layers)}")
    return EXIT_OK


def probe_report(disc: PatchDiscriminator, input_side: int) -> int:
    """Compare probe and recurrence for one discriminator; prints both"""
    analytic = receptive_field(disc.spec)
    try:
        empirical = empirical_rf_probe(disc, input_side)
    except ProbeError as e:
        logger.error(str(e))
        print(str(e), file=sys.stderr)
        return EXIT_VALIDATION

    print(f"empirical receptive field: {empirical}")
    print(f"analytic receptive field: {analytic}")
    if empirical != analytic:
        logger.error(f"Probe disagrees with the analytic receptive field ({empirical} != {analytic})")
        return EXIT_RUNTIME
    return EXIT_OK


def run_probe_rf(stack: Optional[str] = None, checkpoint: Optional[str] = None, network: str = 'D_Y1',
                 input_side: int = 256, init: str = 'constant', value: float = 0.01) -> int:
    """Build (or load) a discriminator and probe its footprint"""
    from .training import read_checkpoint

    try:
        if checkpoint:
            payload = read_checkpoint(checkpoint)
            config = config_from_dict(payload['config'])
            direction, index = network[2], int(network[3:]) - 1
            spec = config.discriminator_specs(direction)[index]
            disc = PatchDiscriminator(spec)
            disc.load_state_dict(payload['networks'][network])
        elif stack:
            disc = build_discriminator(ConvStackSpec.from_string(stack), 0, init=init, init_value=value)
        else:
            raise NetSpecError("give --stack or --checkpoint")
    except VALIDATION_ERRORS as e:
        logger.error(str(e))
        print(str(e), file=sys.stderr)
        return EXIT_VALIDATION
    except (AttributeError, IndexError, KeyError, ValueError) as e:
        logger.error(f"Network {network} not found in checkpoint: {e}")
        return EXIT_VALIDATION
    except FaceganError as e:
        logger.error(str(e))
        return EXIT_RUNTIME

    return probe_report(disc, input_side)


def run_inspect(checkpoint: str) -> int:
    """Summarize a checkpoint without modifying it"""
    from .training import read_checkpoint

    try:
        payload = read_checkpoint(checkpoint)
        config = config_from_dict(payload['config'])
    except FaceganError as e:
        logger.error(str(e))
        return EXIT_RUNTIME

    print(f"checkpoint: {checkpoint}")
    print(f"format version: {payload['version']}")
    print(f"step: {payload['step']}")
    print(f"config hash: {payload['config_hash']}")
    for name, state_dict in payload['networks'].items():
        print(f"{name}: {sum(t.numel() for t in state_dict.values())} parameters")
    for line in describe_discriminators(config):
        print(line)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='facegan',
        description='Unpaired face/video translation with receptive-field-controlled patch discriminators',
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    train = subparsers.add_parser('train', help='train G/F and their discriminators from a config file')
    train.add_argument('--config', required=True, help='experiment YAML file')
    train.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                       help='override one config key (dotted path), repeatable')
    train.add_argument('--resume', help='checkpoint to continue from')

    translate = subparsers.add_parser('translate', help='translate a frame directory with a trained generator')
    translate.add_argument('--checkpoint', required=True, help='checkpoint file')
    translate.add_argument('--direction', required=True, choices=['XtoY', 'YtoX'], help='which generator to apply')
    translate.add_argument('--input', required=True, help='directory of source frames')
    translate.add_argument('--output', required=True, help='directory for frame_%%06d.png and frames.txt')
    translate.add_argument('--crop', metavar='L,T,W,H', help='crop rectangle (defaults to the training crop)')
    translate.add_argument('--prefetch', type=int, default=8, help='frames decoded per loader batch')
    translate.add_argument('--workers', type=int, default=0, help='DataLoader worker processes for decoding')
    translate.add_argument('--device', default='', help='torch device (defaults to FACEGAN_DEVICE or cpu)')

    rf = subparsers.add_parser('rf', help='analytic receptive field of a stack')
    rf.add_argument('stack', nargs='?', help='comma-separated k<kernel>s<stride>[p<pad>] tokens')
    rf.add_argument('--target', type=int, help='synthesize a stack with this receptive field instead')
    rf.add_argument('--max-layers', type=int, default=MAX_SEARCH_LAYERS, help='layer limit for --target')

    probe = subparsers.add_parser('probe-rf', help='measure a discriminator footprint by backpropagation')
    probe.add_argument('--stack', help='build a fresh discriminator from this stack')
    probe.add_argument('--checkpoint', help='probe a trained discriminator instead')
    probe.add_argument('--network', default='D_Y1', help='discriminator name inside the checkpoint')
    probe.add_argument('--input-side', type=int, default=256, help='probe input side length')
    probe.add_argument('--init', choices=['constant', 'normal'], default='constant',
                       help='weight init for --stack')
    probe.add_argument('--value', type=float, default=0.01, help='constant weight for --init constant')

    inspect = subparsers.add_parser('inspect', help='summarize a checkpoint')
    inspect.add_argument('checkpoint', help='checkpoint file')
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if args.command == 'train':
        return run_train(args.config, args.overrides, args.resume)
    if args.command == 'translate':
        return run_translate(args.checkpoint, args.direction, args.input, args.output,
                             args.crop, args.prefetch, args.device, args.workers)
    if args.command == 'rf':
        return run_rf(args.stack, args.target, args.max_layers)
    if args.command == 'probe-rf':
        return run_probe_rf(args.stack, args.checkpoint, args.network, args.input_side, args.init, args.value)
    return run_inspect(args.checkpoint)


def run():
    """Console-script entry"""
    load_dotenv()
    configure_logging()
    sys.exit(main())
