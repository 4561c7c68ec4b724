import argparse
import dataclasses
import logging
import os
import sys
import threading
from typing import List, Optional, Sequence, Tuple

from onestep_sr.bench.mac_counter import mac_count
from onestep_sr.bench.prune_compare import objective_ablation, prompt_ablation, strategy_comparison, timestep_sweep
from onestep_sr.bench.scaling import scaling_benchmark
from onestep_sr.bench.selftest import run_selftest
from onestep_sr.logging_config import Logger
from onestep_sr.models.backbone_config import BackboneConfig
from onestep_sr.models.default_values_and_options import DefaultValuesAndOptions
from onestep_sr.models.json_report import JSONReport
from onestep_sr.models.run_configs import PromptConfig, SchedulerConfig, TrainConfig
from onestep_sr.pipeline.checkpoint import CheckpointContents, load_checkpoint, save_checkpoint
from onestep_sr.pipeline.evaluation import restore_image, upscale_nearest
from onestep_sr.pipeline.image_io import read_image, write_image
from onestep_sr.pipeline.runner import build_components, make_validation_pairs, run_pruning, run_training
from onestep_sr.settings import Settings
from onestep_sr.start_modes.config_parser import RunConfigParser, optional_config


class UsageError(Exception):
    """
    Bad command line: unknown subcommand or flag, missing or malformed value.
    """


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text: str) -> List[int]:
    try:
        values = [int(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected comma-separated integers, got "{text}"')
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")

    return values


def _height_width(text: str) -> Tuple[int, int]:
    parts = text.lower().split('x')
    if len(parts) != 2 or not all(part.isdigit() for part in parts):
        raise argparse.ArgumentTypeError(f'expected HxW, e.g. 512x512, got "{text}"')

    return int(parts[0]), int(parts[1])


def _ratio(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f'expected a number in (0, 1], got "{text}"')
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError(f"budget ratio must lie in (0, 1], got {value}")

    return value


class ArgsParser:
    @staticmethod
    def build_parser() -> argparse.ArgumentParser:
        """
        Top-level parser with one subparser per command; every report goes to stdout or --out as JSON.
        """
        parser = _Parser(prog='onestep-sr', description="One-step latent super-resolution toolkit")
        parser.add_argument("-l", "--error_log", action='store_true', help="Init error file logger.")
        parser.add_argument("-v", "--verbose", action='store_true', help="Log at DEBUG level.")
        commands = parser.add_subparsers(dest='command', metavar='command', parser_class=_Parser)
        commands.required = True

        train = commands.add_parser('train', help="Train the adapters and write a checkpoint.")
        train.add_argument("-f", "--config", type=str, help="JSON run config (defaults for missing keys).")
        train.add_argument("-o", "--out", type=str, required=True, help="Checkpoint path to write.")
        train.add_argument(
            "-p", "--protocol", type=str,
            choices=[value[0] for value in DefaultValuesAndOptions.get_prompt_protocol_options_data().get_values()],
            help=f"Prompt protocol. {DefaultValuesAndOptions.get_prompt_protocol_options_data().get_help_str()}")
        train.add_argument("--tags_from_hq", action='store_true',
                           help="Extract training tags from the HQ image instead of the degraded input.")
        train.add_argument("-s", "--save_config", type=str,
                           help="Save the resolved run config (non-default values only).")
        train.add_argument("--report", type=str, help="Path of the JSON training report.")

        restore = commands.add_parser('restore', help="Upscale one image with a single backbone evaluation.")
        restore.add_argument("-c", "--ckpt", type=str, required=True, help="Checkpoint path.")
        restore.add_argument("-i", "--in", dest='input', type=str, required=True, help="Input image (.ppm or .raw).")
        restore.add_argument("-o", "--out", type=str, required=True, help="Output image (.ppm or .raw).")
        restore.add_argument(
            "-t", "--prompt-template", dest='template', type=str,
            help=f"Quality template. {DefaultValuesAndOptions.get_template_options_data().get_help_str()}")
        restore.add_argument("--tau-g", dest='tau_g', type=int, help="Generation timestep (default from the run).")
        restore.add_argument("--scale", type=int, help="Upscale factor (default: degradation downscale).")
        restore.add_argument("--ema", action='store_true', help="Use the EMA adapters stored in the checkpoint.")

        prune = commands.add_parser('prune', help="Calibrate, select kept blocks and write the pruned checkpoint.")
        prune.add_argument("-c", "--ckpt", type=str, required=True, help="Trained checkpoint path.")
        prune.add_argument("-r", "--budget-ratio", dest='budget_ratio', type=_ratio,
                           help=f"Kept share of the parameters. "
                                f"(default={DefaultValuesAndOptions.get_keep_ratio()})")
        prune.add_argument("-k", "--calib-steps", dest='calib_steps', type=int,
                           help=f"Calibration steps K. (default={DefaultValuesAndOptions.get_calib_steps()})")
        prune.add_argument(
            "--strategy", type=str,
            choices=DefaultValuesAndOptions.get_prune_strategy_options_data().get_values(),
            help=f"Block selector. {DefaultValuesAndOptions.get_prune_strategy_options_data().get_help_str()}")
        prune.add_argument("-o", "--out", type=str, required=True, help="Pruned checkpoint path.")
        prune.add_argument("--report", type=str, help="Path of the JSON pruning report.")

        bench = commands.add_parser('bench', help="Time the linear kernel against the quadratic reference.")
        bench.add_argument("--sizes", type=_int_list, default=[1024, 2048], help="Token counts, e.g. 512,1024,2048.")
        bench.add_argument("-f", "--config", type=str, help="JSON run config providing the backbone.")
        bench.add_argument("--dtype", type=str, choices=['float32', 'float64'],
                           default=DefaultValuesAndOptions.get_default_dtype())
        bench.add_argument("--warmup", type=int, default=DefaultValuesAndOptions.get_warmup_reps())
        bench.add_argument("--reps", type=int, default=DefaultValuesAndOptions.get_timed_reps())
        bench.add_argument("--out", type=str, help="Path of the JSON report.")

        macs = commands.add_parser('macs', help="Analytic multiply-accumulate count of one restore.")
        macs.add_argument("-f", "--config", type=str, help="JSON run config providing the backbone.")
        macs.add_argument("--hw", type=_height_width, required=True, help="Aligned input size, e.g. 512x512.")
        macs.add_argument("--attention", type=str, choices=['linear', 'quadratic'], default='linear')
        macs.add_argument("--out", type=str, help="Path of the JSON report.")

        selftest = commands.add_parser('selftest', help="Run every oracle suite.")
        selftest.add_argument("--out", type=str, help="Path of the JSON report.")

        ablate = commands.add_parser('ablate', help="Timestep, prompt, pruning-strategy or objective ablations.")
        ablate.add_argument("-c", "--ckpt", type=str, help="Trained checkpoint (all ablations but --objectives).")
        ablate.add_argument("-f", "--config", type=str, help="JSON run config for --objectives.")
        variants = ablate.add_mutually_exclusive_group(required=True)
        variants.add_argument("--tau-g", dest='tau_g', type=_int_list, help="Generation timesteps to sweep.")
        variants.add_argument("--prompts", action='store_true', help="Compare the prompt protocols.")
        variants.add_argument("--strategies", action='store_true', help="Compare the pruning strategies.")
        variants.add_argument("--objectives", action='store_true', help="Train one model per objective variant.")
        ablate.add_argument("--out", type=str, help="Path of the JSON report.")

        return parser

    @staticmethod
    def run(argv: Optional[Sequence[str]] = None, stop_event: Optional[threading.Event] = None):
        """
        Parses the command line and runs the chosen subcommand.

        Raises:
            UsageError: On a malformed command line.
            ValueError, RuntimeError, FloatingPointError, OSError: On failures of the command itself.
        """
        parser = ArgsParser.build_parser()
        args = parser.parse_args(argv)

        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        if args.error_log:
            Logger.init_warning_logger()
        if args.command == 'ablate':
            if args.objectives and args.ckpt is not None:
                parser.error("ablate --objectives trains from a run config; pass --config, not --ckpt")
            if not args.objectives and args.ckpt is None:
                parser.error("ablate --tau-g/--prompts/--strategies need --ckpt")

        stop_event = stop_event or threading.Event()
        handlers = {
            'train': ArgsParser.__train,
            'restore': ArgsParser.__restore,
            'prune': ArgsParser.__prune,
            'bench': ArgsParser.__bench,
            'macs': ArgsParser.__macs,
            'selftest': ArgsParser.__selftest,
            'ablate': ArgsParser.__ablate,
        }
        handlers[args.command](args, stop_event)

    @staticmethod
    def __settings_from_checkpoint(contents: CheckpointContents, stop_event: threading.Event) -> Settings:
        if contents.configs:
            settings = RunConfigParser.from_dict(contents.configs)
        else:
            cfg = contents.state.cfg
            settings = Settings(cfg, prompt=PromptConfig(text_tokens=cfg.text_tokens, text_width=cfg.text_width),
                                train=TrainConfig(sched=SchedulerConfig(sched_horizon=cfg.sched_horizon)),
                                dtype=contents.state.dtype.name)
        settings.stop_event = stop_event

        return settings

    @staticmethod
    def __train(args: argparse.Namespace, stop_event: threading.Event):
        settings = optional_config(args.config)
        settings.stop_event = stop_event
        if args.protocol is not None:
            sched = SchedulerConfig.from_protocol(args.protocol, settings.backbone.sched_horizon)
            settings.train = dataclasses.replace(settings.train, sched=sched)
        if args.tags_from_hq:
            settings.prompt = dataclasses.replace(settings.prompt, tags_from_hq=True)
        if args.save_config is not None:
            RunConfigParser.save(args.save_config, settings)

        with settings:
            result = run_training(settings)
        digest = save_checkpoint(args.out, result.state, RunConfigParser.to_dict(settings), result.ema)
        if result.stopped_early:
            logging.warning(f"Training interrupted after {len(result.history)} steps; checkpoint saved anyway")

        JSONReport.emit('train', {
            'checkpoint': args.out,
            'digest': digest,
            'steps_done': len(result.history),
            'stopped_early': result.stopped_early,
            'best_step': result.best_step,
            'final': result.history[-1] if result.history else None,
            'evaluations': [{'step': step, **record.to_dict()} for step, record in result.evaluations],
        }, args.report)

    @staticmethod
    def __restore(args: argparse.Namespace, stop_event: threading.Event):
        contents = load_checkpoint(args.ckpt)
        settings = ArgsParser.__settings_from_checkpoint(contents, stop_event)
        state = contents.state
        if args.ema:
            if contents.ema is None:
                raise ValueError(f'Checkpoint "{args.ckpt}" carries no EMA adapters')
            state = state.with_adapters(contents.ema)

        components = build_components(settings)
        scale = args.scale or settings.degradation.downscale
        tau_g = args.tau_g if args.tau_g is not None else settings.train.sched.tau_g
        template = args.template or settings.prompt.template

        x = read_image(args.input).astype(state.dtype, copy=False)
        upscaled = upscale_nearest(x, scale)

        calls_before = state.forward_calls
        restored = restore_image(state, components.codec, components.prompts, components.scheduler, upscaled,
                                 tau_g, template)
        forward_calls = state.forward_calls - calls_before
        if forward_calls != 1:
            raise RuntimeError(f"Restore ran {forward_calls} backbone evaluations instead of one")

        write_image(args.out, restored)
        logging.info(f'Restored {x.shape[2]}x{x.shape[1]} -> {restored.shape[2]}x{restored.shape[1]} '
                     f'with one backbone evaluation at tau_g={tau_g}: "{args.out}"')

    @staticmethod
    def __prune(args: argparse.Namespace, stop_event: threading.Event):
        contents = load_checkpoint(args.ckpt)
        settings = ArgsParser.__settings_from_checkpoint(contents, stop_event)

        changes = {}
        if args.budget_ratio is not None:
            changes.update(keep_ratio=args.budget_ratio, budget_params=None)
        if args.calib_steps is not None:
            changes['calib_steps'] = args.calib_steps
        if args.strategy is not None:
            changes['strategy'] = args.strategy
        settings.prune = dataclasses.replace(settings.prune, **changes)

        with settings:
            run = run_pruning(settings, contents.state)
        report = run.outcome.report
        digest = save_checkpoint(args.out, run.outcome.pruned, RunConfigParser.to_dict(settings),
                                 prune_report=report.to_dict())
        if not run.validation.passed:
            logging.warning(f"Pruned model exceeds the {settings.prune.drop_threshold:.0%} drop gate on "
                            f"{', '.join(run.validation.failed)}")

        JSONReport.emit('prune', {
            'checkpoint': args.out,
            'digest': digest,
            'report': report,
            'dense': run.dense_metrics,
            'pruned': run.pruned_metrics,
            'validation': run.validation,
        }, args.report)

    @staticmethod
    def __bench(args: argparse.Namespace, stop_event: threading.Event):
        backbone = optional_config(args.config).backbone if args.config else BackboneConfig()
        if any(os.environ.get(name) != '1' for name in ('OMP_NUM_THREADS', 'OPENBLAS_NUM_THREADS')):
            logging.warning("BLAS threads are not pinned; set OMP_NUM_THREADS=1 OPENBLAS_NUM_THREADS=1 "
                            "before starting for stable ratios")

        result = scaling_benchmark(backbone, args.sizes, args.dtype, args.warmup, args.reps)
        JSONReport.emit('bench', result, args.out)

    @staticmethod
    def __macs(args: argparse.Namespace, stop_event: threading.Event):
        backbone = optional_config(args.config).backbone if args.config else BackboneConfig()
        height, width = args.hw
        JSONReport.emit('macs', mac_count(backbone, height, width, args.attention), args.out)

    @staticmethod
    def __selftest(args: argparse.Namespace, stop_event: threading.Event):
        results = run_selftest()
        failed = [result.name for result in results if not result.passed]
        JSONReport.emit('selftest', {'passed': not failed, 'suites': results}, args.out)

        if failed:
            raise RuntimeError(f"Self-test suites failed: {', '.join(failed)}")

    @staticmethod
    def __ablate(args: argparse.Namespace, stop_event: threading.Event):
        if args.objectives:
            settings = optional_config(args.config)
            settings.stop_event = stop_event
            with settings:
                table = objective_ablation(settings)
            JSONReport.emit('ablation', table, args.out)
            return

        contents = load_checkpoint(args.ckpt)
        settings = ArgsParser.__settings_from_checkpoint(contents, stop_event)
        with settings:
            if args.strategies:
                table = strategy_comparison(settings, contents.state)
            else:
                components = build_components(settings)
                pairs = make_validation_pairs(settings)
                if args.tau_g is not None:
                    table = timestep_sweep(contents.state, pairs, components, args.tau_g)
                else:
                    table = prompt_ablation(contents.state, pairs, components, settings.train.sched.tau_g)

        JSONReport.emit('ablation', table, args.out)
