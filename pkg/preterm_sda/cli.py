"""Command-line surface: one click subcommand per pipeline stage."""

import json
import logging
from collections.abc import Callable
from typing import Any

import click

from preterm_sda.commands.base import CommandCall
from preterm_sda.core.errors import ConfigError
from preterm_sda.utils.config import load_experiment_config
from preterm_sda.utils.dependencies import get_command_executor, get_console
from preterm_sda.utils.reports import print_summary

logger = logging.getLogger(__name__)


def parse_operating_point(value: str | None) -> float | None:
    """``fdh=0.25`` or ``0.25`` -> 0.25 false detections per hour."""
    if value is None:
        return None
    key, sep, number = value.partition("=")
    if not sep:
        key, number = "fdh", value
    if key.strip().lower() != "fdh":
        raise ConfigError(f"Operating point must look like fdh=<value>, got '{value}'")
    try:
        fdh = float(number)
    except ValueError as e:
        raise ConfigError(f"Invalid operating point '{value}'") from e
    if fdh < 0:
        raise ConfigError("Operating point FD/h must be non-negative")
    return fdh


def _emit_error(name: str, error: str, error_type: str, details: dict[str, Any] | None = None) -> None:
    payload: dict[str, Any] = {"status": "error", "command": name, "error": error, "error_type": error_type}
    if details is not None:
        payload["details"] = details
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


def run_command(ctx: click.Context, name: str, flag_values: dict[str, Any], options: dict[str, Any] | None = None) -> None:
    """Resolves the configuration, runs one command and prints its JSON result."""
    params = ctx.params
    try:
        config = load_experiment_config(params.get("config_path"), list(params.get("assignments") or ()), flag_values)
    except ConfigError as e:
        logger.error("Invalid configuration for '%s': %s", name, e.message)
        _emit_error(name, e.message, type(e).__name__)
        ctx.exit(1)
        return

    result = get_command_executor().run(CommandCall(name, config, options or {}))
    quiet = bool(ctx.find_root().obj and ctx.find_root().obj.get("quiet"))
    if result.success:
        if not quiet and result.result:
            print_summary(get_console(), name, result.result)
        click.echo(json.dumps(result.result, indent=2, sort_keys=True))
        return
    if not quiet and result.result:
        print_summary(get_console(), f"{name} (failed)", result.result)
    click.echo(json.dumps(result.error_payload(), indent=2, sort_keys=True))
    ctx.exit(1)


def common_options(func: Callable) -> Callable:
    func = click.option(
        "--set",
        "assignments",
        multiple=True,
        metavar="PATH=VALUE",
        help="Override any config field by JSONPath, e.g. --set '$.train.lr=0.02'.",
    )(func)
    func = click.option("--seed", type=int, default=None, help="Seed for training and synthesis.")(func)
    func = click.option(
        "--config",
        "config_path",
        type=click.Path(dir_okay=False),
        default=None,
        help="Experiment config file (JSON or YAML).",
    )(func)
    func = click.option("--output-dir", default=None, help="Directory for every artifact of the command.")(func)
    return func


def _seed_flags(seed: int | None) -> dict[str, Any]:
    return {"$.train.seed": seed, "$.synth.seed": seed}


@click.group()
@click.option("--quiet", is_flag=True, help="Print only the JSON result.")
@click.pass_context
def cli(ctx: click.Context, quiet: bool) -> None:
    """Preterm EEG seizure detection: synthesize, train, evaluate and fuse."""
    ctx.ensure_object(dict)
    ctx.obj["quiet"] = quiet


@cli.command()
@common_options
@click.pass_context
def synth(ctx: click.Context, output_dir: str | None, config_path: str | None, seed: int | None, assignments: tuple[str, ...]) -> None:
    """Generate a synthetic cohort."""
    run_command(ctx, "synth", {**_seed_flags(seed), "$.paths.output_dir": output_dir})


@cli.command()
@common_options
@click.option("--manifest", default=None, help="Dataset manifest with train/val splits.")
@click.option("--mode", type=click.Choice(["base", "ensemble", "ga_transfer", "ga_scratch"]), default=None)
@click.option("--group", type=click.IntRange(1, 3), default=None, help="GA group for GA-specific modes.")
@click.option("--pretrained", default=None, help="Pretrained ensemble manifest for ga_transfer.")
@click.option("--stride-s", type=float, default=None, help="Training window stride in seconds.")
@click.pass_context
def train(
    ctx: click.Context,
    output_dir: str | None,
    config_path: str | None,
    seed: int | None,
    assignments: tuple[str, ...],
    manifest: str | None,
    mode: str | None,
    group: int | None,
    pretrained: str | None,
    stride_s: float | None,
) -> None:
    """Train a base model, an ensemble or a GA-specific ensemble."""
    run_command(
        ctx,
        "train",
        {
            **_seed_flags(seed),
            "$.paths.output_dir": output_dir,
            "$.paths.manifest": manifest,
            "$.mode": mode,
            "$.ga.group": group,
            "$.paths.pretrained": pretrained,
            "$.train.stride_s": stride_s,
        },
    )


def inference_options(func: Callable) -> Callable:
    func = click.option("--operating-point", default=None, help="Report detection rate at fdh=<false detections per hour>.")(func)
    func = click.option("--loo/--no-loo", default=None, help="Leave-one-record-out AUCs.")(func)
    func = click.option("--smooth-width", type=int, default=None, help="Moving-average width in windows (odd).")(func)
    func = click.option("--stride-s", type=float, default=None, help="Inference window stride in seconds.")(func)
    func = click.option("--manifest", default=None, help="Dataset manifest.")(func)
    return func


def _inference_flags(
    output_dir: str | None,
    seed: int | None,
    manifest: str | None,
    stride_s: float | None,
    smooth_width: int | None,
    loo: bool | None,
    operating_point: str | None,
) -> dict[str, Any]:
    return {
        **_seed_flags(seed),
        "$.paths.output_dir": output_dir,
        "$.paths.manifest": manifest,
        "$.infer.stride_s": stride_s,
        "$.infer.smooth_width": smooth_width,
        "$.eval.loo": loo,
        "$.eval.operating_fdh": parse_operating_point(operating_point),
    }


@cli.command(name="eval")
@common_options
@inference_options
@click.option("--model", default=None, help="Checkpoint (.ckpt) or ensemble manifest (.json).")
@click.pass_context
def eval_(
    ctx: click.Context,
    output_dir: str | None,
    config_path: str | None,
    seed: int | None,
    assignments: tuple[str, ...],
    manifest: str | None,
    stride_s: float | None,
    smooth_width: int | None,
    loo: bool | None,
    operating_point: str | None,
    model: str | None,
) -> None:
    """Evaluate a model on the test split."""
    try:
        flags = _inference_flags(output_dir, seed, manifest, stride_s, smooth_width, loo, operating_point)
    except ConfigError as e:
        _emit_error("eval", e.message, type(e).__name__)
        ctx.exit(1)
        return
    run_command(ctx, "eval", {**flags, "$.paths.model": model})


@cli.command()
@common_options
@inference_options
@click.option("--classifier", "classifiers", multiple=True, help="Classifier model; give twice (preterm, then term).")
@click.pass_context
def fuse(
    ctx: click.Context,
    output_dir: str | None,
    config_path: str | None,
    seed: int | None,
    assignments: tuple[str, ...],
    manifest: str | None,
    stride_s: float | None,
    smooth_width: int | None,
    loo: bool | None,
    operating_point: str | None,
    classifiers: tuple[str, ...],
) -> None:
    """Select a fusion of two classifiers on val and apply it to test."""
    try:
        flags = _inference_flags(output_dir, seed, manifest, stride_s, smooth_width, loo, operating_point)
    except ConfigError as e:
        _emit_error("fuse", e.message, type(e).__name__)
        ctx.exit(1)
        return
    run_command(ctx, "fuse", {**flags, "$.paths.classifiers": list(classifiers) or None})


@cli.command()
@common_options
@click.option("--manifest", default=None, help="Dataset manifest to check.")
@click.option(
    "--require-split",
    "required_splits",
    multiple=True,
    type=click.Choice(["train", "val", "test"]),
    help="Fail when this split has no records.",
)
@click.pass_context
def validate(
    ctx: click.Context,
    output_dir: str | None,
    config_path: str | None,
    seed: int | None,
    assignments: tuple[str, ...],
    manifest: str | None,
    required_splits: tuple[str, ...],
) -> None:
    """Check every entry of a dataset manifest."""
    run_command(
        ctx,
        "validate",
        {"$.paths.manifest": manifest, "$.paths.output_dir": output_dir},
        {"required_splits": list(required_splits)},
    )
