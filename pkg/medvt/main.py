"""Main entry point for the medvt application.

Sets up the Typer CLI application, performs dependency injection
(Composition Root), defines CLI commands, and delegates execution to the
CommandHandler. Settings are resolved per command, so command flags and
global flags override the configuration file.
"""

import logging
from pathlib import Path
from typing import Annotated, Any, Dict, List, NoReturn, Optional

import typer

from medvt.core.command_handler import EXIT_USAGE, CommandHandler
from medvt.core.exceptions import ConfigError
from medvt.core.services.ablation_service import AblationService
from medvt.core.services.check_service import CheckService
from medvt.core.services.dataset_service import DatasetService
from medvt.core.services.evaluation_service import EvaluationService
from medvt.core.services.inference_service import PUBLISHED_SCALES, InferenceService
from medvt.core.services.train_service import TrainService
from medvt.core.tensor import ops
from medvt.infrastructure.cli.display import ConsoleDisplay
from medvt.infrastructure.config.settings import Settings, build_settings, load_configuration
from medvt.infrastructure.filesystem.checkpoint_fs import DirectoryCheckpointStore
from medvt.infrastructure.filesystem.local_fs import LocalDatasetStore, LocalFileSystem
from medvt.infrastructure.monitoring.logger_setup import setup_logging

logger = logging.getLogger(__name__)


# --- Dependency Injection Container (Manual) ---

def create_dependencies(settings: Settings, json_output: bool = False) -> Dict[str, Any]:
    """Creates and wires up all dependencies for one command.

    This acts as the Composition Root.
    """
    dependencies: Dict[str, Any] = {}
    dependencies["ui"] = ConsoleDisplay(quiet=json_output)
    dependencies["file_system"] = LocalFileSystem()
    dependencies["checkpoint_store"] = DirectoryCheckpointStore()

    dependencies["dataset_service"] = DatasetService(ui=dependencies["ui"])
    dependencies["train_service"] = TrainService(checkpoints=dependencies["checkpoint_store"])
    dependencies["inference_service"] = InferenceService(files=dependencies["file_system"],
                                                         threads=settings.threads or None)
    dependencies["evaluation_service"] = EvaluationService(
        ui=dependencies["ui"],
        files=dependencies["file_system"],
        inference=dependencies["inference_service"],
        boundary_tolerance=settings.boundary_tolerance,
    )
    dependencies["check_service"] = CheckService(ui=dependencies["ui"])
    dependencies["ablation_service"] = AblationService(
        ui=dependencies["ui"],
        trainer=dependencies["train_service"],
        inference=dependencies["inference_service"],
        evaluator=dependencies["evaluation_service"],
    )
    logger.debug("Core services initialized.")

    dependencies["command_handler"] = CommandHandler(
        settings=settings,
        ui=dependencies["ui"],
        files=dependencies["file_system"],
        checkpoints=dependencies["checkpoint_store"],
        dataset_store=LocalDatasetStore,
        dataset_service=dependencies["dataset_service"],
        train_service=dependencies["train_service"],
        inference_service=dependencies["inference_service"],
        evaluation_service=dependencies["evaluation_service"],
        check_service=dependencies["check_service"],
        ablation_service=dependencies["ablation_service"],
        json_output=json_output,
    )
    return dependencies


# --- Typer App Definition ---
app = typer.Typer(
    name="medvt",
    help="Multiscale encoder-decoder video transformer with label propagation, on synthetic clips.",
    add_completion=False,
)


def parse_assignments(pairs: Optional[List[str]]) -> Dict[str, str]:
    """`key=value` strings from repeated --set options."""
    result: Dict[str, str] = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects key=value, got '{pair}'")
        result[key.strip()] = value.strip()
    return result


def parse_floats(text: Optional[str]) -> Optional[List[float]]:
    """Comma-separated numbers; 'published' stands for the six published scale multipliers."""
    if text is None:
        return None
    if text.strip() == "published":
        return list(PUBLISHED_SCALES)
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"expected comma-separated numbers, got '{text}'") from e


def parse_ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"expected comma-separated integers, got '{text}'") from e


def _fail(message: str) -> NoReturn:
    ConsoleDisplay().display_error(message)
    raise typer.Exit(code=EXIT_USAGE)


def get_handler(ctx: typer.Context, **overrides: Any) -> CommandHandler:
    """Resolves settings (file < environment < global flags < command flags) and wires a handler."""
    options: Dict[str, Any] = ctx.obj or {}
    try:
        merged = dict(options.get("overrides", {}))
        merged.update({k: v for k, v in overrides.items() if v is not None})
        settings = build_settings(merged)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}", exc_info=True)
        _fail(f"Invalid configuration: {e}")
    level = "DEBUG" if options.get("verbose") else settings.log_level
    setup_logging(log_level=level, log_file=settings.log_file or None)
    ops.set_summation_mode(settings.summation)
    logger.info(f"Settings: d={settings.d}, N_h={settings.num_heads}, T={settings.num_frames}, "
                f"dtype={settings.dtype}, summation={settings.summation}, seed={settings.seed}")
    return create_dependencies(settings, options.get("json", False))["command_handler"]


# --- CLI Commands ---

@app.command()
def gen(
    ctx: typer.Context,
    out: Annotated[Path, typer.Option("--out", "-o", help="Dataset directory to create.")] = Path("data"),
    n: Annotated[Optional[int], typer.Option("--n", help="Total clips, split 2:1 into train and val.")] = None,
    n_train: Annotated[int, typer.Option("--n-train", help="Training clips.")] = 8,
    n_val: Annotated[int, typer.Option("--n-val", help="Validation clips.")] = 4,
    texture: Annotated[Optional[str], typer.Option("--texture", help="'camouflage' or 'contrast'.")] = None,
):
    """Generate a synthetic dataset of moving-object clips with dense masks."""
    if n is not None:
        n_train = (2 * n) // 3
        n_val = n - n_train
    handler = get_handler(ctx, texture=texture)
    raise typer.Exit(code=handler.handle_gen(str(out), n_train, n_val))


@app.command()
def train(
    ctx: typer.Context,
    data: Annotated[Path, typer.Option("--data", "-d", help="Dataset directory written by 'gen'.")] = Path("data"),
    out: Annotated[Path, typer.Option("--out", "-o", help="Checkpoint directory.")] = Path("runs/medvt"),
    iterations: Annotated[Optional[int], typer.Option("--iterations", help="Stage-1 iterations.")] = None,
    stage2_iterations: Annotated[Optional[int], typer.Option("--stage2-iterations",
                                                             help="Propagator iterations.")] = None,
    preset: Annotated[Optional[str], typer.Option("--preset", help="'two_stage' or 'three_stage'.")] = None,
):
    """Train MedVT on the training split; writes checkpoints and loss_curve.csv."""
    handler = get_handler(ctx, iterations=iterations, stage2_iterations=stage2_iterations, preset=preset)
    raise typer.Exit(code=handler.handle_train(str(data), str(out)))


@app.command()
def infer(
    ctx: typer.Context,
    checkpoint: Annotated[Path, typer.Option("--checkpoint", "-c", help="Checkpoint directory.")],
    data: Annotated[Path, typer.Option("--data", "-d", help="Dataset directory.")] = Path("data"),
    out: Annotated[Path, typer.Option("--out", "-o", help="Prediction directory.")] = Path("predictions"),
    split: Annotated[str, typer.Option("--split", help="'train', 'val' or 'all'.")] = "val",
    scales: Annotated[Optional[str], typer.Option("--scales",
                                                  help="Comma-separated multipliers, or 'published'.")] = None,
    fmt: Annotated[str, typer.Option("--format", help="'pgm' masks or 'mvt1' logits.")] = "pgm",
    dump_attention: Annotated[bool, typer.Option("--dump-attention",
                                                 help="Also write the object attention maps.")] = False,
):
    """Predict masks for every clip of a split with sliding-window inference."""
    try:
        scale_list = parse_floats(scales)
    except ConfigError as e:
        _fail(str(e))
    handler = get_handler(ctx)
    code = handler.handle_infer(str(checkpoint), str(data), str(out), None if split == "all" else split,
                                scale_list, fmt, dump_attention)
    raise typer.Exit(code=code)


@app.command(name="eval")
def evaluate(
    ctx: typer.Context,
    data: Annotated[Path, typer.Option("--data", "-d", help="Dataset directory.")] = Path("data"),
    split: Annotated[str, typer.Option("--split", help="'train', 'val' or 'all'.")] = "val",
    checkpoint: Annotated[Optional[Path], typer.Option("--checkpoint", "-c",
                                                       help="Evaluate this checkpoint.")] = None,
    predictions: Annotated[Optional[Path], typer.Option("--predictions", "-p",
                                                        help="Evaluate masks written by 'infer'.")] = None,
    scales: Annotated[Optional[str], typer.Option("--scales",
                                                  help="Comma-separated multipliers, or 'published'.")] = None,
    out: Annotated[Optional[Path], typer.Option("--out", "-o", help="Also write the JSON report here.")] = None,
    boundary_tolerance: Annotated[Optional[int], typer.Option("--boundary-tolerance",
                                                              help="Boundary match radius in pixels.")] = None,
):
    """Score predictions: J and F mean/recall/decay, box success rates, per-category mIoU."""
    try:
        scale_list = parse_floats(scales)
    except ConfigError as e:
        _fail(str(e))
    handler = get_handler(ctx, boundary_tolerance=boundary_tolerance)
    code = handler.handle_eval(str(data), None if split == "all" else split,
                               str(checkpoint) if checkpoint else None,
                               str(predictions) if predictions else None, scale_list,
                               str(out) if out else None)
    raise typer.Exit(code=code)


@app.command()
def gradcheck(
    ctx: typer.Context,
    trials: Annotated[int, typer.Option("--trials", help="Random cases per op.")] = 10,
    no_model: Annotated[bool, typer.Option("--no-model", help="Skip the end-to-end micro model.")] = False,
    op: Annotated[Optional[List[str]], typer.Option("--op", help="Restrict to these ops (repeatable).")] = None,
):
    """Check every differentiable op and the micro model against finite differences."""
    handler = get_handler(ctx)
    raise typer.Exit(code=handler.handle_gradcheck(trials, not no_model, op))


@app.command()
def propcheck(
    ctx: typer.Context,
    published_dims: Annotated[bool, typer.Option("--published-dims", "--paper-dims",
                                             help="Trace shapes at the published model sizes.")] = False,
):
    """Check propagation masks, the spectral oracle, dense-mask equivalence and shape contracts."""
    handler = get_handler(ctx)
    raise typer.Exit(code=handler.handle_propcheck(published_dims))


@app.command()
def ablate(
    ctx: typer.Context,
    seeds: Annotated[str, typer.Option("--seeds", help="Comma-separated training seeds.")] = "0,1,2",
    n_train: Annotated[int, typer.Option("--n-train", help="Training clips per seed.")] = 8,
    n_val: Annotated[int, typer.Option("--n-val", help="Validation clips per seed.")] = 4,
    iterations: Annotated[Optional[int], typer.Option("--iterations", help="Stage-1 iterations.")] = None,
    stage2_iterations: Annotated[Optional[int], typer.Option("--stage2-iterations",
                                                             help="Propagator iterations.")] = None,
    strict: Annotated[bool, typer.Option("--strict", help="Exit 1 if the mIoU ordering is violated.")] = False,
):
    """Train the component grid and the propagation-rule pair; report mIoU per row."""
    try:
        seed_list = parse_ints(seeds)
    except ConfigError as e:
        _fail(str(e))
    handler = get_handler(ctx, iterations=iterations, stage2_iterations=stage2_iterations)
    raise typer.Exit(code=handler.handle_ablate(seed_list, n_train, n_val, strict))


@app.callback()
def main_callback(
    ctx: typer.Context,
    config: Annotated[Optional[Path], typer.Option("--config", help="key=value or YAML configuration file.")] = None,
    seed: Annotated[Optional[int], typer.Option("--seed", help="Master seed.")] = None,
    threads: Annotated[Optional[int], typer.Option("--threads", help="Worker threads (0 = logical cores).")] = None,
    json_output: Annotated[bool, typer.Option("--json", help="Machine-readable JSON on stdout.")] = False,
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging.")] = False,
    assignments: Annotated[Optional[List[str]], typer.Option("--set", help="Override a setting: key=value.")] = None,
):
    """Loads configuration shared by every command."""
    setup_logging(log_level="DEBUG" if verbose else "WARNING")
    try:
        load_configuration(config)
        overrides: Dict[str, Any] = parse_assignments(assignments)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}", exc_info=True)
        _fail(f"Invalid configuration: {e}")
    overrides.update({k: v for k, v in (("seed", seed), ("threads", threads)) if v is not None})
    ctx.obj = {"overrides": overrides, "json": json_output, "verbose": verbose}


# --- Main Execution Guard ---

def cli_entry_point():
    """Function to be called by the script entry point in pyproject.toml."""
    app()


if __name__ == "__main__":
    cli_entry_point()
