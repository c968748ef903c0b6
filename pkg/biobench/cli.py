import tomllib
from pathlib import Path
from typing import Annotated, Optional

import typer
from pydantic import ValidationError

from biobench.errors import AggregationError, BiobenchError, CheckpointError, ConfigurationError
from biobench.util import configure_logging

app = typer.Typer(name="biobench", help="Bio-plausible learning rules benchmarked on small CNNs.")
_verbose = typer.Option("--verbose", "-v", help="Log progress to stderr.")

EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _fail(message: str, code: int) -> typer.Exit:
    typer.echo(message, err=True)
    return typer.Exit(code)


def _validation_message(source: str, exc: ValidationError) -> str:
    lines = [f"{source}: invalid configuration"]
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        lines.append(f"  {loc}: {err['msg']}")
    return "\n".join(lines)


@app.command()
def run(
    config: Annotated[str, typer.Argument(help="Experiment TOML file or bundled preset name.")],
    threads: Annotated[
        Optional[int], typer.Option("--threads", "-t", help="Worker threads (default: CPU count).")
    ] = None,
    data_dir: Annotated[
        Optional[Path], typer.Option("--data-dir", help="CIFAR directory (overrides BIOBENCH_DATA_DIR).")
    ] = None,
    synthetic: Annotated[
        bool, typer.Option("--synthetic", help="Use the bundled shapes dataset instead of CIFAR.")
    ] = False,
    output_dir: Annotated[
        Optional[Path], typer.Option("--output-dir", "-o", help="Override the experiment's output_dir.")
    ] = None,
    verbose: Annotated[bool, _verbose] = False,
):
    """Run every configuration of an experiment sweep and write JSONL + CSV results."""
    from biobench.util import get_datasets, get_thread_count, load_experiment
    from biobench.workflow import expand_sweep, run_experiment, summary_frame

    configure_logging(verbose)
    try:
        experiment = load_experiment(config)
        if output_dir is not None:
            experiment = experiment.model_copy(update={"output_dir": output_dir})
        dataset = "synthetic" if synthetic else None
        configs = expand_sweep(experiment, dataset)
        workers = get_thread_count(threads)
    except tomllib.TOMLDecodeError as e:
        raise _fail(f"{config}: parse error: {e}", EXIT_USAGE)
    except ValidationError as e:
        raise _fail(_validation_message(config, e), EXIT_USAGE)
    except ConfigurationError as e:
        raise _fail(str(e), EXIT_USAGE)

    if not configs:
        raise _fail(f"{config}: no runs (a sweep axis is empty)", EXIT_USAGE)

    typer.echo(f"{experiment.name}: {len(configs)} runs on {workers} threads")
    try:
        train_ds, test_ds = get_datasets(experiment, data_dir, synthetic)
    except BiobenchError as e:
        raise _fail(f"could not load dataset: {e}", EXIT_RUNTIME)

    records = run_experiment(experiment, train_ds, test_ds, workers, dataset)
    out = Path(experiment.output_dir)
    typer.echo(f"wrote {out / (experiment.name + '.jsonl')} and {out / (experiment.name + '.csv')}")

    for row in summary_frame(records).itertuples(index=False):
        score = "failed" if row.runs == 0 else f"{row.mean:.4f} ± {row.std:.4f}"
        typer.echo(
            f"  {row.rule:<12} data={row.data_fraction:<5g} noise={row.noise_kind}:{row.noise_level:<5g} "
            f"sparsity={row.sparsity:<5g} {score}  (runs={row.runs}, failed={row.failed})"
        )

    failed = sum(r.failed for r in records)
    if failed:
        raise _fail(f"{failed} of {len(records)} runs failed; partial results kept", EXIT_RUNTIME)


@app.command()
def filters(
    checkpoint: Annotated[Path, typer.Argument(help="Checkpoint written by `run`.")],
    out_image: Annotated[Path, typer.Argument(help="Output PPM (P6) image.")],
):
    """Render the first conv layer's filters as a tiled PPM image."""
    from biobench.checkpoint import load_network
    from biobench.filters import render_filter_grid

    try:
        net = load_network(checkpoint)
        rows, cols = render_filter_grid(net, out_image)
    except (CheckpointError, ConfigurationError) as e:
        raise _fail(f"{checkpoint}: {e}", EXIT_USAGE)
    typer.echo(f"wrote {rows}x{cols} filter grid to {out_image}")


@app.command()
def curves(
    jsonl: Annotated[Path, typer.Argument(help="Run records written by `run`.")],
    out_csv: Annotated[Path, typer.Argument(help="Output CSV of per-epoch mean/std.")],
):
    """Aggregate run records into per-epoch mean/std curves."""
    from biobench.store import read_records
    from biobench.workflow import curves_frame

    try:
        records = read_records(jsonl)
    except FileNotFoundError:
        raise _fail(f"{jsonl}: no such file", EXIT_USAGE)
    except ConfigurationError as e:
        raise _fail(str(e), EXIT_USAGE)
    if not records:
        raise _fail(f"{jsonl}: no runs", EXIT_USAGE)

    try:
        frame = curves_frame(records)
    except AggregationError as e:
        raise _fail(f"{jsonl}: {e}", EXIT_USAGE)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_csv, index=False)
    typer.echo(f"wrote {len(frame)} rows to {out_csv}")


@app.command()
def presets():
    """List the bundled experiment presets."""
    from biobench.util import load_experiment, preset_names

    for name in preset_names():
        experiment = load_experiment(name)
        typer.echo(f"{name:<8} {experiment.dataset:<9} {len(experiment.sweep.rules)} rules, "
                   f"{len(experiment.sweep.seeds)} seeds, {experiment.training.epochs} epochs")
