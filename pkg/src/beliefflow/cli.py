"""Command-line interface: dataset generation, fitting, evaluation,
ablation grids, density exports, and the elicitation service."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .experiments import (
    ExperimentSpec,
    build_model,
    candidate_sampler_for,
    export_density_grid,
    export_marginals,
    generate_dataset,
    run_ablation,
    run_experiment,
    subseed,
)
from .flows import FlowModel
from .preference import ObjectiveConfig, PreferenceDataset
from .targets import TARGET_NAMES, make_target
from .training import TrainConfig, train


@click.group()
def main():
    """Belief-density estimation from preferential data."""


def _target_option(fn):
    return click.option("--target", type=click.Choice(TARGET_NAMES), required=True)(fn)


_spec_options = [
    click.option("--n", type=int, required=True, help="number of rankings"),
    click.option("--k", type=int, default=5, show_default=True),
    click.option("--s-true", type=float, default=1.0, show_default=True),
    click.option("--s-lik", type=float, default=1.0, show_default=True),
    click.option("-w", "--lambda-weight", type=float, default=1.0 / 3.0, show_default=True,
                 help="gaussian mixture weight of the candidate distribution"),
    click.option("--model", type=click.Choice(["flow", "factorized-normal"]), default="flow",
                 show_default=True),
    click.option("--prior/--no-prior", default=True, show_default=True),
    click.option("--iterations", type=int, default=12_000, show_default=True),
    click.option("--learning-rate", type=float, default=3e-4, show_default=True),
    click.option("--batch-size", type=int, default=4, show_default=True),
    click.option("--replicates", type=int, default=5, show_default=True),
    click.option("--workers", type=int, default=1, show_default=True),
]


def _with_spec_options(fn):
    for opt in reversed(_spec_options):
        fn = opt(fn)
    return fn


def _build_spec(target, n, k, s_true, s_lik, lambda_weight, model, prior,
                iterations, learning_rate, batch_size, replicates, seed) -> ExperimentSpec:
    return ExperimentSpec(
        target=target, n=n, k=k, s_true=s_true, s_lik=s_lik,
        lambda_weight=lambda_weight, model=model, prior=prior,
        train=TrainConfig(iterations=iterations, learning_rate=learning_rate,
                          batch_size=batch_size),
        seeds=tuple(range(seed, seed + replicates)),
    )


@main.command()
@_target_option
@click.option("--n", type=int, required=True)
@click.option("--k", type=int, default=5, show_default=True)
@click.option("--s-true", type=float, default=1.0, show_default=True)
@click.option("-w", "--lambda-weight", type=float, default=1.0 / 3.0, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
def generate(target, n, k, s_true, lambda_weight, seed, out_dir):
    """Simulate expert rankings and write them as JSONL."""
    tgt = make_target(target)
    sampler = candidate_sampler_for(tgt, lambda_weight)
    path = out_dir / "data.jsonl"
    generate_dataset(tgt, sampler, k, n, s_true, seed, path=path)
    click.echo(f"wrote {n} rankings to {path}")


@main.command(name="train")
@_target_option
@click.option("--data", type=click.Path(exists=True, path_type=Path), required=True,
              help="dataset JSONL produced by 'generate'")
@click.option("--model", type=click.Choice(["flow", "factorized-normal"]), default="flow",
              show_default=True)
@click.option("--s-lik", type=float, default=1.0, show_default=True)
@click.option("--prior/--no-prior", default=True, show_default=True)
@click.option("--iterations", type=int, default=12_000, show_default=True)
@click.option("--learning-rate", type=float, default=3e-4, show_default=True)
@click.option("--batch-size", type=int, default=4, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
def train_cmd(target, data, model, s_lik, prior, iterations, learning_rate, batch_size,
              seed, out_dir):
    """Fit a model to an existing preference dataset."""
    tgt = make_target(target)
    dataset = PreferenceDataset.from_jsonl(data)
    spec = ExperimentSpec(target=target, n=len(dataset), k=dataset.k, model=model,
                          prior=prior, s_lik=s_lik,
                          train=TrainConfig(iterations=iterations, seed=seed,
                                            learning_rate=learning_rate,
                                            batch_size=min(batch_size, len(dataset))),
                          seeds=(seed,))
    mdl = build_model(spec, tgt, seed=subseed(seed, 1))
    trained, report = train(mdl, dataset, ObjectiveConfig(s_lik=s_lik, include_prior=prior),
                            spec.train)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.save_json(out_dir / "train_report.json")
    if isinstance(trained, FlowModel):
        trained.save_checkpoint(out_dir / "checkpoint.json")
        click.echo(f"checkpoint written to {out_dir / 'checkpoint.json'}")
    else:
        (out_dir / "normal_params.json").write_text(
            json.dumps({"mean": trained.params.segment("mean").tolist(),
                        "log_sd": trained.params.segment("log_sd").tolist()}),
            encoding="utf-8")
        click.echo(f"parameters written to {out_dir / 'normal_params.json'}")


@main.command(name="eval")
@_target_option
@_with_spec_options
@click.option("--seed", type=int, required=True, help="base replicate seed")
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
def eval_cmd(target, n, k, s_true, s_lik, lambda_weight, model, prior, iterations,
             learning_rate, batch_size, replicates, workers, seed, out_dir):
    """Run a full experiment: generate, fit, score all three metrics."""
    spec = _build_spec(target, n, k, s_true, s_lik, lambda_weight, model, prior,
                       iterations, learning_rate, batch_size, replicates, seed)
    result = run_experiment(spec, out_dir, workers=workers)
    click.echo(json.dumps(result["aggregate"], indent=2))


@main.command()
@_target_option
@_with_spec_options
@click.option("--param", type=click.Choice(["k", "n", "s", "w"]), required=True)
@click.option("--values", required=True, help="comma-separated grid, e.g. 2,5,10")
@click.option("--seed", type=int, required=True)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
def ablate(target, n, k, s_true, s_lik, lambda_weight, model, prior, iterations,
           learning_rate, batch_size, replicates, workers, param, values, seed, out_dir):
    """Grid of experiments over k, n, s or the candidate-mixture weight."""
    spec = _build_spec(target, n, k, s_true, s_lik, lambda_weight, model, prior,
                       iterations, learning_rate, batch_size, replicates, seed)
    grid = [float(v) if param in ("s", "w") else int(v) for v in values.split(",")]
    run_ablation(spec, param, grid, out_dir, workers=workers)
    click.echo(f"ablation table written to {out_dir / 'ablation.csv'}")


@main.command(name="export-grid")
@click.option("--checkpoint", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--axes", default="0,1", show_default=True)
@click.option("--res", type=int, default=64, show_default=True)
@click.option("--marginals", is_flag=True, help="also write 1-d marginal histograms")
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
def export_grid(checkpoint, axes, res, marginals, out_dir):
    """Export a density grid (and optionally marginals) from a checkpoint."""
    model = FlowModel.load_checkpoint(checkpoint)
    i, j = (int(p) for p in axes.split(","))
    out_dir.mkdir(parents=True, exist_ok=True)
    export_density_grid(model, out_dir / "density_grid.csv", axes=(i, j), resolution=res)
    click.echo(f"grid written to {out_dir / 'density_grid.csv'}")
    if marginals:
        export_marginals(model, out_dir / "marginals.csv", resolution=res)
        click.echo(f"marginals written to {out_dir / 'marginals.csv'}")


@main.command()
@click.option("--addr", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--data-dir", type=click.Path(path_type=Path), required=True)
@click.option("--frontend", type=click.Path(path_type=Path), default=None,
              help="directory with the built browser UI (served at /)")
def serve(addr, port, data_dir, frontend):
    """Run the live elicitation HTTP service."""
    import uvicorn

    from .service.app import create_app

    if frontend is None:
        bundled = Path(__file__).resolve().parents[2] / "frontend" / "dist"
        frontend = bundled if bundled.exists() else None
    app = create_app(data_dir, frontend_dir=frontend)
    uvicorn.run(app, host=addr, port=port, log_level="info")


if __name__ == "__main__":
    main()
