"""Command-line front end: one subcommand per pipeline stage.

Exit codes: 0 success, 2 configuration error, 3 data/artifact error.
All stages share a single JSON config file (see `hflab config-schema`) and
an output directory holding the staged artifacts plus the run manifest.
"""

from __future__ import annotations

import functools
import json
import sys

import click

from . import pipeline
from .errors import ConfigurationError, DataError, HflabError

EXIT_CONFIG = 2
EXIT_DATA = 3


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigurationError as exc:
            click.echo(f"configuration error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except HflabError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


def _common(fn):
    fn = click.option("--config", "config_path", type=click.Path(), default=None, help="JSON config file.")(fn)
    fn = click.option("--out", "outdir", type=click.Path(), default="run", show_default=True, help="Artifact directory.")(fn)
    return fn


@click.group()
def main():
    """Feature-encoding laboratory for heart-failure onset prediction."""


@main.command()
@_common
@click.option("--seed", type=int, default=None, help="Override the generator seed.")
@_handle_errors
def synth(config_path, outdir, seed):
    """Generate a synthetic cohort plus fixture terminology tables."""
    config = pipeline.load_config(config_path)
    info = pipeline.run_synth(outdir, config, seed=seed)
    click.echo(f"wrote {info['n_patients']} patients to {outdir}")


@main.command()
@_common
@_handle_errors
def label(config_path, outdir):
    """Apply the case/non-case rules and write the labeled cohort."""
    config = pipeline.load_config(config_path)
    info = pipeline.run_label(outdir, config)
    click.echo(
        f"{info['n_records']} cohort records ({info['n_cases']} cases), "
        f"{info['n_excluded']} excluded"
    )


@main.command()
@_common
@click.option("--seed", type=int, default=None, help="Override the split seed.")
@_handle_errors
def encode(config_path, outdir, seed):
    """Split 6:2:2 and write one-hot, sequence, and narrative views."""
    config = pipeline.load_config(config_path)
    info = pipeline.run_encode(outdir, config, seed=seed)
    click.echo(
        f"split {info['split_sizes']}; one-hot dim {info['onehot_dim']}, "
        f"sequence dim {info['sequence_dim']}, {info['n_sequences']} sequences"
    )


@main.command()
@_common
@_handle_errors
def vocab(config_path, outdir):
    """Build the subword vocabulary from training-split narratives."""
    config = pipeline.load_config(config_path)
    info = pipeline.run_vocab(outdir, config)
    click.echo(f"vocabulary of {info['vocab_size']} pieces written")


@main.command()
@_common
@click.option("--encoding", type=click.Choice(["raw_icd", "phewas", "subword"]), required=True)
@click.option("--top-k", type=int, default=400, show_default=True)
@_handle_errors
def density(config_path, outdir, encoding, top_k):
    """Rank features by the number of distinct patients carrying them."""
    config = pipeline.load_config(config_path)
    info = pipeline.run_density(outdir, config, encoding, top_k=top_k)
    click.echo(f"{info['n_features']} features -> {info['path']}")


@main.command()
@_common
@click.option("--model", "model_name", type=click.Choice(list(pipeline.MODEL_FAMILIES)), required=True)
@click.option("--seed", type=int, default=None, help="Override the training seed.")
@_handle_errors
def train(config_path, outdir, model_name, seed):
    """Train one model family and write its checkpoint."""
    config = pipeline.load_config(config_path)
    info = pipeline.run_train(outdir, config, model_name, seed=seed)
    click.echo(f"trained {model_name}: {json.dumps(info['meta'], sort_keys=True)}")


@main.command()
@_common
@click.option("--model", "model_name", type=click.Choice(list(pipeline.MODEL_FAMILIES)), default=None)
@click.option("--combos", is_flag=True, help="Run the feature-combination study instead.")
@click.option("--seed", type=int, default=None)
@_handle_errors
def evaluate(config_path, outdir, model_name, combos, seed):
    """Compute test metrics for a trained model (or the combination study)."""
    config = pipeline.load_config(config_path)
    if combos:
        info = pipeline.run_combo_study(outdir, config, seed=seed)
        click.echo(f"combination study: {info['rows']} rows -> {info['path']}")
        return
    if model_name is None:
        raise ConfigurationError("evaluate needs --model NAME or --combos")
    info = pipeline.run_evaluate(outdir, config, model_name)
    report = info["report"]
    auc = "n/a" if report["auc"] is None else f"{report['auc']:.3f}"
    click.echo(f"{model_name}: F1 {report['f1']:.3f}, AUC {auc} (n={report['n']})")


@main.command()
@_common
@click.option("--model", "model_name", type=click.Choice(list(pipeline.MODEL_FAMILIES)), required=True)
@_handle_errors
def subgroup(config_path, outdir, model_name):
    """Per-cancer-type test metrics for a trained model."""
    config = pipeline.load_config(config_path)
    info = pipeline.run_subgroup(outdir, config, model_name)
    click.echo(f"subgroup sizes: {json.dumps(info['groups'], sort_keys=True)}")


@main.command()
@_common
@click.option("--patient-id", default=None, help="Narrative to explain (default: top-scored test case).")
@click.option("--samples", type=int, default=None, help="Perturbation sample count.")
@click.option("--seed", type=int, default=None)
@_handle_errors
def explain(config_path, outdir, patient_id, samples, seed):
    """Local surrogate explanation of the transformer on one narrative."""
    config = pipeline.load_config(config_path)
    info = pipeline.run_explain(outdir, config, patient_id=patient_id, n_samples=samples, seed=seed)
    click.echo(f"explained {info['patient_id']} -> {info['path']}")


@main.command()
@_common
@_handle_errors
def report(config_path, outdir):
    """Collate metric CSVs into aligned-text comparison tables."""
    config = pipeline.load_config(config_path)
    info = pipeline.run_report(outdir, config)
    click.echo(f"report with {info['sections']} sections -> {info['path']}")


@main.command("config-schema")
def config_schema():
    """Print the default configuration (all recognized keys)."""
    click.echo(json.dumps(pipeline.DEFAULT_CONFIG, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
