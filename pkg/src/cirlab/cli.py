"""Command-line front end: stream generation, training, evaluation, comparison.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime/numerical error.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from .errors import CirlabError, ConfigError, StreamValidationError
from .losses import LossWeights
from .metrics import MetricsReport, evaluate, scenario_average
from .runconfig import ExperimentConfig, RunManifest, resolve_config
from .stream import (
    build_stream,
    build_test_set,
    load_stream,
    make_dataset,
    read_stream_manifest,
    validate_stream,
    write_stream_manifest,
)
from .trainer import (
    load_trainer_checkpoint,
    run_finetune_baseline,
    run_stream,
    save_trainer_checkpoint,
)

SCENARIO_COLUMNS = ("S1", "S2", "S3")


@click.group()
def cli():
    """Continual-learning lab for class-incremental streams with repetition."""


def _config_options(f):
    f = click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                     help="JSON config file; defaults apply when omitted.")(f)
    f = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                     help="Override a config entry, e.g. --set train.lr=1e-3")(f)
    f = click.option("--seed", type=int, default=None, help="Set both stream and train seeds.")(f)
    f = click.option("--scenario", type=click.Choice(SCENARIO_COLUMNS), default=None)(f)
    return f


@cli.command("gen-stream")
@_config_options
@click.option("--out", "out_path", type=click.Path(), required=True, help="Manifest output path.")
def cmd_gen_stream(config_path, overrides, seed, scenario, out_path):
    """Generate a stream manifest and print its composition summary."""
    cfg = resolve_config(config_path, overrides, seed, scenario)
    dataset = make_dataset(cfg.stream)
    stream = build_stream(dataset, cfg.stream)
    test = build_test_set(dataset, cfg.stream)
    stats = validate_stream(stream, cfg.stream, test)
    write_stream_manifest(out_path, stream, cfg.stream)
    for line in stats.summary_lines():
        click.echo(line)
    click.echo(f"wrote {out_path}")


@cli.command("validate-stream")
@click.argument("manifest_path", type=click.Path(exists=True))
def cmd_validate_stream(manifest_path):
    """Recheck every invariant of a stream manifest."""
    config, stream = load_stream(manifest_path)
    dataset = make_dataset(config)
    test = build_test_set(dataset, config)
    stats = validate_stream(stream, config, test)
    for line in stats.summary_lines():
        click.echo(line)
    click.echo("stream manifest is valid")


ARTIFACTS = {
    "run_manifest": "run_manifest.json",
    "metrics_json": "metrics.json",
    "metrics_csv": "metrics.csv",
    "train_log": "train_log.jsonl",
    "checkpoint": "checkpoint.npz",
}


def _run_training(cfg: ExperimentConfig, out_dir: Path, label: str, baseline: bool,
                  zero_weights: bool, stream_path=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        config=cfg,
        artifacts=dict(ARTIFACTS),
        label=label,
        baseline=baseline,
        zero_weights=zero_weights,
    )
    # manifest first: on mid-run failure the partial artifacts stay interpretable
    manifest.save(out_dir / ARTIFACTS["run_manifest"])

    dataset = make_dataset(cfg.stream)
    if stream_path is not None:
        stream_cfg, stream = load_stream(stream_path)
        if stream_cfg != cfg.stream:
            raise ConfigError(
                f"explicit stream settings disagree with the config embedded in {stream_path}; "
                "drop the conflicting --config/--set/--seed/--scenario values or regenerate"
            )
    else:
        stream = build_stream(dataset, cfg.stream)
    test = build_test_set(dataset, cfg.stream)
    validate_stream(stream, cfg.stream, test)

    train_cfg = cfg.train
    if zero_weights:
        train_cfg = dataclasses.replace(
            train_cfg,
            weights=LossWeights(0.0, 0.0, 0.0, 0.0, train_cfg.weights.temperature),
        )
    runner = run_finetune_baseline if baseline else run_stream
    result = runner(stream, test, train_cfg, scenario=cfg.stream.scenario, label=label)

    result.report.save(out_dir / ARTIFACTS["metrics_json"], out_dir / ARTIFACTS["metrics_csv"])
    with open(out_dir / ARTIFACTS["train_log"], "w") as fh:
        for rec in result.epoch_records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    save_trainer_checkpoint(out_dir / ARTIFACTS["checkpoint"], result.state)
    return result


@cli.command("train")
@_config_options
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None,
              help="Re-run a previous run from its run manifest.")
@click.option("--stream", "stream_path", type=click.Path(exists=True), default=None,
              help="Train on an existing stream manifest instead of regenerating.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--label", default=None, help="Row label used by `compare`.")
@click.option("--baseline", is_flag=True, help="Run the plain fine-tuning pipeline.")
@click.option("--zero-weights", is_flag=True,
              help="Run the full pipeline with all auxiliary loss weights set to 0.")
def cmd_train(config_path, overrides, seed, scenario, manifest_path, stream_path, out_dir,
              label, baseline, zero_weights):
    """Train over a stream and write metrics, logs, checkpoints, and a run manifest."""
    if manifest_path is not None:
        if config_path or overrides or seed is not None or scenario is not None:
            raise ConfigError("--manifest is exclusive of --config/--set/--seed/--scenario")
        prev = RunManifest.load(manifest_path)
        cfg, baseline, zero_weights = prev.config, prev.baseline, prev.zero_weights
        label = label if label is not None else prev.label
    else:
        # a stream manifest supplies the stream section; explicit settings must agree
        stream_base = read_stream_manifest(stream_path)[0] if stream_path else None
        cfg = resolve_config(config_path, overrides, seed, scenario, stream_base=stream_base)
    if label is None:
        label = "finetune-baseline" if baseline else "method"
    result = _run_training(cfg, Path(out_dir), label, baseline, zero_weights, stream_path)
    report = result.report
    click.echo(f"label: {label}  scenario: {report.scenario}  seed: {report.seed}")
    for t, (seen, full) in enumerate(zip(report.seen_accuracy, report.full_accuracy)):
        click.echo(f"after exp {t}: seen-class acc {seen:.4f}  full-test acc {full:.4f}")
    click.echo(f"final accuracy: {report.final_accuracy:.4f}")
    click.echo(f"artifacts in {out_dir}")


@cli.command("eval")
@click.option("--run", "run_dir", type=click.Path(exists=True), required=True,
              help="Run directory containing run_manifest.json and checkpoint.npz.")
def cmd_eval(run_dir):
    """Re-evaluate a saved checkpoint on its held-out test set."""
    run_dir = Path(run_dir)
    manifest = RunManifest.load(run_dir / ARTIFACTS["run_manifest"])
    state = load_trainer_checkpoint(run_dir / manifest.artifacts["checkpoint"])
    dataset = make_dataset(manifest.config.stream)
    test = build_test_set(dataset, manifest.config.stream)
    full = evaluate(state.model, state.label_space.classes, test.features, test.labels,
                    batch_size=manifest.config.train.batch_size_eval)
    if state.seen_classes:
        seen = evaluate(state.model, state.label_space.classes, test.features, test.labels,
                        restrict_to=state.seen_classes,
                        batch_size=manifest.config.train.batch_size_eval)
        click.echo(f"seen-class accuracy: {seen:.4f}")
    click.echo(f"full-test accuracy: {full:.4f}")


def _compare_table(reports: list[MetricsReport]) -> list[str]:
    """Rows per label, columns per scenario, plus averages and signed deltas."""
    by_label: dict[str, dict[str, list[float]]] = {}
    order: list[str] = []
    for rep in reports:
        lab = rep.label or "run"
        if lab not in by_label:
            by_label[lab] = {}
            order.append(lab)
        by_label[lab].setdefault(rep.scenario, []).append(rep.final_accuracy)
    rows: dict[str, dict[str, float]] = {}
    for lab in order:
        rows[lab] = {
            sc: 100.0 * scenario_average(vals) for sc, vals in by_label[lab].items()
        }
        rows[lab]["average"] = scenario_average(list(rows[lab].values()))
    cols = [sc for sc in SCENARIO_COLUMNS if any(sc in r for r in rows.values())]
    header = "label," + ",".join(cols) + ",average"
    lines = [header]
    for lab in order:
        cells = [f"{rows[lab][sc]:.2f}" if sc in rows[lab] else "" for sc in cols]
        lines.append(f"{lab}," + ",".join(cells) + f",{rows[lab]['average']:.2f}")
    base = order[0]
    for lab in order[1:]:
        cells = []
        for sc in cols:
            if sc in rows[lab] and sc in rows[base]:
                cells.append(f"{rows[lab][sc] - rows[base][sc]:+.2f}")
            else:
                cells.append("")
        delta_avg = rows[lab]["average"] - rows[base]["average"]
        lines.append(f"delta({lab}-{base})," + ",".join(cells) + f",{delta_avg:+.2f}")
    return lines


@cli.command("compare")
@click.argument("report_paths", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), default=None)
def cmd_compare(report_paths, out_path):
    """Tabulate final accuracies of several runs (first label is the baseline row)."""
    if len(report_paths) < 2:
        raise ConfigError("compare needs at least two report files")
    reports = [MetricsReport.load(p) for p in report_paths]
    lines = _compare_table(reports)
    for line in lines:
        click.echo(line)
    if out_path:
        Path(out_path).write_text("\n".join(lines) + "\n")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.UsageError as e:
        click.echo(f"error: {e.format_message()}", err=True)
        return 1
    except click.ClickException as e:
        click.echo(f"error: {e.format_message()}", err=True)
        return 1
    except (ConfigError, StreamValidationError) as e:
        click.echo(f"error: {e}", err=True)
        return 1
    except CirlabError as e:
        click.echo(f"runtime error: {e}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
