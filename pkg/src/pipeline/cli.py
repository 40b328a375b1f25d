"""
Command Line Interface for the multi-behavior recommender pipeline
"""

import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

try:  # typer >= 0.26 vendors its own click; catch the exceptions it actually raises
    from typer import _click as click
except ImportError:
    import click
import pandas as pd
import typer
from loguru import logger
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from core.config import RunConfig
from core.exceptions import ConfigError
from evaluation.report import render_report
from .config import resolve_config
from .pipeline_manager import CONFIG_FILE, PipelineManager

app = typer.Typer(help="Multi-behavior sequential recommender with customized prompt tuning",
                  add_completion=False, no_args_is_help=True)
console = Console(stderr=False)

_sinks: Dict[str, int] = {}

ConfigOption = typer.Option(None, "--config", help="YAML config file")
SetOption = typer.Option(None, "--set", help="Override as section.key=value (repeatable)")


def configure_logging(config: RunConfig) -> None:
    """stderr plus the global file sink; safe to call more than once"""
    if "stderr" in _sinks:
        return
    logger.remove()
    _sinks["stderr"] = logger.add(sys.stderr, level=config.logging.level, format=config.logging.format)
    if config.logging.file:
        _sinks["file"] = logger.add(config.logging.file, rotation="10 MB", retention="7 days",
                                    level=config.logging.level, format=config.logging.format)


def attach_run_log(run_dir: Path, config: RunConfig) -> None:
    key = f"run:{run_dir}"
    if key in _sinks:
        return
    _sinks[key] = logger.add(str(Path(run_dir) / "run.log"), rotation="10 MB", retention="7 days",
                             level=config.logging.level, format=config.logging.format)


def load_settings(config_path: Optional[str], overrides: Optional[List[str]],
                  values: Optional[Dict[str, Any]] = None, run_dir: Optional[str] = None) -> RunConfig:
    """Resolve the config; commands on an existing run start from its echoed config"""
    if config_path is None and run_dir is not None and (Path(run_dir) / CONFIG_FILE).exists():
        config_path = str(Path(run_dir) / CONFIG_FILE)
    config = resolve_config(config_path, overrides or (), values)
    configure_logging(config)
    return config


def parse_ks(text: Optional[str]) -> Optional[List[int]]:
    if text is None:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--k expects comma-separated integers, got '{text}'", key_path="eval.ks")


def finish(result: Dict[str, Any]) -> int:
    """Render a stage result and map it to an exit code"""
    if result.get("success"):
        return 0
    console.print(Panel.fit(
        f"[bold red]{result.get('type', 'Error')}[/bold red]: {result.get('error', 'unknown error')}",
        title=f"{result.get('stage', 'pipeline')} failed", border_style="red",
    ))
    if result.get("suggestion"):
        console.print(f"Did you mean [cyan]{result['suggestion']}[/cyan]?")
    return int(result.get("exit_code", 2))


def frame_table(frame: pd.DataFrame, title: str) -> Table:
    table = Table(title=title)
    for column in frame.columns:
        table.add_column(str(column), justify="right")
    for row in frame.itertuples(index=False):
        table.add_row(*[f"{v:.4g}" if isinstance(v, float) else str(v) for v in row])
    return table


@app.command()
def synth(
    seed: Optional[int] = typer.Option(None, "--seed", help="Corpus seed"),
    out: str = typer.Option("data", "--out", help="Output directory"),
    config: Optional[str] = ConfigOption,
    set_: Optional[List[str]] = SetOption,
):
    """Write a synthetic multi-behavior corpus"""
    settings = load_settings(config, set_, {"seed": seed, "synth.seed": seed})
    result = PipelineManager(settings).synthesize(out)
    if result["success"]:
        console.print(f"[green]Wrote {result['records']} records for {result['users']} users "
                      f"to {result['out']}[/green] (click noise {result['click_noise_fraction']:.3f})")
    return finish(result)


@app.command()
def pretrain(
    data: str = typer.Option("data", "--data", help="Directory with interactions.tsv"),
    out: Optional[str] = typer.Option(None, "--out", help="Parent directory for run directories"),
    no_ds: bool = typer.Option(False, "--no-ds", help="Identity filter instead of the learnable one"),
    config: Optional[str] = ConfigOption,
    set_: Optional[List[str]] = SetOption,
):
    """Filter, split and pretrain the backbone"""
    settings = load_settings(config, set_, {
        "paths.runs_dir": out, "model.filter_mode": "identity" if no_ds else None,
    })
    manager = PipelineManager(settings)
    attach_run_log(manager.resolve_run_dir(), settings)
    result = manager.pretrain(data)
    if result["success"]:
        console.print(f"[green]Pretrained backbone in {result['run_dir']}[/green] "
                      f"(best epoch {result['best_epoch']} of {result['epochs_run']})")
    return finish(result)


@app.command()
def tune(
    run: str = typer.Option(..., "--run", help="Run directory from pretrain"),
    no_ds: bool = typer.Option(False, "--no-ds", help="Bypass the backbone filters while tuning"),
    no_ps: bool = typer.Option(False, "--no-ps", help="Static prompts shared by all users"),
    no_pg: bool = typer.Option(False, "--no-pg", help="Prompts on the first layer only"),
    no_ct: bool = typer.Option(False, "--no-ct", help="Drop the compactness regularizer"),
    full_finetune: bool = typer.Option(False, "--full-finetune", help="Train backbone and prompts"),
    target_behavior: Optional[int] = typer.Option(None, "--target-behavior"),
    config: Optional[str] = ConfigOption,
    set_: Optional[List[str]] = SetOption,
):
    """Tune customized prompts on a frozen backbone"""
    settings = load_settings(config, set_, {
        "tune.no_denoise": no_ds or None, "tune.static_prompt": no_ps or None,
        "tune.first_layer_only": no_pg or None,
        "tune.no_compactness": no_ct or None, "tune.full_finetune": full_finetune or None,
        "tune.target_behavior": target_behavior,
    }, run_dir=run)
    if Path(run).is_dir():
        attach_run_log(Path(run), settings)
    result = PipelineManager(settings).tune(run)
    if result["success"]:
        render_report(result["report"], console)
        budget = result["budget"]
        console.print(f"trainable {budget['trainable']} of {budget['total']} ({budget['ratio']:.4%}), "
                      f"backbone unchanged: {result['backbone_unchanged']}")
    return finish(result)


@app.command("eval")
def evaluate(
    run: str = typer.Option(..., "--run", help="Run directory"),
    target_behavior: Optional[int] = typer.Option(None, "--target-behavior"),
    cold_start: bool = typer.Option(False, "--cold-start",
                                    help="Only users with at most two target-behavior interactions"),
    k: Optional[str] = typer.Option(None, "--k", help="Cut-offs, e.g. 10,20"),
    n_neg: Optional[int] = typer.Option(None, "--n-neg", help="Sampled negatives per user"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Negative sampling seed"),
    config: Optional[str] = ConfigOption,
    set_: Optional[List[str]] = SetOption,
):
    """Leave-one-out evaluation with sampled negatives"""
    settings = load_settings(config, set_, {
        "eval.target_behavior": target_behavior, "eval.cold_start": cold_start or None,
        "eval.ks": parse_ks(k), "eval.n_neg": n_neg, "eval.seed": seed,
    }, run_dir=run)
    if Path(run).is_dir():
        attach_run_log(Path(run), settings)
    result = PipelineManager(settings).evaluate(run)
    if result["success"]:
        render_report(result["report"], console)
        if not result["prompted"]:
            console.print("[yellow]No tuned prompts in this run; scored with the bare backbone[/yellow]")
    return finish(result)


@app.command("export-prompts")
def export_prompts(
    run: str = typer.Option(..., "--run", help="Run directory with tuned prompts"),
    out: Optional[str] = typer.Option(None, "--out", help="Defaults to <run>/prompts"),
    config: Optional[str] = ConfigOption,
    set_: Optional[List[str]] = SetOption,
):
    """CSV export of per-user prompt vectors"""
    settings = load_settings(config, set_, run_dir=run)
    result = PipelineManager(settings).export_prompts(run, out)
    if result["success"]:
        for name, path in result["paths"].items():
            console.print(f"{name}: {path}")
    return finish(result)


@app.command()
def gradcheck(
    seed: Optional[int] = typer.Option(None, "--seed"),
    out: Optional[str] = typer.Option(None, "--out", help="CSV path for the table"),
    config: Optional[str] = ConfigOption,
    set_: Optional[List[str]] = SetOption,
):
    """Finite-difference gradient check of every learnable op"""
    settings = load_settings(config, set_, {"seed": seed})
    result = PipelineManager(settings).gradcheck()
    if result["success"]:
        table = result["table"]
        console.print(frame_table(table, "Gradient check"))
        if out:
            table.to_csv(out, index=False)
        if not result["passed"]:
            console.print("[red]Gradient check failed[/red]")
            return 2
    return finish(result)


@app.command()
def bench(
    out: Optional[str] = typer.Option(None, "--out", help="Directory for bench_*.csv"),
    run: Optional[str] = typer.Option(None, "--run", help="Add the prompt vs full fine-tuning table for this run"),
    epochs: int = typer.Option(2, "--epochs", help="Epochs per mode in the efficiency table"),
    config: Optional[str] = ConfigOption,
    set_: Optional[List[str]] = SetOption,
):
    """Runtime scaling, parameter census and tuning efficiency"""
    settings = load_settings(config, set_, run_dir=run)
    result = PipelineManager(settings).bench(out, run_dir=run, epochs=epochs)
    if result["success"]:
        for name, table in result["tables"].items():
            console.print(frame_table(table, name))
    return finish(result)


@app.command()
def ablate(
    out: str = typer.Option("runs/ablation", "--out", help="Output directory for the tables"),
    data: Optional[str] = typer.Option(None, "--data", help="Use this corpus instead of one per seed"),
    seeds: Optional[str] = typer.Option(None, "--seeds", help="Comma-separated seeds"),
    config: Optional[str] = ConfigOption,
    set_: Optional[List[str]] = SetOption,
):
    """Seed-paired ablation of each component against the full model"""
    seed_list = parse_ks(seeds)
    settings = load_settings(config, set_, {"experiments.seeds": seed_list})
    result = PipelineManager(settings).ablate(out, seeds=seed_list, data_dir=data)
    if result["success"]:
        console.print(frame_table(result["tables"]["summary"], "Ablation"))
    return finish(result)


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point; returns the process exit code"""
    try:
        code = app(args=list(sys.argv[1:] if argv is None else argv), standalone_mode=False)
    except ConfigError as e:
        configure_logging(RunConfig())
        logger.error(e.message)
        return finish({"success": False, "stage": "config", **e.to_dict()})
    except FileNotFoundError as e:
        console.print(f"[red]File not found: {e}[/red]")
        return 1
    except click.exceptions.Abort:
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    return code if isinstance(code, int) else 0


if __name__ == "__main__":
    sys.exit(main())
