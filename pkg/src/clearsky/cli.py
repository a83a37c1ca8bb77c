"""Command-line surface: synth / train / eval / report.

Exit codes: 0 ok, 1 runtime failure, 2 config or argument validation failure.
"""

from __future__ import annotations

import sys
import zlib
from pathlib import Path

import click
import numpy as np

from . import report as report_mod
from .checkpoint import load_backbone
from .config import (
    ConfigError,
    RunConfig,
    apply_override,
    apply_preset,
    load_config,
)
from .errors import ClearskyError
from .imaging import (
    Dataset,
    DegradationParams,
    HazeParams,
    RainParams,
    SamplePair,
    SnowParams,
    SYNTHESIZERS,
    load_dataset,
    random_clean_image,
    save_dataset,
)
from .trainer import evaluate, run_sequence


def default_degradation(kind: str, size: int, seed: int) -> DegradationParams:
    """Degradation strengths scaled to the image side length."""
    return DegradationParams(
        haze=HazeParams(beta=1.6, airlight=0.9),
        rain=RainParams(streak_count=max(4, size * size // 48),
                        angle_deg=70.0, length_px=max(4.0, size / 2.5),
                        intensity=0.6),
        snow=SnowParams(flake_count=max(4, size * size // 40),
                        radius_range_px=(0.8, max(1.2, size / 12)),
                        opacity=0.7),
        seed=seed,
    )


def synthesize_dataset(kind: str, split: str, count: int, size: int,
                       seed: int) -> Dataset:
    if kind not in SYNTHESIZERS:
        raise ConfigError(f"unknown task kind {kind!r}")
    rng = np.random.default_rng((seed, zlib.crc32(kind.encode()), split == "test"))
    pairs = []
    for _ in range(count):
        clean = random_clean_image(size, size, rng)
        params = default_degradation(kind, size, int(rng.integers(2**31)))
        degraded = SYNTHESIZERS[kind](clean, params)
        pairs.append(SamplePair(degraded, clean, 1))
    return Dataset(tuple(pairs), kind, split)


@click.group()
def cli():
    """Continual adverse-weather restoration experiments."""


@cli.command()
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--kinds", default="haze,rain,snow", show_default=True)
@click.option("--train-count", default=200, show_default=True)
@click.option("--test-count", default=50, show_default=True)
@click.option("--size", default=24, show_default=True)
@click.option("--seed", default=0, show_default=True)
def synth(out, kinds, train_count, test_count, size, seed):
    """Generate synthetic degraded/clean dataset directories."""
    for kind in kinds.split(","):
        kind = kind.strip()
        for split, count in (("train", train_count), ("test", test_count)):
            ds = synthesize_dataset(kind, split, count, size, seed)
            root = out / f"{kind}_{split}"
            save_dataset(ds, root)
            click.echo(f"wrote {len(ds)} pairs to {root}")


@cli.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(path_type=Path))
@click.option("--preset", default=None,
              help="named experiment preset applied over the config")
@click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE",
              help="dotted-path config override, repeatable")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--resume", is_flag=True,
              help="continue from the latest task-boundary checkpoint")
def train(config_path, preset, overrides, out, resume):
    """Run a continual training sequence and write checkpoints + report."""
    cfg_dict = load_config(config_path)
    if preset:
        cfg_dict = apply_preset(cfg_dict, preset)
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override must be KEY=VALUE, got {ov!r}")
        key, value = ov.split("=", 1)
        apply_override(cfg_dict, key, value)
    cfg = RunConfig.from_dict(cfg_dict)
    report = run_sequence(cfg, out, resume=resume)
    click.echo(f"finished {len(report.averages)} stage(s); report in {out}")


@cli.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(path_type=Path))
@click.option("--data", "data_dirs", multiple=True, required=True,
              type=click.Path(path_type=Path))
@click.option("--out", default=None, type=click.Path(path_type=Path))
def eval_cmd(checkpoint, data_dirs, out):
    """Evaluate a backbone checkpoint on one or more test datasets."""
    model = load_backbone(checkpoint)
    test_sets = [(Path(d).name, load_dataset(d)) for d in data_dirs]
    rows = evaluate(model, test_sets)
    lines = ["dataset,psnr_db,ssim"]
    for r in rows:
        line = f"{r.dataset_id},{r.psnr_db:.6f},{r.ssim:.6f}"
        lines.append(line)
        click.echo(line)
    if out:
        Path(out).write_text("\n".join(lines) + "\n")


@cli.command("report")
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(path_type=Path))
@click.option("--out", required=True, type=click.Path(path_type=Path))
def report_cmd(run_dirs, out):
    """Emit metric tables and plots for finished runs."""
    written = report_mod.emit(list(run_dirs), out)
    for path in written:
        click.echo(str(path))


def main():
    try:
        cli(standalone_mode=False)
    except (ConfigError, click.UsageError) as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(2)
    except click.exceptions.Exit as e:
        sys.exit(e.exit_code)
    except click.Abort:
        sys.exit(1)
    except ClearskyError as e:
        click.echo(f"error: {e}", err=True)
        sys.exit(1)
    except OSError as e:
        click.echo(f"io error: {e}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
