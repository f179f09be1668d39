"""Command-line interface.

Subcommands::

    hybridqrl show-config   print a validated configuration (preset or file)
    hybridqrl pretrain-ae   train and save a standalone autoencoder
    hybridqrl train         train a seeded ensemble into a run directory
    hybridqrl report        compare run directories on a shared window

Every option can also be supplied through environment variables prefixed
``HYBRIDQRL_<COMMAND>_<OPTION>`` (e.g. ``HYBRIDQRL_TRAIN_SEED=7``).
"""
from __future__ import annotations

import sys

import click
import yaml

from . import __version__
from .config import (ConfigError, PRESETS, from_tree, load_config,
                     preset_tree)
from .runner import (RunDirectoryError, pretrain_autoencoder, run_ensemble,
                     write_report)

_SETTINGS = {"auto_envvar_prefix": "HYBRIDQRL",
             "help_option_names": ["-h", "--help"]}


def _resolve_config(config_path, preset, overrides):
    """Merge file/preset selection plus CLI overrides into a validated config."""
    if config_path and preset:
        raise click.UsageError("pass either --config or --preset, not both")
    if config_path:
        try:
            tree = load_config(config_path).to_tree()
        except ConfigError as exc:
            raise click.ClickException(str(exc))
    elif preset:
        tree = preset_tree(preset)
    else:
        raise click.UsageError("pass --config PATH or --preset NAME "
                               f"(presets: {', '.join(sorted(PRESETS))})")
    tree.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return from_tree(tree)
    except ConfigError as exc:
        raise click.ClickException(str(exc))


def _config_options(fn):
    fn = click.option("--config", "config_path",
                      type=click.Path(exists=True, dir_okay=False),
                      help="YAML configuration file.")(fn)
    fn = click.option("--preset", type=click.Choice(sorted(PRESETS)),
                      help="Named built-in configuration.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Base seed override.")(fn)
    return fn


@click.group(context_settings=_SETTINGS)
@click.version_option(__version__, prog_name="hybridqrl")
def main():
    """Hybrid quantum-classical reinforcement learning experiments."""


@main.command("show-config")
@_config_options
def show_config(config_path, preset, seed):
    """Print the fully validated configuration as YAML."""
    cfg = _resolve_config(config_path, preset, {"seed": seed})
    click.echo(yaml.safe_dump(cfg.to_tree(), sort_keys=True), nl=False)


@main.command("pretrain-ae")
@_config_options
@click.option("--out", "out_path", required=True,
              type=click.Path(dir_okay=False, writable=True),
              help="Checkpoint file to write (JSON).")
@click.option("--epochs", type=int, default=None,
              help="Override the pretraining epoch budget.")
def pretrain_ae(config_path, preset, seed, out_path, epochs):
    """Train an autoencoder on random-policy observations and save it."""
    overrides = {"seed": seed}
    if epochs is not None:
        overrides["ae_pretrain"] = {"epochs": epochs}
    cfg = _resolve_config(config_path, preset, overrides)

    def prog(epoch, loss):
        if epoch % 100 == 0 or epoch == cfg.ae_pretrain.epochs:
            click.echo(f"epoch {epoch:6d}  loss {loss:.6f}")

    try:
        out = pretrain_autoencoder(cfg, out_path, progress=prog)
    except ConfigError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"saved {out['path']} (final loss {out['final_loss']:.6f})")


@main.command("train")
@_config_options
@click.option("--out", "out_dir", type=click.Path(file_okay=False),
              default=None, help="Run directory (default: config out_dir).")
@click.option("--parallel", type=int, default=1, show_default=True,
              help="Worker processes; 1 trains sequentially.")
@click.option("--overwrite", is_flag=True,
              help="Replace an existing run directory.")
@click.option("--init-ae", "init_ae",
              type=click.Path(exists=True, dir_okay=False), default=None,
              help="Pretrained autoencoder checkpoint (hot start / "
                   "fixed-ae).")
@click.option("--episodes", type=int, default=None,
              help="Override the per-agent episode budget.")
@click.option("--ensemble", "ensemble_size", type=int, default=None,
              help="Override the ensemble size.")
@click.option("--quiet", is_flag=True, help="Suppress progress lines.")
def train(config_path, preset, seed, out_dir, parallel, overwrite, init_ae,
          episodes, ensemble_size, quiet):
    """Train an ensemble of agents and write a run directory."""
    overrides = {"seed": seed, "episodes": episodes,
                 "ensemble_size": ensemble_size, "ae_checkpoint": init_ae}
    cfg = _resolve_config(config_path, preset, overrides)
    if init_ae is not None and cfg.mode == "joint" and not cfg.hot_start:
        # On joint runs --init-ae means a hot start; on fixed-ae runs it
        # simply supplies the frozen encoder.
        cfg = from_tree({**cfg.to_tree(), "hot_start": True})

    every = max(1, cfg.episodes // 10)
    def prog(agent, done, recent):
        if not quiet and done % every == 0:
            click.echo(f"agent {agent:02d}  episode {done:6d}/"
                       f"{cfg.episodes}  reward {recent:7.2f}")

    try:
        run = run_ensemble(cfg, out_dir=out_dir, parallel=parallel,
                           overwrite=overwrite, progress=prog)
    except (ConfigError, RunDirectoryError, FileNotFoundError) as exc:
        raise click.ClickException(str(exc))
    click.echo(f"run complete: {run.run_dir}  "
               f"({run.manifest['ensemble_size']} agents, "
               f"{run.wall_clock_s:.1f}s)")


@main.command("report")
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False),
              help="Directory for report.csv and plot data.")
@click.option("--threshold-pct", type=float, default=90.0, show_default=True,
              help="Percent of the optimal return defining 'solved'.")
@click.option("--window", type=int, default=100, show_default=True,
              help="Trailing smoothing window (episodes).")
@click.option("--top-k", type=int, default=5, show_default=True,
              help="Agents kept per ensemble (best final window).")
@click.option("--ep-mode", type=click.Choice(["best", "ensemble"]),
              default="best", show_default=True,
              help="Threshold episode from best member or ensemble mean.")
def report(run_dirs, out_dir, threshold_pct, window, top_k, ep_mode):
    """Compare RUN_DIRS (each one ensemble) on one shared window."""
    try:
        comparison = write_report(run_dirs, out_dir,
                                  threshold_pct=threshold_pct, window=window,
                                  top_k=top_k, ep_mode=ep_mode)
    except (ValueError, FileNotFoundError) as exc:
        raise click.ClickException(str(exc))
    click.echo(f"shared window: episodes 1..{comparison['shared_end']}  "
               f"(optimal return {comparison['optimal_return']:g})")
    for label, m in comparison["methods"].items():
        ep = m["threshold_episode"]
        click.echo(f"  {label:30s}  aulc {m['aulc']:.4f}  "
                   f"threshold episode {ep if ep is not None else '-'}")
    click.echo(f"wrote {out_dir}/report.csv")


if __name__ == "__main__":
    main()
