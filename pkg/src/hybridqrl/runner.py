"""Experiment orchestration: seeded ensembles, persistence, reporting.

A *run directory* is the unit of persistence.  After ``run_ensemble`` it
contains::

    config.yaml               validated configuration snapshot
    manifest.yaml             seeds, versions, config hash, file hashes
    curves/agent_00.csv ...   per-agent learning curves (episode,reward)
    losses/agent_00.csv ...   per-update loss diagnostics
    norms/agent_00.csv ...    per-episode truncation flags (qumode only)
    checkpoints/agent_00.json all parameters of each trained agent

Every agent is trained from its own generator seeded ``base_seed + index``,
so a run is reproducible from the manifest alone; result files are written
atomically (temp file + rename) and curve CSVs are byte-stable across
repeated runs.
"""
from __future__ import annotations

import concurrent.futures
import dataclasses
import hashlib
import os
import platform as _platform
import shutil
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import (ConfigError, ExperimentConfig, build_agent,
                     build_autoencoder, build_env, from_tree)
from .envs import random_observations
from .metrics import compare_methods
from .ppo import TrainResult, train_agent, train_autoencoder

__all__ = [
    "EnsembleRun", "RunDirectoryError", "config_hash", "curve_csv_text",
    "load_run", "optimal_return_for", "pretrain_autoencoder", "read_curve",
    "run_ensemble", "train_one", "write_report",
]

MANIFEST_NAME = "manifest.yaml"
CONFIG_SNAPSHOT_NAME = "config.yaml"
MANIFEST_FORMAT = "hybridqrl-run-1"


class RunDirectoryError(RuntimeError):
    """The output directory already holds results and overwrite is off."""


# ----------------------------------------------------------------------
# small persistence helpers

def _atomic_write(path: Path, text: str) -> None:
    tmp = path.parent / (path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of the canonical (sorted-key) YAML form of the configuration."""
    return _sha256_text(yaml.safe_dump(cfg.to_tree(), sort_keys=True))


def curve_csv_text(rewards: np.ndarray) -> str:
    """Learning curve as ``episode,reward`` CSV text (1-based episodes).

    Floats are rendered with ``repr`` (shortest round-trip form), so equal
    training histories produce byte-identical files.
    """
    lines = ["episode,reward"]
    for i, r in enumerate(np.asarray(rewards, dtype=np.float64), start=1):
        lines.append(f"{i},{float(r)!r}")
    return "\n".join(lines) + "\n"


def read_curve(path: str | Path) -> np.ndarray:
    rows = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not rows or rows[0] != "episode,reward":
        raise ValueError(f"{path}: not a learning-curve CSV")
    return np.array([float(line.split(",")[1]) for line in rows[1:]])


def _flags_csv_text(flags: np.ndarray) -> str:
    lines = ["episode,norm_ok"]
    for i, ok in enumerate(flags, start=1):
        lines.append(f"{i},{int(ok)}")
    return "\n".join(lines) + "\n"


def _losses_csv_text(update_stats: list[dict]) -> str:
    """Per-update loss diagnostics (empty cell where a term is absent)."""
    cols = ("clip", "value", "entropy", "recon", "total")
    lines = ["update," + ",".join(cols)]
    for i, stats in enumerate(update_stats, start=1):
        cells = [("" if stats.get(c) is None else repr(float(stats[c])))
                 for c in cols]
        lines.append(f"{i}," + ",".join(cells))
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# autoencoder pretraining

def pretrain_autoencoder(cfg: ExperimentConfig, out_path: str | Path,
                         progress=None) -> dict:
    """Train a fresh autoencoder on random-policy observations, save it.

    Returns ``{"path", "final_loss", "history"}``; the loss history is also
    written next to the checkpoint as ``<stem>.loss.csv``.
    """
    rng = np.random.default_rng(cfg.seed)
    env = build_env(cfg)
    ae = build_autoencoder(cfg, rng)
    if ae is None:
        raise ConfigError("ae_variant: this configuration has no "
                          "autoencoder to pretrain")
    data = random_observations(env, cfg.ae_pretrain.n_obs, rng)
    history = train_autoencoder(ae, data, epochs=cfg.ae_pretrain.epochs,
                                batch_size=cfg.ae_pretrain.batch_size,
                                lr=cfg.ae_pretrain.lr, rng=rng,
                                progress=progress)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ae.params, out_path)
    loss_lines = ["epoch,loss"]
    loss_lines += [f"{i},{float(l)!r}" for i, l in enumerate(history, 1)]
    _atomic_write(out_path.with_name(out_path.stem + ".loss.csv"),
                  "\n".join(loss_lines) + "\n")
    return {"path": out_path, "final_loss": float(history[-1]),
            "history": np.asarray(history)}


# ----------------------------------------------------------------------
# training one ensemble member

def train_one(cfg: ExperimentConfig, index: int,
              ae_tree: dict[str, np.ndarray] | None = None,
              progress=None):
    """Train ensemble member ``index`` (seed = base seed + index).

    Returns ``(result, param_arrays)`` where ``param_arrays`` maps parameter
    names to plain arrays ready for checkpointing.
    """
    rng = np.random.default_rng(cfg.seed + index)
    env = build_env(cfg)
    agent = build_agent(cfg, rng, ae_tree=ae_tree)
    result = train_agent(env, agent, cfg.ppo, cfg.episodes, rng,
                         progress=progress)
    arrays = {name: t.data.copy() for name, t in agent.all_params().items()}
    return result, arrays


def _worker(tree: dict, index: int,
            ae_tree: dict[str, np.ndarray] | None):
    t0 = time.perf_counter()
    result, arrays = train_one(from_tree(tree), index, ae_tree=ae_tree)
    return (index, result.episode_rewards, result.episode_norm_ok,
            result.n_policy_params, arrays, result.update_stats,
            time.perf_counter() - t0)


@dataclasses.dataclass
class EnsembleRun:
    run_dir: Path
    curves: list[np.ndarray]
    norm_ok: list[np.ndarray]
    seeds: list[int]
    n_policy_params: int
    wall_clock_s: float
    manifest: dict


def run_ensemble(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                 parallel: int = 1, overwrite: bool = False,
                 progress=None) -> EnsembleRun:
    """Train the configured ensemble and persist a complete run directory.

    ``progress(agent_index, episodes_done, recent_mean_reward)`` is called
    periodically when training sequentially.  ``parallel`` > 1 trains
    members in separate processes (identical results, since each member owns
    an independent seeded generator).
    """
    out = Path(out_dir) if out_dir is not None else (
        Path(cfg.out_dir) if cfg.out_dir else None)
    if out is None:
        raise ConfigError("out_dir: no output directory configured")
    if out.exists() and any(out.iterdir()):
        if not overwrite:
            raise RunDirectoryError(
                f"{out} already contains files (use overwrite)")
        shutil.rmtree(out)
    (out / "curves").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    snapshot = yaml.safe_dump(cfg.to_tree(), sort_keys=True)
    _atomic_write(out / CONFIG_SNAPSHOT_NAME, snapshot)

    ae_tree = None
    if cfg.needs_pretrained_ae:
        ae_tree = load_checkpoint(cfg.ae_checkpoint)

    n = cfg.ensemble_size
    results: list = [None] * n
    t_start = time.perf_counter()
    if parallel > 1:
        tree = cfg.to_tree()
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=min(parallel, n)) as pool:
            futs = [pool.submit(_worker, tree, i, ae_tree) for i in range(n)]
            for fut in concurrent.futures.as_completed(futs):
                out_tuple = fut.result()
                results[out_tuple[0]] = out_tuple
    else:
        for i in range(n):
            cb = None
            if progress is not None:
                cb = (lambda done, recent, _i=i:
                      progress(_i, done, recent))
            t0 = time.perf_counter()
            result, arrays = train_one(cfg, i, ae_tree=ae_tree, progress=cb)
            results[i] = (i, result.episode_rewards, result.episode_norm_ok,
                          result.n_policy_params, arrays,
                          result.update_stats, time.perf_counter() - t0)
    wall = time.perf_counter() - t_start

    curves, norm_ok, seeds = [], [], []
    files: dict[str, str] = {CONFIG_SNAPSHOT_NAME: _sha256_text(snapshot)}
    n_policy = 0
    (out / "losses").mkdir(exist_ok=True)
    for i, rewards, flags, n_policy, arrays, update_stats, _dt in results:
        seeds.append(cfg.seed + i)
        curves.append(np.asarray(rewards))
        norm_ok.append(np.asarray(flags, dtype=bool))
        rel = f"curves/agent_{i:02d}.csv"
        text = curve_csv_text(rewards)
        _atomic_write(out / rel, text)
        files[rel] = _sha256_text(text)
        rel_l = f"losses/agent_{i:02d}.csv"
        text_l = _losses_csv_text(update_stats)
        _atomic_write(out / rel_l, text_l)
        files[rel_l] = _sha256_text(text_l)
        if cfg.platform == "qumode":
            (out / "norms").mkdir(exist_ok=True)
            rel_n = f"norms/agent_{i:02d}.csv"
            text_n = _flags_csv_text(norm_ok[-1])
            _atomic_write(out / rel_n, text_n)
            files[rel_n] = _sha256_text(text_n)
        rel_c = f"checkpoints/agent_{i:02d}.json"
        save_checkpoint(arrays, out / rel_c)
        files[rel_c] = _sha256_file(out / rel_c)

    manifest = {
        "format": MANIFEST_FORMAT,
        "name": cfg.name,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "package_version": __version__,
        "python_version": _platform.python_version(),
        "numpy_version": np.__version__,
        "config_sha256": config_hash(cfg),
        "base_seed": cfg.seed,
        "agent_seeds": seeds,
        "episodes": cfg.episodes,
        "ensemble_size": n,
        "n_policy_params": int(n_policy),
        "wall_clock_s": round(wall, 3),
        "files": files,
    }
    if ae_tree is not None:
        manifest["ae_checkpoint_sha256"] = _sha256_file(
            Path(cfg.ae_checkpoint))
    _atomic_write(out / MANIFEST_NAME, yaml.safe_dump(manifest,
                                                      sort_keys=True))
    return EnsembleRun(run_dir=out, curves=curves, norm_ok=norm_ok,
                       seeds=seeds, n_policy_params=int(n_policy),
                       wall_clock_s=wall, manifest=manifest)


# ----------------------------------------------------------------------
# loading and reporting

def load_run(run_dir: str | Path):
    """Read back ``(config, curves, manifest)`` from a run directory."""
    run_dir = Path(run_dir)
    with open(run_dir / CONFIG_SNAPSHOT_NAME, encoding="utf-8") as fh:
        cfg = from_tree(yaml.safe_load(fh))
    with open(run_dir / MANIFEST_NAME, encoding="utf-8") as fh:
        manifest = yaml.safe_load(fh)
    curve_paths = sorted((run_dir / "curves").glob("agent_*.csv"))
    if not curve_paths:
        raise FileNotFoundError(f"{run_dir}: no learning-curve files")
    return cfg, [read_curve(p) for p in curve_paths], manifest


def optimal_return_for(cfg: ExperimentConfig) -> float:
    """Best achievable episode return of the configured environment."""
    env = build_env(cfg)
    if cfg.environment == "cartpole":
        return float(env.max_steps)
    return env.optimal_return()


def write_report(run_dirs, out_dir: str | Path, threshold_pct: float = 90.0,
                 window: int = 100, top_k: int = 5,
                 ep_mode: str = "best") -> dict:
    """Compare several run directories on one shared integration window.

    All runs must target the same environment.  Writes ``report.csv`` (one
    row per method) and ``<method>.curve.csv`` plot data (mean raw and
    normalized smoothed curves) under ``out_dir``; returns the comparison
    tree, augmented with the shared window and per-method file names.
    """
    loaded = []
    for d in run_dirs:
        cfg, curves, _ = load_run(d)
        loaded.append((Path(d), cfg, curves))
    envs = {(cfg.environment, cfg.maze_file) for _, cfg, _ in loaded}
    if len(envs) > 1:
        raise ValueError("refusing to compare runs from different "
                         f"environments: {sorted(str(e) for e in envs)}")
    optimal = optimal_return_for(loaded[0][1])

    method_curves: dict[str, list[np.ndarray]] = {}
    for path, cfg, curves in loaded:
        label = cfg.name
        if label in method_curves:
            label = f"{label}@{path.name}"
        if label in method_curves:
            raise ValueError(f"duplicate method label {label!r}")
        method_curves[label] = curves
    comparison = compare_methods(method_curves, optimal, k=top_k,
                                 window=window, threshold_pct=threshold_pct,
                                 ep_mode=ep_mode)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["method,n_agents,selected,threshold_episode,shared_end,aulc"]
    for label, m in comparison["methods"].items():
        sel = "+".join(str(i) for i in m["selected"])
        ep = "" if m["threshold_episode"] is None else m["threshold_episode"]
        rows.append(f"{label},{len(method_curves[label])},{sel},{ep},"
                    f"{comparison['shared_end']},{m['aulc']!r}")
    _atomic_write(out / "report.csv", "\n".join(rows) + "\n")

    from .metrics import ensemble_metrics  # plot data needs the mean curves
    for label, curves in method_curves.items():
        m = ensemble_metrics(curves, optimal, k=top_k, window=window,
                             threshold_pct=threshold_pct, ep_mode=ep_mode)
        lines = ["episode,mean_reward,normalized_smoothed"]
        for i, (r, s) in enumerate(zip(m["mean_curve"],
                                       m["mean_normalized_smoothed"]), 1):
            lines.append(f"{i},{float(r)!r},{float(s)!r}")
        fname = f"{label.replace('/', '_')}.curve.csv"
        _atomic_write(out / fname, "\n".join(lines) + "\n")
        comparison["methods"][label]["curve_file"] = fname
    comparison["optimal_return"] = optimal
    comparison["report_file"] = "report.csv"
    return comparison
