"""Ensemble runner: persistence, determinism, reporting."""
import numpy as np
import pytest
import yaml

from hybridqrl import config, runner
from hybridqrl.checkpoint import load_checkpoint

# Tiny cart-pole cell: short rollouts so a handful of episodes spans several
# updates without taking seconds.
TINY = {"preset": "cartpole-qubit", "ensemble_size": 2, "episodes": 6,
        "seed": 11, "ppo": {"rollout_steps": 64, "minibatch_size": 32}}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    cfg = config.from_tree(TINY)
    out = tmp_path_factory.mktemp("run") / "tiny"
    return cfg, runner.run_ensemble(cfg, out_dir=out)


def test_curve_csv_round_trip(tmp_path):
    curve = np.array([20.0, 13.0, 500.0, 77.25])
    text = runner.curve_csv_text(curve)
    assert text.splitlines()[0] == "episode,reward"
    assert text.splitlines()[1] == "1,20.0"
    assert text.splitlines()[4] == "4,77.25"
    p = tmp_path / "c.csv"
    p.write_text(text)
    np.testing.assert_array_equal(runner.read_curve(p), curve)
    with pytest.raises(ValueError):
        (tmp_path / "bad.csv").write_text("nope\n1,2\n")
        runner.read_curve(tmp_path / "bad.csv")


def test_run_directory_layout(tiny_run):
    cfg, run = tiny_run
    d = run.run_dir
    assert (d / "config.yaml").exists()
    assert (d / "manifest.yaml").exists()
    for i in range(cfg.ensemble_size):
        assert (d / f"curves/agent_{i:02d}.csv").exists()
        assert (d / f"checkpoints/agent_{i:02d}.json").exists()
    assert len(run.curves) == 2 and all(len(c) == 6 for c in run.curves)
    assert run.seeds == [11, 12]
    losses = (d / "losses/agent_00.csv").read_text().splitlines()
    assert losses[0] == "update,clip,value,entropy,recon,total"
    assert len(losses) > 1
    first = losses[1].split(",")
    assert len(first) == 6 and all(cell for cell in first)  # joint: recon set


def test_manifest_contents_and_hashes(tiny_run):
    cfg, run = tiny_run
    man = yaml.safe_load((run.run_dir / "manifest.yaml").read_text())
    assert man["format"] == runner.MANIFEST_FORMAT
    assert man["base_seed"] == 11 and man["agent_seeds"] == [11, 12]
    assert man["config_sha256"] == runner.config_hash(cfg)
    assert man["n_policy_params"] == 18        # 2 qubits x 3 layers x 3
    for rel, digest in man["files"].items():
        assert runner._sha256_file(run.run_dir / rel) == digest, rel
    # the snapshot alone reproduces the config
    snap = yaml.safe_load((run.run_dir / "config.yaml").read_text())
    assert config.from_tree(snap) == cfg


def test_rerun_is_byte_identical(tiny_run, tmp_path):
    cfg, run = tiny_run
    again = runner.run_ensemble(cfg, out_dir=tmp_path / "again")
    for i in range(cfg.ensemble_size):
        rel = f"curves/agent_{i:02d}.csv"
        assert ((run.run_dir / rel).read_bytes()
                == (again.run_dir / rel).read_bytes())
        ck_a = load_checkpoint(run.run_dir / f"checkpoints/agent_{i:02d}.json")
        ck_b = load_checkpoint(again.run_dir / f"checkpoints/agent_{i:02d}.json")
        for name in ck_a:
            np.testing.assert_array_equal(ck_a[name], ck_b[name])


def test_collision_requires_overwrite(tiny_run, tmp_path):
    cfg, _ = tiny_run
    out = tmp_path / "dup"
    cfg_small = config.from_tree({**TINY, "episodes": 2, "ensemble_size": 1})
    runner.run_ensemble(cfg_small, out_dir=out)
    with pytest.raises(runner.RunDirectoryError):
        runner.run_ensemble(cfg_small, out_dir=out)
    runner.run_ensemble(cfg_small, out_dir=out, overwrite=True)
    assert (out / "manifest.yaml").exists()


def test_parallel_workers_match_sequential(tiny_run, tmp_path):
    cfg, run = tiny_run
    par = runner.run_ensemble(cfg, out_dir=tmp_path / "par", parallel=2)
    for i in range(cfg.ensemble_size):
        rel = f"curves/agent_{i:02d}.csv"
        assert ((run.run_dir / rel).read_bytes()
                == (par.run_dir / rel).read_bytes())


def test_load_run_and_optimal_return(tiny_run):
    cfg, run = tiny_run
    cfg2, curves, man = runner.load_run(run.run_dir)
    assert cfg2 == cfg
    assert len(curves) == 2
    np.testing.assert_array_equal(curves[0], run.curves[0])
    assert runner.optimal_return_for(cfg) == 500.0
    maze_cfg = config.from_tree({"preset": "maze-qubit"})
    assert abs(runner.optimal_return_for(maze_cfg) - 0.91) < 1e-12


def test_pretrain_autoencoder_learns_and_persists(tmp_path):
    cfg = config.from_tree({"preset": "cartpole-qubit", "seed": 3,
                            "ae_pretrain": {"epochs": 40, "n_obs": 256,
                                            "batch_size": 64, "lr": 0.01}})
    out = runner.pretrain_autoencoder(cfg, tmp_path / "ae.json")
    assert out["history"][-1] < out["history"][0] * 0.9
    tree = load_checkpoint(tmp_path / "ae.json")
    assert any(k.startswith("ae.enc") for k in tree)
    assert (tmp_path / "ae.loss.csv").exists()
    with pytest.raises(config.ConfigError):
        runner.pretrain_autoencoder(
            config.from_tree({"preset": "maze-classical"}), tmp_path / "x.json")


def test_hot_start_uses_checkpoint(tmp_path):
    cfg = config.from_tree({"preset": "cartpole-qubit", "seed": 3,
                            "ae_pretrain": {"epochs": 10, "n_obs": 128}})
    runner.pretrain_autoencoder(cfg, tmp_path / "ae.json")
    hot = config.from_tree({**TINY, "episodes": 2, "ensemble_size": 1,
                            "hot_start": True,
                            "ae_checkpoint": str(tmp_path / "ae.json")})
    run = runner.run_ensemble(hot, out_dir=tmp_path / "hot")
    ck = load_checkpoint(run.run_dir / "checkpoints/agent_00.json")
    donor = load_checkpoint(tmp_path / "ae.json")
    # trained further, but from the pretrained weights: the manifest records
    # the donor hash and shapes agree
    assert run.manifest["ae_checkpoint_sha256"] == runner._sha256_file(
        tmp_path / "ae.json")
    assert ck["ae.enc0.w"].shape == donor["ae.enc0.w"].shape


def test_write_report_and_mixed_env_rejection(tiny_run, tmp_path):
    cfg, run = tiny_run
    other = runner.run_ensemble(
        config.from_tree({**TINY, "name": "other-method"}),
        out_dir=tmp_path / "other")
    out = runner.write_report([run.run_dir, other.run_dir],
                              tmp_path / "rep", window=3, top_k=2)
    assert (tmp_path / "rep/report.csv").exists()
    assert set(out["methods"]) == {"cartpole-qubit", "other-method"}
    for m in out["methods"].values():
        assert (tmp_path / "rep" / m["curve_file"]).exists()
        assert 0.0 <= m["aulc"] <= 1.0
    assert out["shared_end"] == 6

    # fabricate a maze run directory: reporting across environments refuses
    fake = tmp_path / "fakemaze"
    (fake / "curves").mkdir(parents=True)
    maze_cfg = config.from_tree({"preset": "maze-qubit"})
    (fake / "config.yaml").write_text(yaml.safe_dump(maze_cfg.to_tree()))
    (fake / "manifest.yaml").write_text(yaml.safe_dump({"format": "x"}))
    (fake / "curves/agent_00.csv").write_text(
        runner.curve_csv_text(np.array([0.5, 0.5])))
    with pytest.raises(ValueError, match="environments"):
        runner.write_report([run.run_dir, fake], tmp_path / "rep2")


def test_duplicate_method_labels_disambiguated(tiny_run, tmp_path):
    cfg, run = tiny_run
    twin = runner.run_ensemble(cfg, out_dir=tmp_path / "twin")
    out = runner.write_report([run.run_dir, twin.run_dir],
                              tmp_path / "rep", window=3, top_k=2)
    labels = set(out["methods"])
    assert "cartpole-qubit" in labels
    assert any(lab.startswith("cartpole-qubit@") for lab in labels)
