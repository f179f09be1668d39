"""Configuration validation, presets, and factories."""
import numpy as np
import pytest
import yaml

from hybridqrl import config
from hybridqrl.envs import CartPole, Maze
from hybridqrl.networks import ConvAutoencoder, DenseAutoencoder, count_params


def test_minimal_tree_fills_defaults():
    cfg = config.from_tree({"environment": "cartpole", "platform": "qubit",
                            "mode": "joint"})
    assert cfg.latent_dim == 2
    assert cfg.layers == 3
    assert cfg.episodes == 3000
    assert cfg.ensemble_size == 8
    assert cfg.ae_variant == "small-dense"
    assert cfg.obs_scaling == "pi"
    assert cfg.ppo.gamma == 0.99
    assert cfg.n_actions == 2


def test_maze_defaults():
    cfg = config.from_tree({"environment": "maze", "platform": "qubit",
                            "mode": "joint"})
    assert (cfg.latent_dim, cfg.layers, cfg.episodes) == (8, 5, 5000)
    assert cfg.ae_variant == "conv"
    assert cfg.n_actions == 4
    assert cfg.raw_obs_dim == 48 * 48


def test_qumode_cutoff_defaults_per_environment():
    cart = config.from_tree({"preset": "cartpole-qumode"})
    maze = config.from_tree({"preset": "maze-qumode"})
    assert (cart.cutoff, cart.trunc_tol) == (10, 1e-3)
    assert (maze.cutoff, maze.trunc_tol) == (4, 0.15)
    assert (cart.latent_dim, maze.latent_dim) == (2, 6)


def test_missing_required_key_is_named():
    with pytest.raises(config.ConfigError, match="environment"):
        config.from_tree({"platform": "qubit", "mode": "joint"})
    with pytest.raises(config.ConfigError, match="mode"):
        config.from_tree({"environment": "cartpole", "platform": "qubit"})


def test_unknown_keys_rejected_by_name():
    with pytest.raises(config.ConfigError, match="wibble"):
        config.from_tree({"preset": "cartpole-qubit", "wibble": 3})
    with pytest.raises(config.ConfigError, match="ppo.blip"):
        config.from_tree({"preset": "cartpole-qubit", "ppo": {"blip": 1}})


def test_type_errors_are_named():
    with pytest.raises(config.ConfigError, match="episodes"):
        config.from_tree({"preset": "cartpole-qubit", "episodes": "many"})
    with pytest.raises(config.ConfigError, match="ppo.lr"):
        config.from_tree({"preset": "cartpole-qubit", "ppo": {"lr": "big"}})
    with pytest.raises(config.ConfigError, match="ppo.n_epochs"):
        config.from_tree({"preset": "cartpole-qubit",
                          "ppo": {"n_epochs": 2.5}})


def test_latent_dim_pinned_per_cell():
    for env, plat, want in [("cartpole", "qubit", 2), ("maze", "qubit", 8),
                            ("cartpole", "qumode", 2), ("maze", "qumode", 6)]:
        cfg = config.from_tree({"environment": env, "platform": plat,
                                "mode": "joint"})
        assert cfg.latent_dim == want
        with pytest.raises(config.ConfigError, match="latent_dim"):
            config.from_tree({"environment": env, "platform": plat,
                              "mode": "joint", "latent_dim": want + 1})


def test_classical_constraints():
    cfg = config.from_tree({"preset": "maze-classical"})
    assert cfg.cnn_hidden_width == 63
    assert cfg.critic_on == "raw"
    with pytest.raises(config.ConfigError, match="classical"):
        config.from_tree({"environment": "cartpole",
                          "platform": "classical-cnn", "mode": "classical"})
    with pytest.raises(config.ConfigError, match="mode"):
        config.from_tree({"environment": "maze", "platform": "classical-cnn",
                          "mode": "joint"})
    with pytest.raises(config.ConfigError, match="ae_variant"):
        config.from_tree({"preset": "maze-classical", "ae_variant": "conv"})


def test_platform_specific_keys_rejected_elsewhere():
    with pytest.raises(config.ConfigError, match="cutoff"):
        config.from_tree({"preset": "cartpole-qubit", "cutoff": 8})
    with pytest.raises(config.ConfigError, match="cnn_hidden_width"):
        config.from_tree({"preset": "cartpole-qubit", "cnn_hidden_width": 9})
    with pytest.raises(config.ConfigError, match="reupload"):
        config.from_tree({"preset": "cartpole-qumode", "reupload": False})
    with pytest.raises(config.ConfigError, match="blocks"):
        config.from_tree({"preset": "cartpole-qumode", "blocks": 2})


def test_entangler_blocks_configurable_on_qubit():
    cfg = config.from_tree({"preset": "cartpole-qubit", "blocks": 2})
    assert cfg.blocks == 2
    agent = config.build_agent(cfg, np.random.default_rng(0))
    assert agent.qcfg.n_blocks == 2
    assert agent.policy_params["policy.weights"].data.shape == (6, 2, 3)
    with pytest.raises(config.ConfigError, match="blocks"):
        config.from_tree({"preset": "cartpole-qubit", "blocks": 3})


def test_fixed_ae_requires_checkpoint():
    with pytest.raises(config.ConfigError, match="ae_checkpoint"):
        config.from_tree({"environment": "cartpole", "platform": "qubit",
                          "mode": "fixed-ae"})
    cfg = config.from_tree({"environment": "cartpole", "platform": "qubit",
                            "mode": "fixed-ae", "ae_checkpoint": "ae.json"})
    assert cfg.needs_pretrained_ae


def test_every_preset_validates_and_round_trips():
    for name in config.PRESETS:
        tree = {"preset": name}
        if name == "cartpole-qubit-fixed":
            tree["ae_checkpoint"] = "ae.json"
        cfg = config.from_tree(tree)
        assert config.from_tree(cfg.to_tree()) == cfg


def test_preset_overlay_deep_merges_subtrees():
    cfg = config.from_tree({"preset": "cartpole-qubit",
                            "ppo": {"lr": 0.01}, "seed": 5})
    assert cfg.ppo.lr == 0.01
    assert cfg.ppo.gamma == 0.99     # untouched sibling key survives
    assert cfg.seed == 5


def test_load_config_yaml_file(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump({"preset": "maze-qubit", "seed": 3,
                                    "episodes": 11}))
    cfg = config.load_config(str(path))
    assert (cfg.seed, cfg.episodes, cfg.latent_dim) == (3, 11, 8)
    bad = tmp_path / "bad.yaml"
    bad.write_text("environment: [unclosed")
    with pytest.raises(config.ConfigError):
        config.load_config(str(bad))


# ------------------------------------------------------------ factories

def test_build_env_matches_environment():
    cart = config.from_tree({"preset": "cartpole-qubit"})
    maze = config.from_tree({"preset": "maze-qubit"})
    assert isinstance(config.build_env(cart), CartPole)
    env = config.build_env(maze)
    assert isinstance(env, Maze)
    assert env.obs_shape == (48, 48, 1)


def test_build_autoencoder_variants():
    rng = np.random.default_rng(0)
    small = config.build_autoencoder(
        config.from_tree({"preset": "cartpole-qubit"}), rng)
    large = config.build_autoencoder(
        config.from_tree({"preset": "cartpole-qubit-large-ae"}), rng)
    conv = config.build_autoencoder(
        config.from_tree({"preset": "maze-qubit"}), rng)
    none = config.build_autoencoder(
        config.from_tree({"preset": "maze-classical"}), rng)
    assert isinstance(small, DenseAutoencoder)
    assert count_params(small.params, "ae.enc") == 10
    assert count_params(small.params, "ae.dec") == 12
    assert isinstance(large, DenseAutoencoder)
    assert count_params(large.params, "ae.enc") == 58
    assert count_params(large.params, "ae.dec") == 60
    assert isinstance(conv, ConvAutoencoder) and conv.latent_dim == 8
    assert none is None


def test_build_agent_qubit():
    cfg = config.from_tree({"preset": "cartpole-qubit"})
    agent = config.build_agent(cfg, np.random.default_rng(0))
    assert agent.kind == "qubit"
    assert agent.qcfg.n_qubits == 2 and agent.qcfg.n_layers == 3
    assert agent.policy_params["policy.weights"].data.shape == (3, 2, 3)
    names = set(agent.trainable_params())
    assert any(n.startswith("ae.") for n in names)
    assert any(n.startswith("critic.") for n in names)


def test_build_agent_fixed_ae_excludes_encoder(tmp_path):
    from hybridqrl.checkpoint import save_checkpoint
    rng = np.random.default_rng(0)
    donor = config.build_autoencoder(
        config.from_tree({"preset": "cartpole-qubit"}), rng)
    ckpt = tmp_path / "ae.json"
    save_checkpoint(donor.params, ckpt)
    cfg = config.from_tree({"preset": "cartpole-qubit-fixed",
                            "ae_checkpoint": str(ckpt)})
    import hybridqrl.checkpoint as checkpoint
    agent = config.build_agent(cfg, rng,
                               ae_tree=checkpoint.load_checkpoint(ckpt))
    assert agent.fixed_ae
    assert not any(n.startswith("ae.") for n in agent.trainable_params())
    np.testing.assert_array_equal(agent.ae.params["ae.enc0.w"].data,
                                  donor.params["ae.enc0.w"].data)
    with pytest.raises(config.ConfigError, match="ae_checkpoint"):
        config.build_agent(cfg, rng)   # tree not supplied


def test_build_agent_qumode_and_classical():
    rng = np.random.default_rng(1)
    qm = config.build_agent(config.from_tree({"preset": "cartpole-qumode"}),
                            rng)
    assert qm.kind == "qumode"
    assert (qm.cvcfg.n_modes, qm.cvcfg.cutoff) == (2, 10)
    cl = config.build_agent(config.from_tree({"preset": "maze-classical"}),
                            rng)
    assert cl.kind == "classical"
    assert cl.critic_on == "raw"
