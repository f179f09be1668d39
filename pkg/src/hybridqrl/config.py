"""Experiment configuration: strict validation, named presets, factories.

A configuration is a flat key/value tree (YAML on disk) describing one
experiment cell: which environment, which policy platform, whether the
autoencoder is trained jointly, and every budget and hyperparameter needed to
reproduce the run.  ``load_config``/``from_tree`` reject unknown keys and
report the offending key by name; ``build_env``/``build_agent`` turn a
validated config into live objects.
"""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass

import numpy as np
import yaml

from . import photonic, qubit
from .checkpoint import restore_into
from .envs import CartPole, Maze, load_default_maze
from .networks import CNNPolicy, ConvAutoencoder, Critic, DenseAutoencoder
from .ppo import Agent, PPOConfig

__all__ = [
    "AEPretrainConfig", "ConfigError", "ExperimentConfig", "PRESETS",
    "build_agent", "build_autoencoder", "build_env", "from_tree",
    "load_config", "preset_tree",
]


class ConfigError(ValueError):
    """A configuration tree failed validation; the message names the key."""


ENVIRONMENTS = ("cartpole", "maze")
PLATFORMS = ("qubit", "qumode", "classical-cnn")
MODES = ("joint", "fixed-ae", "classical")
AE_VARIANTS = ("small-dense", "large-dense", "conv", "none")

# Latent width is pinned per environment x platform cell (the policy's qubit
# or mode count equals the latent width, and the action space must fit on it).
LATENT_DIMS = {
    ("cartpole", "qubit"): 2,
    ("maze", "qubit"): 8,
    ("cartpole", "qumode"): 2,
    ("maze", "qumode"): 6,
}
_LAYER_DEFAULTS = {
    ("cartpole", "qubit"): 3,
    ("maze", "qubit"): 5,
    ("cartpole", "qumode"): 3,
    ("maze", "qumode"): 3,
}
_EPISODE_DEFAULTS = {"cartpole": 3000, "maze": 5000}
N_ACTIONS = {"cartpole": 2, "maze": 4}
MAZE_IMAGE_HW = 48
# Dense bottleneck stacks for the 4-dimensional cart-pole observation: the
# small variant is a single sigmoid bottleneck, the large one adds a width-8
# hidden layer on both sides.
_DENSE_HIDDEN = {"small-dense": (), "large-dense": (8,)}


@dataclass(frozen=True)
class AEPretrainConfig:
    """Budget for standalone autoencoder pretraining."""
    epochs: int = 2000
    batch_size: int = 64
    lr: float = 1e-3
    n_obs: int = 4096


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    environment: str
    platform: str
    mode: str
    layers: int
    latent_dim: int
    ae_variant: str
    hot_start: bool
    ae_checkpoint: str | None
    ensemble_size: int
    episodes: int
    seed: int
    out_dir: str | None
    reupload: bool
    blocks: int
    obs_scaling: str
    cutoff: int | None
    trunc_tol: float | None
    cnn_hidden_width: int | None
    critic_on: str
    maze_file: str | None
    ppo: PPOConfig
    ae_pretrain: AEPretrainConfig

    @property
    def n_actions(self) -> int:
        return N_ACTIONS[self.environment]

    @property
    def raw_obs_dim(self) -> int:
        return 4 if self.environment == "cartpole" else MAZE_IMAGE_HW ** 2

    @property
    def needs_pretrained_ae(self) -> bool:
        return self.mode == "fixed-ae" or self.hot_start

    def to_tree(self) -> dict:
        """Plain nested-dict form, safe for YAML round-trips."""
        tree = dataclasses.asdict(self)
        tree["ppo"] = dataclasses.asdict(self.ppo)
        tree["ae_pretrain"] = dataclasses.asdict(self.ae_pretrain)
        return tree


# ----------------------------------------------------------------------
# presets

def _cell(name, environment, platform, mode, **over):
    tree = {"name": name, "environment": environment, "platform": platform,
            "mode": mode}
    tree.update(copy.deepcopy(over))  # keep nested trees unshared
    return tree


# CartPole qubit cells share a raw-observation critic and the step-decayed
# learning rate: the bounded expectation-value readout needs a large early
# rate and a small late one to both learn quickly and hold the optimum, and
# the 4-dim raw observation is a stationary critic input whereas the 2-dim
# latent drifts while the autoencoder trains.
_CARTPOLE_QUBIT_TUNING = {
    "critic_on": "raw",
    "ppo": {"lr": 0.05, "lr_schedule": "piecewise"},
}

PRESETS: dict[str, dict] = {
    "cartpole-qubit": _cell(
        "cartpole-qubit", "cartpole", "qubit", "joint",
        **_CARTPOLE_QUBIT_TUNING),
    "cartpole-qubit-fixed": _cell(
        "cartpole-qubit-fixed", "cartpole", "qubit", "fixed-ae",
        **_CARTPOLE_QUBIT_TUNING),
    "cartpole-qubit-large-ae": _cell(
        "cartpole-qubit-large-ae", "cartpole", "qubit", "joint",
        ae_variant="large-dense", **_CARTPOLE_QUBIT_TUNING),
    "cartpole-qumode": _cell(
        "cartpole-qumode", "cartpole", "qumode", "joint"),
    "maze-qubit": _cell(
        "maze-qubit", "maze", "qubit", "joint"),
    "maze-qumode": _cell(
        "maze-qumode", "maze", "qumode", "joint"),
    "maze-classical": _cell(
        "maze-classical", "maze", "classical-cnn", "classical"),
    # Tiny cell for determinism and smoke checks.
    "cartpole-qubit-smoke": _cell(
        "cartpole-qubit-smoke", "cartpole", "qubit", "joint",
        ensemble_size=2, episodes=40, **_CARTPOLE_QUBIT_TUNING),
}
# Full-scale variants: long autoencoder pretraining and the step-decayed
# learning-rate schedule, for runs beyond the desk-scale defaults.
for _base in ("cartpole-qubit", "cartpole-qumode", "maze-qubit",
              "maze-qumode"):
    _t = copy.deepcopy(PRESETS[_base])
    _t["name"] = _base + "-paper-scale"
    _t["ae_pretrain"] = {"epochs": 20000}
    _t["ppo"] = {"lr": 0.05, "lr_schedule": "piecewise"}
    PRESETS[_base + "-paper-scale"] = _t
del _base, _t


def preset_tree(name: str) -> dict:
    """Deep copy of a named preset's raw tree."""
    if name not in PRESETS:
        known = ", ".join(sorted(PRESETS))
        raise ConfigError(f"unknown preset {name!r} (known: {known})")
    return copy.deepcopy(PRESETS[name])


# ----------------------------------------------------------------------
# validation

def _want(tree, key, types, default):
    """Pop ``key`` checking its type; ``None`` in ``types`` allows null."""
    if key not in tree:
        return default
    val = tree.pop(key)
    allow_none = None in types
    concrete = tuple(t for t in types if t is not None)
    if val is None:
        if allow_none:
            return None
        raise ConfigError(f"{key}: must not be null")
    if bool in concrete and isinstance(val, bool):
        return val
    if isinstance(val, bool) and bool not in concrete:
        raise ConfigError(f"{key}: expected {concrete[0].__name__}, "
                          f"got a boolean")
    if int in concrete and isinstance(val, int):
        return val
    if float in concrete and isinstance(val, (int, float)):
        return float(val)
    if str in concrete and isinstance(val, str):
        return val
    names = "/".join(t.__name__ for t in concrete)
    raise ConfigError(f"{key}: expected {names}, got {type(val).__name__}")


def _want_enum(tree, key, choices, default=None, required=False):
    val = _want(tree, key, (str, None if not required else str), default)
    if val is None and required:
        raise ConfigError(f"{key}: required key is missing")
    if val is not None and val not in choices:
        raise ConfigError(f"{key}: must be one of {', '.join(choices)}; "
                          f"got {val!r}")
    return val


def _sub_config(tree, key, cls):
    """Build a dataclass from a nested dict, rejecting unknown keys."""
    sub = tree.pop(key, None)
    if sub is None:
        return cls()
    if not isinstance(sub, dict):
        raise ConfigError(f"{key}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in sub.items():
        if k not in fields:
            raise ConfigError(f"{key}.{k}: unknown key")
        want = str(fields[k].type)
        if "bool" in want:
            if not isinstance(v, bool):
                raise ConfigError(f"{key}.{k}: expected a boolean")
        elif "int" in want:
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{key}.{k}: expected an integer")
        elif "float" in want:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{key}.{k}: expected a number")
            v = float(v)
        elif "str" in want and not isinstance(v, str):
            raise ConfigError(f"{key}.{k}: expected a string")
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def from_tree(tree: dict) -> ExperimentConfig:
    """Validate a raw key/value tree into an :class:`ExperimentConfig`.

    A ``preset`` key selects a named base tree; remaining keys overlay it.
    Unknown keys, wrong types, and cross-field inconsistencies raise
    :class:`ConfigError` naming the key.
    """
    if not isinstance(tree, dict):
        raise ConfigError("configuration root must be a mapping")
    tree = copy.deepcopy(tree)
    preset = tree.pop("preset", None)
    if preset is not None:
        base = preset_tree(preset)
        for key, val in tree.items():
            if isinstance(val, dict) and isinstance(base.get(key), dict):
                base[key].update(val)
            else:
                base[key] = val
        tree = base

    environment = _want_enum(tree, "environment", ENVIRONMENTS, required=True)
    platform = _want_enum(tree, "platform", PLATFORMS, required=True)
    mode = _want_enum(tree, "mode", MODES, required=True)
    name = _want(tree, "name", (str,), f"{environment}-{platform}")

    classical = platform == "classical-cnn"
    if classical != (mode == "classical"):
        raise ConfigError("mode: 'classical' exactly when platform is "
                          "'classical-cnn'")
    if classical and environment != "maze":
        raise ConfigError("platform: classical-cnn is defined on the maze "
                          "environment only")

    # latent width and layers
    if classical:
        latent_dim = _want(tree, "latent_dim", (int, None), None)
        if latent_dim not in (None, 0):
            raise ConfigError("latent_dim: not applicable to classical-cnn")
        latent_dim = 0
        layers = _want(tree, "layers", (int, None), None)
        if layers not in (None, 0):
            raise ConfigError("layers: not applicable to classical-cnn")
        layers = 0
    else:
        pinned = LATENT_DIMS[(environment, platform)]
        latent_dim = _want(tree, "latent_dim", (int,), pinned)
        if latent_dim != pinned:
            raise ConfigError(
                f"latent_dim: the {environment}/{platform} cell uses "
                f"{pinned}; got {latent_dim}")
        layers = _want(tree, "layers", (int,),
                       _LAYER_DEFAULTS[(environment, platform)])
        if layers < 1:
            raise ConfigError("layers: must be >= 1")

    # autoencoder wiring
    default_ae = ("none" if classical
                  else "small-dense" if environment == "cartpole" else "conv")
    ae_variant = _want_enum(tree, "ae_variant", AE_VARIANTS, default_ae)
    if classical and ae_variant != "none":
        raise ConfigError("ae_variant: classical-cnn runs on raw pixels; "
                          "use 'none'")
    if not classical:
        if ae_variant == "none":
            raise ConfigError("ae_variant: quantum platforms need an "
                              "autoencoder (small-dense/large-dense/conv)")
        if environment == "cartpole" and ae_variant == "conv":
            raise ConfigError("ae_variant: 'conv' expects image "
                              "observations (maze)")
        if environment == "maze" and ae_variant != "conv":
            raise ConfigError("ae_variant: maze observations are images; "
                              "use 'conv'")
    hot_start = _want(tree, "hot_start", (bool,), False)
    ae_checkpoint = _want(tree, "ae_checkpoint", (str, None), None)
    if classical and (hot_start or ae_checkpoint):
        raise ConfigError("hot_start: not applicable to classical-cnn")
    if (mode == "fixed-ae" or hot_start) and ae_checkpoint is None:
        raise ConfigError("ae_checkpoint: required for fixed-ae mode and "
                          "hot starts (or pass --init-ae)")

    # budgets, seeding, output
    ensemble_size = _want(tree, "ensemble_size", (int,), 8)
    if ensemble_size < 1:
        raise ConfigError("ensemble_size: must be >= 1")
    episodes = _want(tree, "episodes", (int,), _EPISODE_DEFAULTS[environment])
    if episodes < 1:
        raise ConfigError("episodes: must be >= 1")
    seed = _want(tree, "seed", (int,), 0)
    out_dir = _want(tree, "out_dir", (str, None), None)

    # platform knobs
    if platform == "qubit":
        reupload = _want(tree, "reupload", (bool,), True)
        blocks = _want(tree, "blocks", (int,), 1)
        if blocks not in (1, 2):
            raise ConfigError("blocks: must be 1 or 2 (rotation-set + "
                              "CNOT-ring repetitions per layer)")
    else:
        if _want(tree, "reupload", (bool, None), None) not in (None, True):
            raise ConfigError("reupload: only applicable to the qubit "
                              "platform")
        if _want(tree, "blocks", (int, None), None) not in (None, 1):
            raise ConfigError("blocks: only applicable to the qubit "
                              "platform")
        reupload = True
        blocks = 1
    if platform == "qubit":
        obs_scaling = _want_enum(tree, "obs_scaling",
                                 ("pi", "arctan_cbrt", "identity"), "pi")
    elif platform == "qumode":
        obs_scaling = _want_enum(tree, "obs_scaling",
                                 ("centered", "identity"), "centered")
    else:
        obs_scaling = _want(tree, "obs_scaling", (str, None), None)
        if obs_scaling not in (None, "none"):
            raise ConfigError("obs_scaling: not applicable to classical-cnn")
        obs_scaling = "none"
    if platform == "qumode":
        cutoff = _want(tree, "cutoff", (int,),
                       10 if environment == "cartpole" else 4)
        if cutoff < 2:
            raise ConfigError("cutoff: must be >= 2")
        # Default tolerance covers the preparation deficiency of the
        # truncated squeezed state (which gate unitarity then preserves).
        trunc_tol = _want(tree, "trunc_tol", (float,),
                          1e-3 if cutoff >= 10 else 0.15)
        if trunc_tol <= 0:
            raise ConfigError("trunc_tol: must be positive")
    else:
        for key in ("cutoff", "trunc_tol"):
            if _want(tree, key, (int, float, None), None) is not None:
                raise ConfigError(f"{key}: only applicable to the qumode "
                                  f"platform")
        cutoff = trunc_tol = None
    if classical:
        cnn_hidden_width = _want(tree, "cnn_hidden_width", (int,), 63)
        if cnn_hidden_width < 1:
            raise ConfigError("cnn_hidden_width: must be >= 1")
    else:
        if _want(tree, "cnn_hidden_width", (int, None), None) is not None:
            raise ConfigError("cnn_hidden_width: only applicable to "
                              "classical-cnn")
        cnn_hidden_width = None
    critic_on = _want_enum(tree, "critic_on", ("latent", "raw"),
                           "raw" if classical else "latent")
    if classical and critic_on != "raw":
        raise ConfigError("critic_on: classical-cnn has no latent code; "
                          "use 'raw'")
    maze_file = _want(tree, "maze_file", (str, None), None)
    if maze_file is not None and environment != "maze":
        raise ConfigError("maze_file: only applicable to the maze "
                          "environment")

    ppo = _sub_config(tree, "ppo", PPOConfig)
    ae_pretrain = _sub_config(tree, "ae_pretrain", AEPretrainConfig)

    if tree:
        raise ConfigError(f"unknown key {sorted(tree)[0]!r}")
    return ExperimentConfig(
        name=name, environment=environment, platform=platform, mode=mode,
        layers=layers, latent_dim=latent_dim, ae_variant=ae_variant,
        hot_start=hot_start, ae_checkpoint=ae_checkpoint,
        ensemble_size=ensemble_size, episodes=episodes, seed=seed,
        out_dir=out_dir, reupload=reupload, blocks=blocks,
        obs_scaling=obs_scaling,
        cutoff=cutoff, trunc_tol=trunc_tol,
        cnn_hidden_width=cnn_hidden_width, critic_on=critic_on,
        maze_file=maze_file, ppo=ppo, ae_pretrain=ae_pretrain)


def load_config(path: str) -> ExperimentConfig:
    """Read and validate a YAML configuration file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            tree = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if tree is None:
        raise ConfigError(f"{path}: empty configuration")
    return from_tree(tree)


# ----------------------------------------------------------------------
# factories

def build_env(cfg: ExperimentConfig) -> CartPole | Maze:
    if cfg.environment == "cartpole":
        return CartPole()
    if cfg.maze_file is not None:
        env = Maze.from_file(cfg.maze_file)
        hw = env.render().shape[0]
        if hw != MAZE_IMAGE_HW:
            raise ConfigError(f"maze_file: rendered image is {hw}x{hw}, "
                              f"need {MAZE_IMAGE_HW}x{MAZE_IMAGE_HW}")
        return env
    return load_default_maze()


def build_autoencoder(cfg: ExperimentConfig, rng: np.random.Generator):
    """Fresh autoencoder for the configured variant (or ``None``)."""
    if cfg.ae_variant == "none":
        return None
    if cfg.ae_variant == "conv":
        return ConvAutoencoder(image_hw=MAZE_IMAGE_HW,
                               latent_dim=cfg.latent_dim, rng=rng)
    hidden = _DENSE_HIDDEN[cfg.ae_variant]
    sizes = list(hidden) + [cfg.latent_dim]
    return DenseAutoencoder(4, sizes, rng=rng)


def build_agent(cfg: ExperimentConfig, rng: np.random.Generator,
                ae_tree: dict[str, np.ndarray] | None = None) -> Agent:
    """Assemble the full agent for one ensemble member.

    ``ae_tree`` (a loaded checkpoint) seeds the autoencoder weights for
    hot starts and is mandatory wiring for fixed-ae mode.
    """
    if cfg.needs_pretrained_ae and ae_tree is None:
        raise ConfigError("ae_checkpoint: this configuration needs a "
                          "pretrained autoencoder checkpoint")
    n_act = cfg.n_actions
    if cfg.platform == "classical-cnn":
        cnn = CNNPolicy(MAZE_IMAGE_HW, n_act,
                        hidden_width=cfg.cnn_hidden_width, rng=rng)
        critic = Critic(cfg.raw_obs_dim, rng=rng)
        return Agent("classical", n_act, cnn=cnn, critic=critic,
                     critic_on="raw")

    ae = build_autoencoder(cfg, rng)
    if ae_tree is not None:
        restore_into(ae.params, ae_tree)
    critic_in = cfg.latent_dim if cfg.critic_on == "latent" else cfg.raw_obs_dim
    critic = Critic(critic_in, rng=rng)
    if cfg.platform == "qubit":
        qcfg = qubit.QubitPolicyConfig(
            n_qubits=cfg.latent_dim, n_layers=cfg.layers, n_actions=n_act,
            reupload=cfg.reupload, obs_scaling=cfg.obs_scaling,
            n_blocks=cfg.blocks)
        policy = qubit.init_policy_params(qcfg, rng)
        return Agent("qubit", n_act, ae=ae, fixed_ae=cfg.mode == "fixed-ae",
                     qcfg=qcfg, critic=critic, critic_on=cfg.critic_on,
                     policy_params=policy)
    cvcfg = photonic.CVPolicyConfig(
        n_modes=cfg.latent_dim, n_layers=cfg.layers, n_actions=n_act,
        cutoff=cfg.cutoff, obs_scaling=cfg.obs_scaling,
        trunc_tol=cfg.trunc_tol)
    policy = photonic.init_cv_policy_params(cvcfg, rng)
    return Agent("qumode", n_act, ae=ae, fixed_ae=cfg.mode == "fixed-ae",
                 cvcfg=cvcfg, critic=critic, critic_on=cfg.critic_on,
                 policy_params=policy)
