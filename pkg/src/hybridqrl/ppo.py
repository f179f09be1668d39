"""Proximal-policy training of hybrid agents with a jointly learned encoder.

One update step optimizes a single scalar:

    total = -L_clip - c1 * entropy + c_vf * value_loss + c2 * l2(policy)
            + c_ae * reconstruction

so policy, critic and (in joint mode) autoencoder move together from the same
minibatch.  Advantages come from generalized advantage estimation over a
fixed-length rollout that may span several episodes.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import photonic, qubit
from .autodiff import Tensor
from .networks import CNNPolicy, ConvAutoencoder, Critic, DenseAutoencoder
from .optim import Adam, piecewise_constant

__all__ = ["PPOConfig", "TrainingDiverged", "Agent", "TrainResult",
           "gae_advantages", "ppo_losses", "train_agent", "train_autoencoder"]

# update-indexed step schedule usable instead of a constant learning rate
LR_BOUNDARIES = (250, 500, 750, 1000, 1250, 1500)
LR_VALUES = (0.05, 0.01, 0.005, 0.001, 0.0005, 0.0001, 0.00005)


class TrainingDiverged(RuntimeError):
    """A loss or gradient stopped being finite; the update is aborted."""


@dataclass
class PPOConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    l2_coef: float = 1e-4
    value_coef: float = 0.5
    ae_coef: float = 1.0
    rollout_steps: int = 512
    minibatch_size: int = 64
    n_epochs: int = 4
    lr: float = 3e-3
    lr_schedule: str = "constant"       # 'constant' | 'piecewise'
    normalize_advantages: bool = True
    critic_grad_to_encoder: bool = False

    def make_optimizer(self, params) -> Adam:
        if self.lr_schedule == "piecewise":
            # The decay boundaries count PPO updates; the optimizer counts
            # minibatch steps, so convert (epochs x minibatches per update).
            per_update = self.n_epochs * max(
                1, self.rollout_steps // self.minibatch_size)
            sched = piecewise_constant(LR_BOUNDARIES, LR_VALUES)
            return Adam(params, lr=self.lr,
                        schedule=lambda s: sched((s - 1) // per_update + 1))
        if self.lr_schedule != "constant":
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        return Adam(params, lr=self.lr)


def gae_advantages(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                   last_value: float, gamma: float, lam: float):
    """Generalized advantage estimation over one rollout.

    ``dones[t]`` marks transitions into a terminal state (no bootstrap across
    them).  Returns ``(advantages, returns)`` with ``returns = adv + values``.
    """
    T = len(rewards)
    adv = np.zeros(T)
    running = 0.0
    for t in range(T - 1, -1, -1):
        next_v = last_value if t == T - 1 else values[t + 1]
        cont = 1.0 - dones[t]
        delta = rewards[t] + gamma * cont * next_v - values[t]
        running = delta + gamma * lam * cont * running
        adv[t] = running
    return adv, adv + values


# ----------------------------------------------------------------------
# agent


class Agent:
    """Encoder + policy + critic bundle with a uniform PPO interface.

    ``kind`` selects the policy route: 'qubit' (angle-embedded circuit),
    'qumode' (displacement-encoded photonic circuit) or 'classical' (CNN on
    raw pixels).  Without an autoencoder the policy consumes the raw
    observation; with ``fixed_ae`` the encoder is excluded from training and
    the reconstruction term is dropped.
    """

    def __init__(self, kind: str, n_actions: int, *,
                 ae: DenseAutoencoder | ConvAutoencoder | None = None,
                 fixed_ae: bool = False,
                 qcfg: qubit.QubitPolicyConfig | None = None,
                 cvcfg: photonic.CVPolicyConfig | None = None,
                 cnn: CNNPolicy | None = None,
                 critic: Critic | None = None,
                 critic_on: str = "latent",
                 policy_params: dict[str, Tensor] | None = None):
        if kind not in ("qubit", "qumode", "classical"):
            raise ValueError(f"unknown agent kind {kind!r}")
        if kind == "classical" and critic_on != "raw":
            raise ValueError("the classical baseline takes raw observations; "
                             "set critic_on='raw'")
        self.kind = kind
        self.n_actions = n_actions
        self.ae = ae
        self.fixed_ae = fixed_ae
        self.qcfg = qcfg
        self.cvcfg = cvcfg
        self.cnn = cnn
        self.critic = critic
        self.critic_on = critic_on
        if kind == "classical":
            self.policy_params = cnn.params
        else:
            self.policy_params = policy_params
        self.last_norm2: np.ndarray | None = None  # photonic truncation probe

    # -- parameter bookkeeping ----------------------------------------
    def trainable_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.policy_params)
        out.update(self.critic.params)
        if self.ae is not None and not self.fixed_ae:
            out.update(self.ae.params)
        return out

    def all_params(self) -> dict[str, Tensor]:
        out = dict(self.trainable_params())
        if self.ae is not None:
            out.update(self.ae.params)
        return out

    # -- forward pieces ------------------------------------------------
    def _flat_obs(self, obs: Tensor) -> Tensor:
        if obs.ndim > 2:
            return ad.reshape(obs, (obs.shape[0], -1))
        return obs

    def _latent(self, obs: Tensor) -> Tensor | None:
        if self.ae is None:
            return None
        z = self.ae.encode(obs)
        return z.detach() if self.fixed_ae else z

    def _policy_logits(self, obs: Tensor, z: Tensor | None) -> Tensor:
        if self.kind == "classical":
            return self.cnn.logits(obs)
        feats = z if z is not None else self._flat_obs(obs)
        if self.kind == "qubit":
            angles = qubit.prepare_angles(feats, self.qcfg)
            return qubit.policy_logits(self.policy_params, angles, self.qcfg)
        rs = photonic.prepare_displacements(feats, self.cvcfg)
        norms: list = []
        logits = photonic.cv_policy_logits(self.policy_params, rs, self.cvcfg,
                                           norms_out=norms)
        self.last_norm2 = norms[-1]
        return logits

    def _value(self, obs: Tensor, z: Tensor | None,
               detach_encoder: bool) -> Tensor:
        if self.critic_on == "raw" or z is None:
            feats = self._flat_obs(obs)
        else:
            feats = z.detach() if detach_encoder else z
        return self.critic.value(feats)

    # -- PPO interface -------------------------------------------------
    def act(self, obs: np.ndarray, rng: np.random.Generator):
        """Sample one action; returns (action, logp, value, norm_ok_deficiency).

        The last element is the truncation-norm deficiency of the photonic
        state (0.0 for other routes)."""
        with ad.no_grad():
            x = ad.tensor(obs[None])
            z = self._latent(x)
            logits = self._policy_logits(x, z).data[0]
            value = float(self._value(x, z, True).data[0])
        shifted = logits - logits.max()
        p = np.exp(shifted)
        p /= p.sum()
        action = int(np.searchsorted(np.cumsum(p), rng.random()))
        action = min(action, self.n_actions - 1)
        logp = float(np.log(p[action]))
        deficiency = 0.0
        if self.kind == "qumode":
            deficiency = float(1.0 - self.last_norm2[0])
        return action, logp, value, deficiency

    def evaluate(self, obs: np.ndarray, actions: np.ndarray,
                 critic_grad_to_encoder: bool):
        """Differentiable quantities for a minibatch: (logp, entropy, values,
        reconstruction loss or None)."""
        x = ad.tensor(obs)
        z = self._latent(x)
        logits = self._policy_logits(x, z)
        logp_all = ad.log_softmax(logits)
        logp = ad.reshape(ad.gather(logp_all, actions[:, None]), (len(actions),))
        probs = ad.softmax(logits)
        entropy = ad.tmean(-ad.tsum(probs * logp_all, axis=-1))
        values = self._value(x, z, not critic_grad_to_encoder)
        recon = None
        if self.ae is not None and not self.fixed_ae:
            recon = self.ae.reconstruction_loss(x, z)
        return logp, entropy, values, recon

    def policy_l2(self) -> Tensor:
        total = None
        for p in self.policy_params.values():
            s = ad.tsum(ad.square(p))
            total = s if total is None else total + s
        return total


# ----------------------------------------------------------------------
# losses and updates


def ppo_losses(agent: Agent, cfg: PPOConfig, obs, actions, old_logp,
               advantages, returns):
    """Combined scalar and its components for one minibatch."""
    logp, entropy, values, recon = agent.evaluate(
        obs, actions, cfg.critic_grad_to_encoder)
    ratio = ad.exp(logp - old_logp)
    clipped = ad.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    l_clip = ad.tmean(ad.minimum(ratio * advantages, clipped * advantages))
    v_loss = ad.tmean(ad.square(values - returns))
    l2 = agent.policy_l2()
    total = (-l_clip - cfg.entropy_coef * entropy + cfg.value_coef * v_loss
             + cfg.l2_coef * l2)
    parts = {"clip": l_clip.item(), "value": v_loss.item(),
             "entropy": entropy.item(), "l2": l2.item()}
    if recon is not None:
        total = total + cfg.ae_coef * recon
        parts["recon"] = recon.item()
    parts["total"] = total.item()
    return total, parts


@dataclass
class _Rollout:
    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_value: float


def ppo_update(agent: Agent, roll: _Rollout, optimizer: Adam, cfg: PPOConfig,
               rng: np.random.Generator) -> dict[str, float]:
    adv, ret = gae_advantages(roll.rewards, roll.values, roll.dones,
                              roll.last_value, cfg.gamma, cfg.lam)
    if cfg.normalize_advantages:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    params = agent.trainable_params()
    T = len(roll.rewards)
    stats: dict[str, float] = {}
    count = 0
    for _ in range(cfg.n_epochs):
        order = rng.permutation(T)
        for lo in range(0, T - cfg.minibatch_size + 1, cfg.minibatch_size):
            idx = order[lo:lo + cfg.minibatch_size]
            total, parts = ppo_losses(
                agent, cfg, roll.obs[idx], roll.actions[idx], roll.logp[idx],
                adv[idx], ret[idx])
            if not np.isfinite(parts["total"]):
                raise TrainingDiverged(f"non-finite loss: {parts}")
            grads = ad.gradients(total, params)
            optimizer.step(grads)
            for k, v in parts.items():
                stats[k] = stats.get(k, 0.0) + v
            count += 1
    return {k: v / count for k, v in stats.items()}


# ----------------------------------------------------------------------
# training loops


@dataclass
class TrainResult:
    episode_rewards: np.ndarray
    episode_norm_ok: np.ndarray          # photonic truncation flags (bool)
    update_stats: list[dict] = field(default_factory=list)
    n_policy_params: int = 0


def train_agent(env, agent: Agent, cfg: PPOConfig, max_episodes: int,
                rng: np.random.Generator,
                progress: Callable[[int, float], None] | None = None,
                norm_tol: float | None = None) -> TrainResult:
    """Run PPO until ``max_episodes`` episodes finish.

    ``norm_tol`` (photonic only) marks an episode "clean" when every step's
    truncation-norm deficiency stays within the tolerance; other routes mark
    all episodes clean.
    """
    optimizer = cfg.make_optimizer(agent.trainable_params())
    if norm_tol is None and agent.cvcfg is not None:
        norm_tol = agent.cvcfg.trunc_tol
    obs_shape = np.shape(env.reset(rng))
    T = cfg.rollout_steps
    obs_buf = np.empty((T,) + obs_shape)
    act_buf = np.empty(T, dtype=np.int64)
    logp_buf = np.empty(T)
    rew_buf = np.empty(T)
    val_buf = np.empty(T)
    done_buf = np.empty(T)

    episodes: list[float] = []
    norm_flags: list[bool] = []
    update_stats: list[dict] = []
    obs = env.reset(rng)
    ep_reward = 0.0
    ep_clean = True

    while len(episodes) < max_episodes:
        for t in range(T):
            action, logp, value, deficiency = agent.act(obs, rng)
            nxt, reward, done = env.step(action)
            obs_buf[t] = obs
            act_buf[t] = action
            logp_buf[t] = logp
            rew_buf[t] = reward
            val_buf[t] = value
            done_buf[t] = float(done)
            ep_reward += reward
            if norm_tol is not None and deficiency > norm_tol:
                ep_clean = False
            obs = nxt
            if done:
                episodes.append(ep_reward)
                norm_flags.append(ep_clean)
                if progress is not None:
                    progress(len(episodes), ep_reward)
                ep_reward = 0.0
                ep_clean = True
                obs = env.reset(rng)
        if done_buf[T - 1]:
            last_value = 0.0
        else:
            with ad.no_grad():
                x = ad.tensor(obs[None])
                z = agent._latent(x)
                last_value = float(agent._value(x, z, True).data[0])
        roll = _Rollout(obs_buf, act_buf, logp_buf, rew_buf, val_buf,
                        done_buf, last_value)
        update_stats.append(ppo_update(agent, roll, optimizer, cfg, rng))

    return TrainResult(
        episode_rewards=np.array(episodes[:max_episodes]),
        episode_norm_ok=np.array(norm_flags[:max_episodes], dtype=bool),
        update_stats=update_stats,
        n_policy_params=sum(p.size for p in agent.policy_params.values()))


def train_autoencoder(ae, data: np.ndarray, epochs: int, batch_size: int,
                      lr: float, rng: np.random.Generator,
                      progress: Callable[[int, float], None] | None = None
                      ) -> list[float]:
    """Minibatch MSE pretraining; returns the per-epoch mean losses."""
    opt = Adam(ae.params, lr=lr)
    n = len(data)
    history: list[float] = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        batches = 0
        for lo in range(0, n - batch_size + 1, batch_size):
            x = ad.tensor(data[order[lo:lo + batch_size]])
            loss = ae.reconstruction_loss(x)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged("autoencoder loss went non-finite")
            opt.step(ad.gradients(loss, ae.params))
            total += loss.item()
            batches += 1
        history.append(total / max(batches, 1))
        if progress is not None:
            progress(epoch + 1, history[-1])
    return history
