"""PPO machinery: GAE oracle, agent interfaces, short deterministic runs."""
import numpy as np
import pytest

from hybridqrl import autodiff as ad
from hybridqrl import photonic, qubit
from hybridqrl.envs import CartPole, Maze
from hybridqrl.networks import CNNPolicy, Critic, DenseAutoencoder
from hybridqrl.ppo import (Agent, PPOConfig, TrainingDiverged, _Rollout,
                           gae_advantages, ppo_update, train_agent,
                           train_autoencoder)

SMALL_MAZE = """\
#####
#S.T#
#...#
#####"""


def _gae_double_loop(rewards, values, dones, last_value, gamma, lam):
    """Independent oracle: explicit discounted sum of TD errors, truncated at
    episode boundaries."""
    T = len(rewards)
    deltas = np.empty(T)
    for t in range(T):
        nv = last_value if t == T - 1 else values[t + 1]
        deltas[t] = rewards[t] + gamma * (1 - dones[t]) * nv - values[t]
    adv = np.zeros(T)
    for t in range(T):
        coef = 1.0
        for l in range(t, T):
            adv[t] += coef * deltas[l]
            if dones[l]:
                break
            coef *= gamma * lam
    return adv


def test_gae_matches_double_loop_oracle():
    rng = np.random.default_rng(0)
    for gamma, lam in [(0.99, 0.95), (0.9, 1.0), (1.0, 0.5), (0.5, 0.0)]:
        T = 40
        rewards = rng.normal(size=T)
        values = rng.normal(size=T)
        dones = (rng.random(T) < 0.15).astype(float)
        last_value = rng.normal()
        adv, ret = gae_advantages(rewards, values, dones, last_value,
                                  gamma, lam)
        want = _gae_double_loop(rewards, values, dones, last_value, gamma, lam)
        assert np.allclose(adv, want, atol=1e-12)
        assert np.allclose(ret, want + values, atol=1e-12)


def test_gae_hand_case():
    # T=2, no terminations: delta1 = 1 + 0.5*2 - 1 = 1; delta0 = 1 + 0.5*1 - 0 = 1.5
    # adv0 = 1.5 + 0.5*0.8*1 = 1.9
    adv, ret = gae_advantages(np.array([1.0, 1.0]), np.array([0.0, 1.0]),
                              np.array([0.0, 0.0]), 2.0, gamma=0.5, lam=0.8)
    assert np.allclose(adv, [1.9, 1.0], atol=1e-15)
    assert np.allclose(ret, [1.9, 2.0], atol=1e-15)


def test_gae_respects_terminal_boundary():
    # done at t=0: adv0 must ignore the later reward entirely
    adv, _ = gae_advantages(np.array([1.0, 5.0]), np.zeros(2),
                            np.array([1.0, 0.0]), 9.0, gamma=0.9, lam=0.9)
    assert np.allclose(adv[0], 1.0, atol=1e-15)


# ----------------------------------------------------------------- agents

def _cartpole_qubit_agent(seed, fixed_ae=False):
    rng = np.random.default_rng(seed)
    ae = DenseAutoencoder(4, [2], rng)
    qcfg = qubit.QubitPolicyConfig(n_qubits=2, n_layers=2, n_actions=2)
    policy = qubit.init_policy_params(qcfg, rng)
    critic = Critic(2, hidden=(16, 16), rng=rng)
    agent = Agent("qubit", 2, ae=ae, fixed_ae=fixed_ae, qcfg=qcfg,
                  critic=critic, policy_params=policy)
    return agent, rng


def _cartpole_cv_agent(seed, cutoff=10):
    rng = np.random.default_rng(seed)
    ae = DenseAutoencoder(4, [2], rng)
    cvcfg = photonic.CVPolicyConfig(n_modes=2, n_layers=1, n_actions=2,
                                    cutoff=cutoff)
    policy = photonic.init_cv_policy_params(cvcfg, rng)
    critic = Critic(2, hidden=(16, 16), rng=rng)
    agent = Agent("qumode", 2, ae=ae, cvcfg=cvcfg, critic=critic,
                  policy_params=policy)
    return agent, rng


def test_act_logp_consistent_with_evaluate():
    agent, rng = _cartpole_qubit_agent(1)
    obs = rng.normal(size=4)
    action, logp, value, _ = agent.act(obs, rng)
    assert 0 <= action < 2
    lp, ent, val, recon = agent.evaluate(obs[None], np.array([action]), False)
    assert abs(lp.data[0] - logp) < 1e-10
    assert abs(val.data[0] - value) < 1e-10
    assert ent.data > 0
    assert recon is not None


def test_fixed_ae_excluded_from_training_and_no_recon():
    agent, rng = _cartpole_qubit_agent(2, fixed_ae=True)
    names = set(agent.trainable_params())
    assert not any(n.startswith("ae.") for n in names)
    _, _, _, recon = agent.evaluate(rng.normal(size=(3, 4)),
                                    np.array([0, 1, 0]), False)
    assert recon is None


def test_classical_agent_requires_raw_critic():
    rng = np.random.default_rng(3)
    cnn = CNNPolicy(48, 4, 36, rng)
    with pytest.raises(ValueError):
        Agent("classical", 4, cnn=cnn, critic=Critic(2304, rng=rng))


def test_ppo_update_moves_params_and_reports_stats():
    agent, rng = _cartpole_qubit_agent(4)
    cfg = PPOConfig(rollout_steps=32, minibatch_size=16, n_epochs=2, lr=1e-2)
    T = 32
    obs = rng.normal(size=(T, 4))
    roll = _Rollout(obs=obs,
                    actions=rng.integers(0, 2, size=T),
                    logp=np.log(np.full(T, 0.5)),
                    rewards=np.ones(T),
                    values=rng.normal(size=T) * 0.1,
                    dones=np.zeros(T),
                    last_value=0.0)
    params = agent.trainable_params()
    before = {k: p.data.copy() for k, p in params.items()}
    opt = cfg.make_optimizer(params)
    stats = ppo_update(agent, roll, opt, cfg, rng)
    for key in ("clip", "value", "entropy", "l2", "recon", "total"):
        assert np.isfinite(stats[key])
    moved = [k for k, p in params.items()
             if not np.array_equal(before[k], p.data)]
    assert moved  # the joint step touched something in every group
    assert any(k.startswith("policy") for k in moved)
    assert any(k.startswith("critic") for k in moved)
    assert any(k.startswith("ae") for k in moved)


def test_ppo_update_aborts_on_nonfinite():
    agent, rng = _cartpole_qubit_agent(5)
    cfg = PPOConfig(rollout_steps=8, minibatch_size=8, n_epochs=1)
    T = 8
    roll = _Rollout(obs=rng.normal(size=(T, 4)),
                    actions=np.zeros(T, dtype=int),
                    logp=np.full(T, np.nan),
                    rewards=np.ones(T), values=np.zeros(T),
                    dones=np.zeros(T), last_value=0.0)
    with pytest.raises(TrainingDiverged):
        ppo_update(agent, roll, cfg.make_optimizer(agent.trainable_params()),
                   cfg, rng)


def test_train_agent_deterministic_and_consistent():
    def run():
        agent, rng = _cartpole_qubit_agent(7)
        cfg = PPOConfig(rollout_steps=64, minibatch_size=32, n_epochs=2)
        res = train_agent(CartPole(), agent, cfg, max_episodes=3, rng=rng)
        params = {k: p.data.copy() for k, p in agent.all_params().items()}
        return res, params

    r1, p1 = run()
    r2, p2 = run()
    assert len(r1.episode_rewards) == 3
    assert np.array_equal(r1.episode_rewards, r2.episode_rewards)
    assert r1.episode_norm_ok.all()  # non-photonic: every episode clean
    assert r1.n_policy_params == 12  # 3 angles * 2 wires * 2 layers
    for k in p1:
        assert np.array_equal(p1[k], p2[k]), k


def test_train_agent_photonic_tracks_norms():
    agent, rng = _cartpole_cv_agent(8, cutoff=10)
    cfg = PPOConfig(rollout_steps=32, minibatch_size=32, n_epochs=1)
    res = train_agent(CartPole(), agent, cfg, max_episodes=2, rng=rng)
    assert len(res.episode_rewards) == 2
    assert res.episode_norm_ok.dtype == bool
    # cutoff 10 on a near-vacuum circuit keeps deficiency ~1e-4 < 1e-3
    assert res.episode_norm_ok.all()


def test_train_agent_classical_on_maze():
    from hybridqrl.envs import load_default_maze
    rng = np.random.default_rng(9)
    cnn = CNNPolicy(48, 4, 8, rng)
    critic = Critic(48 * 48, hidden=(8, 8), rng=rng)
    agent = Agent("classical", 4, cnn=cnn, critic=critic, critic_on="raw")
    cfg = PPOConfig(rollout_steps=16, minibatch_size=8, n_epochs=1)
    env = load_default_maze(max_steps=12)
    res = train_agent(env, agent, cfg, max_episodes=2, rng=rng)
    assert len(res.episode_rewards) == 2


def test_train_autoencoder_reduces_loss():
    rng = np.random.default_rng(10)
    ae = DenseAutoencoder(4, [2], rng)
    data = rng.normal(size=(128, 4))
    hist = train_autoencoder(ae, data, epochs=40, batch_size=32, lr=0.02,
                             rng=rng)
    assert hist[-1] < 0.6 * hist[0]


def test_lr_schedule_config():
    agent, _ = _cartpole_qubit_agent(11)
    cfg = PPOConfig(lr_schedule="piecewise")
    opt = cfg.make_optimizer(agent.trainable_params())
    # decay boundaries count PPO updates; one update = 4 epochs x 8
    # minibatches = 32 optimizer steps at the default sizes
    per_update = cfg.n_epochs * (cfg.rollout_steps // cfg.minibatch_size)
    assert per_update == 32
    assert opt.schedule(1) == 0.05
    assert opt.schedule(250 * per_update) == 0.05        # update 250
    assert opt.schedule(250 * per_update + 1) == 0.01    # update 251
    assert opt.schedule(1500 * per_update + 1) == 0.00005
    with pytest.raises(ValueError):
        PPOConfig(lr_schedule="cosine").make_optimizer(agent.trainable_params())
