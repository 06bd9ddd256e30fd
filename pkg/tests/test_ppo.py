import numpy as np
import pytest

from frugalsense import _accel, env as E, gp, nn, ppo, timeseries as ts
from frugalsense.errors import ConfigError, EmptyBuffer, NonFiniteLoss
from frugalsense.policies import NeuralPolicy


def buffer_from(rewards, values, dones, next_values):
    b = ppo.RolloutBuffer()
    b.rewards, b.values, b.dones, b.next_values = list(rewards), list(values), list(dones), list(next_values)
    return b


def brute_force_advantages(r, v, d, nv, gamma, lam):
    """Sum of discounted TD errors up to the episode end, written out directly."""
    n = len(r)
    delta = [r[t] + gamma * nv[t] * (1 - d[t]) - v[t] for t in range(n)]
    out = []
    for t in range(n):
        acc, w = 0.0, 1.0
        for k in range(t, n):
            acc += w * delta[k]
            if d[k]:
                break
            w *= gamma * lam
        out.append(acc)
    return np.array(out)


def test_gae_hand_example():
    b = ppo.compute_gae(buffer_from([0, 0, 1], [0, 0, 0], [0, 0, 0], [0, 0, 0]), 0.5, 1.0, normalize=False)
    np.testing.assert_allclose(b.advantages, [0.25, 0.5, 1.0])
    np.testing.assert_allclose(brute_force_advantages([0, 0, 1], [0] * 3, [0] * 3, [0] * 3, 0.5, 1.0),
                               [0.25, 0.5, 1.0])


def test_gae_lambda_zero_is_td_error():
    rng = np.random.default_rng(0)
    r, v, nv = rng.normal(size=10), rng.normal(size=10), rng.normal(size=10)
    d = np.zeros(10)
    d[-1] = 1
    b = ppo.compute_gae(buffer_from(r, v, d, nv), 0.9, 0.0, normalize=False)
    np.testing.assert_allclose(b.advantages, r + 0.9 * nv * (1 - d) - v, rtol=1e-12)


def test_gae_monte_carlo_limit():
    rng = np.random.default_rng(1)
    r, v = rng.normal(size=8), rng.normal(size=8)
    nv = np.append(v[1:], 0.0)
    d = np.zeros(8)
    d[-1] = 1
    b = ppo.compute_gae(buffer_from(r, v, d, nv), 1.0 - 1e-12, 1.0, normalize=False)
    np.testing.assert_allclose(b.advantages, np.cumsum(r[::-1])[::-1] - v, rtol=1e-9, atol=1e-9)


def test_gae_matches_brute_force_with_dones():
    rng = np.random.default_rng(2)
    r, v, nv = rng.normal(size=40), rng.normal(size=40), rng.normal(size=40)
    d = (rng.random(40) < 0.2).astype(float)
    d[-1] = 1
    b = ppo.compute_gae(buffer_from(r, v, d, nv), 0.97, 0.9, normalize=False)
    np.testing.assert_allclose(b.advantages, brute_force_advantages(r, v, d, nv, 0.97, 0.9), rtol=1e-10)
    np.testing.assert_allclose(b.returns, b.advantages + v)


def test_gae_normalized():
    rng = np.random.default_rng(3)
    b = buffer_from(rng.normal(size=30), rng.normal(size=30), np.ones(30), np.zeros(30))
    ppo.compute_gae(b, 0.99, 0.95)
    assert abs(b.advantages.mean()) < 1e-6 and abs(b.advantages.std() - 1) < 1e-6


def test_gae_empty():
    with pytest.raises(EmptyBuffer):
        ppo.compute_gae(ppo.RolloutBuffer(), 0.9, 0.9)


def test_numpy_gae_path():
    rng = np.random.default_rng(4)
    r, v, nv = rng.normal(size=12), rng.normal(size=12), rng.normal(size=12)
    d = np.zeros(12)
    np.testing.assert_allclose(_accel.gae_np(r, v, d, nv, 0.8, 0.7),
                               brute_force_advantages(r, v, d, nv, 0.8, 0.7), rtol=1e-12)


def _small_env():
    d = ts.generate_synthetic(ts.SyntheticProfile(), 2 * 672)
    ctx = d.window(0, 672)
    off, sc = gp.standardization(ctx.features())
    p = gp.KernelParams(gp.MaternParams(40.0, 0.05, 1.5), gp.PeriodicParams(40.0, 0.15, 1.0), 0.15,
                        float(np.mean(ctx.laeq)), off, sc)
    return E.EnvConfig(d, p, ctx)


CFG = _small_env()
CTXM = E.ContextModel(CFG)


def _factory():
    return ppo.DayEpisodes(E.SensingEnv(CFG, CTXM), range(7, 14))


def _policy(seed=0):
    arch = nn.MLPArchitecture(CFG.state_dim, CFG.horizon_h)
    return NeuralPolicy(nn.init_params(arch, seed), "stochastic")


def test_rollout_shapes_and_replay():
    pol = _policy()
    buf = ppo.collect_rollouts(_factory, pol, 3, np.random.default_rng(0))
    x, a, lp, r, v, d, nv = buf.arrays()
    assert d.sum() == 3 and len(buf.episode_rewards) == 3
    ends = np.flatnonzero(d)
    assert np.all(np.diff(np.concatenate([[-1], ends])) <= 96)
    logits, values = nn.forward(pol.params, x)
    np.testing.assert_allclose(nn.log_softmax(logits)[np.arange(len(a)), a], lp, atol=1e-9)
    np.testing.assert_allclose(values, v, atol=1e-12)


def test_rollout_deterministic():
    a = ppo.collect_rollouts(_factory, _policy(), 2, np.random.default_rng(5))
    b = ppo.collect_rollouts(_factory, _policy(), 2, np.random.default_rng(5))
    assert a.arrays()[0].tobytes() == b.arrays()[0].tobytes()
    assert a.rewards == b.rewards and a.actions == b.actions


def test_first_minibatch_ratio_is_one_and_surrogate_is_advantage():
    pol = _policy()
    buf = ppo.compute_gae(ppo.collect_rollouts(_factory, pol, 2, np.random.default_rng(1)), 0.99, 0.95)
    x, a, lp, *_ = buf.arrays()
    cfg = ppo.PPOConfig()
    _, _, stats = ppo.ppo_loss_and_grads(pol.params, x, a, lp, buf.advantages, buf.returns, cfg)
    np.testing.assert_allclose(stats["ratio_first"], 1.0, atol=1e-9)
    assert stats["policy"] == pytest.approx(-buf.advantages.mean(), abs=1e-9)


def test_clipped_branch_has_no_policy_gradient():
    arch = nn.MLPArchitecture(2, 2, (4,))
    p = nn.init_params(arch, 0)
    x = np.array([[1.0, -1.0]])
    logp = nn.log_softmax(nn.forward(p, x)[0])[0]
    old = logp[0] - 0.5  # ratio = e^0.5 > 1 + eps
    cfg = ppo.PPOConfig(entropy_coef=0.0)
    _, g, stats = ppo.ppo_loss_and_grads(p, x, np.array([0]), np.array([old]), np.array([1.0]),
                                         np.array(nn.forward(p, x)[1]), cfg)
    assert stats["clip_frac"] == 1.0
    assert all(np.all(a == 0) for a in g.arrays())  # value error is zero too


def test_policy_gradient_matches_finite_difference():
    rng = np.random.default_rng(7)
    arch = nn.MLPArchitecture(3, 4, (5, 5))
    p = nn.init_params(arch, 1)
    p = p.with_arrays([a + 0.3 * rng.normal(size=a.shape) for a in p.arrays()])
    x = rng.normal(size=(6, 3))
    a = rng.integers(0, 4, 6)
    old = nn.log_softmax(nn.forward(p, x)[0])[np.arange(6), a] + rng.normal(scale=0.1, size=6)
    adv, ret = rng.normal(size=6), rng.normal(size=6)
    cfg = ppo.PPOConfig(entropy_coef=0.05)
    _, g, _ = ppo.ppo_loss_and_grads(p, x, a, old, adv, ret, cfg)
    arrays = p.arrays()
    k, idx = 0, (1, 2)
    eps = 1e-6
    plus = [b.copy() for b in arrays]
    minus = [b.copy() for b in arrays]
    plus[k][idx] += eps
    minus[k][idx] -= eps
    fp = ppo.ppo_loss_and_grads(p.with_arrays(plus), x, a, old, adv, ret, cfg)[0]
    fm = ppo.ppo_loss_and_grads(p.with_arrays(minus), x, a, old, adv, ret, cfg)[0]
    assert g.arrays()[k][idx] == pytest.approx((fp - fm) / (2 * eps), rel=1e-4, abs=1e-8)


def test_non_finite_loss_keeps_params():
    pol = _policy()
    buf = ppo.compute_gae(ppo.collect_rollouts(_factory, pol, 1, np.random.default_rng(2)), 0.99, 0.95)
    buf.advantages = buf.advantages.copy()
    buf.advantages[0] = np.nan
    before = [a.copy() for a in pol.params.arrays()]
    opt = nn.adam_init(pol.params)
    with pytest.raises(NonFiniteLoss):
        ppo.ppo_update(pol.params, opt, buf, ppo.PPOConfig(), np.random.default_rng(0))
    assert all(np.array_equal(a, b) for a, b in zip(before, pol.params.arrays()))
    assert opt.t == 0


def test_update_requires_advantages():
    with pytest.raises(EmptyBuffer):
        ppo.ppo_update(_policy().params, None, ppo.RolloutBuffer(), ppo.PPOConfig(), np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(ConfigError):
        ppo.PPOConfig(gamma=1.0)
    with pytest.raises(ConfigError):
        ppo.PPOConfig(clip_epsilon=0.0)
    with pytest.raises(ConfigError):
        ppo.PPOConfig.from_dict({"gama": 0.9})
    assert ppo.PPOConfig.from_dict(ppo.PPOConfig().to_dict()) == ppo.PPOConfig()


def test_bandit_learns():
    run = ppo.train_bandit(ppo.PPOConfig(seed=0, total_updates=200, checkpoint_every=50))
    assert nn.softmax(nn.forward(run.params, np.ones(1))[0])[0] > 0.95


def test_train_artifacts_and_determinism(tmp_path):
    cfg = ppo.PPOConfig(total_updates=6, checkpoint_every=3, rollout_episodes=2, seed=4)
    a = ppo.train(CFG, cfg, range(7, 14), range(7, 9), tmp_path / "a", agent_id=1, context_model=CTXM)
    b = ppo.train(CFG, cfg, range(7, 14), range(7, 9), tmp_path / "b", agent_id=1, context_model=CTXM)
    ca = (tmp_path / "a" / "learning_curve.csv").read_bytes()
    assert ca == (tmp_path / "b" / "learning_curve.csv").read_bytes()
    assert ca.splitlines()[0] == b"episode,reward,update" and len(ca.splitlines()) == 13
    assert (tmp_path / "a" / "checkpoints" / "agent_1_update_3.json").exists()
    assert (tmp_path / "a" / "checkpoints" / "agent_1_update_6.json").exists()
    assert a.best == b.best and [u for u, _ in a.checkpoints] == [3, 6]
    episodes = [e for e, _, _ in a.curve]
    assert episodes == sorted(episodes)


def test_resume_matches_uninterrupted(tmp_path):
    cfg = ppo.PPOConfig(total_updates=6, checkpoint_every=2, rollout_episodes=2, seed=9)
    full = ppo.train(CFG, cfg, range(7, 14), range(7, 9), tmp_path / "full", context_model=CTXM)
    ppo.train(CFG, cfg, range(7, 14), range(7, 9), tmp_path / "part", context_model=CTXM, stop_after=4)
    resumed = ppo.train(CFG, cfg, range(7, 14), range(7, 9), tmp_path / "part", context_model=CTXM, resume=True)
    assert resumed.params == full.params
    assert (tmp_path / "part" / "learning_curve.csv").read_bytes() == \
        (tmp_path / "full" / "learning_curve.csv").read_bytes()


def test_smoothed():
    np.testing.assert_allclose(ppo.smoothed([1, 2, 3, 4], window=2), [1, 1.5, 2.5, 3.5])
