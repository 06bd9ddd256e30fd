import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frugalsense import env as E, evaluation as ev, gp, timeseries as ts
from frugalsense.errors import EpisodeDone, InvalidAction, SpanError


def _setup():
    d = ts.generate_synthetic(ts.SyntheticProfile(), 2 * 672)
    ctx = d.window(0, 672)
    off, sc = gp.standardization(ctx.features())
    p = gp.KernelParams(gp.MaternParams(40.0, 0.05, 1.5), gp.PeriodicParams(40.0, 0.15, 1.0), 0.15,
                        float(np.mean(ctx.laeq)), off, sc)
    return d, ctx, p


D, CTX, P = _setup()
BASE = E.EnvConfig(D, P, CTX)
SHARED_CTX = E.ContextModel(BASE)


def make(**kw):
    from dataclasses import replace
    cfg = replace(BASE, **kw)
    return E.SensingEnv(cfg, E.ContextModel(cfg) if kw.get("context", CTX) is not CTX else SHARED_CTX)


def test_reset_state():
    env = make()
    s = env.reset(8)
    assert s.battery == 1.0 and s.slot == 8 * 96
    assert np.all(s.sigma_horizon > 0)
    assert s.mu_horizon.shape == (24,) and s.features_horizon.shape == (24, 5)


def test_reset_deterministic():
    assert make().reset(9) == make().reset(9)


def test_reset_span_error():
    env = make()
    with pytest.raises(SpanError):
        env.reset(14)
    with pytest.raises(SpanError):
        make(episode_days=2).reset(13)


def test_sleep_one_measures_next_slot():
    env = make()
    env.reset(8)
    r = env.step(1)
    assert r.info["slot"] == 8 * 96 + 1 and r.info["sampled"]
    assert env.samples == [8 * 96 + 1]
    assert env.battery == pytest.approx(13 / 14)


def test_invalid_actions():
    env = make()
    env.reset(8)
    for bad in (0, 25, -1, 2.0, True):
        with pytest.raises(InvalidAction):
            env.step(bad)
    env.step(E.Action(3))


def test_episode_done():
    env = make()
    env.reset(8)
    while not env.done:
        env.step(24)
    with pytest.raises(EpisodeDone):
        env.step(1)
    with pytest.raises(EpisodeDone):
        E.SensingEnv(BASE, SHARED_CTX).step(1)


def test_exhausted_budget_no_measurement():
    env = make(budget_per_day=2)
    env.reset(8)
    env.step(1)
    env.step(1)
    blk = env.block.mean.copy()
    r = env.step(1)
    assert not r.info["sampled"] and env.battery == 0.0
    assert np.array_equal(env.block.mean, blk) and env.clock == 8 * 96 + 3


def test_zero_budget():
    env = make(budget_per_day=0)
    s = env.reset(8)
    assert s.battery == 0.0
    assert not env.step(1).info["sampled"]


def test_sparse_reward_equals_refit_fi():
    env = make()
    env.reset(8)
    total = 0.0
    while not env.done:
        r = env.step(5)
        total += r.reward
        if not r.done:
            assert r.reward == 0.0
    span = (8 * 96, 9 * 96)
    rep = ev.evaluate_schedule(D, env.samples, P, span, CTX)
    assert abs(env.day_fi[0] - rep.fisher_information) < 1e-9
    assert total == env.day_fi[0]


def test_multi_day_boundaries_and_budget():
    env = make(episode_days=3)
    env.reset(8)
    days_seen, total = [], 0.0
    while not env.done:
        r = env.step(2)
        total += r.reward
        days_seen += [d for d, _ in r.info["days"]]
    assert days_seen == [0, 1, 2]
    assert total == pytest.approx(sum(env.day_fi), rel=1e-12)
    per_day = np.bincount((np.array(env.samples) - 8 * 96) // 96, minlength=3)
    assert np.all(per_day <= 14)


def test_dense_rewards_telescope_over_days():
    env = make(reward_mode="dense_delta", episode_days=2)
    env.reset(8)
    starts = [env._fi_of_day(0)]
    total = 0.0
    while not env.done:
        r = env.step(3)
        total += r.reward
        if r.info["days"] and len(starts) == 1:
            starts.append(env._day_start_fi)  # day 1 FI when day 0 closed
    assert total == pytest.approx(sum(env.day_fi) - sum(starts), rel=1e-9)


def test_dense_rewards_per_day():
    env = make(reward_mode="dense_delta")
    env.reset(8)
    start = env._fi_of_day(0)
    total = 0.0
    while not env.done:
        total += env.step(4).reward
    assert total == pytest.approx(env.day_fi[0] - start, rel=1e-9, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.integers(1, 24), min_size=1, max_size=120))
def test_clock_budget_and_sigma(actions):
    env = make()
    env.reset(10)
    clock = env.clock
    for a in actions:
        if env.done:
            break
        r = env.step(a)
        clock += a
        assert env.clock == clock
        assert np.all(r.state.sigma_horizon > 0) and 0.0 <= r.state.battery <= 1.0
    assert len(env.samples) == len(set(env.samples)) <= 14


def test_trajectory_deterministic():
    def run():
        env = make()
        env.reset(9)
        out = []
        for a in [3, 7, 1, 24, 24, 24, 5]:
            r = env.step(a)
            out.append((r.reward, r.info["slot"], env.state_vector().tobytes()))
        return out
    assert run() == run()


def test_state_vector_layout():
    env = make()
    s = env.reset(8)
    v = env.state_vector()
    h = 24
    assert v.shape == (2 * h + 1 + 5 * h,)
    assert v[2 * h] == s.battery
    same = E.State(s.slot, s.mu_horizon.copy(), s.sigma_horizon.copy(), s.battery, s.features_horizon.copy())
    assert np.array_equal(E.state_vector(same, env.ctx), v)


def test_state_vector_centered_mean():
    env = make()
    s = env.reset(8)
    flat = E.State(s.slot, np.full(24, env.ctx.mu_center), s.sigma_horizon, s.battery, s.features_horizon)
    assert np.all(E.state_vector(flat, env.ctx)[:24] == 0.0)


def test_rollout_and_trajectory_file(tmp_path):
    from frugalsense.policies import FixedSleepPolicy
    env = make()
    recs = E.rollout(env, FixedSleepPolicy(6), 8)
    E.write_trajectory(recs, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "step,slot,action,sampled,battery,reward"
    assert len(lines) == len(recs) + 1


def test_config_validation():
    with pytest.raises(ValueError):
        E.EnvConfig(D, P, CTX, horizon_h=0)
    with pytest.raises(ValueError):
        E.EnvConfig(D, P, CTX, budget_per_day=97)
    with pytest.raises(ValueError):
        E.EnvConfig(D, P, CTX, reward_mode="other")
