import math
import types

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iccbf import envs
from iccbf.learner import env as E
from iccbf.learner import networks as nets
from iccbf.learner import ppo
from iccbf.learner.networks import ActorCritic, NetConfig
from iccbf.learner.ppo import Batch, PPOConfig

QUIET = envs.NoiseConfig()


# -- observations and rewards ------------------------------------------------------------------

def test_normalize_obs_edges():
    b = E.ObsBounds((0.0, -2.0), (300.0, 2.0))
    assert E.normalize_obs([0.0, -2.0], b) == pytest.approx([-1.0, -1.0])
    assert E.normalize_obs([150.0, 0.0], b) == pytest.approx([0.0, 0.0])
    assert E.normalize_obs([300.0, 2.0], b) == pytest.approx([1.0, 1.0])
    assert np.array_equal(E.normalize_obs([1e6, -1e6], b), [1.0, -1.0])


def test_normalize_obs_degenerate():
    with pytest.raises(E.ConfigurationError):
        E.ObsBounds((0.0,), (0.0,))
    with pytest.raises(E.ConfigurationError):
        E.normalize_obs([1.0], types.SimpleNamespace(low=(1.0,), high=(1.0,)))


def test_terminal_clf_penalty():
    assert E.episode_reward_terminal([3.0, 0.2, 1.0], 0.25) == 0.0
    assert E.episode_reward_terminal([3.0, 0.5, 0.6], 0.25) == 0.5
    assert E.episode_reward_terminal(np.linspace(4, 0, 9), 0.25) == 0.0


def test_reward_weights_validated():
    with pytest.raises(E.ConfigurationError):
        E.RewardConfig(w_u=-1.0)


def _episode(env, x0, horizon=20, params=None):
    params = envs.NOMINAL[env] if params is None else params
    return E.make_episode(env, {"x0": x0, "params": params, "seed": 1, "sun_angle": 0.0},
                          horizon=horizon, noise=QUIET)


def test_zero_effort_step_has_zero_reward():
    task = E.TaskEnv(_episode("cruise", [300.0, 24.0]))
    out = task.step(E.UNTUNED["cruise"])
    assert out.info["qp_status"] == "optimal" and out.info["u_star"][0] == 0.0
    assert out.reward == 0.0 and not out.done and out.fuel == 0.0


def test_infeasible_step_fails_with_zero_input():
    task = E.TaskEnv(_episode("cruise", [54.1, 30.0]))
    out = task.step(E.UNTUNED["cruise"])
    assert out.info["qp_status"] != "optimal"
    assert out.failure and out.done
    assert np.all(out.info["u_star"] == 0) and out.fuel == 0.0
    assert out.reward <= -E.REWARDS["cruise"].w_fail


def test_inspection_reward_for_new_points():
    task = E.TaskEnv(_episode("inspection", [0.0, 300.0, 0.0, 0.0, 0.0, 0.0]))
    task.geom.update = lambda x: 5
    # unit gains keep every row inactive at rest here (the untuned ones do not)
    out = task.step(np.r_[np.ones(9), 0.0, 0.0, 0.0])
    assert out.info["qp_status"] == "optimal" and np.all(out.info["u_star"] == 0)
    assert np.all(out.h >= 0)
    assert out.reward == pytest.approx(0.5, abs=1e-15)


def test_fuel_is_sum_of_increments():
    ep = E.sample_episode("docking", np.random.default_rng(4), horizon=30)
    task = E.TaskEnv(ep)
    total = 0.0
    while not task.done:
        total += task.step(E.UNTUNED["docking"]).fuel
    assert task.fuel == pytest.approx(total, rel=1e-15)


def test_step_after_done():
    task = E.TaskEnv(_episode("cruise", [54.1, 30.0]))
    task.step(E.UNTUNED["cruise"])
    with pytest.raises(RuntimeError):
        task.step(E.UNTUNED["cruise"])


# -- GAE -----------------------------------------------------------------------------------------

def test_gae_single_step():
    adv, ret = ppo.gae([1.0], [0.0], 1.0, 1.0)
    assert adv[0] == 1.0 and ret[0] == 1.0


def test_gae_zero():
    adv, _ = ppo.gae(np.zeros(5), np.zeros(5), 0.99, 0.95)
    assert np.all(adv == 0)


def _gae_oracle(r, v, gamma, lam, last, dones):
    T = len(r)
    vn = list(v[1:]) + [last]
    delta = [r[t] + gamma * vn[t] * (1 - dones[t]) - v[t] for t in range(T)]
    out = []
    for t in range(T):
        s, w = 0.0, 1.0
        for l in range(t, T):
            s += w * delta[l]
            if dones[l]:
                break
            w *= gamma * lam
        out.append(s)
    return np.array(out)


def test_gae_three_steps():
    r, v = [0.3, -1.2, 2.5], [0.7, 0.1, -0.4]
    adv, ret = ppo.gae(r, v, 0.97, 0.9, last_value=1.3)
    ref = _gae_oracle(r, v, 0.97, 0.9, 1.3, [0, 0, 0])
    assert np.max(np.abs(adv - ref)) <= 1e-12
    assert np.max(np.abs(ret - (ref + v))) <= 1e-12


@settings(max_examples=60)
@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10), st.booleans()), min_size=1, max_size=30),
       st.floats(0.5, 1.0), st.floats(0.0, 1.0), st.floats(-5, 5))
def test_gae_matches_definition(steps, gamma, lam, last):
    r, v, d = (np.array(c, dtype=float) for c in zip(*steps))
    adv, _ = ppo.gae(r, v, gamma, lam, last, d.astype(bool))
    assert np.allclose(adv, _gae_oracle(r, v, gamma, lam, last, d), rtol=1e-12, atol=1e-12)


def test_advantage_normalization():
    a = ppo.normalize_advantages(np.array([1.0, 2.0, 3.0, 10.0]))
    assert a.mean() == pytest.approx(0.0, abs=1e-15) and a.std() == pytest.approx(1.0, rel=1e-6)


# -- gradients -----------------------------------------------------------------------------------

def _batch(policy, rng, L, B):
    obs = rng.uniform(-1, 1, (L, B, policy.cfg.obs_dim))
    starts = np.zeros((L, B), bool)
    starts[0] = True
    mu, _, _, _ = policy.forward(policy.P, obs, None, starts)
    z = mu + 0.2 * rng.standard_normal(mu.shape)
    # old log-probs from a nearby policy keep ratios away from the clip kinks
    logp_old = nets.gaussian_logp(z, mu, policy.P["log_std"]) + rng.uniform(-0.03, 0.03, (L, B))
    return Batch(obs, z, logp_old, rng.standard_normal((L, B)), rng.standard_normal((L, B)), starts,
                 policy.initial_state(B) if policy.recurrent else None)


def _fd_check(policy, batch, cfg, h=1e-6):
    _, grads, m = ppo.ppo_loss(policy, policy.P, batch, cfg)
    worst = 0.0
    for k, p in policy.P.items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp = ppo.ppo_loss(policy, policy.P, batch, cfg)[0]
            p[idx] = old - h
            lm = ppo.ppo_loss(policy, policy.P, batch, cfg)[0]
            p[idx] = old
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(fd - grads[k][idx]) / max(1e-6, abs(fd) + abs(grads[k][idx])))
    return worst, m


def test_policy_gradient_finite_differences():
    cfg = PPOConfig(clip_range=0.2)
    policy = ActorCritic(NetConfig(2, 1, hidden_layers=1, nodes=4), [-1.0], [1.0], seed=3)
    rng = np.random.default_rng(0)
    for name in policy.P:  # leave the near-zero output init, so every path carries gradient
        policy.P[name] = policy.P[name] + 0.3 * rng.standard_normal(policy.P[name].shape)
    batch = _batch(policy, rng, 1, 10)
    worst, m = _fd_check(policy, batch, cfg)
    assert m["clip_fraction"] < 1.0
    assert worst < 1e-4


def test_recurrent_gradient_finite_differences():
    cfg = PPOConfig(clip_range=0.2)
    net = NetConfig(2, 1, hidden_layers=1, nodes=3, lstm_hidden=3, actor_recurrent=True, critic_recurrent=True)
    policy = ActorCritic(net, [-1.0], [1.0], seed=4)
    rng = np.random.default_rng(1)
    for name in policy.P:
        policy.P[name] = policy.P[name] + 0.3 * rng.standard_normal(policy.P[name].shape)
    batch = _batch(policy, rng, 4, 3)
    batch.starts[2, 1] = True
    worst, _ = _fd_check(policy, batch, cfg)
    assert worst < 1e-4


def test_zero_advantage_leaves_entropy_gradient():
    cfg = PPOConfig(vf_coef=0.0, ent_coef=0.01)
    policy = ActorCritic(NetConfig(2, 2, hidden_layers=1, nodes=4), [-1.0, 0.0], [1.0, 5.0], seed=0)
    rng = np.random.default_rng(2)
    batch = _batch(policy, rng, 1, 8)
    batch.adv = np.zeros_like(batch.adv)
    _, grads, _ = ppo.ppo_loss(policy, policy.P, batch, cfg, normalize=False)
    for k, g in grads.items():
        if k == "log_std":
            assert g == pytest.approx(np.full(2, -0.01), abs=1e-15)
        else:
            assert np.all(g == 0), k


def test_non_finite_minibatch_rejected():
    genv = ppo.GainEnv("cruise")
    cfg = PPOConfig(n_steps=64, batch_size=32, n_epochs=1)
    policy = ppo.make_policy(genv, cfg, 0)
    before = policy.copy_params()
    ro = ppo.Rollout(np.full((64, 2), np.nan), np.zeros((64, 4)), np.zeros(64), np.zeros(64), np.zeros(64),
                     np.zeros(64, bool), np.zeros(64, bool), [None] * 64)
    m = ppo.ppo_update(policy, ppo.Adam(policy.P, 1e-3), ro, cfg, np.random.default_rng(0))
    assert m["rejected"] == 2
    assert all(np.array_equal(before[k], policy.P[k]) for k in before)


# -- action bounds -------------------------------------------------------------------------------

def test_action_bounds_fuzz():
    rng = np.random.default_rng(7)
    low, high = E.action_bounds("inspection")
    policy = ActorCritic(NetConfig(11, 12, hidden_layers=2, nodes=16), low, high, seed=1)
    base = policy.copy_params()
    violations = 0
    for _ in range(10):
        scale = 10 ** rng.uniform(-1, 2)
        P = {k: v + scale * rng.standard_normal(v.shape) for k, v in base.items()}
        obs = rng.uniform(-1, 1, (1, 1000, 11)) * 10 ** rng.uniform(0, 3)
        mu, _, _, _ = policy.forward(P, obs)
        z = mu + np.exp(P["log_std"]) * rng.standard_normal(mu.shape)
        a = nets.squash(z, low, high)
        violations += int(np.sum((a < low) | (a > high)))
    assert violations == 0


@given(st.floats(-1e300, 1e300))
def test_squash_in_bounds(z):
    lo, hi = np.array([0.04]), np.array([40.0])
    a = nets.squash(np.array([z]), lo, hi)
    assert lo[0] <= a[0] <= hi[0]


def test_initial_action_is_untuned():
    genv = ppo.GainEnv("docking")
    policy = ppo.make_policy(genv, ppo.ppo_defaults("docking"), 0)
    a, *_ = policy.act(np.zeros(genv.obs_dim))
    assert a == pytest.approx(E.UNTUNED["docking"], rel=1e-3)


def test_ppo_default_columns():
    c, d, i = ppo.PPO_DEFAULTS["cruise"], ppo.PPO_DEFAULTS["docking"], ppo.PPO_DEFAULTS["inspection"]
    assert (c.total_timesteps, c.learning_rate, c.nodes, c.hidden_layers) == (100_000, 1e-4, 32, 3)
    assert (d.gamma, d.nodes, d.hidden_layers, d.total_timesteps) == (0.995, 64, 4, 1_000_000)
    assert (i.batch_size, i.learning_rate, i.clip_range, i.lstm_hidden) == (256, 2e-4, 0.2, 128)
    assert math.exp(c.log_std_init) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        PPOConfig(n_steps=100)


# -- recurrence and checkpoints -------------------------------------------------------------------

def test_recurrent_determinism():
    net = NetConfig(3, 2, hidden_layers=1, nodes=8, lstm_hidden=6, actor_recurrent=True, critic_recurrent=True)
    seq = np.random.default_rng(0).uniform(-1, 1, (12, 3))

    def run():
        pol = ActorCritic(net, [0.0, 0.0], [1.0, 2.0], seed=5)
        rng = np.random.default_rng(9)
        st_, out = pol.initial_state(1), []
        for k, o in enumerate(seq):
            a, _, _, _, st_ = pol.act(o, st_, k == 0, rng)
            out.append(a)
        return np.array(out)

    a, b = run(), run()
    assert a.tobytes() == b.tobytes()
    assert not np.allclose(a[0], a[-1])


def test_recurrent_state_matters():
    net = NetConfig(3, 1, hidden_layers=1, nodes=8, lstm_hidden=6, actor_recurrent=True)
    pol = ActorCritic(net, [0.0], [1.0], seed=2)
    pol.P["pi.W1"] = pol.P["pi.W1"] * 100  # undo the small output init so the state shows
    o = np.ones(3)
    _, z0, _, _, s = pol.act(o, None, True)
    _, z1, _, _, _ = pol.act(o, s, False)
    _, z2, _, _, _ = pol.act(o, s, True)
    assert z2 == pytest.approx(z0, abs=0) and not np.array_equal(z0, z1)


def test_checkpoint_round_trip(tmp_path):
    cfg = ppo.ppo_defaults("cruise", total_timesteps=64, n_steps=64, batch_size=32, n_epochs=1)
    res = ppo.train("cruise", cfg, seed=0, horizon=20, log_path=tmp_path / "log.csv",
                    checkpoint_path=tmp_path / "ck.json")
    pol, meta = ppo.load_checkpoint(tmp_path / "ck.json")
    assert meta == res.meta
    assert set(pol.P) == set(res.policy.P)
    assert all(np.array_equal(pol.P[k], res.policy.P[k]) for k in pol.P)
    o = np.linspace(-1, 1, 2)
    assert np.array_equal(pol.act(o)[0], res.policy.act(o)[0])
    header = (tmp_path / "log.csv").read_text().splitlines()[0].split(",")
    assert header == ppo.LOG_FIELDS


def test_checkpoint_rejects_tampering(tmp_path):
    import json
    cfg = ppo.ppo_defaults("cruise", total_timesteps=16, n_steps=16, batch_size=16, n_epochs=1)
    ppo.train("cruise", cfg, seed=0, horizon=5, checkpoint_path=tmp_path / "ck.json")
    blob = json.loads((tmp_path / "ck.json").read_text())
    blob["meta"]["seed"] = 99
    (tmp_path / "bad.json").write_text(json.dumps(blob))
    with pytest.raises(ppo.CheckpointError):
        ppo.load_checkpoint(tmp_path / "bad.json")
    blob["version"] = 7
    (tmp_path / "bad.json").write_text(json.dumps(blob))
    with pytest.raises(ppo.CheckpointError):
        ppo.load_checkpoint(tmp_path / "bad.json")
    with pytest.raises(ppo.CheckpointError):
        ppo.load_checkpoint(tmp_path / "missing.json")


def test_training_log_deterministic():
    cfg = ppo.ppo_defaults("cruise", total_timesteps=64, n_steps=32, batch_size=16, n_epochs=2)
    a = ppo.train("cruise", cfg, seed=3, horizon=15)
    b = ppo.train("cruise", cfg, seed=3, horizon=15)
    assert ppo.format_log(a.log) == ppo.format_log(b.log)
    assert all(np.array_equal(a.policy.P[k], b.policy.P[k]) for k in a.policy.P)


# -- training progress ---------------------------------------------------------------------------

def _episode_return(episode, controller):
    task = E.TaskEnv(episode)
    controller.reset()
    obs, total = task.obs, 0.0
    while not task.done:
        out = task.step(controller(obs))
        obs, total = out.obs, total + out.reward
    return total


def test_trained_policy_beats_initial_policy(trained_cruise):
    from iccbf import campaign as C
    _, ckpt, _ = trained_cruise
    trained = ppo.PolicyController.from_checkpoint(ckpt)
    initial = ppo.PolicyController(ppo.make_policy(ppo.GainEnv("cruise"), ppo.ppo_defaults("cruise"), 0), "cruise")
    ds = C.build_dataset("cruise", 100, seed=123)
    r_new = np.array([_episode_return(ep, trained) for ep in map(ds.episode, range(len(ds)))])
    r_old = np.array([_episode_return(ep, initial) for ep in map(ds.episode, range(len(ds)))])
    # both policies face the same episodes, so the error is that of the paired difference
    d = r_new - r_old
    assert d.mean() > 2 * d.std(ddof=1) / math.sqrt(len(d))
