"""Proximal policy optimisation for the gain-scheduling actor-critic.

Rollouts come from :class:`~iccbf.learner.env.TaskEnv` episodes drawn
afresh from the hidden-parameter distribution at every reset.  Recurrent
policies are trained by truncated backpropagation through fixed-length
chunks of the rollout, each restarted from the hidden state recorded when
the chunk was collected.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .. import envs
from . import env as E
from .networks import ActorCritic, NetConfig, gaussian_entropy, gaussian_logp, squash

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PPOConfig:
    total_timesteps: int = 100_000
    n_steps: int = 2048
    batch_size: int = 64
    n_epochs: int = 10
    learning_rate: float = 1e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_range: float = 0.1
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    hidden_layers: int = 3
    nodes: int = 32
    lstm_hidden: int = 64
    log_std_init: float = math.log(0.2)
    recurrent: bool = False
    seq_len: int = 16
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.n_steps % self.seq_len:
            raise ValueError("n_steps must be a multiple of seq_len")
        if self.recurrent and self.batch_size % self.seq_len:
            raise ValueError("batch_size must be a multiple of seq_len for recurrent training")
        if self.n_steps % self.batch_size:
            raise ValueError("n_steps must be a multiple of batch_size")

    def to_dict(self) -> dict:
        return asdict(self)


PPO_DEFAULTS = {
    "cruise": PPOConfig(total_timesteps=100_000, batch_size=64, learning_rate=1e-4, gamma=0.99,
                        clip_range=0.1, hidden_layers=3, nodes=32, lstm_hidden=64),
    "docking": PPOConfig(total_timesteps=1_000_000, batch_size=64, learning_rate=1e-4, gamma=0.995,
                         clip_range=0.1, hidden_layers=4, nodes=64, lstm_hidden=64),
    "inspection": PPOConfig(total_timesteps=1_000_000, batch_size=256, learning_rate=2e-4, gamma=0.99,
                            clip_range=0.2, hidden_layers=4, nodes=128, lstm_hidden=128),
}


def ppo_defaults(env: str, recurrent: bool = False, **overrides) -> PPOConfig:
    return replace(PPO_DEFAULTS[env], recurrent=recurrent, **overrides)


# -- advantages ---------------------------------------------------------------------------

def gae(rewards, values, gamma: float, lam: float, last_value: float = 0.0, dones=None):
    """Generalized advantage estimates and returns.

    ``dones[t]`` marks that the episode ended after step ``t``, so nothing
    is bootstrapped across it; ``last_value`` bootstraps the final step.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.zeros(len(r), bool) if dones is None else np.asarray(dones, bool)
    if not (len(r) == len(v) == len(d)):
        raise ValueError("rewards, values and dones must have equal length")
    adv = np.zeros(len(r))
    run = 0.0
    for t in range(len(r) - 1, -1, -1):
        nonterm = 0.0 if d[t] else 1.0
        v_next = last_value if t == len(r) - 1 else v[t + 1]
        delta = r[t] + gamma * v_next * nonterm - v[t]
        run = delta + gamma * lam * nonterm * run
        adv[t] = run
    return adv, adv + v


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=float)
    if adv.size < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


# -- loss -------------------------------------------------------------------------------------

@dataclass
class Batch:
    """Sequences ``(L, B, ...)``; feed-forward batches use ``L = 1``."""

    obs: np.ndarray
    z: np.ndarray
    logp_old: np.ndarray
    adv: np.ndarray
    returns: np.ndarray
    starts: np.ndarray
    state0: dict | None = None


def ppo_loss(policy: ActorCritic, P, batch: Batch, cfg: PPOConfig, normalize: bool = True):
    """Clipped surrogate + value + entropy loss and its gradient with respect to ``P``."""
    mu, v, _, cache = policy.forward(P, batch.obs, batch.state0, batch.starts)
    log_std = P["log_std"]
    std = np.exp(log_std)
    n = batch.adv.size
    adv = normalize_advantages(batch.adv) if normalize else batch.adv
    logp = gaussian_logp(batch.z, mu, log_std)
    ratio = np.exp(logp - batch.logp_old)
    clipped = np.clip(ratio, 1 - cfg.clip_range, 1 + cfg.clip_range)
    s1, s2 = ratio * adv, clipped * adv
    pg_loss = -float(np.mean(np.minimum(s1, s2)))
    v_loss = float(np.mean((v - batch.returns) ** 2))
    ent = gaussian_entropy(log_std)
    loss = pg_loss + cfg.vf_coef * v_loss - cfg.ent_coef * ent

    # d loss / d logp: only samples where the unclipped term is the minimum carry gradient
    active = s1 <= s2
    dlogp = np.where(active, -adv * ratio, 0.0) / n
    diff = (batch.z - mu) / std
    dmu = dlogp[..., None] * diff / std
    dlog_std = np.sum(dlogp[..., None] * (diff ** 2 - 1.0), axis=tuple(range(dlogp.ndim)))
    dlog_std = dlog_std - cfg.ent_coef * np.ones_like(log_std)
    dv = cfg.vf_coef * 2.0 * (v - batch.returns) / n
    grads = policy.backward(P, cache, dmu, dv)
    grads["log_std"] = grads["log_std"] + dlog_std
    metrics = {
        "loss": loss, "policy_loss": pg_loss, "value_loss": v_loss, "entropy": ent,
        "approx_kl": float(np.mean((ratio - 1) - np.log(ratio))),
        "clip_fraction": float(np.mean(np.abs(ratio - 1) > cfg.clip_range)),
    }
    return loss, grads, metrics


class Adam:
    def __init__(self, params, lr: float, eps: float = 1e-8, betas=(0.9, 0.999)):
        self.lr, self.eps, self.b1, self.b2 = lr, eps, *betas
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": {k: v.tolist() for k, v in self.m.items()},
                "v": {k: v.tolist() for k, v in self.v.items()}}


def clip_grad_norm(grads, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and total > max_norm:
        s = max_norm / (total + 1e-12)
        for k in grads:
            grads[k] = grads[k] * s
    return total


# -- rollouts ----------------------------------------------------------------------------------

@dataclass
class Rollout:
    obs: np.ndarray
    z: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    starts: np.ndarray
    states: list  # recurrent state before each step (None when feed-forward)
    last_value: float = 0.0
    episodes: list = field(default_factory=list)  # {return, fuel, failure, length}


class GainEnv:
    """Adapter from policy outputs to :class:`TaskEnv` actions.

    ``fixed`` pins leading action components (the untuned inspection
    baseline learns only the nominal thrust).
    """

    def __init__(self, env: str, options: E.EnvOptions | None = None, horizon: int | None = None,
                 noise: envs.NoiseConfig | None = None, fixed=None):
        self.env = env
        self.options = options or E.EnvOptions()
        self.horizon = horizon
        self.noise = noise
        self.fixed = None if fixed is None else np.asarray(fixed, dtype=float)
        lo, hi = E.action_bounds(env)
        k = 0 if self.fixed is None else self.fixed.size
        self.low, self.high = lo[k:], hi[k:]
        self.task: E.TaskEnv | None = None

    @property
    def obs_dim(self) -> int:
        return len(E.OBS_BOUNDS[self.env].low)

    @property
    def act_dim(self) -> int:
        return self.low.size

    def initial_action(self) -> np.ndarray:
        a = E.UNTUNED[self.env]
        if self.env == "inspection":
            a = np.r_[a, np.zeros(3)]
        k = 0 if self.fixed is None else self.fixed.size
        return a[k:]

    def full_action(self, a) -> np.ndarray:
        return np.asarray(a, float) if self.fixed is None else np.r_[self.fixed, a]

    def reset(self, rng: np.random.Generator, episode: envs.EpisodeConfig | None = None) -> np.ndarray:
        if episode is None:
            kw = {}
            if self.horizon is not None:
                kw["horizon"] = self.horizon
            if self.noise is not None:
                kw["noise"] = self.noise
            episode = E.sample_episode(self.env, rng, **kw)
        self.task = E.TaskEnv(episode, self.options)
        return self.task.obs

    def step(self, a) -> E.StepOutcome:
        return self.task.step(self.full_action(a))


def collect(policy: ActorCritic, genv: GainEnv, n_steps: int, rng: np.random.Generator,
            carry: dict) -> Rollout:
    """``n_steps`` transitions; ``carry`` holds the open episode between calls."""
    d = genv.obs_dim
    obs = np.zeros((n_steps, d))
    zs = np.zeros((n_steps, genv.act_dim))
    logp = np.zeros(n_steps)
    vals = np.zeros(n_steps)
    rew = np.zeros(n_steps)
    dones = np.zeros(n_steps, bool)
    starts = np.zeros(n_steps, bool)
    states = []
    episodes = []
    if carry.get("obs") is None:
        carry.update(obs=genv.reset(rng), start=True, state=policy.initial_state(1), ret=0.0)
    for t in range(n_steps):
        o = carry["obs"]
        if carry["start"]:
            carry["state"] = policy.initial_state(1)
        states.append(carry["state"] if policy.recurrent else None)
        a, z, lp, v, new_state = policy.act(o, carry["state"], carry["start"], rng)
        out = genv.step(a)
        obs[t], zs[t], logp[t], vals[t], rew[t] = o, z, lp, v, out.reward
        starts[t] = carry["start"]
        dones[t] = out.done
        carry["ret"] += out.reward
        carry["state"] = new_state
        if out.done:
            task = genv.task
            episodes.append({"return": carry["ret"], "fuel": task.fuel, "failure": bool(task.failure),
                             "length": task.k})
            carry.update(obs=genv.reset(rng), start=True, ret=0.0)
        else:
            carry.update(obs=out.obs, start=False)
    last_value = 0.0
    if not dones[-1]:
        _, _, _, last_value, _ = policy.act(carry["obs"], carry["state"], carry["start"], None)
    return Rollout(obs, zs, logp, vals, rew, dones, starts, states, float(last_value), episodes)


def _stack_states(states: list) -> dict:
    return {k: (np.concatenate([s[k][0] for s in states]), np.concatenate([s[k][1] for s in states]))
            for k in ("pi", "vf")}


def make_batches(ro: Rollout, adv, returns, cfg: PPOConfig, rng: np.random.Generator, recurrent: bool):
    """Shuffled minibatches; recurrent ones are whole ``seq_len`` chunks."""
    n = len(ro.rewards)
    if not recurrent:
        idx = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            j = idx[s:s + cfg.batch_size]
            yield Batch(ro.obs[j][None], ro.z[j][None], ro.logp[j][None], adv[j][None], returns[j][None],
                        np.zeros((1, len(j)), bool))
        return
    L = cfg.seq_len
    chunks = rng.permutation(n // L)
    per = cfg.batch_size // L
    for s in range(0, len(chunks), per):
        cs = chunks[s:s + per]
        rows = np.stack([np.arange(c * L, (c + 1) * L) for c in cs], axis=1)  # (L, B)
        # each chunk replays from the state recorded when it was collected
        st = _stack_states([ro.states[c * L] for c in cs])
        yield Batch(ro.obs[rows], ro.z[rows], ro.logp[rows], adv[rows], returns[rows],
                    ro.starts[rows], st)


class NonFiniteLoss(FloatingPointError):
    pass


def ppo_update(policy: ActorCritic, opt: Adam, ro: Rollout, cfg: PPOConfig, rng: np.random.Generator):
    """Epochs of minibatch updates; returns averaged metrics.

    A minibatch with a non-finite loss or gradient is skipped and counted
    in ``rejected``.
    """
    adv, returns = gae(ro.rewards, ro.values, cfg.gamma, cfg.gae_lambda, ro.last_value, ro.dones)
    sums: dict = {}
    count = 0
    rejected = 0
    for _ in range(cfg.n_epochs):
        for batch in make_batches(ro, adv, returns, cfg, rng, policy.recurrent):
            with np.errstate(all="ignore"):
                loss, grads, m = ppo_loss(policy, policy.P, batch, cfg)
            finite = math.isfinite(loss) and all(np.all(np.isfinite(g)) for g in grads.values())
            if not finite:
                rejected += 1
                continue
            m["grad_norm"] = clip_grad_norm(grads, cfg.max_grad_norm)
            opt.step(policy.P, grads)
            for k, v in m.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
    out = {k: v / max(count, 1) for k, v in sums.items()}
    out["rejected"] = rejected
    return out


# -- training driver -----------------------------------------------------------------------------

LOG_FIELDS = ["iteration", "timesteps", "episodes", "mean_return", "mean_fuel", "failure_rate",
              "policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction", "rejected"]


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def make_policy(genv: GainEnv, cfg: PPOConfig, seed: int) -> ActorCritic:
    net = NetConfig(obs_dim=genv.obs_dim, act_dim=genv.act_dim, hidden_layers=cfg.hidden_layers,
                    nodes=cfg.nodes, lstm_hidden=cfg.lstm_hidden, actor_recurrent=cfg.recurrent,
                    critic_recurrent=cfg.recurrent, log_std_init=cfg.log_std_init)
    return ActorCritic(net, genv.low, genv.high, genv.initial_action(), seed=seed)


@dataclass
class TrainResult:
    policy: ActorCritic
    log: list
    meta: dict


def train(env: str, cfg: PPOConfig, seed: int = 0, options: E.EnvOptions | None = None,
          horizon: int | None = None, noise: envs.NoiseConfig | None = None, fixed=None,
          log_path=None, checkpoint_path=None, progress: Callable | None = None) -> TrainResult:
    """Train on freshly sampled episodes for ``cfg.total_timesteps`` steps."""
    genv = GainEnv(env, options, horizon, noise, fixed)
    policy = make_policy(genv, cfg, seed)
    opt = Adam(policy.P, cfg.learning_rate, cfg.adam_eps)
    rng = np.random.default_rng([seed, 2])
    upd_rng = np.random.default_rng([seed, 3])
    carry: dict = {}
    log = []
    steps = 0
    it = 0
    while steps < cfg.total_timesteps:
        ro = collect(policy, genv, cfg.n_steps, rng, carry)
        steps += cfg.n_steps
        it += 1
        m = ppo_update(policy, opt, ro, cfg, upd_rng)
        eps = ro.episodes
        row = {
            "iteration": it, "timesteps": steps, "episodes": len(eps),
            "mean_return": float(np.mean([e["return"] for e in eps])) if eps else float("nan"),
            "mean_fuel": float(np.mean([e["fuel"] for e in eps])) if eps else float("nan"),
            "failure_rate": float(np.mean([e["failure"] for e in eps])) if eps else float("nan"),
        }
        for k in LOG_FIELDS[6:]:
            row[k] = m.get(k, float("nan"))
        log.append(row)
        if progress:
            progress(row)
    meta = {"env": env, "seed": seed, "ppo": cfg.to_dict(), "fixed": None if fixed is None else list(fixed),
            "horizon": horizon, "options": _options_dict(genv.options),
            "noise": None if noise is None else asdict(noise)}
    meta["config_hash"] = config_hash(meta)
    res = TrainResult(policy, log, meta)
    if log_path:
        write_log(log, log_path)
    if checkpoint_path:
        save_checkpoint(res, checkpoint_path)
    return res


def _options_dict(o: E.EnvOptions) -> dict:
    d = {k: getattr(o, k) for k in ("da_order", "margin", "audit_substeps", "zeta_audit", "slack_weight")}
    return d


def format_log(log: list) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=LOG_FIELDS, lineterminator="\n")
    w.writeheader()
    for row in log:
        w.writerow({k: (repr(float(row[k])) if isinstance(row[k], float) else row[k]) for k in LOG_FIELDS})
    return buf.getvalue()


def write_log(log: list, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_log(log))
    return path


# -- checkpoints ----------------------------------------------------------------------------------

def save_checkpoint(res: TrainResult, path) -> Path:
    pol = res.policy
    env = res.meta["env"]
    payload = {
        "version": CHECKPOINT_VERSION,
        "meta": res.meta,
        "net": pol.cfg.to_dict(),
        "action_low": pol.low.tolist(),
        "action_high": pol.high.tolist(),
        "obs_bounds": {"low": list(E.OBS_BOUNDS[env].low), "high": list(E.OBS_BOUNDS[env].high)},
        "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(pol.P.items())},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True))
    return path


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[ActorCritic, dict]:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')!r} in {path}")
    meta = payload["meta"]
    expected = config_hash({k: v for k, v in meta.items() if k != "config_hash"})
    if expected != meta.get("config_hash"):
        raise CheckpointError(f"config hash mismatch in {path}")
    net = NetConfig(**payload["net"])
    pol = ActorCritic(net, payload["action_low"], payload["action_high"])
    for k, v in payload["params"].items():
        pol.P[k] = np.asarray(v["data"], dtype=float).reshape(v["shape"])
    return pol, meta


# -- controllers ----------------------------------------------------------------------------------

class PolicyController:
    """Deterministic (mean-action) controller from a trained policy."""

    def __init__(self, policy: ActorCritic, env: str, fixed=None):
        self.policy = policy
        self.env = env
        self.fixed = None if fixed is None else np.asarray(fixed, dtype=float)
        self.state = None
        self.start = True

    def reset(self):
        self.state = self.policy.initial_state(1)
        self.start = True

    def __call__(self, obs) -> np.ndarray:
        a, _, _, _, self.state = self.policy.act(obs, self.state, self.start, None)
        self.start = False
        return a if self.fixed is None else np.r_[self.fixed, a]

    @classmethod
    def from_checkpoint(cls, path) -> "PolicyController":
        pol, meta = load_checkpoint(path)
        return cls(pol, meta["env"], meta.get("fixed"))


class ConstantController:
    """Fixed controller output (the untuned gains)."""

    def __init__(self, action):
        self.action = np.asarray(action, dtype=float)

    def reset(self):
        pass

    def __call__(self, obs) -> np.ndarray:
        return self.action


def rollout_controller(episode: envs.EpisodeConfig, controller, options: E.EnvOptions | None = None) -> E.TaskEnv:
    """Run one episode under ``controller`` and return the finished environment."""
    task = E.TaskEnv(episode, options)
    controller.reset()
    obs = task.obs
    while not task.done:
        obs = task.step(controller(obs)).obs
    return task


def wall_clock() -> float:
    return time.perf_counter()
