"""Small dense networks with hand-written reverse mode.

Parameters live in one flat ``dict[str, ndarray]`` owned by the model;
layers only know their parameter names.  Every ``forward`` returns a cache
that the matching ``backward`` consumes, accumulating into a gradient dict
of the same layout.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

Params = dict


def orthogonal(shape, gain: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal initialiser (rows or columns orthonormal, scaled by ``gain``)."""
    a = rng.standard_normal((max(shape), min(shape)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return gain * q[: shape[0], : shape[1]]


def _acc(grads: Params, name: str, g: np.ndarray):
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g.copy()


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class MLP:
    """Affine layers with Tanh between them; the last layer is linear."""

    def __init__(self, prefix: str, sizes: list):
        if len(sizes) < 2:
            raise ValueError("an MLP needs input and output sizes")
        self.prefix = prefix
        self.sizes = list(sizes)
        self.names = [(f"{prefix}.W{i}", f"{prefix}.b{i}") for i in range(len(sizes) - 1)]

    def init(self, P: Params, rng: np.random.Generator, out_gain: float = 1.0, out_bias=None):
        last = len(self.names) - 1
        for i, (wn, bn) in enumerate(self.names):
            gain = out_gain if i == last else math.sqrt(2.0)
            P[wn] = orthogonal((self.sizes[i], self.sizes[i + 1]), gain, rng)
            P[bn] = np.zeros(self.sizes[i + 1])
        if out_bias is not None:
            P[self.names[-1][1]] = np.asarray(out_bias, dtype=float).copy()

    def forward(self, P: Params, x: np.ndarray):
        acts = [x]
        last = len(self.names) - 1
        for i, (wn, bn) in enumerate(self.names):
            y = acts[-1] @ P[wn] + P[bn]
            acts.append(y if i == last else np.tanh(y))
        return acts[-1], acts

    def backward(self, P: Params, acts, dy: np.ndarray, grads: Params) -> np.ndarray:
        last = len(self.names) - 1
        d = dy
        for i in range(last, -1, -1):
            wn, bn = self.names[i]
            if i != last:
                d = d * (1.0 - acts[i + 1] ** 2)
            x = acts[i]
            _acc(grads, wn, x.reshape(-1, x.shape[-1]).T @ d.reshape(-1, d.shape[-1]))
            _acc(grads, bn, d.reshape(-1, d.shape[-1]).sum(axis=0))
            d = d @ P[wn].T
        return d


class LSTM:
    """Single-layer LSTM over ``(L, B, in)`` sequences, gates ordered i, f, g, o.

    ``starts[t, b]`` zeroes the carried state before step ``t`` (a new
    episode begins there).  Backpropagation stops at the sequence start.
    """

    def __init__(self, prefix: str, n_in: int, hidden: int):
        self.prefix = prefix
        self.n_in, self.H = n_in, hidden
        self.W, self.b = f"{prefix}.W", f"{prefix}.b"

    def init(self, P: Params, rng: np.random.Generator):
        H = self.H
        P[self.W] = np.concatenate([orthogonal((self.n_in + H, H), 1.0, rng) for _ in range(4)], axis=1)
        P[self.b] = np.zeros(4 * H)

    def forward(self, P: Params, xs: np.ndarray, h0: np.ndarray, c0: np.ndarray, starts: np.ndarray):
        L = xs.shape[0]
        H = self.H
        h, c = h0, c0
        hs = np.empty(xs.shape[:2] + (H,))
        cache = []
        for t in range(L):
            keep = (1.0 - starts[t].astype(float))[:, None]
            h_in, c_in = h * keep, c * keep
            xh = np.concatenate([xs[t], h_in], axis=1)
            z = xh @ P[self.W] + P[self.b]
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = sigmoid(z[:, 3 * H:])
            c = f * c_in + i * g
            tc = np.tanh(c)
            h = o * tc
            hs[t] = h
            cache.append((xh, keep, c_in, i, f, g, o, tc))
        return hs, (h, c), cache

    def backward(self, P: Params, cache, dhs: np.ndarray, grads: Params) -> np.ndarray:
        H, n_in = self.H, self.n_in
        W = P[self.W]
        dW = np.zeros_like(W)
        db = np.zeros_like(P[self.b])
        dxs = np.empty(dhs.shape[:2] + (n_in,))
        dh_next = np.zeros(dhs.shape[1:])
        dc_next = np.zeros(dhs.shape[1:])
        for t in range(len(cache) - 1, -1, -1):
            xh, keep, c_in, i, f, g, o, tc = cache[t]
            dh = dhs[t] + dh_next
            do = dh * tc
            dc = dc_next + dh * o * (1.0 - tc ** 2)
            di = dc * g
            dg = dc * i
            df = dc * c_in
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g ** 2), do * o * (1 - o)],
                                axis=1)
            dW += xh.T @ dz
            db += dz.sum(axis=0)
            dxh = dz @ W.T
            dxs[t] = dxh[:, :n_in]
            dh_next = dxh[:, n_in:] * keep
            dc_next = dc * f * keep
        _acc(grads, self.W, dW)
        _acc(grads, self.b, db)
        return dxs


# -- actor-critic -----------------------------------------------------------------------

@dataclass(frozen=True)
class NetConfig:
    obs_dim: int
    act_dim: int
    hidden_layers: int = 3
    nodes: int = 32
    lstm_hidden: int = 64
    actor_recurrent: bool = False
    critic_recurrent: bool = False
    log_std_init: float = math.log(0.2)

    def to_dict(self) -> dict:
        return asdict(self)


def squash(z, low, high):
    """Tanh-affine map of pre-squash actions onto ``[low, high]``."""
    a = low + (high - low) * 0.5 * (np.tanh(z) + 1.0)
    return np.clip(a, low, high)  # guards the last ulp only


def unsquash(a, low, high):
    y = 2.0 * (np.asarray(a, dtype=float) - low) / (high - low) - 1.0
    return np.arctanh(np.clip(y, -1 + 1e-12, 1 - 1e-12))


class ActorCritic:
    """Gaussian policy in pre-squash space plus a state-value head.

    Actor and critic have separate feature paths; each may start with its
    own LSTM.  Without recurrence the path is the MLP alone.
    """

    def __init__(self, cfg: NetConfig, low, high, action_init=None, seed: int = 0):
        self.cfg = cfg
        self.low = np.asarray(low, dtype=float)
        self.high = np.asarray(high, dtype=float)
        if self.low.shape != (cfg.act_dim,) or np.any(~(self.high > self.low)):
            raise ValueError("action bounds must match act_dim with high > low")
        rng = np.random.default_rng(seed)
        self.P: Params = {}
        hid = [cfg.nodes] * cfg.hidden_layers
        a_in = cfg.lstm_hidden if cfg.actor_recurrent else cfg.obs_dim
        c_in = cfg.lstm_hidden if cfg.critic_recurrent else cfg.obs_dim
        self.actor_lstm = LSTM("pi_lstm", cfg.obs_dim, cfg.lstm_hidden) if cfg.actor_recurrent else None
        self.critic_lstm = LSTM("vf_lstm", cfg.obs_dim, cfg.lstm_hidden) if cfg.critic_recurrent else None
        self.actor = MLP("pi", [a_in] + hid + [cfg.act_dim])
        self.critic = MLP("vf", [c_in] + hid + [1])
        if self.actor_lstm:
            self.actor_lstm.init(self.P, rng)
        if self.critic_lstm:
            self.critic_lstm.init(self.P, rng)
        bias = None if action_init is None else unsquash(action_init, self.low, self.high)
        self.actor.init(self.P, rng, out_gain=0.01, out_bias=bias)
        self.critic.init(self.P, rng, out_gain=1.0)
        self.P["log_std"] = np.full(cfg.act_dim, cfg.log_std_init)

    @property
    def recurrent(self) -> bool:
        return self.actor_lstm is not None or self.critic_lstm is not None

    def initial_state(self, batch: int = 1) -> dict:
        H = self.cfg.lstm_hidden
        z = np.zeros((batch, H))
        return {"pi": (z, z.copy()), "vf": (z.copy(), z.copy())}

    def forward(self, P: Params, obs, state: dict | None = None, starts=None):
        """Sequence forward over ``obs`` of shape ``(L, B, d)``.

        Returns ``mu (L, B, a)``, ``value (L, B)``, the final recurrent
        state and a cache for :meth:`backward`.
        """
        obs = np.asarray(obs, dtype=float)
        L, B = obs.shape[:2]
        state = state or self.initial_state(B)
        starts = np.zeros((L, B), bool) if starts is None else np.asarray(starts, bool)
        new_state = dict(state)
        cache = {}
        x_pi, x_vf = obs, obs
        if self.actor_lstm:
            x_pi, new_state["pi"], cache["pi_lstm"] = self.actor_lstm.forward(P, obs, *state["pi"], starts)
        if self.critic_lstm:
            x_vf, new_state["vf"], cache["vf_lstm"] = self.critic_lstm.forward(P, obs, *state["vf"], starts)
        mu, cache["pi"] = self.actor.forward(P, x_pi)
        v, cache["vf"] = self.critic.forward(P, x_vf)
        return mu, v[..., 0], new_state, cache

    def backward(self, P: Params, cache, dmu, dv) -> Params:
        grads: Params = {}
        dx = self.actor.backward(P, cache["pi"], dmu, grads)
        if self.actor_lstm:
            self.actor_lstm.backward(P, cache["pi_lstm"], dx, grads)
        dx = self.critic.backward(P, cache["vf"], np.asarray(dv)[..., None], grads)
        if self.critic_lstm:
            self.critic_lstm.backward(P, cache["vf_lstm"], dx, grads)
        for k in P:
            grads.setdefault(k, np.zeros_like(P[k]))
        return grads

    # -- acting -----------------------------------------------------------------------
    def act(self, obs, state=None, start: bool = False, rng: np.random.Generator | None = None):
        """One step for a single observation.

        Returns ``(action, z, log_prob, value, new_state)``; ``z`` is the
        pre-squash sample (the mean when ``rng`` is None).
        """
        starts = np.array([[bool(start)]])
        mu, v, new_state, _ = self.forward(self.P, np.asarray(obs, float)[None, None, :], state, starts)
        mu, v = mu[0, 0], float(v[0, 0])
        std = np.exp(self.P["log_std"])
        z = mu if rng is None else mu + std * rng.standard_normal(mu.shape)
        return squash(z, self.low, self.high), z, float(gaussian_logp(z, mu, self.P["log_std"])), v, new_state

    def copy_params(self) -> Params:
        return {k: v.copy() for k, v in self.P.items()}


LOG_2PI = math.log(2 * math.pi)


def gaussian_logp(z, mu, log_std):
    return np.sum(-0.5 * ((z - mu) / np.exp(log_std)) ** 2 - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_entropy(log_std) -> float:
    return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))
