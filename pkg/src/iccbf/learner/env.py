"""Episode simulation: margin, safety-filter QP, noise, propagation and reward.

:class:`TaskEnv` advances one sampled-data step at a time given the gains
(and, for inspection, the nominal thrust) chosen by a controller.  The
filter always sees the true state; noise enters the executed thrust and the
observation handed back to the controller.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .. import barrier_chain as bc
from .. import envs
from .. import poly_algebra as pa
from .. import safety_filter as sf
from ..inspection_task import GeometryError, InspectionConfig, InspectionGeometry

DEPTH = 2

UNTUNED = {
    "cruise": np.array([4.0, 7.0, 2.0, 10.0]),
    "docking": np.array([0.25, 0.85, 0.05, 0.1]),
    "inspection": np.full(9, 0.05),
}

# CLF slack weight in 0.5 ||u||^2 + p eps^2
SLACK_WEIGHT = {"cruise": 1.0, "docking": 1.0}


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class RewardConfig:
    """Weights of the per-step reward.

    ``w_h`` is a single weight on ``max(0, -min h)`` or, as a tuple, one
    weight per constraint on the indicator ``h_i < 0``.  ``w_P`` rewards
    newly inspected tiles and ``effort_per_mass`` scales effort by ``T/m``.
    """

    w_u: float = 1.0
    w_fail: float = 10.0
    w_h: float | tuple = 10.0
    w_V: float = 1.0
    rho_V: float = 0.25
    w_P: float = 0.0
    effort_per_mass: bool = False

    def __post_init__(self):
        ws = [self.w_u, self.w_fail, self.w_V, self.rho_V, self.w_P]
        ws += list(self.w_h) if isinstance(self.w_h, tuple) else [self.w_h]
        if any(w < 0 for w in ws):
            raise ConfigurationError("reward weights must be non-negative")


REWARDS = {
    "cruise": RewardConfig(),
    "docking": RewardConfig(),
    "inspection": RewardConfig(w_u=0.1, w_fail=1.0, w_h=(1.0, 1.0, 1.0), w_V=0.0, w_P=0.1,
                               effort_per_mass=True),
}


# -- observations -------------------------------------------------------------------

@dataclass(frozen=True)
class ObsBounds:
    low: tuple
    high: tuple

    def __post_init__(self):
        lo, hi = np.asarray(self.low, float), np.asarray(self.high, float)
        if lo.shape != hi.shape or np.any(~(hi > lo)):
            raise ConfigurationError("observation bounds must satisfy high > low")


OBS_BOUNDS = {
    "cruise": ObsBounds((0.0, 0.0), (300.0, 40.0)),
    "docking": ObsBounds((-150.0, -150.0, -5.0, -5.0, 0.0),
                         (150.0, 150.0, 5.0, 5.0, 2 * math.pi)),
    "inspection": ObsBounds((-800.0,) * 3 + (-2.0,) * 3 + (0.0, 0.0) + (-1.0,) * 3,
                            (800.0,) * 3 + (2.0,) * 3 + (2 * math.pi, 100.0) + (1.0,) * 3),
}


def normalize_obs(S, bounds: ObsBounds) -> np.ndarray:
    """Min-max map to ``[-1, 1]``, clamping values outside the bounds."""
    lo, hi = np.asarray(bounds.low, float), np.asarray(bounds.high, float)
    if np.any(~(hi > lo)):
        raise ConfigurationError("degenerate observation bounds")
    return np.clip(2.0 * (np.asarray(S, dtype=float) - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def episode_reward_terminal(V_history, rho_V: float) -> float:
    """Terminal CLF penalty: ``min V`` when it never dropped to ``rho_V``, else 0."""
    v = float(np.min(V_history))
    return v if v > rho_V else 0.0


# -- action layout -------------------------------------------------------------------

def action_size(env: str) -> int:
    return {"cruise": 4, "docking": 4, "inspection": 12}[env]


def action_bounds(env: str, scale=(0.01, 10.0), u_max: float | None = None):
    """Elementwise ``(low, high)`` of the controller output.

    Gains span ``[0.01, 10]`` times the untuned values; inspection appends a
    nominal thrust bounded by the nominal per-axis limit.
    """
    th = UNTUNED[env]
    lo, hi = scale[0] * th, scale[1] * th
    if env == "inspection":
        um = envs.NOMINAL["inspection"].u_max if u_max is None else u_max
        lo = np.r_[lo, -um * np.ones(3)]
        hi = np.r_[hi, um * np.ones(3)]
    return lo, hi


def split_action(env: str, action):
    """``(theta rows, c_V, u_rl)`` from a flat action vector."""
    a = np.asarray(action, dtype=float)
    if env == "inspection":
        return a[:9].reshape(3, DEPTH + 1), None, a[9:12] if a.size >= 12 else np.zeros(3)
    return a[:DEPTH + 1].reshape(1, DEPTH + 1), float(a[DEPTH + 1]), None


# -- episode ---------------------------------------------------------------------------

@dataclass
class EnvOptions:
    da_order: int = pa.DEFAULT_ORDER
    margin: bool = True
    audit_substeps: int | None = None  # check h on an RK4 grid this fine (evaluation)
    zeta_audit: bool = True
    slack_weight: float | None = None
    reward: RewardConfig | None = None
    obs_bounds: ObsBounds | None = None
    inspection: InspectionConfig = field(default_factory=InspectionConfig)


@dataclass
class StepOutcome:
    obs: np.ndarray
    reward: float
    done: bool
    failure: bool
    fuel: float
    h: np.ndarray
    V: float | None
    info: dict = field(default_factory=dict)


class TaskEnv:
    """One episode of a benchmark task driven by per-step controller outputs."""

    def __init__(self, episode: envs.EpisodeConfig, options: EnvOptions | None = None):
        self.ep = episode
        self.opt = options or EnvOptions()
        self.env = episode.env
        self.system = episode.make_system()
        self.reward_cfg = self.opt.reward or REWARDS[self.env]
        self.bounds = self.opt.obs_bounds or OBS_BOUNDS[self.env]
        p = self.opt.slack_weight
        self.p = SLACK_WEIGHT.get(self.env, 1.0) if p is None else p
        self.reset()

    # -- state --------------------------------------------------------------------
    def reset(self) -> np.ndarray:
        ep = self.ep
        self.rng = np.random.default_rng(ep.seed)
        self.cluster_rng = np.random.default_rng([ep.seed, 1])
        self.x = ep.x0.copy()
        self.t = 0.0
        self.k = 0
        self.done = False
        self.failure = False
        self.fuel = 0.0
        self.h = self.system.h_values(self.x)
        self.V_hist = [float(self.system.clf(self.x))] if self.system.has_clf else []
        self.stats = {"qp_failures": 0, "h_violations": 0, "substep_violations": 0,
                      "audit_retries": 0, "audit_failures": 0, "relaxed_margins": 0,
                      "singular_margins": 0}
        self.geom = None
        if self.env == "inspection":
            self.geom = InspectionGeometry(ep.params.R_C, ep.sun_angle, self.opt.inspection)
            self.geom.update(self.x)
        self.obs = self._observe(self.x)
        return self.obs

    @property
    def t_final(self) -> float:
        return self.ep.t_final

    def _observe(self, x) -> np.ndarray:
        xe = envs.apply_state_noise(self.system, x, self.ep.noise, self.rng)
        if self.env == "docking":
            xe[4] = xe[4] % (2 * math.pi)
        if self.env == "inspection":
            d = self.geom.direction(self.cluster_rng)
            S = np.r_[xe, self.ep.sun_angle, self.geom.n_insp, d]
        else:
            S = xe
        self.raw_obs = S
        return normalize_obs(S, self.bounds)

    @property
    def inspection_score(self) -> float:
        return 100.0 * self.geom.n_insp / self.geom.config.N_p if self.geom is not None else float("nan")

    # -- filter -------------------------------------------------------------------
    def _clf_terms(self, x):
        xs = pa.da_variables(x, 1)
        grad = self.system.clf(xs).gradient_at_center()
        f = np.asarray(self.system.f(list(x)), dtype=float)
        g = np.asarray(self.system.g(list(x)), dtype=float).reshape(self.system.n, self.system.m)
        return float(self.system.clf(x)), float(grad @ f), grad @ g

    def _qp(self, x, thetas, c_V, u_rl, zeta):
        sys_ = self.system
        cons = sys_.constraints()
        T = self.ep.T if self.opt.margin else 0.0
        se = bc.chain_margins(sys_, cons, thetas, DEPTH, x, T, zeta=zeta, order=self.opt.da_order)
        nus = [m.nu for m in se.margins]
        if self.env == "inspection":
            prob = sf.build_filter_qp(se.evals, thetas[:, DEPTH], nus, u_rl, sys_.u_max, sys_.input_norm)
        else:
            V, lfV, lgV = self._clf_terms(x)
            prob = sf.build_clf_iccbf_qp(se.evals[0], lfV, lgV, V, thetas[0, DEPTH], c_V, nus[0],
                                         self.p, sys_.u_max, sys_.input_norm)
        return se, prob, sf.solve(prob)

    # -- step ---------------------------------------------------------------------
    def step(self, action) -> StepOutcome:
        """Advance one sample with controller output ``action`` (gains, CLF gain, nominal thrust)."""
        if self.done:
            raise RuntimeError("episode is done; call reset()")
        sys_, ep, cfg = self.system, self.ep, self.reward_cfg
        thetas, c_V, u_rl = split_action(self.env, action)
        self.t += ep.T
        self.k += 1
        failure = False
        info = {}
        x_k = self.x
        zeta = None
        rng_state = self.rng.bit_generator.state
        for attempt in range(2):
            try:
                se, prob, sol = self._qp(x_k, thetas, c_V, u_rl, zeta)
            except pa.SingularDomainError:
                self.stats["singular_margins"] += 1
                se, sol = None, sf.QpSolution(np.zeros(sys_.m), 0.0, sf.SOLVER_FAILURE)
            if se is not None and attempt == 0:
                self.stats["relaxed_margins"] += sum(m.relaxed for m in se.margins)
            if not sol.optimal:
                failure = True
                u_star = np.zeros(sys_.m)
            else:
                u_star = np.asarray(sol.u_star, dtype=float)
            self.rng.bit_generator.state = rng_state
            u = envs.apply_thrust_noise(u_star, ep.noise, sys_.u_max, self.rng, sys_.input_norm)
            nsub = self.opt.audit_substeps or sys_.default_substeps
            try:
                x_next, traj = envs.propagate_zoh(sys_, x_k, u, ep.T, nsub, return_substeps=True)
            except envs.DivergenceError:
                failure = True
                x_next, traj = x_k.copy(), x_k[None, :]
                info["diverged"] = True
                break
            if not (self.opt.zeta_audit and self.opt.margin and se is not None):
                break
            box = se.margins[0].box
            if np.all(box.contains(traj)):
                break
            if attempt == 0:
                self.stats["audit_retries"] += 1
                zeta = 2.0 * se.zeta
            else:
                self.stats["audit_failures"] += 1
        if failure:
            self.stats["qp_failures"] += 1
        info["qp_status"] = sol.status
        info["u_star"] = u_star
        info["nu"] = [m.nu for m in se.margins] if se is not None else None
        self.x = x_next
        h_next = sys_.h_values(x_next)
        if self.opt.audit_substeps:
            hs = np.array([sys_.h_values(s) for s in traj[1:-1]]) if len(traj) > 2 else np.zeros((0, len(h_next)))
            if hs.size and np.any(hs < 0):
                self.stats["substep_violations"] += 1
                info["substep_violation"] = True
        violated = bool(np.any(h_next < 0)) or bool(info.get("substep_violation", False))
        if np.any(h_next < 0):
            self.stats["h_violations"] += 1
        V_next = None
        if sys_.has_clf:
            V_next = float(sys_.clf(x_next))
            self.V_hist.append(V_next)
        fuel = float(np.linalg.norm(u)) * ep.T
        self.fuel += fuel
        new_points = 0
        if self.geom is not None and not np.any(h_next[:1] < 0):
            try:
                new_points = self.geom.update(x_next)
            except GeometryError:
                new_points = 0
        self.obs = self._observe(x_next)
        done = failure or violated
        if self.t >= self.t_final - 1e-9:
            done = True
        if self.geom is not None and self.geom.complete:
            done = True
        if self.env == "docking" and sys_.goal_reached(x_next):
            done = True
            info["goal"] = True
        # reward
        effort = float(np.linalg.norm(u_star))
        if cfg.effort_per_mass:
            effort *= ep.T / ep.params.m
        r = -cfg.w_u * effort - cfg.w_fail * float(failure)
        if isinstance(cfg.w_h, tuple):
            r -= float(np.dot(cfg.w_h, h_next < 0))
        else:
            r -= cfg.w_h * max(0.0, -float(np.min(h_next)))
        r += cfg.w_P * new_points
        if self.t >= self.t_final - 1e-9 and sys_.has_clf and cfg.w_V > 0:
            r -= cfg.w_V * episode_reward_terminal(self.V_hist, cfg.rho_V)
        self.h = h_next
        self.done = done
        self.failure = failure or violated
        info["new_points"] = new_points
        return StepOutcome(self.obs, float(r), done, self.failure, fuel, h_next, V_next, info)


def make_episode(env: str, record: dict, T: float | None = None, horizon: int | None = None,
                 noise: envs.NoiseConfig | None = None) -> envs.EpisodeConfig:
    """Episode config from a dataset record ``{x0, params, seed, sun_angle}``."""
    params = envs.params_from_dict(env, record["params"]) if isinstance(record["params"], dict) \
        else record["params"]
    cls = envs.SYSTEMS[env]
    return envs.EpisodeConfig(
        env=env, T=cls.default_T if T is None else T,
        horizon=envs.DEFAULT_HORIZON[env] if horizon is None else horizon,
        x0=np.asarray(record["x0"], dtype=float), params=params,
        noise=envs.NOISE[env] if noise is None else noise,
        seed=int(record["seed"]), sun_angle=float(record.get("sun_angle", 0.0)))


def sample_episode(env: str, rng: np.random.Generator, **kw) -> envs.EpisodeConfig:
    """A fresh random episode (hidden parameters, initial state, noise seed)."""
    params = envs.sample_hidden_params(envs.NOMINAL[env], envs.DELTAS[env], rng)
    x0, sun = envs.sample_initial_state(env, params, rng)
    seed = int(rng.integers(2 ** 31 - 1))
    return make_episode(env, {"x0": x0, "params": params, "seed": seed, "sun_angle": sun}, **kw)


def run_fixed(episode: envs.EpisodeConfig, action, options: EnvOptions | None = None) -> TaskEnv:
    """Run an episode to termination with a constant controller output."""
    env = TaskEnv(episode, options)
    while not env.done:
        env.step(action)
    return env


