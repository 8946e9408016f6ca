"""Benchmark control-affine systems, ZOH propagation and uncertainty models.

Every system exposes its drift ``f(x)`` and input matrix ``g(x)`` as plain
Python over an indexable state, using the dispatching elementary functions of
:mod:`iccbf.poly_algebra`.  The same code therefore evaluates on floats (for
simulation), on TaylorPolys (for bounding) and on sympy symbols (for the
symbolic reference chain used in audits).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Callable, ClassVar, Sequence

import numpy as np

from . import poly_algebra as pa

MU_EARTH = 398600.4418e9  # m^3/s^2
G0 = 9.81


class DivergenceError(FloatingPointError):
    """Numerical integration produced a non-finite state."""


# -- hidden parameters ---------------------------------------------------------------

@dataclass(frozen=True)
class CruiseParams:
    m: float = 1650.0
    v0: float = 13.89
    v_max: float = 24.0
    u_max: float = 0.25
    g0: float = G0


@dataclass(frozen=True)
class DockingParams:
    m: float = 1000.0
    R_C: float = 2.4
    omega: float = math.radians(0.6)
    r: float = 6771e3  # chief orbit radius [m]
    gamma: float = math.radians(10.0)
    u_max: float = 250.0  # [N]


@dataclass(frozen=True)
class InspectionParams:
    m: float = 12.0
    R_D: float = 5.0
    R_C: float = 10.0
    u_max: float = 1.0
    r: float = 6771e3
    R_max: float = 800.0


CRUISE_DELTA = {"m": 0.2, "u_max": 0.2, "v_max": 0.2, "v0": 0.1}
DOCKING_DELTA = {"m": 0.1, "u_max": 0.1, "R_C": 0.1, "omega": 0.1, "r": 0.1, "gamma": 0.1}
INSPECTION_DELTA = {"m": 0.1, "u_max": 0.1, "R_D": 0.1, "R_C": 0.1, "r": 0.1, "R_max": 0.1}


def sample_hidden_params(nominal, delta: dict, rng: np.random.Generator):
    """Draw each listed field uniformly in ``[(1-d) p, (1+d) p]``, in field order."""
    updates = {}
    for f in dataclasses.fields(nominal):
        d = float(delta.get(f.name, 0.0))
        if d < 0:
            raise ValueError(f"negative variation for {f.name}")
        p = getattr(nominal, f.name)
        if d > 0:
            updates[f.name] = float(rng.uniform((1 - d) * p, (1 + d) * p))
    return dataclasses.replace(nominal, **updates)


# -- noise -----------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseConfig:
    sigma_r: float = 0.0
    sigma_v: float = 0.0
    sigma_u: float = 0.0
    sigma_beta: float = 0.0
    sigma_gamma: float = 0.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")

    @property
    def state_free(self) -> bool:
        return self.sigma_r == 0 and self.sigma_v == 0

    @property
    def thrust_free(self) -> bool:
        return self.sigma_u == 0 and self.sigma_beta == 0 and self.sigma_gamma == 0


CRUISE_NOISE = NoiseConfig(sigma_r=2.0, sigma_v=0.5, sigma_u=0.1)
DOCKING_NOISE = NoiseConfig(sigma_r=0.1, sigma_v=2e-3, sigma_u=0.05, sigma_gamma=math.radians(0.1))
INSPECTION_NOISE = NoiseConfig(sigma_r=0.1, sigma_v=2e-3, sigma_u=0.05,
                               sigma_beta=math.radians(0.1), sigma_gamma=math.radians(0.1))


# -- systems -----------------------------------------------------------------------------

@dataclass(frozen=True)
class Constraint:
    """A scalar safety function ``h(x) >= 0``."""

    name: str
    h: Callable


class System:
    """A control-affine system ``xdot = f(x) + g(x) u`` with bounded inputs.

    ``input_norm`` names the input set: ``"abs"`` (scalar ``|u| <= u_max``),
    ``"l2"`` (Euclidean ball) or ``"linf"`` (per-axis box).
    """

    name: ClassVar[str]
    n: ClassVar[int]
    m: ClassVar[int]
    input_norm: ClassVar[str]
    position_idx: ClassVar[tuple]
    velocity_idx: ClassVar[tuple]
    default_T: ClassVar[float]
    default_substeps: ClassVar[int]

    def __init__(self, params):
        self.params = params

    @property
    def u_max(self) -> float:
        return self.params.u_max

    def f(self, x) -> list:
        raise NotImplementedError

    def g(self, x) -> list:
        raise NotImplementedError

    def constraints(self) -> list[Constraint]:
        raise NotImplementedError

    def clf(self, x):
        """Control Lyapunov function, or ``None`` when the task has none."""
        return None

    has_clf: ClassVar[bool] = False

    def rhs(self, x, u) -> np.ndarray:
        fx = np.asarray(self.f(x), dtype=float)
        gx = np.asarray(self.g(x), dtype=float).reshape(self.n, self.m)
        return fx + gx @ np.atleast_1d(np.asarray(u, dtype=float))

    def input_field(self, u) -> Callable:
        """``x -> f(x) + g(x) u`` for a fixed ``u``, specialised when ``g`` is constant."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.constant_g:
            gu = np.asarray(self.g(None), dtype=float).reshape(self.n, self.m) @ u
            return lambda x: np.array(self.f(x.tolist())) + gu
        return lambda x: self.rhs(x, u)

    constant_g: ClassVar[bool] = False

    def h_values(self, x) -> np.ndarray:
        return np.array([float(c.h(x)) for c in self.constraints()])

    def goal_reached(self, x) -> bool:
        return False

    def with_params(self, params) -> "System":
        return type(self)(params)


class CruiseControl(System):
    """Adaptive cruise control, state ``[d, v]``."""

    name = "cruise"
    constant_g = True
    n, m = 2, 1
    input_norm = "abs"
    position_idx, velocity_idx = (0,), (1,)
    default_T, default_substeps = 0.1, 10
    has_clf = True

    def __init__(self, params: CruiseParams = CruiseParams()):
        super().__init__(params)

    @staticmethod
    def resistance(v):
        return 0.1 + 5.0 * v + 0.25 * v * v

    def f(self, x):
        p = self.params
        return [p.v0 - x[1], -self.resistance(x[1]) / p.m]

    def g(self, x):
        return [[0.0], [self.params.g0]]

    def constraints(self):
        return [Constraint("headway", lambda x: x[0] - 1.8 * x[1])]

    def clf(self, x):
        return (x[1] - self.params.v_max) ** 2


class Docking(System):
    """Planar rendezvous with a rotating docking port.

    State ``[p_x, p_y, v_x, v_y, psi]`` in the LVLH frame (x radial, y
    along-track).  Translational motion is the nonlinear relative two-body
    problem about a circular chief orbit of radius ``r``.
    """

    name = "docking"
    constant_g = True
    n, m = 5, 2
    input_norm = "l2"
    position_idx, velocity_idx = (0, 1), (2, 3)
    default_T, default_substeps = 0.5, 10
    has_clf = True
    dock_radius = 3.0

    def __init__(self, params: DockingParams = DockingParams()):
        super().__init__(params)

    @property
    def mean_motion(self) -> float:
        return math.sqrt(MU_EARTH / self.params.r ** 3)

    def f(self, x):
        p = self.params
        n = self.mean_motion
        rx = p.r + x[0]
        rho2 = rx * rx + x[1] * x[1]
        inv_rho3 = rho2 ** -1.5
        ax = 2 * n * x[3] + n * n * rx - MU_EARTH * rx * inv_rho3
        ay = -2 * n * x[2] + n * n * x[1] - MU_EARTH * x[1] * inv_rho3
        return [x[2], x[3], ax, ay, p.omega]

    def g(self, x):
        im = 1.0 / self.params.m
        return [[0.0, 0.0], [0.0, 0.0], [im, 0.0], [0.0, im], [0.0, 0.0]]

    def port_offset(self, x):
        R = self.params.R_C
        return x[0] - R * pa.cos(x[4]), x[1] - R * pa.sin(x[4])

    def constraints(self):
        cos_gamma = math.cos(self.params.gamma)

        def los(x):
            rx, ry = self.port_offset(x)
            c, s = pa.cos(x[4]), pa.sin(x[4])
            return (rx * c + ry * s) / pa.sqrt(rx * rx + ry * ry) - cos_gamma

        return [Constraint("los_cone", los)]

    def clf(self, x):
        rx, ry = self.port_offset(x)
        return (x[2] + rx / 10.0) ** 2 + (x[3] + ry / 10.0) ** 2

    def goal_reached(self, x) -> bool:
        rx, ry = self.port_offset(x)
        return math.hypot(rx, ry) < self.dock_radius


class Inspection(System):
    """Clohessy-Wiltshire relative motion about a spherical chief, state ``[r, v]``."""

    name = "inspection"
    constant_g = True
    n, m = 6, 3
    input_norm = "linf"
    position_idx, velocity_idx = (0, 1, 2), (3, 4, 5)
    default_T, default_substeps = 10.0, 20

    def __init__(self, params: InspectionParams = InspectionParams(), sun_angle: float = 0.0,
                 fov: float = math.radians(60.0)):
        super().__init__(params)
        self.sun_angle = float(sun_angle)
        self.fov = float(fov)

    def with_params(self, params):
        return type(self)(params, self.sun_angle, self.fov)

    @property
    def mean_motion(self) -> float:
        return math.sqrt(MU_EARTH / self.params.r ** 3)

    @property
    def sun_vector(self) -> np.ndarray:
        return np.array([math.cos(self.sun_angle), math.sin(self.sun_angle), 0.0])

    def f(self, x):
        n = self.mean_motion
        return [x[3], x[4], x[5],
                3 * n * n * x[0] + 2 * n * x[4],
                -2 * n * x[3],
                -n * n * x[2]]

    def g(self, x):
        im = 1.0 / self.params.m
        return [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0],
                [im, 0.0, 0.0], [0.0, im, 0.0], [0.0, 0.0, im]]

    def constraints(self):
        p = self.params
        r_coll = p.R_C + p.R_D
        s = self.sun_vector
        half_fov = self.fov / 2

        def rng(x):
            return pa.sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])

        def boresight(x):
            cos_b = -(x[0] * s[0] + x[1] * s[1] + x[2] * s[2]) / rng(x)
            return pa.acos(cos_b) - half_fov

        return [Constraint("keep_out", lambda x: rng(x) - r_coll),
                Constraint("keep_in", lambda x: p.R_max - rng(x)),
                Constraint("sun_avoid", boresight)]


SYSTEMS = {"cruise": CruiseControl, "docking": Docking, "inspection": Inspection}
NOMINAL = {"cruise": CruiseParams(), "docking": DockingParams(), "inspection": InspectionParams()}
DELTAS = {"cruise": CRUISE_DELTA, "docking": DOCKING_DELTA, "inspection": INSPECTION_DELTA}
NOISE = {"cruise": CRUISE_NOISE, "docking": DOCKING_NOISE, "inspection": INSPECTION_NOISE}


def cruise_dynamics(x, u, p: CruiseParams = CruiseParams()) -> np.ndarray:
    return CruiseControl(p).rhs(x, u)


def docking_dynamics(x, u, p: DockingParams = DockingParams()) -> np.ndarray:
    return Docking(p).rhs(x, u)


def cw_dynamics(x, u, p: InspectionParams = InspectionParams()) -> np.ndarray:
    return Inspection(p).rhs(x, u)


# -- propagation ---------------------------------------------------------------------------

def propagate_zoh(system: System, x_k, u_k, T: float, substeps: int | None = None,
                  return_substeps: bool = False):
    """Fixed-step RK4 over ``[0, T]`` with the input held at ``u_k``.

    With ``return_substeps`` the states at every RK4 node (including ``x_k``)
    are returned as a ``(substeps + 1, n)`` array alongside the final state.
    """
    substeps = system.default_substeps if substeps is None else int(substeps)
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x = np.array(x_k, dtype=float)
    u = np.atleast_1d(np.asarray(u_k, dtype=float))
    # the input enters linearly, so g(x) u is evaluated inside rhs each stage
    h = T / substeps
    traj = [x.copy()] if return_substeps else None
    F = system.input_field(u)
    for _ in range(substeps):
        k1 = F(x)
        k2 = F(x + 0.5 * h * k1)
        k3 = F(x + 0.5 * h * k2)
        k4 = F(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not math.isfinite(float(x.sum())):
            raise DivergenceError("non-finite state during propagation")
        if return_substeps:
            traj.append(x.copy())
    if return_substeps:
        return x, np.array(traj)
    return x


def cw_stm(n: float, t: float) -> np.ndarray:
    """Closed-form Clohessy-Wiltshire state transition matrix (state ``[r, v]``)."""
    s, c = math.sin(n * t), math.cos(n * t)
    return np.array([
        [4 - 3 * c, 0, 0, s / n, 2 * (1 - c) / n, 0],
        [6 * (s - n * t), 1, 0, -2 * (1 - c) / n, (4 * s - 3 * n * t) / n, 0],
        [0, 0, c, 0, 0, s / n],
        [3 * n * s, 0, 0, c, 2 * s, 0],
        [-6 * n * (1 - c), 0, 0, -2 * s, 4 * c - 3, 0],
        [0, 0, -n * s, 0, 0, c],
    ])


# -- uncertainty ---------------------------------------------------------------------------

def apply_state_noise(system: System, x, noise: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian error on position and velocity components."""
    x = np.array(x, dtype=float)
    if noise.state_free:
        return x
    sigma = np.zeros(system.n)
    sigma[list(system.position_idx)] = noise.sigma_r
    sigma[list(system.velocity_idx)] = noise.sigma_v
    return x + sigma * rng.standard_normal(system.n)


def apply_thrust_noise(u_star, noise: NoiseConfig, u_max: float, rng: np.random.Generator,
                       input_norm: str = "l2") -> np.ndarray:
    """Perturb thrust magnitude and pointing, then restore admissibility.

    Magnitude noise is multiplicative; in-plane (``gamma``) and out-of-plane
    (``beta``) angle noise is additive.  Scalar inputs only see magnitude noise
    and planar inputs have ``beta = 0``.  A zero command stays zero.
    """
    u = np.atleast_1d(np.array(u_star, dtype=float))
    if noise.thrust_free:
        return u
    mag = float(np.linalg.norm(u))
    if mag < 1e-9:
        return np.zeros_like(u)
    d_u = rng.normal(0.0, noise.sigma_u)
    d_beta = rng.normal(0.0, noise.sigma_beta)
    d_gamma = rng.normal(0.0, noise.sigma_gamma)
    mag_e = mag * (1.0 + d_u)
    if u.size == 1:
        out = u * (1.0 + d_u)
    elif u.size == 2:
        gam = math.atan2(u[0], u[1]) + d_gamma
        out = mag_e * np.array([math.sin(gam), math.cos(gam)])
    else:
        beta = math.asin(max(-1.0, min(1.0, u[2] / mag))) + d_beta
        gam = math.atan2(u[0], u[1]) + d_gamma
        out = mag_e * np.array([math.cos(beta) * math.sin(gam),
                                math.cos(beta) * math.cos(gam),
                                math.sin(beta)])
    if input_norm == "linf":
        return np.clip(out, -u_max, u_max)
    return out * (u_max / max(u_max, float(np.linalg.norm(out))))


# -- episode configuration ---------------------------------------------------------------------

@dataclass
class EpisodeConfig:
    """Everything needed to replay one episode."""

    env: str
    T: float
    horizon: int
    x0: np.ndarray
    params: object
    noise: NoiseConfig = NoiseConfig()
    seed: int = 0
    sun_angle: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("sampling period must be positive")
        self.x0 = np.asarray(self.x0, dtype=float)

    @property
    def t_final(self) -> float:
        return self.T * self.horizon

    def make_system(self) -> System:
        cls = SYSTEMS[self.env]
        if cls is Inspection:
            return Inspection(self.params, self.sun_angle)
        return cls(self.params)

    def check_initial_state(self):
        h = self.make_system().h_values(self.x0)
        if np.any(h < 0):
            raise ValueError(f"initial state outside the safe set: h = {h}")


def sample_initial_state(env: str, params, rng: np.random.Generator, max_tries: int = 1000):
    """Draw ``(x0, sun_angle)`` from the environment's initial set, rejecting unsafe draws."""
    for _ in range(max_tries):
        sun = 0.0
        if env == "cruise":
            x0 = np.array([rng.uniform(60.0, 120.0), rng.uniform(10.0, 20.0)])
            system = CruiseControl(params)
        elif env == "docking":
            psi = rng.uniform(0.0, 2 * math.pi)
            phi = rng.uniform(-params.gamma, params.gamma)
            port = params.R_C * np.array([math.cos(psi), math.sin(psi)])
            pos = port + 100.0 * np.array([math.cos(psi + phi), math.sin(psi + phi)])
            x0 = np.array([pos[0], pos[1], 0.0, 0.0, psi])
            system = Docking(params)
        elif env == "inspection":
            rad = rng.uniform(50.0, 100.0)
            az = rng.uniform(0.0, 2 * math.pi)
            el = rng.uniform(-math.pi / 2, math.pi / 2)
            x0 = np.array([rad * math.cos(el) * math.cos(az), rad * math.cos(el) * math.sin(az),
                           rad * math.sin(el), 0.0, 0.0, 0.0])
            sun = rng.uniform(0.0, 2 * math.pi)
            system = Inspection(params, sun)
        else:
            raise KeyError(env)
        if np.all(system.h_values(x0) >= 0):
            return x0, sun
    raise RuntimeError(f"could not draw a safe initial state for {env} in {max_tries} tries")


def params_to_dict(params) -> dict:
    return dataclasses.asdict(params)


def params_from_dict(env: str, data: dict):
    return type(NOMINAL[env])(**data)


def load_env_config(path) -> dict:
    """Read a JSON environment config, filling unspecified keys with defaults."""
    with open(path) as fh:
        raw = json.load(fh)
    return resolve_env_config(raw)


def resolve_env_config(raw: dict) -> dict:
    env = raw.get("env", "cruise")
    nominal = dataclasses.replace(NOMINAL[env], **raw.get("nominal", {}))
    noise = NoiseConfig(**raw.get("noise", dataclasses.asdict(NOISE[env])))
    cls = SYSTEMS[env]
    return {
        "env": env,
        "nominal": nominal,
        "delta": dict(raw.get("delta", DELTAS[env])),
        "noise": noise,
        "T": float(raw.get("T", cls.default_T)),
        "horizon": int(raw.get("horizon", DEFAULT_HORIZON[env])),
        "seed": int(raw.get("seed", 0)),
    }


DEFAULT_HORIZON = {"cruise": 200, "docking": 400, "inspection": 1224}
