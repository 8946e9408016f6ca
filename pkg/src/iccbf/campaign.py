"""Monte Carlo evaluation on fixed, pre-sampled episode datasets.

A dataset pins every random draw an episode consumes (initial state,
hidden parameters, noise seed, sun angle), so two controllers evaluated on
it face exactly the same episodes.  Results are gathered by episode id,
making the output independent of worker scheduling.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import envs
from .learner import env as E
from .learner import ppo

DATASET_VERSION = 1
MC_SIZES = {"cruise": 5000, "docking": 5000, "inspection": 500}
EVAL_AUDIT_SUBSTEPS = 50


class ConfigurationError(ValueError):
    pass


# -- datasets ------------------------------------------------------------------------------

@dataclass(frozen=True)
class McDataset:
    env: str
    T: float
    horizon: int
    noise: envs.NoiseConfig
    seed: int
    records: tuple

    def __len__(self) -> int:
        return len(self.records)

    def to_json(self) -> str:
        payload = {
            "version": DATASET_VERSION, "env": self.env, "T": self.T, "horizon": self.horizon,
            "noise": asdict(self.noise), "seed": self.seed, "records": list(self.records),
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def episode(self, i: int) -> envs.EpisodeConfig:
        return E.make_episode(self.env, self.records[i], T=self.T, horizon=self.horizon, noise=self.noise)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    @classmethod
    def from_json(cls, text: str) -> "McDataset":
        d = json.loads(text)
        if d.get("version") != DATASET_VERSION:
            raise ConfigurationError(f"unsupported dataset version {d.get('version')!r}")
        return cls(d["env"], float(d["T"]), int(d["horizon"]), envs.NoiseConfig(**d["noise"]),
                   int(d["seed"]), tuple(d["records"]))

    @classmethod
    def load(cls, path) -> "McDataset":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read dataset {path}: {exc}") from exc
        return cls.from_json(text)


def build_dataset(env: str, n: int | None = None, seed: int = 0, T: float | None = None,
                  horizon: int | None = None, noise: envs.NoiseConfig | None = None,
                  nominal=None, delta: dict | None = None, max_tries: int = 1000) -> McDataset:
    """Pre-sample ``n`` episodes; every initial state satisfies ``h(x0) >= 0``."""
    if env not in envs.SYSTEMS:
        raise ConfigurationError(f"unknown environment {env!r}")
    n = MC_SIZES[env] if n is None else int(n)
    if n < 1:
        raise ConfigurationError("a dataset needs at least one episode")
    nominal = envs.NOMINAL[env] if nominal is None else nominal
    delta = envs.DELTAS[env] if delta is None else delta
    rng = np.random.default_rng([seed, 7])
    records = []
    for i in range(n):
        params = envs.sample_hidden_params(nominal, delta, rng)
        try:
            x0, sun = envs.sample_initial_state(env, params, rng, max_tries)
        except RuntimeError as exc:
            raise ConfigurationError(str(exc)) from exc
        records.append({"id": i, "x0": [float(v) for v in x0], "params": envs.params_to_dict(params),
                        "seed": int(rng.integers(2 ** 31 - 1)), "sun_angle": float(sun)})
    cls = envs.SYSTEMS[env]
    return McDataset(env, float(cls.default_T if T is None else T),
                     int(envs.DEFAULT_HORIZON[env] if horizon is None else horizon),
                     envs.NOISE[env] if noise is None else noise, int(seed), tuple(records))


def dataset_from_config(cfg: dict, n: int | None = None, seed: int | None = None) -> McDataset:
    """Dataset from a resolved environment config (see :func:`envs.resolve_env_config`)."""
    return build_dataset(cfg["env"], n, cfg["seed"] if seed is None else seed, T=cfg["T"],
                         horizon=cfg["horizon"], noise=cfg["noise"], nominal=cfg["nominal"],
                         delta=cfg["delta"])


# -- episodes --------------------------------------------------------------------------------

RESULT_FIELDS = ["id", "fuel", "delta_v", "safe", "qp_failure", "h_violation", "substep_violation",
                 "steps", "inspection_score"]


@dataclass(frozen=True)
class EpisodeResult:
    id: int
    fuel: float
    delta_v: float
    safe: bool
    qp_failure: bool
    h_violation: bool
    substep_violation: bool
    steps: int
    inspection_score: float


def _episode_result(i: int, ep: envs.EpisodeConfig, task: E.TaskEnv) -> EpisodeResult:
    st = task.stats
    qp = st["qp_failures"] > 0
    hv = st["h_violations"] > 0
    sv = st["substep_violations"] > 0
    return EpisodeResult(int(i), float(task.fuel), float(task.fuel / ep.params.m), not (qp or hv or sv),
                         qp, hv, sv, int(task.k), float(task.inspection_score))


def _run_one(args):
    ds, i, controller, options = args
    ep = ds.episode(i)
    task = ppo.rollout_controller(ep, controller, options)
    return _episode_result(ds.records[i]["id"], ep, task)


def eval_options(env: str, audit_substeps: int | None = EVAL_AUDIT_SUBSTEPS, **kw) -> E.EnvOptions:
    """Evaluation defaults: substep auditing on."""
    return E.EnvOptions(audit_substeps=audit_substeps, **kw)


def run_episodes(ds: McDataset, controller, options: E.EnvOptions | None = None, workers: int = 1,
                 indices=None) -> list:
    options = eval_options(ds.env) if options is None else options
    idx = range(len(ds)) if indices is None else indices
    jobs = [(ds, i, controller, options) for i in idx]
    if workers <= 1:
        res = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            res = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    return sorted(res, key=lambda r: r.id)


# -- statistics ----------------------------------------------------------------------------------

@dataclass(frozen=True)
class Stats:
    mean: float
    std: float
    q1: float
    q2: float
    q3: float
    p99: float

    @classmethod
    def of(cls, values) -> "Stats":
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return cls(*(math.nan,) * 6)
        q = np.percentile(v, [25, 50, 75, 99])  # linear interpolation
        return cls(float(v.mean()), float(v.std()), *(float(x) for x in q))


@dataclass(frozen=True)
class McSummary:
    env: str
    controller: str
    n: int
    metric: str  # "fuel" (N s) for cruise, "delta_v" (m/s) otherwise
    performance: Stats
    safe_fraction: float
    qp_failure_fraction: float
    h_violation_fraction: float
    inspection_score: Stats | None
    dataset_digest: str

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "McSummary":
        d = dict(d)
        d["performance"] = Stats(**d["performance"])
        if d.get("inspection_score") is not None:
            d["inspection_score"] = Stats(**d["inspection_score"])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "McSummary":
        return cls.from_dict(json.loads(text))


def summarize(results: list, env: str, controller: str = "", dataset_digest: str = "") -> McSummary:
    if not results:
        raise ValueError("no episode results to summarize")
    metric = "fuel" if env == "cruise" else "delta_v"
    perf = [getattr(r, metric) for r in results]
    n = len(results)
    insp = Stats.of([r.inspection_score for r in results]) if env == "inspection" else None
    return McSummary(env, controller, n, metric, Stats.of(perf),
                     sum(r.safe for r in results) / n,
                     sum(r.qp_failure for r in results) / n,
                     sum(r.h_violation or r.substep_violation for r in results) / n,
                     insp, dataset_digest)


def run_mc(ds: McDataset, controller, name: str = "", options: E.EnvOptions | None = None,
           workers: int = 1) -> tuple[list, McSummary]:
    """Evaluate ``controller`` on every dataset episode."""
    before = ds.digest
    results = run_episodes(ds, controller, options, workers)
    if ds.digest != before:  # records are frozen; this guards against in-place edits of the dicts
        raise RuntimeError("dataset changed during evaluation")
    return results, summarize(results, ds.env, name, before)


def controller_from_spec(env: str, spec: str | None):
    """``None``/``"untuned"`` gives the untuned gains; otherwise a checkpoint path."""
    if spec in (None, "", "untuned"):
        a = E.UNTUNED[env]
        if env == "inspection":
            a = np.r_[a, np.zeros(3)]
        return ppo.ConstantController(a), "untuned"
    ctl = ppo.PolicyController.from_checkpoint(spec)
    if ctl.env != env:
        raise ConfigurationError(f"checkpoint trained on {ctl.env!r}, dataset is {env!r}")
    return ctl, str(spec)


# -- export --------------------------------------------------------------------------------------

def results_csv(results: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_FIELDS)
    for r in results:
        row = dataclasses.astuple(r)
        w.writerow([repr(v) if isinstance(v, float) else int(v) if isinstance(v, bool) else v for v in row])
    return buf.getvalue()


def parse_results_csv(text: str) -> list:
    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for d in rows:
        out.append(EpisodeResult(int(d["id"]), float(d["fuel"]), float(d["delta_v"]), d["safe"] == "1",
                                 d["qp_failure"] == "1", d["h_violation"] == "1", d["substep_violation"] == "1",
                                 int(d["steps"]), float(d["inspection_score"])))
    return out


def export(results: list, summary: McSummary, out_dir, stem: str = "mc") -> tuple[Path, Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        p_csv = out / f"{stem}_episodes.csv"
        p_json = out / f"{stem}_summary.json"
        p_csv.write_text(results_csv(results))
        p_json.write_text(summary.to_json())
    except OSError as exc:
        raise OSError(f"cannot write results under {out}: {exc}") from exc
    return p_csv, p_json


# -- margin audit ----------------------------------------------------------------------------------

AUDIT_FIELDS = ["env", "sample", "constraint", "x", "theta", "nu_da", "nu_grid", "delta_da", "delta_grid",
                "l1_da", "l1_grid", "contained"]


def audit_state(env: str, system: envs.System, rng: np.random.Generator) -> np.ndarray:
    """A random state spread over the region episodes visit."""
    if env == "cruise":
        return np.array([rng.uniform(20.0, 150.0), rng.uniform(0.0, 30.0)])
    if env == "docking":
        p = system.params
        psi = rng.uniform(0.0, 2 * math.pi)
        phi = psi + rng.uniform(-p.gamma, p.gamma)
        rad = rng.uniform(5.0, 150.0)
        pos = p.R_C * np.array([math.cos(psi), math.sin(psi)]) + rad * np.array([math.cos(phi), math.sin(phi)])
        return np.r_[pos, rng.uniform(-1.0, 1.0, 2), psi]
    p = system.params
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    return np.r_[rng.uniform(p.R_C + p.R_D + 5.0, p.R_max - 5.0) * d, rng.uniform(-0.5, 0.5, 3)]


def audit_gains(env: str, rng: np.random.Generator) -> np.ndarray:
    """Gain rows drawn log-uniformly within a factor of ten of the untuned gains."""
    th = E.UNTUNED[env][:9] if env == "inspection" else E.UNTUNED[env][:E.DEPTH + 1]
    th = th * np.exp(rng.uniform(math.log(0.1), math.log(10.0), th.size))
    return th.reshape(-1, E.DEPTH + 1)


@dataclass(frozen=True)
class AuditRow:
    env: str
    sample: int
    constraint: str
    x: tuple
    theta: tuple
    nu_da: float
    nu_grid: float
    delta_da: float
    delta_grid: float
    l1_da: float
    l1_grid: float
    contained: bool


def margin_audit(env: str, samples: int = 200, seed: int = 0, grid_samples: int = 10_000,
                 order: int | None = None, T: float | None = None, max_tries: int = 100) -> list:
    """DA margin terms against grid-sampled estimates on random states.

    States where a DA domain check fails on the box are redrawn, so every
    row comes from the strict (unrelaxed) expansion.  ``contained`` holds
    when each DA term (``l`` components, ``Delta`` and ``nu``) is at least
    its sampled counterpart.
    """
    from . import barrier_chain as bc
    from . import poly_algebra as pa

    system = envs.SYSTEMS[env]()
    cons = system.constraints()
    syms = [bc.SymbolicChain(system, c, E.DEPTH) for c in cons]
    T = system.default_T if T is None else T
    order = pa.DEFAULT_ORDER if order is None else order
    rng = np.random.default_rng([seed, 11])
    rows = []
    for s in range(samples):
        for _ in range(max_tries):
            x = audit_state(env, system, rng)
            thetas = audit_gains(env, rng)
            try:
                se = bc.chain_margins(system, cons, thetas, E.DEPTH, x, T, order=order, strict=True)
                break
            except pa.SingularDomainError:
                continue
        else:
            raise ConfigurationError(f"no strictly expandable state found for {env} in {max_tries} draws")
        for c, sym, th, m in zip(cons, syms, thetas, se.margins):
            g = bc.grid_margin(sym, m.box, th, T, grid_samples, rng)
            ok = (m.l_lf >= g.l_lf and m.l_lg >= g.l_lg and m.l_b >= g.l_b and m.delta >= g.delta
                  and m.nu >= g.nu)
            l1_grid = g.l_lf + g.l_lg * system.u_max + th[E.DEPTH] * g.l_b
            rows.append(AuditRow(env, s, c.name, tuple(map(float, x)), tuple(map(float, th)), m.nu, g.nu,
                                 m.delta, g.delta, m.l1, l1_grid, bool(ok)))
    return rows


def audit_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AUDIT_FIELDS)
    for r in rows:
        w.writerow([r.env, r.sample, r.constraint, " ".join(repr(v) for v in r.x),
                    " ".join(repr(v) for v in r.theta)]
                   + [repr(float(v)) for v in (r.nu_da, r.nu_grid, r.delta_da, r.delta_grid, r.l1_da, r.l1_grid)]
                   + [int(r.contained)])
    return buf.getvalue()
