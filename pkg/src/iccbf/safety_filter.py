"""Dense convex QPs for the per-step safety filters.

All three filters are strictly convex quadratics in ``z = (u, eps)`` with a
handful of affine rows and a norm bound on ``u``.  :func:`solve` enumerates
active sets of the affine rows, which is exact and cheap at this size, and
handles the Euclidean ball through a one-dimensional search over its
multiplier.  Infeasible problems are reported, never relaxed.
"""

from __future__ import annotations

import itertools
import math
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

FEAS_TOL = 1e-8
KKT_TOL = 1e-6

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
SOLVER_FAILURE = "solver_failure"


@dataclass
class QpProblem:
    """``min obj(u, eps)`` s.t. ``A u >= b``, ``C u - eps <= d``, ``eps >= 0``, ``||u|| <= u_max``.

    ``kind`` selects the objective: ``"min_norm"`` (``||u||^2``), ``"clf"``
    (``0.5 ||u||^2 + p eps^2``) or ``"deviation"`` (``||u - u_ref||^2``).
    ``norm`` is ``"l2"`` for a ball and ``"linf"``/``"abs"`` for a box.
    """

    A: np.ndarray
    b: np.ndarray
    u_max: float
    norm: str = "l2"
    kind: str = "min_norm"
    C: np.ndarray | None = None
    d: np.ndarray | None = None
    p: float = 1.0
    u_ref: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.atleast_1d(np.asarray(self.b, dtype=float))
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError("barrier rows and right-hand sides disagree")
        if self.A.shape[0] < 1:
            raise ValueError("at least one barrier row is required")
        if self.C is not None:
            self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
            self.d = np.atleast_1d(np.asarray(self.d, dtype=float))
        if self.kind == "clf" and self.C is None:
            raise ValueError("CLF objective needs a CLF row")
        if self.kind == "deviation":
            if self.u_ref is None:
                raise ValueError("deviation objective needs a reference input")
            self.u_ref = np.atleast_1d(np.asarray(self.u_ref, dtype=float))
        if not (self.u_max > 0 and np.isfinite(self.u_max)):
            raise ValueError("u_max must be positive and finite")
        if self.kind == "clf" and not self.p > 0:
            raise ValueError("slack weight must be positive")
        if self.norm not in ("l2", "linf", "abs"):
            raise ValueError(f"unknown input norm {self.norm!r}")

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def has_slack(self) -> bool:
        return self.kind == "clf"

    def objective(self, u, eps: float = 0.0) -> float:
        u = np.asarray(u, dtype=float)
        if self.kind == "min_norm":
            return float(u @ u)
        if self.kind == "clf":
            return float(0.5 * u @ u + self.p * eps * eps)
        r = u - self.u_ref
        return float(r @ r)

    def violation(self, u, eps: float = 0.0) -> float:
        """Largest constraint violation, each row measured in ``u`` units."""
        u = np.asarray(u, dtype=float)
        an = np.linalg.norm(self.A, axis=1)
        v = np.where(an > 0, (self.b - self.A @ u) / np.where(an > 0, an, 1.0), self.b)
        worst = float(np.max(v))
        if self.C is not None:
            cn = np.linalg.norm(self.C, axis=1)
            cv = (self.C @ u - eps - self.d) / np.where(cn > 0, cn, 1.0)
            worst = max(worst, float(np.max(cv)), -eps)
        nrm = np.linalg.norm(u) if self.norm == "l2" else np.max(np.abs(u))
        return max(worst, float(nrm - self.u_max), 0.0)

    def to_dict(self) -> dict:
        out = {"A": self.A.tolist(), "b": self.b.tolist(), "u_max": self.u_max, "norm": self.norm,
               "kind": self.kind, "p": self.p}
        if self.C is not None:
            out["C"], out["d"] = self.C.tolist(), self.d.tolist()
        if self.u_ref is not None:
            out["u_ref"] = self.u_ref.tolist()
        return out


@dataclass
class QpSolution:
    u_star: np.ndarray
    eps: float
    status: str
    kkt_residual: float = float("nan")
    objective: float = float("nan")
    info: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


# -- scaled standard form ---------------------------------------------------------

@dataclass
class _Std:
    """``min 0.5 z'Hz + q'z`` s.t. ``G z >= h`` (rows unit-norm) plus optional ``||z_u|| <= 1``."""

    H: np.ndarray
    q: np.ndarray
    G: np.ndarray
    h: np.ndarray
    m: int
    ball: bool
    scale: np.ndarray  # z = x / scale
    exclusive: list     # index pairs that cannot be active together


def _standard_form(pr: QpProblem) -> _Std:
    m, um = pr.m, pr.u_max
    nz = m + (1 if pr.has_slack else 0)
    scale = np.full(nz, um)
    if pr.has_slack:
        cn = float(np.max(np.linalg.norm(pr.C, axis=1)))
        scale[m] = max(cn * um, 1e-300)
    # objective in scaled variables, divided by u_max^2
    if pr.kind == "min_norm":
        H = 2.0 * np.eye(nz)
        q = np.zeros(nz)
    elif pr.kind == "clf":
        H = np.diag(np.r_[np.ones(m), 2.0 * pr.p * (scale[m] / um) ** 2])
        q = np.zeros(nz)
    else:
        H = 2.0 * np.eye(nz)
        q = -2.0 * pr.u_ref / um
    rows, rhs = [], []
    for a, bb in zip(pr.A, pr.b):
        rows.append(np.r_[a * um, np.zeros(nz - m)])
        rhs.append(bb)
    if pr.has_slack:
        for c, dd in zip(pr.C, pr.d):
            rows.append(np.r_[-c * um, scale[m]])
            rhs.append(-dd)
        e = np.zeros(nz)
        e[m] = 1.0
        rows.append(e)
        rhs.append(0.0)
    exclusive = []
    ball = pr.norm == "l2" and m > 1
    if not ball:
        for i in range(m):
            e = np.zeros(nz)
            e[i] = 1.0
            rows.append(-e)
            rhs.append(-1.0)
            rows.append(e.copy())
            rhs.append(-1.0)
            exclusive.append((len(rows) - 2, len(rows) - 1))
    G = np.array(rows, dtype=float)
    h = np.array(rhs, dtype=float)
    nrm = np.linalg.norm(G, axis=1)
    zero = nrm == 0
    G[~zero] /= nrm[~zero, None]
    h[~zero] /= nrm[~zero]
    return _Std(H, q, G, h, m, ball, scale, exclusive)


def _active_set_solve(H, q, G, h, exclusive, tol=FEAS_TOL):
    """Exact solution of a strictly convex QP with rows ``G z >= h`` by active-set enumeration.

    Returns ``(z, lam)`` or ``None`` when no active set satisfies the KKT
    conditions, i.e. the rows are infeasible.
    """
    nz, nr = H.shape[0], G.shape[0]
    gn = np.sqrt(np.einsum("ij,ij->i", G, G))
    if np.any((gn == 0) & (h > tol)):
        return None
    live = [i for i in range(nr) if gn[i] > 0]
    excl = [set(p) for p in exclusive]
    for k in range(0, min(nz, len(live)) + 1):
        K = np.zeros((nz + k, nz + k))
        K[:nz, :nz] = H
        rhs = np.empty(nz + k)
        rhs[:nz] = -q
        for S in itertools.combinations(live, k):
            if excl and any(p <= set(S) for p in excl):
                continue
            S = list(S)
            if k:
                GS = G[S]
                K[:nz, nz:] = -GS.T
                K[nz:, :nz] = GS
                rhs[nz:] = h[S]
            try:
                sol = np.linalg.solve(K, rhs)
            except np.linalg.LinAlgError:
                continue
            z, lam = sol[:nz], sol[nz:]
            if not math.isfinite(float(sol.sum())):
                continue
            if k and lam.min() < -tol * max(1.0, float(np.abs(lam).max())):
                continue
            # unit rows: rounding in G z grows with |z|
            if nr and (G @ z - h).min() < -tol * max(1.0, float(np.abs(z).max())):
                continue
            # strict convexity: the first KKT point found is the optimum
            full = np.zeros(nr)
            full[S] = np.maximum(lam, 0.0)
            return z, full
    return None


def _kkt_residual(std: _Std, z, lam, mu) -> float:
    """Largest KKT violation, each term relative to the size of the quantities it balances."""
    Hz = std.H @ z
    Gl = std.G.T @ lam
    grad = Hz + std.q - Gl
    gscale = max(1.0, float(np.max(np.abs(np.r_[Hz, std.q, Gl]))))
    if std.ball:
        bz = 2.0 * mu * z[: std.m]
        grad[: std.m] += bz
        gscale = max(gscale, float(np.max(np.abs(bz))))
    slack = std.G @ z - std.h
    lscale = max(1.0, float(np.max(np.abs(lam)))) if lam.size else 1.0
    res = [np.max(np.abs(grad)) / gscale if grad.size else 0.0,
           np.max(np.abs(lam * slack)) / lscale if lam.size else 0.0,
           max(0.0, -float(np.min(slack))) if slack.size else 0.0,
           max(0.0, -float(np.min(lam))) / lscale if lam.size else 0.0]
    if std.ball:
        gap = 1.0 - float(z[: std.m] @ z[: std.m])
        res.append(abs(mu * gap) / max(1.0, mu))
        res.append(max(0.0, -gap))
    return float(max(res))


def solve(problem: QpProblem) -> QpSolution:
    """Global optimum of the filter QP, or an infeasibility report."""
    pr = problem
    std = _standard_form(pr)
    nz, m = std.H.shape[0], std.m
    fail = QpSolution(np.zeros(m), 0.0, SOLVER_FAILURE)

    def inner(mu):
        H = std.H.copy()
        H[:m, :m] += 2.0 * mu * np.eye(m)
        return _active_set_solve(H, std.q, std.G, std.h, std.exclusive)

    mu = 0.0
    try:
        out = inner(0.0)
        if out is None:
            return QpSolution(np.zeros(m), 0.0, INFEASIBLE, info={"reason": "affine rows infeasible"})
        if std.ball and float(np.linalg.norm(out[0][:m])) > 1.0 + FEAS_TOL:
            # the ball can only be met if the minimum-norm point of the rows is inside it
            slack_rows = np.ones(std.G.shape[0], bool)
            if nz > m:
                slack_rows = std.G[:, m] == 0
            Gu, hu = std.G[slack_rows][:, :m], std.h[slack_rows]
            mn = _active_set_solve(2.0 * np.eye(m), np.zeros(m), Gu, hu, [])
            if mn is None or float(np.linalg.norm(mn[0])) > 1.0 + FEAS_TOL:
                return QpSolution(np.zeros(m), 0.0, INFEASIBLE, info={"reason": "rows miss the input ball"})

            def phi(log_mu):
                r = inner(float(np.exp(log_mu)))
                return (np.inf if r is None else float(np.linalg.norm(r[0][:m]))) - 1.0

            lo, hi = -30.0, 0.0
            while phi(hi) > 0 and hi < 60:
                hi += 5.0
            if phi(hi) > 0:
                return fail
            log_mu = brentq(phi, lo, hi, xtol=1e-14, rtol=1e-14, maxiter=200) if phi(lo) > 0 else lo
            mu = float(np.exp(log_mu))
            out = inner(mu)
            if out is None:
                return fail
            z = out[0].copy()
            nu = float(np.linalg.norm(z[:m]))
            if nu > 1.0:
                z[:m] /= nu  # remove the last rounding of the root
            out = (z, out[1])
    except (np.linalg.LinAlgError, ValueError, FloatingPointError):
        return fail
    z, lam = out
    if not np.all(np.isfinite(z)):
        return fail
    kkt = _kkt_residual(std, z, lam, mu)
    x = z * std.scale
    u = x[:m]
    eps = float(max(x[m], 0.0)) if pr.has_slack else 0.0
    if kkt > KKT_TOL or pr.violation(u, eps) > FEAS_TOL * max(1.0, pr.u_max):
        return QpSolution(u, eps, SOLVER_FAILURE, kkt, pr.objective(u, eps), {"mu": mu})
    return QpSolution(u, eps, OPTIMAL, kkt, pr.objective(u, eps), {"mu": mu})


# -- filter builders ---------------------------------------------------------------

def barrier_row(lf: float, lg, b_N: float, theta_N: float, nu: float):
    """``L_f b_N + L_g b_N u + theta_N b_N >= nu`` as ``(a, b)`` of ``a u >= b``."""
    return np.atleast_1d(np.asarray(lg, dtype=float)), float(nu - lf - theta_N * b_N)


def build_iccbf_qp(ev, theta_N: float, nu: float, u_max: float, norm: str = "l2") -> QpProblem:
    """Minimum-norm input meeting one terminal barrier condition.

    ``ev`` carries ``b`` (chain values), ``lf`` and ``lg`` at the current state.
    """
    a, b = barrier_row(ev.lf, ev.lg, ev.b[-1], theta_N, nu)
    return QpProblem(a[None, :], [b], u_max, norm, "min_norm")


def build_clf_iccbf_qp(ev, clf_lf: float, clf_lg, V: float, theta_N: float, c_V: float, nu: float,
                       p: float, u_max: float, norm: str = "l2") -> QpProblem:
    """Barrier row plus ``L_f V + L_g V u <= -c_V V + eps`` with ``0.5 ||u||^2 + p eps^2``."""
    a, b = barrier_row(ev.lf, ev.lg, ev.b[-1], theta_N, nu)
    C = np.atleast_1d(np.asarray(clf_lg, dtype=float))[None, :]
    d = [-c_V * V - clf_lf]
    return QpProblem(a[None, :], [b], u_max, norm, "clf", C, d, p)


def build_filter_qp(evs: Sequence, thetas_N: Sequence[float], nus: Sequence[float], u_rl,
                    u_max: float, norm: str = "linf") -> QpProblem:
    """Closest input to ``u_rl`` meeting every terminal barrier condition."""
    rows = [barrier_row(e.lf, e.lg, e.b[-1], th, nu) for e, th, nu in zip(evs, thetas_N, nus)]
    A = np.array([r[0] for r in rows])
    b = np.array([r[1] for r in rows])
    return QpProblem(A, b, u_max, norm, "deviation", u_ref=u_rl)


def dump_record(problem: QpProblem, sol: QpSolution) -> str:
    """One JSON line describing a solve, for debugging."""
    rec = {"rows": problem.to_dict(), "bound": problem.u_max, "status": sol.status,
           "u_star": np.asarray(sol.u_star).tolist(), "eps": sol.eps,
           "kkt_residual": None if not np.isfinite(sol.kkt_residual) else sol.kkt_residual}
    return json.dumps(rec, sort_keys=True)
