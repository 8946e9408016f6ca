"""Input-constrained barrier recursion with linear class-K gains.

For a safety function ``h`` and gains ``theta_0..theta_N`` the chain is

    b_0 = h
    b_i = L_f b_{i-1} - u_max * ||L_g b_{i-1}||_*  + theta_{i-1} * b_{i-1}

where ``||.||_*`` is the dual of the input-set norm, which makes ``b_i`` the
exact infimum over admissible inputs.  Lie derivatives are taken by
differentiating Taylor expansions, so the same code gives point values (a
jet at ``x``) and whole-box expansions for the sampled-data margin

    nu = (l_Lf + l_Lg * u_max + theta_N * l_b) * T * Delta.

:class:`SymbolicChain` rebuilds the recursion with sympy.  It never touches
the Taylor arithmetic and backs the grid-sampled reference margin.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import poly_algebra as pa
from .envs import Constraint, System
from .poly_algebra import BoxDomain, SingularDomainError, TaylorPoly

DEFAULT_DEPTH = 2
ZETA_KAPPA = 2.0


class ContainmentAuditError(RuntimeError):
    """Propagated states left the box the margin was computed on."""


@dataclass(frozen=True)
class ConstraintSpec:
    name: str
    h: object
    V: object = None
    env: str = ""


@dataclass
class GainVector:
    """Class-K gains ``theta_0..theta_N`` (one row per constraint) and CLF gain."""

    theta: np.ndarray
    c_V: float | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if np.any(~(self.theta > 0)):
            raise ValueError("class-K gains must be positive")
        if self.c_V is not None and not self.c_V > 0:
            raise ValueError("CLF gain must be positive")
        if self.lower is not None and np.any(self.theta < np.asarray(self.lower) - 1e-12):
            raise ValueError("gain below its lower bound")
        if self.upper is not None and np.any(self.theta > np.asarray(self.upper) + 1e-12):
            raise ValueError("gain above its upper bound")

    def row(self, i: int) -> np.ndarray:
        return self.theta if self.theta.ndim == 1 else self.theta[i]


def dual_norm(values: Sequence, input_norm: str):
    """Dual of the input-set norm: |.| for scalars, 2-norm for balls, 1-norm for boxes."""
    if input_norm == "abs":
        return pa.absolute(values[0])
    if input_norm == "l2":
        return pa.norm2(values)
    if input_norm == "linf":
        return pa.norm1(values)
    raise ValueError(f"unknown input norm {input_norm!r}")


def dual_norm_float(values, input_norm: str) -> float:
    v = np.abs(np.asarray(values, dtype=float))
    if input_norm == "abs":
        return float(v[0])
    if input_norm == "l2":
        return float(np.sqrt(np.sum(v * v)))
    return float(np.sum(v))


def max_input_2norm(system: System) -> float:
    """Largest Euclidean norm of an admissible input."""
    return system.u_max * (math.sqrt(system.m) if system.input_norm == "linf" else 1.0)


def lie(b: TaylorPoly, fs: Sequence[TaylorPoly], gs: Sequence[Sequence[TaylorPoly]]):
    """``(L_f b, [L_g b]_k)`` from the gradient of an expansion."""
    grad = b.gradient()
    lf = grad[0] * fs[0]
    for j in range(1, len(fs)):
        lf = lf + grad[j] * fs[j]
    m = len(gs[0])
    lg = []
    for k in range(m):
        acc = None
        for j, gj in enumerate(gs):
            if gj[k].is_zero():
                continue
            term = grad[j] * gj[k]
            acc = term if acc is None else acc + term
        lg.append(acc if acc is not None else lf * 0.0)
    return lf, lg


@dataclass
class ChainExpansion:
    """Taylor expansions of one barrier chain about a center."""

    b: list
    lf: TaylorPoly
    lg: list


def expand_chain(system: System, h, theta: Sequence[float], N: int, xs, fs, gs) -> ChainExpansion:
    b = [pa._promote(h(xs), system.n, xs[0].order, xs[0].zeta)]
    u_max = system.u_max
    for i in range(1, N + 1):
        lf, lg = lie(b[-1], fs, gs)
        b.append(lf - u_max * dual_norm(lg, system.input_norm) + theta[i - 1] * b[-1])
    lf, lg = lie(b[-1], fs, gs)
    return ChainExpansion(b, lf, lg)


@dataclass
class ChainEval:
    """Point values of a chain at ``x``."""

    b: np.ndarray
    lf: float
    lg: np.ndarray

    @property
    def member(self) -> bool:
        return bool(np.min(self.b) >= 0)


class BarrierChain:
    """The recursion ``b_0..b_N`` for one constraint of a system."""

    def __init__(self, system: System, constraint: Constraint, N: int = DEFAULT_DEPTH,
                 theta: Sequence[float] | None = None):
        if N < 1:
            raise ValueError("recursion depth must be >= 1")
        self.system = system
        self.constraint = constraint
        self.N = int(N)
        self.theta = np.ones(N + 1) if theta is None else np.asarray(theta, dtype=float)
        if self.theta.shape != (N + 1,):
            raise ValueError(f"expected {N + 1} gains, got {self.theta.shape}")
        if np.any(~(self.theta > 0)):
            raise ValueError("class-K gains must be positive")

    def rebind(self, theta) -> "BarrierChain":
        return BarrierChain(self.system, self.constraint, self.N, theta)

    def evaluate(self, x) -> ChainEval:
        return evaluate_chains(self.system, [self.constraint], [self.theta], self.N, x)[0]


def build_chain(spec: ConstraintSpec | Constraint, system: System, gains: GainVector | Sequence[float],
                N: int = DEFAULT_DEPTH) -> BarrierChain:
    theta = gains.theta if isinstance(gains, GainVector) else gains
    constraint = spec if isinstance(spec, Constraint) else Constraint(spec.name, spec.h)
    chain = BarrierChain(system, constraint, N, theta)
    try:
        constraint.h(pa.da_variables(np.ones(system.n), N + 1))
    except SingularDomainError:
        pass  # the probe point may sit on a singularity; only composability is checked
    except TypeError as exc:
        raise TypeError(f"safety function {constraint.name!r} is not Taylor-composable: {exc}") from exc
    return chain


def evaluate_chains(system: System, constraints: Sequence[Constraint], thetas, N: int, x) -> list:
    """Point values ``b_i(x)``, ``L_f b_N(x)``, ``L_g b_N(x)`` for each constraint."""
    xs = pa.da_variables(x, N + 1)
    fs = pa._promote(system.f(xs), system.n, N + 1, None)
    gs = pa._promote(system.g(xs), system.n, N + 1, None)
    out = []
    for c, th in zip(constraints, thetas):
        ex = expand_chain(system, c.h, th, N, xs, fs, gs)
        out.append(ChainEval(np.array([p.const for p in ex.b]), ex.lf.const,
                             np.array([p.const for p in ex.lg])))
    return out


def eval_chain(chain: BarrierChain, x) -> tuple[np.ndarray, bool]:
    ev = chain.evaluate(x)
    return ev.b, ev.member


# -- bounds ---------------------------------------------------------------------------

def gradient_bound(p: TaylorPoly, box: BoxDomain | None = None, refine: bool = False) -> np.ndarray:
    """Upper bounds ``d_i >= sup |dp/dx_i|`` over the box."""
    return np.array([q.bound(box, refine=refine).mag if q.order >= 0 else 0.0 for q in p.gradient()])


def lipschitz_from_poly(p: TaylorPoly, box: BoxDomain | None = None, refine: bool = False) -> float:
    d = gradient_bound(p, box, refine)
    return float(np.sqrt(np.sum(d * d)))


def lipschitz_bound(fn, box: BoxDomain, order: int = pa.DEFAULT_ORDER) -> float:
    """Bound on ``sup ||grad fn||_2`` over ``box`` from a Taylor expansion of ``fn``."""
    p = pa.compose_dynamics(fn, box.center, box, order + 1)
    if isinstance(p, list):
        raise TypeError("lipschitz_bound expects a scalar function")
    return lipschitz_from_poly(p)


def _dynamics_bound(fs, gs, box: BoxDomain | None, u_max_2: float) -> float:
    f_mag = np.array([p.bound(box).mag for p in fs])
    g_mag = np.array([[p.bound(box).mag for p in row] for row in gs])
    return float(np.sqrt(np.sum(f_mag ** 2)) + u_max_2 * np.sqrt(np.sum(g_mag ** 2)))


def dynamics_norm_bound(system: System, box: BoxDomain, order: int = pa.DEFAULT_ORDER) -> float:
    """``Delta >= sup ||f(x) + g(x) u||_2`` over the box and the input set.

    The induced 2-norm of ``g`` is bounded by its Frobenius norm.
    """
    xs = pa.da_variables(box.center, order, box.half_widths)
    fs = pa._promote(system.f(xs), system.n, order, box.half_widths)
    gs = pa._promote(system.g(xs), system.n, order, box.half_widths)
    return _dynamics_bound(fs, gs, None, max_input_2norm(system))


def select_zeta(system: System, x_k, T: float, kappa: float = ZETA_KAPPA) -> np.ndarray:
    """Box half-widths ``kappa * T * r_i`` with ``r_i`` a local bound on ``|xdot_i|``.

    ``r_i`` averages the rate at ``x_k`` with the first-order DA rate bound
    over the box ``T * |xdot(x_k)|``, i.e. a first-order-in-time estimate of
    the mean speed over one sample.
    """
    x_k = np.asarray(x_k, dtype=float)
    umax2 = max_input_2norm(system)
    f0 = np.abs(np.asarray(system.f(list(x_k)), dtype=float))
    g0 = np.asarray(system.g(list(x_k)), dtype=float).reshape(system.n, system.m)
    floor = 1e-9 * (1.0 + np.abs(x_k))
    rate0 = f0 + umax2 * np.linalg.norm(g0, axis=1)
    zeta0 = T * rate0 + floor
    xs = pa.da_variables(x_k, 1, zeta0)
    fs = pa._promote(system.f(xs), system.n, 1, zeta0)
    gs = pa._promote(system.g(xs), system.n, 1, zeta0)
    rate1 = np.array([fs[i].bound().mag + umax2 * math.sqrt(sum(p.bound().mag ** 2 for p in gs[i]))
                      for i in range(system.n)])
    return np.maximum(kappa * T * 0.5 * (rate0 + rate1), floor)


@dataclass
class MarginEstimate:
    nu: float
    l_lf: float
    l_lg: float
    l_b: float
    theta_N: float
    delta: float
    box: BoxDomain
    branches: int = 1
    u_max: float = 0.0
    relaxed: bool = False  # some domain check was relaxed to the center value

    @property
    def l_alpha(self) -> float:
        return self.theta_N * self.l_b

    @property
    def l1(self) -> float:
        return self.l_lf + self.l_lg * self.u_max + self.l_alpha


@dataclass
class StepExpansion:
    """Everything the filter needs at one sample: point values and margins."""

    evals: list
    margins: list = field(default_factory=list)
    zeta: np.ndarray | None = None


def _branch_payload(system, c, th, N, xs, fs, gs, refine):
    ex = expand_chain(system, c.h, th, N, xs, fs, gs)
    d_lf = gradient_bound(ex.lf, refine=refine)
    d_lg = [gradient_bound(p, refine=refine) for p in ex.lg]
    d_b = gradient_bound(ex.b[-1], refine=refine)
    consts = (np.array([p.const for p in ex.b]), ex.lf.const, np.array([p.const for p in ex.lg]))
    return d_lf, d_lg, d_b, consts


def chain_margins(system: System, constraints: Sequence[Constraint], thetas, N: int, x_k,
                  T: float, zeta=None, order: int = pa.DEFAULT_ORDER, refine: bool = False,
                  strict: bool = False) -> StepExpansion:
    """Point values and sampled-data margins for every constraint at ``x_k``.

    When a domain check fails on the box the expansion is retried with the
    checks relaxed to the center (``MarginEstimate.relaxed``), unless
    ``strict``.

    ``order`` is the Taylor order kept in the terminal quantities
    ``L_f b_N``, ``L_g b_N`` and ``b_N``; the safety function itself is
    expanded to ``order + N + 1``.
    """
    x_k = np.asarray(x_k, dtype=float)
    if T < 0:
        raise ValueError("sampling period must be non-negative")
    zeta = select_zeta(system, x_k, T) if zeta is None else np.broadcast_to(
        np.asarray(zeta, dtype=float), x_k.shape).copy()
    box = BoxDomain(x_k, zeta)
    K = order + N + 1
    xs = pa.da_variables(x_k, K, zeta)
    fs = pa._promote(system.f(xs), system.n, K, zeta)
    gs = pa._promote(system.g(xs), system.n, K, zeta)
    delta = _dynamics_bound(fs, gs, None, max_input_2norm(system))
    evals, margins = [], []
    for c, th in zip(constraints, thetas):
        th = np.asarray(th, dtype=float)
        relaxed = False
        run = lambda: _branch_payload(system, c, th, N, xs, fs, gs, refine)  # noqa: E731
        try:
            payloads = pa.enumerate_branches(run)
        except SingularDomainError:
            if strict:
                raise
            with pa.relaxed_domain():
                payloads = pa.enumerate_branches(run)
            relaxed = True
        d_lf = np.max([p[0] for p in payloads], axis=0)
        d_b = np.max([p[2] for p in payloads], axis=0)
        d_lg = [np.max([p[1][k] for p in payloads], axis=0) for k in range(system.m)]
        l_lf = float(np.linalg.norm(d_lf))
        l_b = float(np.linalg.norm(d_b))
        l_lg = dual_norm_float([np.linalg.norm(d) for d in d_lg], system.input_norm)
        l1 = l_lf + l_lg * system.u_max + th[N] * l_b
        margins.append(MarginEstimate(l1 * T * delta, l_lf, l_lg, l_b, float(th[N]), delta, box,
                                      len(payloads), system.u_max, relaxed))
        if len(payloads) == 1:
            b, lf, lg = payloads[0][3]
            evals.append(ChainEval(b, lf, lg))
        else:
            evals.append(evaluate_chains(system, [c], [th], N, x_k)[0])
    return StepExpansion(evals, margins, zeta)


def margin(chain: BarrierChain, x_k, T: float, zeta=None, order: int = pa.DEFAULT_ORDER,
           strict: bool = True) -> MarginEstimate:
    return chain_margins(chain.system, [chain.constraint], [chain.theta], chain.N, x_k, T,
                         zeta, order, strict=strict).margins[0]


def audit_containment(box: BoxDomain, states) -> None:
    """Raise unless every propagated state lies in the margin box."""
    inside = box.contains(states)
    if not np.all(inside):
        worst = np.max(np.abs(np.atleast_2d(states) - box.center) / box.half_widths)
        raise ContainmentAuditError(f"state left the margin box (max normalized offset {worst:.3g})")


# -- symbolic reference chain -------------------------------------------------------------

def _real_abs():
    """``|.|`` and its a.e. derivative as sympy functions that assume a real argument."""
    import sympy as sp
    global _RABS
    if _RABS is None:
        class rsign(sp.Function):
            def fdiff(self, argindex=1):
                return sp.S.Zero

        class rabs(sp.Function):
            def fdiff(self, argindex=1):
                return rsign(self.args[0])

        _RABS = (rabs, rsign)
    return _RABS


_RABS = None


class SymbolicChain:
    """The same recursion built with sympy, compiled to vectorized numpy callables.

    Gains enter as arguments, so one compilation serves any ``theta``.  The
    callables take ``(X, theta)`` with ``X`` of shape ``(k, n)``.
    """

    def __init__(self, system: System, constraint: Constraint, N: int = DEFAULT_DEPTH):
        import sympy as sp

        self.system, self.constraint, self.N = system, constraint, N
        n, m = system.n, system.m
        xs = list(sp.symbols(f"x0:{n}", real=True))
        th = list(sp.symbols(f"th0:{N + 1}", positive=True))
        f = [sp.sympify(e) for e in system.f(xs)]
        g = [[sp.sympify(e) for e in row] for row in system.g(xs)]

        def lie_sym(b):
            grad = [sp.diff(b, v) for v in xs]
            lf = sum(grad[j] * f[j] for j in range(n))
            lg = [sum(grad[j] * g[j][k] for j in range(n)) for k in range(m)]
            return lf, lg

        rabs, _ = _real_abs()

        def dual(lg):
            if system.input_norm == "abs":
                return rabs(lg[0])
            if system.input_norm == "l2":
                return sp.sqrt(sum(e ** 2 for e in lg))
            return sum(rabs(e) for e in lg)

        b = [sp.sympify(constraint.h(xs))]
        lfs, lgs = [], []
        for i in range(1, N + 1):
            lf, lg = lie_sym(b[-1])
            lfs.append(lf)
            lgs.append(lg)
            b.append(lf - system.u_max * dual(lg) + th[i - 1] * b[-1])
        lf_n, lg_n = lie_sym(b[-1])
        lfs.append(lf_n)
        lgs.append(lg_n)

        args = [xs, th]
        mods = [{"rabs": np.abs, "rsign": np.sign}, "numpy"]

        def lam(e):
            return sp.lambdify(args, e, modules=mods, cse=True)

        self._b = [lam(e) for e in b]
        self._lf = [lam(e) for e in lfs]
        self._lg = [[lam(e) for e in row] for row in lgs]
        grads = ([sp.diff(lf_n, v) for v in xs]
                 + [sp.diff(e, v) for e in lg_n for v in xs]
                 + [sp.diff(b[-1], v) for v in xs])
        self._grads = lam(grads)  # one compilation so common subexpressions are shared
        self.n, self.m = n, m

    @staticmethod
    def _call(fn, X, theta):
        X = np.atleast_2d(X)
        out = fn(list(X.T), list(theta))
        return np.broadcast_to(np.asarray(out, dtype=float), (X.shape[0],)).copy()

    def b(self, i: int, X, theta) -> np.ndarray:
        return self._call(self._b[i], X, theta)

    def lf(self, i: int, X, theta) -> np.ndarray:
        """``L_f b_i`` at the rows of ``X``."""
        return self._call(self._lf[i], X, theta)

    def lg(self, i: int, X, theta) -> np.ndarray:
        """``L_g b_i`` at the rows of ``X``, shape ``(k, m)``."""
        return np.stack([self._call(fn, X, theta) for fn in self._lg[i]], axis=1)

    def gradients(self, X, theta):
        """Gradients of ``L_f b_N``, each ``(L_g b_N)_k`` and ``b_N``.

        Shapes ``(k, n)``, ``(k, m, n)`` and ``(k, n)``.
        """
        X = np.atleast_2d(X)
        k, n, m = X.shape[0], self.n, self.m
        vals = self._grads(list(X.T), list(theta))
        G = np.stack([np.broadcast_to(np.asarray(v, dtype=float), (k,)) for v in vals], axis=1)
        return G[:, :n], G[:, n:n + m * n].reshape(k, m, n), G[:, n + m * n:]

    def grad_lf(self, X, theta) -> np.ndarray:
        return self.gradients(X, theta)[0]

    def grad_lg(self, X, theta) -> np.ndarray:
        return self.gradients(X, theta)[1]

    def grad_b(self, X, theta) -> np.ndarray:
        return self.gradients(X, theta)[2]


@dataclass
class GridMargin:
    nu: float
    l_lf: float
    l_lg: float
    l_b: float
    delta: float


def grid_margin(sym: SymbolicChain, box: BoxDomain, theta, T: float, samples: int = 10_000,
                rng: np.random.Generator | None = None, input_samples: int = 16) -> GridMargin:
    """Sampled estimate of the margin terms over the box (lower estimates of the suprema)."""
    rng = np.random.default_rng(0) if rng is None else rng
    system = sym.system
    X = box.sample(samples, rng)
    X[0] = box.center
    theta = np.asarray(theta, dtype=float)
    d_lf, d_lg, d_b = sym.gradients(X, theta)
    l_lf = float(np.max(np.linalg.norm(d_lf, axis=1)))
    l_b = float(np.max(np.linalg.norm(d_b, axis=1)))
    per_k = np.max(np.linalg.norm(d_lg, axis=2), axis=0)
    l_lg = dual_norm_float(per_k, system.input_norm)
    delta = sampled_dynamics_sup(system, X, rng, input_samples)
    nu = (l_lf + l_lg * system.u_max + theta[sym.N] * l_b) * T * delta
    return GridMargin(nu, l_lf, l_lg, l_b, delta)


def admissible_inputs(system: System, k: int, rng: np.random.Generator, boundary: bool = True) -> np.ndarray:
    """Random inputs from the input set (on its boundary when ``boundary``)."""
    m, u = system.m, system.u_max
    if system.input_norm == "abs":
        return (rng.choice([-1.0, 1.0], size=(k, 1)) if boundary else rng.uniform(-1, 1, (k, 1))) * u
    if system.input_norm == "l2":
        d = rng.standard_normal((k, m))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = 1.0 if boundary else rng.uniform(0, 1, (k, 1)) ** (1 / m)
        return u * d * r
    if boundary:
        return u * rng.choice([-1.0, 1.0], size=(k, m))
    return rng.uniform(-u, u, size=(k, m))


def sampled_dynamics_sup(system: System, X, rng: np.random.Generator, input_samples: int = 16) -> float:
    """``max ||f(x) + g(x) u||_2`` over the rows of ``X`` and admissible inputs.

    The norm is convex in ``u``, so for box inputs the vertices give the exact
    inner maximum.  For ball inputs random boundary directions are joined by
    the direction aligned with ``g^T f``.
    """
    X = np.atleast_2d(X)
    k = X.shape[0]
    cols = list(X.T)
    F = np.stack([np.broadcast_to(np.asarray(c, dtype=float), (k,)) for c in system.f(cols)], axis=1)
    G = np.stack([np.stack([np.broadcast_to(np.asarray(c, dtype=float), (k,)) for c in row], axis=1)
                  for row in system.g(cols)], axis=1)  # (k, n, m)
    if system.input_norm in ("abs", "linf"):
        U = system.u_max * np.array(list(itertools.product((-1.0, 1.0), repeat=system.m)))
        GU = np.einsum("knm,sm->ksn", G, U)
        return float(np.max(np.linalg.norm(F[:, None, :] + GU, axis=2)))
    U = admissible_inputs(system, input_samples, rng)
    GU = np.einsum("knm,sm->ksn", G, U)
    best = np.max(np.linalg.norm(F[:, None, :] + GU, axis=2), axis=1)
    d = np.einsum("knm,kn->km", G, F)
    nd = np.linalg.norm(d, axis=1, keepdims=True)
    d = np.where(nd > 0, d / np.where(nd > 0, nd, 1.0), 0.0)
    aligned = np.linalg.norm(F + system.u_max * np.einsum("knm,km->kn", G, d), axis=1)
    return float(np.max(np.maximum(best, aligned)))
