"""Truncated multivariate Taylor polynomials (differential algebra).

A :class:`TaylorPoly` stores the coefficients of a polynomial in the shifted
variables ``dx_i = x_i - center_i`` up to a maximum total degree ``order``.
Monomials are kept in graded order, so the basis of a lower order is a prefix
of the basis of a higher one and truncation is a slice.

Polynomials optionally carry the half-widths ``zeta`` of the box
``|dx_i| <= zeta_i`` they are meant to be evaluated on.  When they do,
elementary functions check their argument's enclosure and raise
:class:`SingularDomainError` when the function is not smooth on the box.

The module level functions (:func:`sqrt`, :func:`sin`, ...) dispatch on the
argument type, so model code written against them runs unchanged on floats,
numpy arrays, sympy expressions and TaylorPolys.
"""

from __future__ import annotations

import contextlib
import itertools
import math
import threading
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

DEFAULT_ORDER = 4


class DimensionError(ValueError):
    """Operands live in different variable spaces."""


class SingularDomainError(ArithmeticError):
    """A function is not smooth (or not defined) somewhere on the box."""


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def mag(self) -> float:
        """Largest absolute value in the interval."""
        return max(abs(self.lo), abs(self.hi))

    def __contains__(self, value) -> bool:
        return self.lo <= value <= self.hi

    def intersect(self, other: "Interval") -> "Interval":
        return Interval(max(self.lo, other.lo), min(self.hi, other.hi))


@dataclass(frozen=True)
class BoxDomain:
    center: np.ndarray
    half_widths: np.ndarray

    def __init__(self, center, half_widths):
        center = np.array(center, dtype=float).reshape(-1)
        zeta = np.broadcast_to(np.asarray(half_widths, dtype=float), center.shape).copy()
        if np.any(~(zeta > 0)):
            raise ValueError("box half-widths must be positive")
        center.flags.writeable = False
        zeta.flags.writeable = False
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "half_widths", zeta)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def lo(self) -> np.ndarray:
        return self.center - self.half_widths

    @property
    def hi(self) -> np.ndarray:
        return self.center + self.half_widths

    def contains(self, points, rtol: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(points)
        slack = self.half_widths * (1 + rtol)
        return np.all(np.abs(pts - self.center) <= slack, axis=-1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.center + self.half_widths * rng.uniform(-1.0, 1.0, size=(n, self.dim))

    def scaled(self, factor: float) -> "BoxDomain":
        return BoxDomain(self.center, self.half_widths * factor)


class _Basis:
    """Monomial tables for ``n`` variables up to total degree ``order``."""

    def __init__(self, n: int, order: int):
        self.n = n
        self.order = order
        exps = []
        for deg in range(order + 1):
            block = [e for e in itertools.product(range(deg + 1), repeat=n) if sum(e) == deg]
            exps.extend(sorted(block, reverse=True))
        self.exps = np.array(exps, dtype=np.int64).reshape(len(exps), n)
        self.size = len(exps)
        self.degrees = self.exps.sum(axis=1)
        self.index = {tuple(e): i for i, e in enumerate(exps)}

        deg = self.degrees
        ii, jj = np.nonzero(deg[:, None] + deg[None, :] <= order)
        kk = np.array([self.index[tuple(self.exps[i] + self.exps[j])] for i, j in zip(ii, jj)],
                      dtype=np.int64)
        self.mul = (ii, jj, kk)

        # d/dx_v maps monomial e (e_v >= 1) to e - unit_v in the order-1 prefix.
        self.deriv = []
        for v in range(n):
            src = np.nonzero(self.exps[:, v] > 0)[0]
            shifted = self.exps[src].copy()
            shifted[:, v] -= 1
            dst = np.array([self.index[tuple(e)] for e in shifted], dtype=np.int64)
            self.deriv.append((src, dst, self.exps[src, v].astype(float)))

    def prefix(self, order: int) -> int:
        return int(np.count_nonzero(self.degrees <= order))


@lru_cache(maxsize=None)
def _basis(n: int, order: int) -> _Basis:
    return _Basis(n, order)


@lru_cache(maxsize=256)
def _monomial_ranges(n: int, order: int, zeta: tuple) -> tuple[np.ndarray, np.ndarray]:
    """Exact range of every monomial over the symmetric box ``|dx_i| <= zeta_i``."""
    b = _basis(n, order)
    z = np.asarray(zeta)
    mag = np.prod(z[None, :] ** b.exps, axis=1)
    has_odd = np.any(b.exps % 2 == 1, axis=1)
    lo = np.where(has_odd, -mag, 0.0)
    lo[0] = 1.0  # constant monomial
    lo.flags.writeable = False
    mag.flags.writeable = False
    return lo, mag


@lru_cache(maxsize=256)
def _range_masks(n: int, order: int, zeta: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(mag, odd, even)`` for the non-constant monomials, masks as floats."""
    lo, mag = _monomial_ranges(n, order, zeta)
    odd = (lo[1:] < 0).astype(float)
    return mag[1:], odd, 1.0 - odd


_EPS = float(np.finfo(float).eps)


class TaylorPoly:
    """Immutable truncated Taylor polynomial in ``n_vars`` shifted variables."""

    __slots__ = ("_basis", "coeffs", "zeta")
    __array_priority__ = 100  # make numpy scalars defer to our operators

    def __init__(self, n_vars: int, order: int, coeffs=None, zeta=None):
        self._basis = _basis(int(n_vars), int(order))
        c = np.zeros(self._basis.size)
        if coeffs is not None:
            if isinstance(coeffs, dict):
                for e, v in coeffs.items():
                    e = tuple(e)
                    if len(e) != n_vars:
                        raise DimensionError(f"multi-index {e} has wrong length")
                    if sum(e) <= order:
                        c[self._basis.index[e]] = v
            else:
                arr = np.asarray(coeffs, dtype=float)
                c[: min(arr.size, c.size)] = arr[: c.size]
        c.flags.writeable = False
        self.coeffs = c
        if zeta is not None:
            zeta = tuple(float(z) for z in np.broadcast_to(zeta, (n_vars,)))
        self.zeta = zeta

    # -- construction helpers -------------------------------------------------
    @classmethod
    def constant(cls, value: float, n_vars: int, order: int, zeta=None) -> "TaylorPoly":
        return cls(n_vars, order, [value], zeta)

    @classmethod
    def variable(cls, i: int, n_vars: int, order: int, center: float = 0.0, zeta=None) -> "TaylorPoly":
        if not 0 <= i < n_vars:
            raise IndexError(f"variable {i} out of range for {n_vars} variables")
        c = np.zeros(_basis(n_vars, order).size)
        c[0] = center
        if order >= 1:
            c[1 + i] = 1.0  # degree-one block is ordered dx_0, dx_1, ...
        return cls(n_vars, order, c, zeta)

    def _new(self, coeffs, order=None, zeta=None) -> "TaylorPoly":
        out = object.__new__(TaylorPoly)
        out._basis = self._basis if order is None else _basis(self.n_vars, order)
        c = np.asarray(coeffs, dtype=float)
        c.flags.writeable = False
        out.coeffs = c
        out.zeta = self.zeta if zeta is None else zeta
        return out

    # -- properties -----------------------------------------------------------
    @property
    def n_vars(self) -> int:
        return self._basis.n

    @property
    def order(self) -> int:
        return self._basis.order

    @property
    def const(self) -> float:
        return float(self.coeffs[0])

    def terms(self) -> dict:
        """Nonzero coefficients keyed by multi-index."""
        return {tuple(int(v) for v in self._basis.exps[i]): float(c)
                for i, c in enumerate(self.coeffs) if c != 0.0}

    def coeff(self, multi_index) -> float:
        idx = self._basis.index.get(tuple(multi_index))
        return 0.0 if idx is None else float(self.coeffs[idx])

    def gradient_at_center(self) -> np.ndarray:
        if self.order < 1:
            raise ValueError("order-0 polynomial carries no gradient")
        return np.array(self.coeffs[1 : 1 + self.n_vars])

    def is_zero(self, tol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.coeffs) <= tol))

    def truncate(self, order: int) -> "TaylorPoly":
        if order >= self.order:
            return self
        return self._new(self.coeffs[: self._basis.prefix(order)], order)

    def with_zeta(self, zeta) -> "TaylorPoly":
        """Same coefficients, attached to the box ``|dx_i| <= zeta_i`` (or detached)."""
        return TaylorPoly(self.n_vars, self.order, self.coeffs, zeta)

    # -- arithmetic -----------------------------------------------------------
    def _coerce(self, other):
        """Return (a_coeffs, b_coeffs, order, zeta) for a binary operation."""
        if isinstance(other, TaylorPoly):
            if other.n_vars != self.n_vars:
                raise DimensionError(f"n_vars mismatch: {self.n_vars} vs {other.n_vars}")
            order = min(self.order, other.order)
            m = _basis(self.n_vars, order).size
            zeta = self.zeta if self.zeta is not None else other.zeta
            if self.zeta is not None and other.zeta is not None and self.zeta != other.zeta:
                raise DimensionError("operands were expanded on different boxes")
            return self.coeffs[:m], other.coeffs[:m], order, zeta
        return None

    def __add__(self, other):
        co = self._coerce(other)
        if co is None:
            c = self.coeffs.copy()
            c[0] += float(other)
            return self._new(c)
        a, b, order, zeta = co
        return self._new(a + b, order, zeta)

    __radd__ = __add__

    def __neg__(self):
        return self._new(-self.coeffs)

    def __pos__(self):
        return self

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        co = self._coerce(other)
        if co is None:
            return self._new(self.coeffs * float(other))
        a, b, order, zeta = co
        ii, jj, kk = _basis(self.n_vars, order).mul
        prod = np.bincount(kk, weights=a[ii] * b[jj], minlength=a.size)
        return self._new(prod, order, zeta)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, TaylorPoly):
            return self * other.reciprocal()
        return self._new(self.coeffs / float(other))

    def __rtruediv__(self, other):
        return self.reciprocal() * float(other)

    def __pow__(self, k):
        if isinstance(k, (int, np.integer)) and k >= 0:
            out = TaylorPoly.constant(1.0, self.n_vars, self.order, self.zeta)
            base = self
            while k:
                if k & 1:
                    out = out * base
                k >>= 1
                if k:
                    base = base * base
            return out
        return self.power(float(k))

    # -- calculus -------------------------------------------------------------
    def derive(self, var: int) -> "TaylorPoly":
        """Formal partial derivative; the result has order ``order - 1``."""
        if not 0 <= var < self.n_vars:
            raise IndexError(f"variable {var} out of range for {self.n_vars} variables")
        if self.order == 0:
            return self._new(np.zeros(1))
        src, dst, fac = self._basis.deriv[var]
        m = self._basis.prefix(self.order - 1)
        out = np.zeros(m)
        np.add.at(out, dst, self.coeffs[src] * fac)
        return self._new(out, self.order - 1)

    def gradient(self) -> list:
        return [self.derive(v) for v in range(self.n_vars)]

    def __call__(self, dx) -> np.ndarray:
        """Evaluate at shifted points ``dx`` (shape ``(n_vars,)`` or ``(k, n_vars)``)."""
        pts = np.asarray(dx, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.n_vars:
            raise DimensionError("point dimension does not match n_vars")
        mono = np.prod(pts[:, None, :] ** self._basis.exps[None, :, :], axis=2)
        vals = mono @ self.coeffs
        return vals[0] if single else vals

    # -- bounding -------------------------------------------------------------
    def bound(self, box: "BoxDomain | None" = None, refine: bool = False) -> Interval:
        zeta = self._box_zeta(box)
        mag, odd, even = _range_masks(self.n_vars, self.order, zeta)
        c = self.coeffs
        c0 = float(c[0])
        t = c[1:] * mag
        a = np.abs(t)
        # odd monomials span [-mag, mag]; even ones [0, mag]
        s_odd = float(a @ odd)
        s_even = float(t @ even)
        a_even = float(a @ even)
        lo = c0 - s_odd + 0.5 * (s_even - a_even)
        hi = c0 + s_odd + 0.5 * (s_even + a_even)
        # Guard the sum against rounding so the enclosure stays conservative.
        slack = 4 * _EPS * (abs(c0) + s_odd + a_even)
        out = Interval(lo - slack, hi + slack)
        if refine and self.n_vars <= 8:
            out = out.intersect(self._subdivided_bound(np.asarray(zeta)))
        return out

    def _box_zeta(self, box) -> tuple:
        if box is not None:
            if box.dim != self.n_vars:
                raise DimensionError(f"box dimension {box.dim} != n_vars {self.n_vars}")
            return tuple(float(z) for z in box.half_widths)
        if self.zeta is None:
            raise ValueError("polynomial carries no box; pass one explicitly")
        return self.zeta

    def bound_on(self, lo, hi) -> Interval:
        """Monomial-wise enclosure with each shifted variable in ``[lo_i, hi_i]``."""
        lo = np.broadcast_to(np.asarray(lo, dtype=float), (self.n_vars,))
        hi = np.broadcast_to(np.asarray(hi, dtype=float), (self.n_vars,))
        if np.any(lo > hi):
            raise ValueError("empty variable range")
        c = self.coeffs
        plo, phi = _interval_pow(lo[None, :], hi[None, :], self._basis.exps)
        mlo, mhi = _interval_prod(plo, phi)
        tlo = np.minimum(c * mlo, c * mhi)
        thi = np.maximum(c * mlo, c * mhi)
        slack = 4 * np.finfo(float).eps * float(np.sum(np.abs(c) * np.maximum(abs(mlo), abs(mhi))))
        return Interval(float(tlo.sum()) - slack, float(thi.sum()) + slack)

    def _subdivided_bound(self, zeta: np.ndarray) -> Interval:
        """Union of monomial-wise bounds after splitting every axis once."""
        lo_all, hi_all = math.inf, -math.inf
        for signs in itertools.product((False, True), repeat=self.n_vars):
            neg = np.array(signs)
            part = self.bound_on(np.where(neg, -zeta, 0.0), np.where(neg, 0.0, zeta))
            lo_all = min(lo_all, part.lo)
            hi_all = max(hi_all, part.hi)
        return Interval(lo_all, hi_all)

    # -- elementary functions ---------------------------------------------------
    def _require(self, ok: Callable[[Interval], bool], what: str):
        if self.zeta is None:
            return
        rng = self.bound()
        if not ok(rng):
            relaxed = getattr(_domain_state, "relaxed", None)
            if relaxed is not None:
                relaxed.append(what)
                return
            raise SingularDomainError(f"{what}: argument range [{rng.lo:.6g}, {rng.hi:.6g}]")

    def compose(self, series: Sequence[float]) -> "TaylorPoly":
        """Substitute into a univariate series ``sum_k s_k t^k`` with ``t = p - p(0)``."""
        t = self - self.const
        out = TaylorPoly.constant(series[min(len(series), self.order + 1) - 1],
                                  self.n_vars, self.order, self.zeta)
        for s in reversed(series[: min(len(series), self.order + 1) - 1]):
            out = out * t + s
        return out

    def reciprocal(self):
        self._require(lambda r: r.lo > 0 or r.hi < 0, "1/x")
        a = self.const
        if a == 0.0:
            raise SingularDomainError("1/x at zero")
        return self.compose([(-1) ** k / a ** (k + 1) for k in range(self.order + 1)])

    def power(self, r: float):
        self._require(lambda i: i.lo > 0, f"x**{r}")
        a = self.const
        if a <= 0.0:
            raise SingularDomainError(f"x**{r} at non-positive point")
        return self.compose([a ** r * _binom(r, k) / a ** k for k in range(self.order + 1)])

    def sqrt(self):
        return self.power(0.5)

    def exp(self):
        a = math.exp(self.const)
        return self.compose([a / math.factorial(k) for k in range(self.order + 1)])

    def log(self):
        self._require(lambda r: r.lo > 0, "log")
        a = self.const
        if a <= 0.0:
            raise SingularDomainError("log at non-positive point")
        return self.compose([math.log(a)] + [(-1) ** (k + 1) / (k * a ** k) for k in range(1, self.order + 1)])

    def sin(self):
        a = self.const
        cyc = (math.sin(a), math.cos(a), -math.sin(a), -math.cos(a))
        return self.compose([cyc[k % 4] / math.factorial(k) for k in range(self.order + 1)])

    def cos(self):
        a = self.const
        cyc = (math.cos(a), -math.sin(a), -math.cos(a), math.sin(a))
        return self.compose([cyc[k % 4] / math.factorial(k) for k in range(self.order + 1)])

    def atan(self):
        a = self.const
        # d/dt atan(a + t) = 1 / (1 + (a + t)^2)
        deriv = _series_recip(np.array([1 + a * a, 2 * a, 1.0]), self.order)
        return self.compose(_series_integrate(deriv, math.atan(a)))

    def asin(self):
        self._require(lambda r: r.lo > -1 and r.hi < 1, "asin")
        a = self.const
        if not -1 < a < 1:
            raise SingularDomainError("asin at |x| >= 1")
        deriv = _series_rsqrt(np.array([1 - a * a, -2 * a, -1.0]), self.order)
        return self.compose(_series_integrate(deriv, math.asin(a)))

    def acos(self):
        return (-self.asin()) + math.pi / 2

    def abs(self):
        return _branch_abs(self)

    # -- display --------------------------------------------------------------
    def __repr__(self):
        terms = self.terms()
        if not terms:
            return f"TaylorPoly(0, n_vars={self.n_vars}, order={self.order})"
        parts = []
        for e, c in terms.items():
            mono = "*".join(f"dx{i}" + (f"^{p}" if p > 1 else "") for i, p in enumerate(e) if p)
            parts.append(f"{c:+.6g}" + (f"*{mono}" if mono else ""))
        return f"TaylorPoly({' '.join(parts)}; order={self.order})"


# -- univariate helpers ---------------------------------------------------------

def _binom(r: float, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= (r - j) / (j + 1)
    return out


def _series_mul(a: np.ndarray, b: np.ndarray, order: int) -> np.ndarray:
    return np.convolve(a, b)[: order + 1]


def _series_recip(a: np.ndarray, order: int) -> np.ndarray:
    out = np.zeros(order + 1)
    a = np.pad(a, (0, max(0, order + 1 - a.size)))
    out[0] = 1.0 / a[0]
    for k in range(1, order + 1):
        out[k] = -np.dot(a[1 : k + 1], out[k - 1 :: -1][:k]) / a[0]
    return out


def _series_rsqrt(a: np.ndarray, order: int) -> np.ndarray:
    """Series of ``a(t) ** -0.5`` given the series ``a``."""
    a = np.pad(a, (0, max(0, order + 1 - a.size)))[: order + 1]
    a0 = a[0]
    t = a / a0
    t[0] = 0.0
    out = np.zeros(order + 1)
    power = np.zeros(order + 1)
    power[0] = 1.0
    for k in range(order + 1):
        out += _binom(-0.5, k) * power
        power = _series_mul(power, t, order)
    return out / math.sqrt(a0)


def _series_integrate(deriv: np.ndarray, c0: float) -> list:
    return [c0] + [deriv[k] / (k + 1) for k in range(deriv.size - 1)]


def _interval_pow(a: np.ndarray, b: np.ndarray, exps: np.ndarray):
    """Range of x**e for x in [a, b], broadcast over monomial exponents."""
    pa = a ** exps
    pb = b ** exps
    lo = np.minimum(pa, pb)
    hi = np.maximum(pa, pb)
    even = exps % 2 == 0
    straddle = (a < 0) & (b > 0)
    lo = np.where(even & straddle & (exps > 0), 0.0, lo)
    return lo, hi


def _interval_prod(lo: np.ndarray, hi: np.ndarray):
    """Product over the last axis of a row of intervals."""
    plo = np.ones(lo.shape[0])
    phi = np.ones(lo.shape[0])
    for j in range(lo.shape[1]):
        cand = np.stack([plo * lo[:, j], plo * hi[:, j], phi * lo[:, j], phi * hi[:, j]])
        plo, phi = cand.min(axis=0), cand.max(axis=0)
    return plo, phi


# -- domain policy ------------------------------------------------------------------

_domain_state = threading.local()


@contextlib.contextmanager
def relaxed_domain():
    """Expand elementary functions about the center even when the box range
    leaves their domain.

    The series stays defined as long as the center value is admissible, but
    the resulting enclosures are no longer backed by a domain check.  Yields
    a list that collects the name of every relaxed check.
    """
    prev = getattr(_domain_state, "relaxed", None)
    log_ = []
    _domain_state.relaxed = log_
    try:
        yield log_
    finally:
        _domain_state.relaxed = prev


# -- piecewise-smooth |.| via branch enumeration -----------------------------------

class _NeedBranch(Exception):
    pass


_branch_state = threading.local()


@contextlib.contextmanager
def branch_pattern(pattern: Sequence[int]):
    """Resolve the i-th ambiguous ``abs`` call with sign ``pattern[i]``.

    Inside the context an ``abs`` whose argument straddles zero on the box,
    and has no sign left in the pattern, raises an internal signal that
    :func:`enumerate_branches` uses to fork.
    """
    prev = getattr(_branch_state, "ctx", None)
    _branch_state.ctx = [list(pattern), 0]
    try:
        yield
    finally:
        _branch_state.ctx = prev


def enumerate_branches(fn: Callable[[], object], max_branches: int = 64) -> list:
    """Evaluate ``fn`` once per sign pattern of its ambiguous ``abs`` calls.

    Each branch is a smooth polynomial valid on the part of the box where the
    chosen signs hold; bounding every branch over the whole box gives a
    conservative enclosure of the piecewise function and of its pointwise
    derivatives.
    """
    results = []
    stack = [()]
    while stack:
        pattern = stack.pop()
        try:
            with branch_pattern(pattern):
                results.append(fn())
        except _NeedBranch:
            if len(results) + len(stack) + 2 > max_branches:
                raise SingularDomainError("too many non-smooth branches on the box") from None
            stack.extend([pattern + (-1,), pattern + (1,)])
    return results


def _branch_abs(p: TaylorPoly) -> TaylorPoly:
    if p.is_zero():
        return p
    if p.zeta is None:
        return p if p.const >= 0 else -p
    rng = p.bound()
    if rng.lo >= 0:
        return p
    if rng.hi <= 0:
        return -p
    ctx = getattr(_branch_state, "ctx", None)
    if ctx is None:
        raise SingularDomainError(f"|x| with argument straddling zero [{rng.lo:.3g}, {rng.hi:.3g}]")
    pattern, cursor = ctx
    if cursor >= len(pattern):
        raise _NeedBranch
    ctx[1] += 1
    return p if pattern[cursor] > 0 else -p


# -- type-dispatched elementary functions ------------------------------------------

def _sympy_or_numpy(x):
    mod = type(x).__module__
    if mod.startswith("sympy"):
        import sympy
        return sympy
    return None


def _make(name: str, np_fn, sym_name: str | None = None):
    sym_name = sym_name or name

    def fn(x):
        if isinstance(x, TaylorPoly):
            return getattr(x, name)()
        sp = _sympy_or_numpy(x)
        if sp is not None:
            return getattr(sp, sym_name)(x)
        return np_fn(x)

    fn.__name__ = name
    fn.__doc__ = f"``{name}`` for floats, arrays, sympy expressions or TaylorPolys."
    return fn


sqrt = _make("sqrt", np.sqrt)
exp = _make("exp", np.exp)
log = _make("log", np.log)
sin = _make("sin", np.sin)
cos = _make("cos", np.cos)
atan = _make("atan", np.arctan)
asin = _make("asin", np.arcsin)
acos = _make("acos", np.arccos)
absolute = _make("abs", np.abs, "Abs")


def norm2(values: Sequence) -> object:
    """Euclidean norm of a sequence of scalars or TaylorPolys."""
    if all(isinstance(v, TaylorPoly) and v.is_zero() for v in values):
        return values[0]
    return sqrt(sum(v * v for v in values))


def norm1(values: Sequence) -> object:
    return sum(absolute(v) for v in values)


# -- public operation aliases ------------------------------------------------------

def poly_add(a: TaylorPoly, b) -> TaylorPoly:
    return a + b


def poly_mul(a: TaylorPoly, b) -> TaylorPoly:
    return a * b


def poly_scale(a: TaylorPoly, s: float) -> TaylorPoly:
    return a * float(s)


def poly_derive(p: TaylorPoly, var: int) -> TaylorPoly:
    return p.derive(var)


def poly_bound(p: TaylorPoly, box: BoxDomain, refine: bool = False) -> Interval:
    """Conservative enclosure of ``p`` over ``box`` (variables are offsets from the center)."""
    return p.bound(box, refine=refine)


def da_variables(center, order: int, zeta=None) -> list:
    center = np.asarray(center, dtype=float).reshape(-1)
    n = center.size
    return [TaylorPoly.variable(i, n, order, center[i], zeta) for i in range(n)]


def compose_dynamics(fn: Callable, center, box: BoxDomain | None, order: int = DEFAULT_ORDER):
    """Taylor-expand ``fn`` about ``center`` in the shifted variables.

    ``fn`` receives a list of TaylorPoly variables ``x_i = center_i + dx_i`` and
    may return a scalar, a sequence, or a nested sequence (matrix).  Plain
    numbers in the output are promoted to constant polynomials.
    """
    center = np.asarray(center, dtype=float).reshape(-1)
    zeta = None if box is None else box.half_widths
    if box is not None and box.dim != center.size:
        raise DimensionError("box dimension does not match the center")
    xs = da_variables(center, order, zeta)
    return _promote(fn(xs), center.size, order, zeta)


def _promote(out, n, order, zeta):
    if isinstance(out, TaylorPoly):
        return out
    if isinstance(out, (list, tuple, np.ndarray)):
        return [_promote(o, n, order, zeta) for o in out]
    return TaylorPoly.constant(float(out), n, order, zeta)
