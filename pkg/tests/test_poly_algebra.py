import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from iccbf import poly_algebra as pa
from iccbf.poly_algebra import BoxDomain, DimensionError, SingularDomainError, TaylorPoly


def var(i, n, order, center=0.0, zeta=None):
    return TaylorPoly.variable(i, n, order, center, zeta)


def test_difference_of_squares():
    x = var(0, 1, 2)
    p = (1 + x) * (1 - x)
    assert p.terms() == {(0,): 1.0, (2,): -1.0}


def test_times_zero_is_zero():
    x, y = var(0, 2, 3), var(1, 2, 3)
    assert ((x * y + 3 * x + 1) * 0.0).is_zero()


def test_binomial_square_matches_sympy():
    x, y = var(0, 2, 2), var(1, 2, 2)
    p = pa.poly_mul(x + y, x + y)
    X, Y = sp.symbols("X Y")
    ref = sp.Poly(sp.expand((X + Y) ** 2), X, Y).as_dict()
    assert p.terms() == {k: float(v) for k, v in ref.items()}


def test_truncation_drops_high_terms():
    x = var(0, 1, 2)
    assert (x * x * x).is_zero()
    assert (x * x).order == 2


def test_mismatched_dimensions():
    with pytest.raises(DimensionError):
        pa.poly_add(var(0, 1, 2), var(0, 2, 2))


def test_scale():
    x = var(0, 2, 2)
    assert pa.poly_scale(x + 1, 3.0).terms() == {(0, 0): 3.0, (1, 0): 3.0}


def test_derivatives():
    x, y = var(0, 2, 3), var(1, 2, 3)
    assert pa.poly_derive(x * x, 0).terms() == {(1, 0): 2.0}
    assert pa.poly_derive(TaylorPoly.constant(5.0, 2, 3), 0).is_zero()
    assert pa.poly_derive(x * x + 3 * x * y, 1).terms() == {(1, 0): 3.0}
    assert pa.poly_derive(x * x * x, 0).order == 2
    with pytest.raises(IndexError):
        pa.poly_derive(x, 2)


def test_bound_simple():
    box = BoxDomain([0.0], [1.0])
    c = pa.poly_bound(TaylorPoly.constant(2.5, 1, 3), box)
    assert (c.lo, c.hi) == pytest.approx((2.5, 2.5), abs=1e-14)
    lin = pa.poly_bound(var(0, 1, 3), box)
    assert (lin.lo, lin.hi) == pytest.approx((-1.0, 1.0), abs=1e-14)


def test_bound_x2_minus_x_unit_interval():
    x = var(0, 1, 2)
    p = x * x - x
    mono = p.bound_on(0.0, 1.0)  # monomial-wise over the uncentred variable
    assert (mono.lo, mono.hi) == pytest.approx((-1.0, 1.0), abs=1e-14)
    grid = np.linspace(0.0, 1.0, 10_001)
    vals = grid ** 2 - grid
    assert mono.lo <= vals.min() and vals.max() <= mono.hi
    # centred at 0.5 with half-width 0.5 the enclosure is exact here
    c = pa.compose_dynamics(lambda v: v[0] * v[0] - v[0], [0.5], BoxDomain([0.5], [0.5]), 2)
    b = c.bound()
    assert b.lo <= -0.25 and b.hi >= 0.0


def test_bound_dimension_mismatch():
    with pytest.raises(DimensionError):
        var(0, 2, 2).bound(BoxDomain([0.0], [1.0]))


def test_compose_quadratic_exact():
    p = pa.compose_dynamics(lambda v: v[0] * v[0], [1.0], None, 2)
    assert p.terms() == {(0,): 1.0, (1,): 2.0, (2,): 1.0}


def test_compose_resistance():
    # F(v) = 0.1 + 5 v + 0.25 v^2 about v = 10: 75.1 + 10 dv + 0.25 dv^2
    p = pa.compose_dynamics(lambda v: 0.1 + 5 * v[0] + 0.25 * v[0] * v[0], [10.0], None, 2)
    assert p.coeff((0,)) == pytest.approx(75.1, abs=1e-12)
    assert p.coeff((1,)) == pytest.approx(10.0, abs=1e-12)
    assert p.coeff((2,)) == pytest.approx(0.25, abs=1e-12)


def test_sine_series():
    p = pa.compose_dynamics(lambda v: pa.sin(v[0]), [0.0], None, 3)
    assert p.coeff((1,)) == pytest.approx(1.0, abs=1e-15)
    assert p.coeff((3,)) == pytest.approx(-1 / 6, abs=1e-15)
    assert p.coeff((0,)) == 0.0 and p.coeff((2,)) == 0.0


@pytest.mark.parametrize("name, fn, ref, center", [
    ("cos", pa.cos, sp.cos, 0.3),
    ("sqrt", pa.sqrt, sp.sqrt, 2.0),
    ("atan", pa.atan, sp.atan, 0.7),
    ("asin", pa.asin, sp.asin, 0.2),
    ("acos", pa.acos, sp.acos, -0.4),
    ("exp", pa.exp, sp.exp, 0.5),
    ("log", pa.log, sp.log, 1.5),
    ("recip", lambda v: 1 / v, lambda v: 1 / v, 1.7),
])
def test_elementary_series_match_sympy(name, fn, ref, center):
    order = 5
    p = pa.compose_dynamics(lambda v: fn(v[0]), [center], None, order)
    t = sp.symbols("t")
    ser = sp.series(ref(center + t), t, 0, order + 1).removeO()
    for k in range(order + 1):
        assert p.coeff((k,)) == pytest.approx(float(ser.coeff(t, k)), rel=1e-12, abs=1e-14)


def test_singular_domain():
    with pytest.raises(SingularDomainError):
        pa.compose_dynamics(lambda v: 1 / v[0], [0.5], BoxDomain([0.5], [1.0]), 3)
    with pytest.raises(SingularDomainError):
        pa.compose_dynamics(lambda v: pa.sqrt(v[0]), [0.5], BoxDomain([0.5], [1.0]), 3)


def test_relaxed_domain_records_check():
    with pa.relaxed_domain() as log:
        p = pa.compose_dynamics(lambda v: pa.sqrt(v[0]), [0.5], BoxDomain([0.5], [1.0]), 3)
    assert log and p.const == pytest.approx(math.sqrt(0.5))


def test_abs_branches_enclose():
    box = BoxDomain([0.1], [1.0])
    xs = pa.da_variables(box.center, 3, box.half_widths)
    branches = pa.enumerate_branches(lambda: pa.absolute(xs[0] * xs[0] - 0.2))
    assert len(branches) == 2
    lo = min(b.bound().lo for b in branches)
    hi = max(b.bound().hi for b in branches)
    grid = np.linspace(-0.9, 1.1, 4001)
    vals = np.abs(grid ** 2 - 0.2)
    assert lo <= vals.min() and vals.max() <= hi


def test_refine_only_shrinks():
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = TaylorPoly(2, 3, rng.standard_normal(10), zeta=(0.7, 1.3))
        a, b = p.bound(), p.bound(refine=True)
        assert a.lo <= b.lo and b.hi <= a.hi


# -- properties ----------------------------------------------------------------------------

@st.composite
def poly_and_box(draw):
    n = draw(st.integers(1, 6))
    order = draw(st.integers(0, 4))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    size = math.comb(n + order, order)
    coeffs = rng.standard_normal(size) * rng.choice([0.01, 1.0, 100.0])
    zeta = rng.uniform(0.05, 3.0, n)
    return TaylorPoly(n, order, coeffs, zeta), BoxDomain(np.zeros(n), zeta), rng


@given(poly_and_box())
def test_enclosure_soundness(case):
    p, box, rng = case
    iv = p.bound()
    vals = p(box.sample(1000, rng) - box.center)
    assert np.all(vals >= iv.lo) and np.all(vals <= iv.hi)
    iv2 = p.bound(refine=True)
    assert np.all(vals >= iv2.lo) and np.all(vals <= iv2.hi)


@given(poly_and_box())
def test_derivative_matches_finite_differences(case):
    p, box, rng = case
    if p.order < 1:
        return
    pts = box.sample(10, rng) - box.center
    h = 1e-6
    for i in range(p.n_vars):
        e = np.zeros(p.n_vars)
        e[i] = h
        fd = (p(pts + e) - p(pts - e)) / (2 * h)
        an = p.derive(i)(pts)
        scale = np.max(np.abs(p.coeffs)) * (1 + np.max(np.abs(pts))) ** p.order
        assert np.allclose(an, fd, rtol=1e-6, atol=1e-6 * scale)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_polynomial_composition_is_exact(seed, order):
    rng = np.random.default_rng(seed)
    n = 3
    a = rng.standard_normal((n, n))
    c = rng.standard_normal(n)
    center = rng.standard_normal(n)

    def fn(v):
        out = float(c[0])
        for i in range(n):
            out = out + c[i] * v[i]
        if order >= 2:
            for i in range(n):
                for j in range(n):
                    out = out + a[i, j] * v[i] * v[j]
        return out

    D = sp.symbols("d0:3")
    expr = sp.expand(fn([center[i] + D[i] for i in range(n)]))
    ref = sp.Poly(expr, *D).as_dict()
    p = pa.compose_dynamics(fn, center, None, order)
    for k, v in ref.items():
        if sum(k) <= order:
            assert p.coeff(k) == pytest.approx(float(v), abs=1e-12, rel=1e-12)
