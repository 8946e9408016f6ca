import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from iccbf import barrier_chain as bc
from iccbf import envs
from iccbf import poly_algebra as pa
from iccbf.poly_algebra import BoxDomain

UNTUNED_CRUISE = [4.0, 7.0, 2.0]


def cruise():
    return envs.CruiseControl()


def chain(system, theta, k=0):
    return bc.build_chain(system.constraints()[k], system, bc.GainVector(theta))


# -- construction ---------------------------------------------------------------------------------

def test_cruise_b1_closed_form():
    s = cruise()
    p = s.params
    d, v = 100.0, 10.0
    F = 0.1 + 5 * v + 0.25 * v * v
    lf_h0 = (p.v0 - v) + 1.8 * F / p.m
    lg_h0 = -1.8 * p.g0
    h0 = d - 1.8 * v
    b = bc.eval_chain(chain(s, [4.0, 7.0, 2.0]), [d, v])[0]
    assert b[0] == h0
    assert b[1] == pytest.approx(lf_h0 - abs(lg_h0) * p.u_max + 4 * h0, rel=1e-14)


def test_small_gain_limit_is_worst_case_rate():
    s = cruise()
    p = s.params
    x = [60.0, 20.0]
    F = 0.1 + 5 * 20 + 0.25 * 400
    worst = (p.v0 - 20) + 1.8 * F / p.m - 1.8 * p.g0 * p.u_max
    b = bc.eval_chain(chain(s, [1e-12, 1.0, 1.0]), x)[0]
    assert b[1] == pytest.approx(worst, abs=1e-9)


def test_boundary_and_membership():
    c = chain(cruise(), UNTUNED_CRUISE)
    b, member = bc.eval_chain(c, [18.0, 10.0])
    assert b[0] == 0.0
    b, member = bc.eval_chain(c, [17.0, 10.0])
    assert b[0] < 0 and not member
    b, member = bc.eval_chain(c, [100.0, 10.0])
    assert member == bool(np.min(b) >= 0) and len(b) == 3 and np.all(np.isfinite(b))


def test_docking_on_axis():
    s = envs.Docking()
    p = s.params
    psi = 0.7
    x = [(p.R_C + 40.0) * math.cos(psi), (p.R_C + 40.0) * math.sin(psi), 0.0, 0.0, psi]
    assert s.constraints()[0].h(x) == pytest.approx(1 - math.cos(p.gamma), abs=1e-14)
    # the cone function peaks on the axis, so L_g b_1 vanishes and its norm has no derivative there
    with pytest.raises(pa.SingularDomainError):
        bc.eval_chain(chain(s, [0.25, 0.85, 0.05]), x)
    x[1] += 1e-3
    b = bc.eval_chain(chain(s, [0.25, 0.85, 0.05]), x)[0]
    assert b[0] == pytest.approx(1 - math.cos(p.gamma), abs=1e-8) and np.all(np.isfinite(b))


def test_depth_and_gain_validation():
    s = cruise()
    with pytest.raises(ValueError):
        bc.BarrierChain(s, s.constraints()[0], N=0)
    with pytest.raises(ValueError):
        bc.GainVector([4.0, 0.0, 2.0])
    with pytest.raises(ValueError):
        bc.BarrierChain(s, s.constraints()[0], 2, [1.0, 1.0])


def test_non_composable_safety_function():
    s = cruise()
    spec = bc.ConstraintSpec("bad", lambda x: math.sqrt(x[0]))
    with pytest.raises(TypeError):
        bc.build_chain(spec, s, bc.GainVector(UNTUNED_CRUISE))


def test_rebind_changes_only_gains():
    c = chain(cruise(), UNTUNED_CRUISE)
    c2 = c.rebind([1.0, 2.0, 3.0])
    assert c2.constraint is c.constraint and np.array_equal(c2.theta, [1.0, 2.0, 3.0])
    assert np.array_equal(c.theta, UNTUNED_CRUISE)


@pytest.mark.parametrize("env", ["cruise", "docking", "inspection"])
def test_recursion_matches_brute_force(env):
    errs = oracles.recursion_errors(env, 10, np.random.default_rng(11))
    assert errs.max() <= 1e-8


@settings(max_examples=40)
@given(st.floats(20, 150), st.floats(0, 30), st.floats(0.1, 10), st.floats(0.1, 10), st.floats(1.01, 3))
def test_gain_monotonicity(d, v, t0, t1, factor):
    s = cruise()
    base = bc.eval_chain(chain(s, [t0, t1, 1.0]), [d, v])[0]
    if base[0] > 0:
        up = bc.eval_chain(chain(s, [t0 * factor, t1, 1.0]), [d, v])[0]
        assert up[1] >= base[1] - 1e-12 * max(1.0, abs(base[1]))
    if base[1] > 0:
        up = bc.eval_chain(chain(s, [t0, t1 * factor, 1.0]), [d, v])[0]
        assert up[2] >= base[2] - 1e-12 * max(1.0, abs(base[2]))


# -- Lipschitz and dynamics bounds ------------------------------------------------------------------

def test_lipschitz_linear():
    box = BoxDomain(np.array([0.3]), np.array([2.0]))
    assert bc.lipschitz_bound(lambda x: -3.5 * x[0], box) == pytest.approx(3.5, rel=1e-15)


def test_lipschitz_constant():
    box = BoxDomain(np.array([0.3, 1.0]), np.array([2.0, 1.0]))
    assert bc.lipschitz_bound(lambda x: 2.0 + 0.0 * x[0], box) == 0.0


def test_lipschitz_paraboloid():
    box = BoxDomain(np.array([1.0, 1.0]), np.array([0.5, 0.5]))
    l = bc.lipschitz_bound(lambda x: x[0] * x[0] + x[1] * x[1], box)
    g = np.linspace(0.5, 1.5, 101)
    X, Y = np.meshgrid(g, g)
    grid = np.max(np.hypot(2 * X, 2 * Y))
    assert l == pytest.approx(math.sqrt(18), rel=1e-12)
    assert l >= grid - 1e-12


class _Const(envs.System):
    name = "const"
    n, m = 2, 2
    input_norm = "l2"
    position_idx, velocity_idx = (0, 1), ()
    default_T, default_substeps = 1.0, 4

    def __init__(self, c, gain, u_max=1.0):
        from dataclasses import make_dataclass
        P = make_dataclass("P", [("u_max", float)], frozen=True)
        super().__init__(P(u_max))
        self.c, self.gain = c, gain

    def f(self, x):
        return [self.c[0] + 0.0 * x[0], self.c[1] + 0.0 * x[1]]

    def g(self, x):
        return [[self.gain, 0.0], [0.0, self.gain]]


def test_delta_identity_input():
    s = _Const([0.0, 0.0], 1.0, u_max=2.0)
    delta = bc.dynamics_norm_bound(s, BoxDomain(np.zeros(2), np.ones(2)))
    assert delta >= 2.0
    assert delta == pytest.approx(2.0 * math.sqrt(2), rel=1e-14)


def test_delta_drift_only():
    s = _Const([3.0, -4.0], 0.0)
    assert bc.dynamics_norm_bound(s, BoxDomain(np.zeros(2), np.ones(2))) == pytest.approx(5.0, rel=1e-14)


def test_delta_dominates_sampled_sup():
    s = cruise()
    box = BoxDomain(np.array([100.0, 13.89]), np.array([2.0, 1.0]))
    rng = np.random.default_rng(0)
    X = box.sample(10_000, rng)
    U = rng.uniform(-s.u_max, s.u_max, 10_000)
    F = np.stack([s.params.v0 - X[:, 1],
                  -(0.1 + 5 * X[:, 1] + 0.25 * X[:, 1] ** 2) / s.params.m + s.params.g0 * U], axis=1)
    assert bc.dynamics_norm_bound(s, box) >= np.max(np.linalg.norm(F, axis=1))


# -- margins ------------------------------------------------------------------------------------------

def test_margin_zero_period():
    c = chain(cruise(), UNTUNED_CRUISE)
    assert bc.margin(c, [100.0, 10.0], 0.0, zeta=[1.0, 0.5]).nu == 0.0


def test_margin_linear_in_period():
    c = chain(cruise(), UNTUNED_CRUISE)
    zeta = [1.0, 0.5]
    a = bc.margin(c, [100.0, 10.0], 0.1, zeta=zeta).nu
    b = bc.margin(c, [100.0, 10.0], 0.2, zeta=zeta).nu
    assert b == pytest.approx(2 * a, rel=1e-14)


def test_margin_assembly():
    c = chain(envs.Docking(), [0.25, 0.85, 0.05])
    m = bc.margin(c, [60.0, 30.0, 0.1, -0.2, 0.4], 0.5)
    assert min(m.l_lf, m.l_lg, m.l_b, m.delta) >= 0
    assert m.nu == pytest.approx((m.l_lf + m.l_lg * m.u_max + 0.05 * m.l_b) * 0.5 * m.delta, rel=1e-14)
    assert m.l_alpha == pytest.approx(0.05 * m.l_b)


def test_cruise_nominal_margin_small():
    s = cruise()
    c = chain(s, UNTUNED_CRUISE)
    x = [100.0, 10.0]
    m = bc.margin(c, x, 0.1)
    b = bc.eval_chain(c, x)[0]
    assert 0 < m.nu < 0.1 * abs(b[2])
    sym = bc.SymbolicChain(s, s.constraints()[0])
    grid = bc.grid_margin(sym, m.box, UNTUNED_CRUISE, 0.1, rng=np.random.default_rng(0))
    assert m.nu >= grid.nu and m.delta >= grid.delta


@pytest.mark.parametrize("env", ["cruise", "docking"])
def test_margin_dominates_grid_estimate(env):
    from iccbf import campaign
    rows = campaign.margin_audit(env, samples=5, seed=3, grid_samples=2000)
    assert rows and all(r.contained for r in rows)
    assert all(r.nu_da >= r.nu_grid and r.delta_da >= r.delta_grid and r.l1_da >= r.l1_grid for r in rows)


def test_zeta_covers_one_step():
    rng = np.random.default_rng(5)
    s = envs.Docking()
    for _ in range(20):
        x = np.r_[rng.uniform(-100, 100, 2), rng.uniform(-1, 1, 2), rng.uniform(0, 6)]
        zeta = bc.select_zeta(s, x, 0.5)
        box = BoxDomain(x, zeta)
        for u in bc.admissible_inputs(s, 8, rng):
            _, traj = envs.propagate_zoh(s, x, u, 0.5, 50, return_substeps=True)
            bc.audit_containment(box, traj)


def test_containment_audit_rejects_escape():
    box = BoxDomain(np.zeros(2), np.ones(2))
    bc.audit_containment(box, np.array([[0.5, -0.5], [1.0, 1.0]]))
    with pytest.raises(bc.ContainmentAuditError):
        bc.audit_containment(box, np.array([[0.5, -0.5], [1.2, 0.0]]))


def test_singular_box_is_reported_strictly():
    s = envs.Inspection()
    c = s.constraints()[0]
    with pytest.raises(pa.SingularDomainError):
        bc.chain_margins(s, [c], [[1.0, 1.0, 1.0]], 2, np.array([0.5, 0.0, 0.0, 0, 0, 0]), 10.0,
                         zeta=np.full(6, 1.0), strict=True)
    relaxed = bc.chain_margins(s, [c], [[1.0, 1.0, 1.0]], 2, np.array([0.5, 0.0, 0.0, 0, 0, 0]), 10.0,
                               zeta=np.full(6, 1.0))
    assert relaxed.margins[0].relaxed
