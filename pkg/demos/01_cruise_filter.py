"""Adaptive cruise control under an input-constrained barrier chain.

Walks one state through the recursion b0 -> b1 -> b2, the sampled-data
margin and the filter QP, then runs a full episode with fixed gains.
"""

import numpy as np

from iccbf import barrier_chain as bc
from iccbf import envs
from iccbf import safety_filter as sf
from iccbf.learner import env as E

system = envs.CruiseControl(envs.CruiseParams())
(constraint,) = system.constraints()
theta = np.array([4.0, 7.0, 2.0])

# %% one state: gap 100 m, ego speed 24 m/s
x = np.array([100.0, 24.0])
chain = bc.build_chain(constraint, system, theta)
ev = chain.evaluate(x)
print("b_i(x)       ", np.round(ev.b, 3), "in C*:", ev.member)
print("L_f b2, L_g b2", round(ev.lf, 3), np.round(ev.lg, 3))

# the margin pays for holding u constant over one 0.1 s sample
T = 0.1
se = bc.chain_margins(system, [constraint], [theta], bc.DEFAULT_DEPTH, x, T)
m = se.margins[0]
print(f"nu = {m.nu:.3f}  (L_Lf {m.l_lf:.3g}, L_Lg {m.l_lg:.3g}, L_b {m.l_b:.3g}, Delta {m.delta:.3g})")

# %% the filter: track u_ref = 0 subject to the tightened barrier row
prob = sf.build_iccbf_qp(ev, theta[-1], m.nu, system.u_max, system.input_norm)
sol = sf.solve(prob)
print("QP", sol.status, "u* =", np.round(sol.u_star, 4), "KKT", f"{sol.kkt_residual:.1e}")

# %% a whole episode at the untuned gains
rng = np.random.default_rng(3)
ep = E.sample_episode("cruise", rng)
task = E.run_fixed(ep, E.UNTUNED["cruise"])
print(f"episode: fuel {task.fuel:.3f} N s, failure {task.failure}, stats {task.stats}")
