"""Train a gain-tuning policy briefly and compare it with the fixed gains.

A full run uses 1e5 steps; this one stops at 4096 so it finishes in
under a minute.  Both controllers face the same pre-sampled episodes.
"""

import sys
import tempfile
from pathlib import Path

from iccbf import campaign as C
from iccbf.learner import ppo

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 4096
out = Path(tempfile.mkdtemp())

res = ppo.train("cruise", ppo.ppo_defaults("cruise", total_timesteps=steps), seed=0,
                checkpoint_path=out / "checkpoint.json")
for row in res.log:
    print(f"iter {row['iteration']:3d}  return {row['mean_return']:8.3f}  fuel {row['mean_fuel']:.3f}")

ds = C.build_dataset("cruise", 100, seed=7)
for spec in ("untuned", str(out / "checkpoint.json")):
    ctl, name = C.controller_from_spec("cruise", spec)
    _, s = C.run_mc(ds, ctl, name)
    print(f"{Path(name).stem:10s} fuel {s.performance.mean:.3f} +- {s.performance.std:.3f}  "
          f"safe {100 * s.safe_fraction:.1f}%  dataset {s.dataset_digest[:12]}")
