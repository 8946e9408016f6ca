import os
import time

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=1000,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> (passed, detail), filled by the acceptance suite
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE, key=str):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


# -- shared cruise campaign (criteria 5, 6 and the training-progress check) -----------------

@pytest.fixture(scope="session")
def cruise_dataset():
    from iccbf import campaign as C
    return C.build_dataset("cruise", C.MC_SIZES["cruise"], seed=0)


@pytest.fixture(scope="session")
def untuned_cruise_mc(cruise_dataset):
    from iccbf import campaign as C
    ctl, name = C.controller_from_spec("cruise", "untuned")
    t = time.perf_counter()
    results, summary = C.run_mc(cruise_dataset, ctl, name)
    return results, summary, time.perf_counter() - t


@pytest.fixture(scope="session")
def trained_cruise(tmp_path_factory):
    from iccbf.learner import ppo
    out = tmp_path_factory.mktemp("cruise_train")
    t = time.perf_counter()
    res = ppo.train("cruise", ppo.ppo_defaults("cruise"), seed=0, log_path=out / "train_log.csv",
                    checkpoint_path=out / "checkpoint.json")
    return res, out / "checkpoint.json", time.perf_counter() - t
