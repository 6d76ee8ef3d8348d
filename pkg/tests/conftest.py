import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cellfree_ris.channel import PhaseConfig
from cellfree_ris.scenario import SystemConfig, random_statistics

settings.register_profile("default", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_config(**kw):
    base = dict(S=2, M=2, L=2, N_r=2, N_c=2, K=2, P_max=1.0, N0=0.1)
    base.update(kw)
    return SystemConfig(**base)


def random_eta(cfg, rng):
    return rng.uniform(0.1, 1.0, size=(cfg.K, cfg.S))


@pytest.fixture
def small():
    """Small synthetic instance (S=2, L=2, M=2, N=4, K=2) with phases and powers."""
    cfg = small_config()
    stats = random_statistics(cfg, seed=11)
    phases = PhaseConfig.random(cfg.L, cfg.N, seed=3)
    eta = random_eta(cfg, np.random.default_rng(5))
    return cfg, stats, phases, eta


# -- acceptance reporting ------------------------------------------------------------------

ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """record(number, ok, detail): store one acceptance line and fail the test when not ok."""
    def record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail, request.node.get_closest_marker("xfail") is not None)
        assert ok, f"criterion {number}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE, key=lambda n: (int("".join(c for c in n if c.isdigit())), n)):
        ok, detail, expected_fail = ACCEPTANCE[number]
        status = "PASS" if ok else ("FAIL (expected, see decisions ledger)" if expected_fail else "FAIL")
        terminalreporter.write_line(f"criterion {number:>3}: {status} - {detail}")
