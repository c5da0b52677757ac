import numpy as np
import pytest

from fxmm.flow import IntensityShape, SizeLadder, TierIntensity
from fxmm.hamiltonians import ExecutionCost
from fxmm.hjb import ModelParams, extract_strategy, solve_hjb

TIER1 = IntensityShape(-0.3, 5.0)
TIER2 = IntensityShape(-1.9, 15.0)

ACCEPTANCE_RESULTS = []


def record_criterion(num, name, passed, detail=""):
    ACCEPTANCE_RESULTS.append((num, name, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num, name, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"{status}  criterion {num:>2} [{name}] {detail}")


def small_params(**overrides):
    """Compact grid that keeps solves under a second in unit tests."""
    kwargs = dict(
        sigma=50.0, impact_k=5e-3, gamma=2e-3, horizon_days=0.01,
        tiers=[TierIntensity(TIER1, (200.0, 120.0, 90.0)),
               TierIntensity(TIER2, (200.0, 120.0, 90.0))],
        ladder=SizeLadder((1.0, 2.0, 5.0)),
        cost=ExecutionCost(), q_bound=25.0, grid_points=51)
    kwargs.update(overrides)
    return ModelParams(**kwargs)


@pytest.fixture(scope="session")
def small_solution():
    params = small_params()
    vf, report = solve_hjb(params)
    return params, vf, report


@pytest.fixture(scope="session")
def small_strategy(small_solution):
    params, vf, _ = small_solution
    return extract_strategy(vf, params)


def grid_search_quote(p, shape, lo=None, hi=None, step=1e-5):
    """Brute-force maximizer of f(d) * (d - p) on a fine quote grid.

    The maximizer always lies above p, and for very negative p it sits near
    the region where the fill probability is moderate, so the default window
    spans [p, max(p + 6, 3)].
    """
    if lo is None:
        lo = p
    if hi is None:
        hi = max(p + 6.0, 3.0)
    d = np.arange(lo, hi, step)
    x = shape.alpha + shape.beta * d
    f = 1.0 / (1.0 + np.exp(np.clip(x, -700, 700)))
    vals = f * (d - p)
    i = int(np.argmax(vals))
    return float(vals[i]), float(d[i])
