import numpy as np
import pytest

from tedm.errors import InvalidSchedule, InvalidTimestep
from tedm.schedule import build_schedule

# Brute-force cumulative product over the first 50 alphas of the
# (T=1000, 1e-4, 0.02) linear schedule, frozen before the main build.
ALPHA_BAR_50 = 0.9710157229394402


def test_default_grid_has_1000_strictly_decreasing_alpha_bars():
    s = build_schedule(1000, 1e-4, 0.02, "linear")
    assert len(s.betas) == len(s.alphas) == len(s.alpha_bars) == 1000
    assert np.all(np.diff(s.alpha_bars) < 0)


def test_single_step_schedule():
    s = build_schedule(1, 0.37, 0.37, "linear")
    assert s.alpha_bars[0] == pytest.approx(1 - 0.37, rel=1e-15)


def test_alpha_bar_50_regression_constant():
    s = build_schedule(1000, 1e-4, 0.02)
    assert s.alpha_bar(50) == pytest.approx(ALPHA_BAR_50, rel=1e-12)
    # recompute the oracle the slow way
    prod = 1.0
    for i in range(50):
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i / 999)
    assert s.alpha_bar(50) == pytest.approx(prod, rel=1e-12)


@pytest.mark.parametrize(
    "T,b0,b1",
    [(1, 0.5, 0.5), (2, 1e-4, 0.02), (10, 0.001, 0.1), (1000, 1e-4, 0.02)],
)
def test_schedule_invariants(T, b0, b1):
    s = build_schedule(T, b0, b1)
    assert np.all((s.betas > 0) & (s.betas < 1))
    assert np.all((s.alphas > 0) & (s.alphas < 1))
    assert np.allclose(s.alphas, 1 - s.betas)
    assert s.alpha_bars[0] == s.alphas[0]
    assert np.all(np.diff(s.alpha_bars) < 0) or T == 1
    assert s.alpha_bars[-1] > 0
    assert np.allclose(s.alpha_bars, np.cumprod(s.alphas))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(total_steps=0),
        dict(total_steps=10, beta_start=0.0),
        dict(total_steps=10, beta_start=0.5, beta_end=0.1),
        dict(total_steps=10, beta_end=1.0),
        dict(total_steps=10, kind="cosine"),
    ],
)
def test_invalid_schedules_rejected(kwargs):
    with pytest.raises(InvalidSchedule):
        build_schedule(**{"beta_start": 1e-4, "beta_end": 0.02, **kwargs})


def test_timestep_range_checks():
    s = build_schedule(100)
    assert s.check_timestep(1) == 1
    assert s.check_timestep(100) == 100
    for t in (0, 101, -3):
        with pytest.raises(InvalidTimestep):
            s.check_timestep(t)
