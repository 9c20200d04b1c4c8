
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from synthreg.panel import Panel

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def simplex_grid(n: int, step: float = 1e-3) -> np.ndarray:
    """Every point of the simplex whose coordinates are multiples of ``step``."""
    m = int(round(1.0 / step))
    if n == 1:
        return np.ones((1, 1))
    if n == 2:
        a = np.arange(m + 1) / m
        return np.column_stack([a, 1.0 - a])
    pts = []
    for i in range(m + 1):
        for j in range(m + 1 - i):
            pts.append((i, j, m - i - j))
    return np.asarray(pts, dtype=np.float64) / m


def grid_min(targets, regressors, n: int, step: float = 1e-3, weights=None) -> float:
    grid = simplex_grid(n, step)
    resid = targets[:, None] - regressors @ grid.T
    w = np.ones(targets.size) if weights is None else np.asarray(weights)
    return float(np.min(w @ resid**2))


def random_panel(rng: np.random.Generator, N: int, T: int) -> Panel:
    return Panel(rng.uniform(-1, 1, T), rng.uniform(-1, 1, (T, N)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["simplex_grid", "grid_min", "random_panel"]
