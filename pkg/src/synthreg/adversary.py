"""Panel and treatment-timing generators.

All randomness comes from a counter-based Philox generator keyed by the seed,
so a (spec, seed) pair reproduces the same panel on any platform.  Every
generated panel is clipped to [-1, 1] as the last step.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from synthreg.panel import Panel
from synthreg.strategies import fixed_adversary_response

__all__ = [
    "GENERATORS",
    "TIMINGS",
    "GeneratorSpec",
    "TimingSpec",
    "make_rng",
    "generate_panel",
    "generate_timing",
    "sample_treatment_time",
]

GENERATORS = ("iid_bounded", "factor_model", "piecewise_shift", "anti_fixed_theta", "ar1_clipped")
TIMINGS = ("uniform", "bounded_density", "hazard_regime")


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by ``seed``; ``stream`` selects an independent substream."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream)]))


def _vector(value, n: int, name: str) -> np.ndarray:
    v = np.asarray(value, dtype=np.float64).reshape(-1)
    if v.size != n:
        raise ValueError(f"{name} needs {n} entries, got {v.size}")
    return v


@dataclass(frozen=True)
class GeneratorSpec:
    """Recipe for a bounded panel.

    kind-specific fields:
      factor_model     rank, noise
      piecewise_shift  shift (default T // 2), theta_a, theta_b (default e_1, e_2), noise
      anti_fixed_theta theta (default e_1), eps
      ar1_clipped      rho, noise
    """

    kind: str = "iid_bounded"
    N: int = 5
    T: int = 100
    seed: int = 0
    rank: int = 2
    noise: float = 0.1
    shift: int | None = None
    theta_a: tuple | None = None
    theta_b: tuple | None = None
    theta: tuple | None = None
    eps: float = 5e-5
    rho: float = 0.8

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ValueError(f"unknown generator {self.kind!r}; expected one of {GENERATORS}")
        if self.N < 1 or self.T < 1:
            raise ValueError("N and T must be positive")
        if self.rank < 0 or self.noise < 0:
            raise ValueError("rank and noise must be nonnegative")
        if not -1 < self.rho < 1:
            raise ValueError("rho must lie in (-1, 1)")
        for name in ("theta_a", "theta_b", "theta"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(float(v) for v in np.ravel(value)))

    def with_seed(self, seed: int) -> "GeneratorSpec":
        return GeneratorSpec(**{**asdict(self), "seed": int(seed)})

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**data)


def _finish(treated, controls) -> Panel:
    return Panel(np.clip(treated, -1.0, 1.0), np.clip(controls, -1.0, 1.0), 1.0)


def generate_panel(spec: GeneratorSpec) -> Panel:
    """Draw the panel described by ``spec`` (deterministic in the seed)."""
    N, T = spec.N, spec.T
    rng = make_rng(spec.seed)
    if spec.kind == "iid_bounded":
        data = rng.uniform(-1.0, 1.0, size=(T, N + 1))
        return _finish(data[:, 0], data[:, 1:])
    if spec.kind == "factor_model":
        # y_it = lambda_i' f_t + noise; the treated loadings are a convex
        # combination of control loadings, so a good synthetic control exists
        r = spec.rank
        if r == 0:
            controls = np.zeros((T, N))
            treated = np.zeros(T)
        else:
            loadings = rng.uniform(-1.0, 1.0, size=(N, r)) / math.sqrt(r)
            factors = rng.normal(0.0, 0.5, size=(T, r))
            mix = rng.dirichlet(np.ones(N))
            controls = factors @ loadings.T
            treated = factors @ (mix @ loadings)
        if spec.noise > 0:
            eps = rng.normal(0.0, spec.noise, size=(T, N + 1))
            treated = treated + eps[:, 0]
            controls = controls + eps[:, 1:]
        return _finish(treated, controls)
    if spec.kind == "piecewise_shift":
        if N < 2 and (spec.theta_a is None or spec.theta_b is None):
            raise ValueError("piecewise_shift defaults need N >= 2")
        shift = T // 2 if spec.shift is None else int(spec.shift)
        if not 0 <= shift <= T:
            raise ValueError("shift must lie in [0, T]")
        theta_a = np.eye(N)[0] if spec.theta_a is None else _vector(spec.theta_a, N, "theta_a")
        theta_b = np.eye(N)[1] if spec.theta_b is None else _vector(spec.theta_b, N, "theta_b")
        controls = rng.uniform(-1.0, 1.0, size=(T, N))
        treated = np.where(np.arange(T) < shift, controls @ theta_a, controls @ theta_b)
        if spec.noise > 0:
            treated = treated + rng.normal(0.0, spec.noise, size=T)
        return _finish(treated, controls)
    if spec.kind == "anti_fixed_theta":
        theta = np.eye(N)[0] if spec.theta is None else _vector(spec.theta, N, "theta")
        return fixed_adversary_response(theta, spec.eps, T)
    if spec.kind == "ar1_clipped":
        scale = spec.noise * math.sqrt(1.0 - spec.rho**2)
        shocks = rng.normal(0.0, 1.0, size=(T, N))
        controls = np.empty((T, N))
        level = rng.normal(0.0, spec.noise, size=N)
        for t in range(T):
            level = spec.rho * level + scale * shocks[t] if t else level
            controls[t] = level
        mix = rng.dirichlet(np.ones(N))
        treated = controls @ mix + rng.normal(0.0, 0.5 * spec.noise, size=T)
        return _finish(treated, controls)
    raise ValueError(f"unknown generator {spec.kind!r}")


# -- timing --------------------------------------------------------------------------


@dataclass(frozen=True)
class TimingSpec:
    """Distribution of the treatment period.

    ``hazard`` is either a callable ``hazard(t, history) -> r_t`` (history is
    the control matrix of periods before t) or None, in which case the hazard
    is ``rate`` when ``slope == 0`` and ``expit(logit(rate) + slope * mean of
    the previous period's controls)`` otherwise.
    """

    kind: str = "uniform"
    C: float = 1.0
    seed: int = 0
    rate: float = 0.05
    slope: float = 0.0
    hazard: object = None

    def __post_init__(self):
        if self.kind not in TIMINGS:
            raise ValueError(f"unknown timing {self.kind!r}; expected one of {TIMINGS}")
        if not self.C >= 1:
            raise ValueError(f"C must be at least 1, got {self.C}")
        if not 0 < self.rate < 1:
            raise ValueError("rate must lie in (0, 1)")

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "hazard"}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TimingSpec":
        unknown = set(data) - set(cls.__dataclass_fields__) - {"hazard"}
        if unknown:
            raise ValueError(f"unknown timing fields: {sorted(unknown)}")
        return cls(**data)


def _bounded(weights: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Scale so that clip(a * w, lo, hi) sums to one."""
    total = lambda a: np.clip(a * weights, lo, hi).sum() - 1.0  # noqa: E731
    a_hi = 1.0
    while total(a_hi) < 0:
        a_hi *= 2.0
    a = brentq(total, 0.0, a_hi, xtol=1e-15, rtol=1e-15)
    pi = np.clip(a * weights, lo, hi)
    return pi / pi.sum()


def generate_timing(spec: TimingSpec, T: int, panel: Panel | None = None) -> np.ndarray:
    """Treatment-time probabilities pi_1..pi_T."""
    if T < 1:
        raise ValueError("T must be positive")
    if spec.kind == "uniform":
        return np.full(T, 1.0 / T)
    if spec.kind == "bounded_density":
        rng = make_rng(spec.seed, 1)
        raw = rng.gamma(0.5, size=T) + 1e-12
        lo, hi = 1.0 / (spec.C * T), spec.C / T
        if spec.C == 1:
            return np.full(T, 1.0 / T)
        pi = _bounded(raw / raw.sum(), lo, hi)
        # guard the bounds against rounding in the renormalization
        return np.clip(pi, lo, hi)
    # hazard regime: pi_t = (1 - r_1) ... (1 - r_{t-1}) r_t, truncated at T
    if panel is None and (spec.hazard is not None or spec.slope != 0):
        raise ValueError("this hazard needs the panel history")
    rates = np.empty(T)
    for t in range(T):
        history = None if panel is None else panel.controls[:t]
        if spec.hazard is not None:
            r = float(spec.hazard(t + 1, history))
        elif spec.slope == 0:
            r = spec.rate
        else:
            lagged = float(history[-1].mean()) if t else 0.0
            r = float(expit(math.log(spec.rate / (1 - spec.rate)) + spec.slope * lagged))
        if not 0 <= r <= 1:
            raise ValueError(f"hazard at t={t + 1} is {r}, outside [0, 1]")
        rates[t] = r
    survival = np.concatenate([[1.0], np.cumprod(1.0 - rates[:-1])])
    pi = survival * rates
    if pi.sum() <= 0:
        raise ValueError("hazard puts no mass on periods 1..T")
    return pi / pi.sum()


def sample_treatment_time(pi, seed: int, size: int | None = None):
    """Draw S ~ pi by inverse CDF; returns a 1-based period (or an array)."""
    pi = np.asarray(pi, dtype=np.float64)
    if pi.ndim != 1 or pi.size == 0 or np.any(pi < 0) or not abs(pi.sum() - 1) < 1e-9:
        raise ValueError("pi must be a probability vector")
    cdf = np.cumsum(pi)
    cdf[-1] = 1.0
    u = make_rng(seed, 2).random(size)
    S = np.searchsorted(cdf, u, side="right") + 1
    S = np.minimum(S, pi.size)
    return int(S) if size is None else S
