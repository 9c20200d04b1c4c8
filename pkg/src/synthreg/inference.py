"""Design-based inference under random treatment timing.

The randomization test compares the residual at the realized treatment period
with the residuals at every other period.  Under the sharp null the untreated
series is known, so predictions can be produced without looking at S and the
realized residual is a uniform draw from the residual sample.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from synthreg.panel import Panel
from synthreg.protocol import oracle_fixed_weights, run_protocol, theoretical_bound
from synthreg.strategies import StrategyConfig

__all__ = [
    "ObservedStudy",
    "TestReport",
    "MarkovInterval",
    "null_adjusted_panel",
    "rank_test",
    "randomization_test",
    "markov_interval",
    "predictive_interval",
]

# slack for floor/ceil of alpha * T so that e.g. 0.05 * 20 counts as 1
_FLOOR_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class ObservedStudy:
    """Observed treated series (untreated before S, treated from S on) and controls."""

    observed: np.ndarray
    controls: np.ndarray
    S: int
    null_effects: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.observed, dtype=np.float64).reshape(-1)
        Y = np.atleast_2d(np.asarray(self.controls, dtype=np.float64))
        if Y.shape[0] != y.size:
            raise ValueError("observed series and controls differ in length")
        if not 1 <= int(self.S) <= y.size:
            raise ValueError(f"S must lie in 1..{y.size}, got {self.S}")
        z = np.zeros(y.size) if self.null_effects is None else np.asarray(self.null_effects, dtype=np.float64)
        if z.shape != y.shape:
            raise ValueError("null_effects needs one entry per period")
        object.__setattr__(self, "observed", y)
        object.__setattr__(self, "controls", Y)
        object.__setattr__(self, "S", int(self.S))
        object.__setattr__(self, "null_effects", z)

    @property
    def T(self) -> int:
        return self.observed.size

    @classmethod
    def from_panel(cls, panel: Panel, S: int, effects=None, null_effects=None) -> "ObservedStudy":
        """Study built from untreated outcomes plus true effects from S on."""
        y = panel.treated.copy()
        if effects is not None:
            post = np.arange(panel.T) >= S - 1
            y = y + np.where(post, np.asarray(effects, dtype=np.float64), 0.0)
        return cls(y, panel.controls, S, null_effects)


def null_adjusted_panel(study: ObservedStudy) -> Panel:
    """Untreated series implied by the sharp null: subtract z_t from periods t >= S."""
    post = np.arange(study.T) >= study.S - 1
    y0 = study.observed - np.where(post, study.null_effects, 0.0)
    return Panel(y0, study.controls)


@dataclass(frozen=True)
class TestReport:
    p_value: float
    reject: bool
    alpha: float
    C: float
    threshold_index: int
    residual_rank: int
    residuals: tuple = ()

    def to_dict(self) -> dict:
        return {
            "p_value": self.p_value,
            "reject": self.reject,
            "alpha": self.alpha,
            "C": self.C,
            "threshold_index": self.threshold_index,
            "residual_rank": self.residual_rank,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def rank_test(residuals, S: int, alpha: float, C: float = 1.0) -> TestReport:
    """Rank test on a residual sample that does not depend on S.

    ``residual_rank`` is ``#{t : r_t >= r_S}`` (1 when r_S is the strict
    maximum).  The p-value is ``C * residual_rank / T`` capped at 1, and the
    test rejects iff ``p <= alpha``, i.e. when r_S lies strictly above the
    order statistic with 1-based index ``T - floor(T alpha / C)`` (which is
    ``ceil(T (1 - alpha))`` when C = 1).  Ties count against rejection.
    """
    r = np.asarray(residuals, dtype=np.float64).reshape(-1)
    T = r.size
    if T == 0:
        raise ValueError("empty residual sample")
    if np.any(r < 0) or not np.all(np.isfinite(r)):
        raise ValueError("residuals must be finite and nonnegative")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if not C >= 1:
        raise ValueError("C must be at least 1")
    if not 1 <= S <= T:
        raise ValueError(f"S must lie in 1..{T}")
    rank = int(np.count_nonzero(r >= r[S - 1]))
    p = min(1.0, C * rank / T)
    allowed = math.floor(T * alpha / C + _FLOOR_SLACK)
    return TestReport(
        p_value=p,
        reject=rank <= allowed,
        alpha=alpha,
        C=C,
        threshold_index=T - allowed,
        residual_rank=rank,
        residuals=tuple(r.tolist()),
    )


def randomization_test(study: ObservedStudy, strategy, alpha: float = 0.05, C: float = 1.0) -> TestReport:
    """Randomization test of the sharp null ``y(1) - y(0) = z``.

    The strategy is rerun on the null-adjusted series, so its predictions use
    only untreated outcomes implied by the null and never S itself; S enters
    only through the final rank comparison.
    """
    panel = null_adjusted_panel(study)
    if isinstance(strategy, dict):
        strategy = StrategyConfig.from_dict(strategy)
    traj = run_protocol(strategy, panel)
    residuals = np.abs(panel.treated - traj.predictions)
    return rank_test(residuals, study.S, alpha, C)


# -- Markov intervals ------------------------------------------------------------


def markov_interval(oracle_avg_loss: float, regret_bound: float, horizon: int, delta: float) -> float:
    """Squared-error radius c with P_S((y_0S - yhat_S)^2 > c) <= delta.

    ``c = (oracle average loss + regret bound / T) / delta``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if oracle_avg_loss < 0 or regret_bound < 0:
        raise ValueError("loss and regret bound must be nonnegative")
    if horizon < 1:
        raise ValueError("horizon must be positive")
    return (oracle_avg_loss + regret_bound / horizon) / delta


@dataclass(frozen=True)
class MarkovInterval:
    prediction: float
    c: float
    lower: float
    upper: float
    effect: float
    effect_lower: float
    effect_upper: float
    oracle_estimate: float
    oracle_source: str

    @property
    def half_width(self) -> float:
        return math.sqrt(self.c)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__} | {"half_width": self.half_width}


def predictive_interval(
    study: ObservedStudy,
    strategy,
    delta: float = 0.1,
    regret_bound: float | None = None,
    oracle_avg_loss: float | None = None,
) -> MarkovInterval:
    """Interval for the untreated outcome at S and for the effect there.

    The prediction uses periods before S only.  Unless supplied, the oracle
    average loss is estimated by the best fixed pre-treatment average loss
    (0 when S = 1), which is flagged in ``oracle_source``; the regret bound
    defaults to the FTL bound for the study's N and T.
    """
    T, N = study.controls.shape
    S = study.S
    if isinstance(strategy, dict):
        strategy = StrategyConfig.from_dict(strategy)
    pre = Panel(study.observed[:S], study.controls[:S])
    traj = run_protocol(strategy, pre)
    pred = float(traj.predictions[S - 1])
    if oracle_avg_loss is None:
        source = "pre-treatment estimate"
        if S == 1:
            oracle_avg_loss = 0.0
        else:
            oracle_avg_loss = oracle_fixed_weights(pre.head(S - 1)).loss / (S - 1)
    else:
        source = "supplied"
    if regret_bound is None:
        regret_bound = theoretical_bound("ftl", N, T)
    c = markov_interval(oracle_avg_loss, regret_bound, T, delta)
    half = math.sqrt(c)
    effect = float(study.observed[S - 1]) - pred
    return MarkovInterval(
        prediction=pred,
        c=c,
        lower=pred - half,
        upper=pred + half,
        effect=effect,
        effect_lower=effect - half,
        effect_upper=effect + half,
        oracle_estimate=oracle_avg_loss,
        oracle_source=source,
    )
