"""The prediction game, hindsight oracles, and regret/risk bookkeeping.

For each hypothetical treatment period S = 1..T the strategy predicts
``y_0S`` from periods before S plus the current controls, is scored with the
squared error, and then observes ``y_0S``.  Regret compares the total loss with
the best fixed weights chosen after seeing the whole panel.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from synthreg import _kernels, simplex
from synthreg.panel import Panel, first_diff, historical_diff
from synthreg.simplex import SolveSpec, Weights
from synthreg.strategies import Strategy, StrategyConfig, make_strategy

__all__ = [
    "ProtocolError",
    "Trajectory",
    "Oracle",
    "RegretReport",
    "AdaptiveRegret",
    "run_protocol",
    "oracle_fixed_weights",
    "compute_regret",
    "theoretical_bound",
    "hazan_bound",
    "BOUND_KINDS",
    "BOUND_ALIASES",
    "weighted_regret",
    "adaptive_regret",
    "interval_oracle_losses",
    "expected_loss_bound_check",
    "write_curves",
    "ORACLE_CLASSES",
    "EXACT_SCAN_MAX_T",
]

ORACLE_CLASSES = ("simplex", "affine", "twfe", "first_diff")
EXACT_SCAN_MAX_T = 256


class ProtocolError(RuntimeError):
    def __init__(self, period: int, cause: Exception):
        super().__init__(f"strategy failed at period {period}: {cause}")
        self.period = period
        self.cause = cause


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Per-period output of one pass through the game (arrays of length T)."""

    predictions: np.ndarray
    losses: np.ndarray
    weights: np.ndarray
    targets: np.ndarray
    intercepts: np.ndarray | None = None
    descriptor: str = ""
    panel_hash: str = ""

    @property
    def T(self) -> int:
        return self.predictions.size

    @property
    def total_loss(self) -> float:
        return float(self.losses.sum())

    def loss_values(self, loss: str = "squared") -> np.ndarray:
        resid = self.targets - self.predictions
        if loss == "squared":
            return resid**2
        if loss == "absolute":
            return np.abs(resid)
        raise ValueError(f"unknown loss {loss!r}")

    def same_as(self, other: "Trajectory") -> bool:
        """Bit-identical predictions, losses and weights."""
        return (
            np.array_equal(self.predictions, other.predictions)
            and np.array_equal(self.losses, other.losses)
            and np.array_equal(self.weights, other.weights)
        )


def run_protocol(strategy, panel: Panel, callback=None, descriptor: str | None = None) -> Trajectory:
    """Play the strategy through every period of the panel.

    ``strategy`` is a fresh :class:`Strategy` or a config (built with the
    panel's horizon).  ``callback(t, strategy, weights, prediction)`` runs after
    each prediction, before the update.
    """
    if isinstance(strategy, (StrategyConfig, dict)):
        config = strategy if isinstance(strategy, StrategyConfig) else StrategyConfig.from_dict(strategy)
        descriptor = descriptor or config.label
        strategy = make_strategy(config, panel.N, panel.T)
    if not isinstance(strategy, Strategy):
        raise TypeError(f"not a strategy: {strategy!r}")
    if strategy.n != panel.N:
        raise ValueError(f"strategy built for {strategy.n} controls, panel has {panel.N}")
    if strategy.t != 0:
        raise ValueError("strategy has already observed data")
    T, N = panel.T, panel.N
    preds = np.empty(T)
    weights = np.empty((T, N))
    intercepts = np.full(T, np.nan)
    has_intercept = False
    for t in range(T):
        y = panel.controls[t]
        try:
            w, pred = strategy.predict(y)
            if callback is not None:
                callback(t + 1, strategy, w, pred)
            strategy.update(panel.treated[t], y)
        except Exception as exc:  # noqa: BLE001 - rewrap with the period
            raise ProtocolError(t + 1, exc) from exc
        preds[t] = pred
        weights[t] = w.theta
        if w.intercept is not None:
            has_intercept = True
            intercepts[t] = w.intercept
    targets = panel.treated.copy()
    return Trajectory(
        predictions=preds,
        losses=(targets - preds) ** 2,
        weights=weights,
        targets=targets,
        intercepts=intercepts if has_intercept else None,
        descriptor=descriptor or strategy.kind,
        panel_hash=panel.digest(),
    )


# -- oracles ---------------------------------------------------------------------


class Oracle(NamedTuple):
    weights: Weights
    loss: float
    cls: str = "simplex"


def _class_data(panel: Panel, cls: str) -> tuple[np.ndarray, np.ndarray]:
    if cls in ("simplex", "affine"):
        return panel.treated, panel.controls
    if cls == "twfe":
        v = historical_diff(panel).values
        return v.treated, v.controls
    if cls == "first_diff":
        v = first_diff(panel).values
        return v.treated, v.controls
    raise ValueError(f"unknown oracle class {cls!r}; expected one of {ORACLE_CLASSES}")


def oracle_fixed_weights(
    panel: Panel, cls: str = "simplex", loss: str = "squared", sample_weights=None
) -> Oracle:
    """Best fixed weights in hindsight for the class and their total loss.

    The ``twfe`` class is the set of weighted fixed-effects forecasters; their
    level residuals equal residuals on historically differenced data, so the
    oracle is a simplex solve there.  ``first_diff`` is the analogue for
    two-period DID forecasters.  Losses are unscaled and unweighted unless
    ``sample_weights`` is given.
    """
    y0, Y = _class_data(panel, cls)
    w = None if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    if loss == "absolute":
        if cls == "affine":
            raise ValueError("absolute-loss oracle is implemented for the simplex classes")
        weights, total = simplex.solve_absolute_oracle(y0, Y, w)
        return Oracle(weights, total, cls)
    if loss != "squared":
        raise ValueError(f"unknown loss {loss!r}")
    spec = SolveSpec(y0, Y, sample_weights=w)
    weights = simplex.solve_affine_ls(spec) if cls == "affine" else simplex.solve_constrained_ls(spec)
    resid = y0 - Y @ weights.theta - (weights.intercept or 0.0)
    sq = resid**2
    total = float(sq.sum() if w is None else w @ sq)
    return Oracle(weights, total, cls)


# -- bounds ------------------------------------------------------------------------


def hazan_bound(n: int, T: int, R: float, a: float, b: float, D: float) -> float:
    """Logarithmic regret of FTL for exp-concave losses: (2nb^2/a)[ln(DRaT/b) + 1]."""
    if min(n, T, R, a, b, D) <= 0:
        raise ValueError("all parameters must be positive")
    return (2.0 * n * b * b / a) * (math.log(D * R * a * T / b) + 1.0)


BOUND_ALIASES = {"theorem1": "ftl", "corollary1": "weighted_ftl", "theorem2": "differenced_sc"}
BOUND_KINDS = ("ftl", "weighted_ftl", "ridge", "entropy", "quadratic", "hazan", "differenced_sc", "static_did")


def theoretical_bound(kind: str, N: int, T: int, **params) -> float:
    """Closed-form regret bounds (natural logarithms throughout).

    kinds:
      ftl             16N(ln(sqrt(N) T) + 1), FTL on the simplex
      weighted_ftl    16C^3 N(ln(sqrt(N) T / C^2) + 1), weighted regret of
                      weighted FTL when 1/(CT) <= pi_t <= C/T (param C)
      ridge           2 sqrt(NT), ridge FTRL
      entropy         3 sqrt(T ln N), entropy FTRL
      quadratic       2 sqrt(2KNT), quadratic-penalty FTRL (param K)
      hazan           (2nb^2/a)(ln(DRaT/b) + 1) with params n, R, a, b, D
      differenced_sc  hazan with n=N, R=sqrt(N), a=1, b=4, D=2
      static_did      2 x hazan with n=N+1, R=sqrt(N+1), a=1, b=4, D=2 sqrt(5),
                      intercept SC against a fixed intercept and weights

    The FTRL bounds are stated for the halved squared loss and for the
    absolute loss.  ``theorem1``, ``corollary1`` and ``theorem2`` are accepted
    as aliases of ``ftl``, ``weighted_ftl`` and ``differenced_sc``.
    """
    kind = BOUND_ALIASES.get(kind, kind)
    if N < 1 or T < 1:
        raise ValueError("N and T must be positive")
    if kind == "ftl":
        return 16.0 * N * (math.log(math.sqrt(N) * T) + 1.0)
    if kind == "weighted_ftl":
        C = float(params.get("C", 1.0))
        if C < 1:
            raise ValueError("C must be at least 1")
        return 16.0 * C**3 * N * (math.log(math.sqrt(N) * T / C**2) + 1.0)
    if kind == "ridge":
        return 2.0 * math.sqrt(N * T)
    if kind == "entropy":
        if N < 2:
            raise ValueError("entropy bound needs N >= 2")
        return 3.0 * math.sqrt(T * math.log(N))
    if kind == "quadratic":
        K = params.get("K")
        if K is None or K <= 0:
            raise ValueError("quadratic bound needs K > 0")
        return 2.0 * math.sqrt(2.0 * K * N * T)
    if kind == "hazan":
        try:
            return hazan_bound(int(params.get("n", N)), T, params["R"], params["a"], params["b"], params["D"])
        except KeyError as exc:
            raise ValueError(f"hazan bound needs parameter {exc.args[0]}") from None
    if kind == "differenced_sc":
        return hazan_bound(N, T, math.sqrt(N), 1.0, 4.0, 2.0)
    if kind == "static_did":
        return 2.0 * hazan_bound(N + 1, T, math.sqrt(N + 1), 1.0, 4.0, 2.0 * math.sqrt(5.0))
    raise ValueError(f"unknown bound kind {kind!r}")


# -- regret ----------------------------------------------------------------------


@dataclass
class RegretReport:
    regret: float
    oracle_weights: Weights
    oracle_loss: float
    total_loss: float
    T: int
    theoretical_bound: float | None = None
    risk: float | None = None
    weighted_regret: float | None = None
    adaptive_regret: float | None = None
    descriptor: str = ""
    panel_hash: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def avg_regret(self) -> float:
        return self.regret / self.T

    @property
    def within_bound(self) -> bool | None:
        if self.theoretical_bound is None:
            return None
        return self.regret <= self.theoretical_bound + 1e-6

    def to_dict(self) -> dict:
        out = {
            "strategy": self.descriptor,
            "panel_hash": self.panel_hash,
            "T": self.T,
            "regret": self.regret,
            "oracle_loss": self.oracle_loss,
            "total_loss": self.total_loss,
            "bound": self.theoretical_bound,
            "avg_regret": self.avg_regret,
            "risk": self.risk,
            "adaptive_regret": self.adaptive_regret,
            "weighted_regret": self.weighted_regret,
            "oracle_weights": self.oracle_weights.theta.tolist(),
        }
        if self.oracle_weights.intercept is not None:
            out["oracle_intercept"] = self.oracle_weights.intercept
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def compute_regret(
    traj: Trajectory,
    oracle: Oracle,
    pi=None,
    bound: float | None = None,
    loss: str = "squared",
) -> RegretReport:
    """Regret of the trajectory against an oracle, plus the timing risk.

    ``risk`` is the expected loss when the treatment period is drawn from
    ``pi`` (uniform by default).
    """
    losses = traj.losses if loss == "squared" else traj.loss_values(loss)
    total = float(losses.sum())
    pi = np.full(traj.T, 1.0 / traj.T) if pi is None else np.asarray(pi, dtype=np.float64)
    if pi.shape != (traj.T,):
        raise ValueError("pi must have one entry per period")
    return RegretReport(
        regret=total - oracle.loss,
        oracle_weights=oracle.weights,
        oracle_loss=oracle.loss,
        total_loss=total,
        T=traj.T,
        theoretical_bound=bound,
        risk=float(pi @ losses),
        descriptor=traj.descriptor,
        panel_hash=traj.panel_hash,
    )


def weighted_regret(traj: Trajectory, panel: Panel, pi) -> tuple[float, Oracle]:
    """T times the gap between pi-expected loss and the best pi-weighted fixed loss."""
    pi = np.asarray(pi, dtype=np.float64)
    if pi.shape != (panel.T,) or np.any(pi < 0):
        raise ValueError("pi must be a nonnegative vector with one entry per period")
    oracle = oracle_fixed_weights(panel, "simplex", sample_weights=pi)
    return panel.T * (float(pi @ traj.losses) - oracle.loss), oracle


def expected_loss_bound_check(traj: Trajectory, pi, C: float, oracle: Oracle) -> tuple[float, float, bool]:
    """Check E_pi loss <= C (oracle average loss + regret / T) for pi_t <= C/T."""
    pi = np.asarray(pi, dtype=np.float64)
    T = traj.T
    if pi.shape != (T,):
        raise ValueError("pi must have one entry per period")
    if C < 1:
        raise ValueError("C must be at least 1")
    over = np.flatnonzero(pi > C / T + 1e-12)
    if over.size:
        t = int(over[0]) + 1
        raise ValueError(f"pi_{t} = {pi[over[0]]} exceeds C/T = {C / T}")
    lhs = float(pi @ traj.losses)
    regret = traj.total_loss - oracle.loss
    rhs = C * (oracle.loss / T + regret / T)
    return lhs, rhs, lhs <= rhs + 1e-9


# -- adaptive regret ----------------------------------------------------------------


@dataclass(frozen=True)
class AdaptiveRegret:
    value: float
    interval: tuple[int, int]
    stride: int
    exact: bool


def _grid(T: int, stride: int) -> np.ndarray:
    pts = list(range(0, T, stride))
    return np.array(pts, dtype=np.int64)


def interval_oracle_losses(panel: Panel, cls: str = "simplex", stride: int | None = None):
    """Best fixed loss on every interval [r, s] (0-based, inclusive).

    Returns ``(starts, ends, losses)`` where ``losses[i, j]`` is the oracle loss
    on ``[starts[i], ends[j]]`` (NaN when ``ends[j] < starts[i]``).  Intervals
    are all pairs when ``T <= 256``; above that, starts are every ``stride``-th
    period and ends are the last period of each stride block.
    """
    if cls not in ("simplex", "twfe", "first_diff"):
        raise ValueError(f"adaptive regret supports simplex-type classes, not {cls!r}")
    y0, Y = _class_data(panel, cls)
    T, N = Y.shape
    if stride is None:
        stride = 1 if T <= EXACT_SCAN_MAX_T else math.ceil(T / EXACT_SCAN_MAX_T)
    starts = _grid(T, stride)
    ends = np.unique(np.concatenate([starts[1:] - 1, [T - 1]])) if stride > 1 else np.arange(T)
    ends = ends.astype(np.int64)
    out, ok = _kernels.interval_losses(
        np.ascontiguousarray(Y), np.ascontiguousarray(y0), starts, ends,
        simplex.TIE_EPS, 50 * N + 200, 1e-13,
    )
    if not ok:
        raise simplex.SolverError("interval oracle solve did not converge")
    return starts, ends, out


def adaptive_regret(
    traj: Trajectory, panel: Panel, cls: str = "simplex", stride: int | None = None, oracle_losses=None
) -> AdaptiveRegret:
    """Worst regret over contiguous subintervals of the horizon.

    ``oracle_losses`` lets several trajectories on one panel share the
    interval oracles from :func:`interval_oracle_losses`.
    """
    if oracle_losses is None:
        oracle_losses = interval_oracle_losses(panel, cls, stride)
    starts, ends, best = oracle_losses
    csum = np.concatenate([[0.0], np.cumsum(traj.losses)])
    strat = csum[ends + 1][None, :] - csum[starts][:, None]
    gap = np.where(np.isnan(best), -np.inf, strat - np.nan_to_num(best))
    i, j = np.unravel_index(int(np.argmax(gap)), gap.shape)
    stride_used = 1 if starts.size < 2 else int(starts[1] - starts[0])
    return AdaptiveRegret(
        float(gap[i, j]), (int(starts[i]) + 1, int(ends[j]) + 1), stride_used, stride_used == 1
    )


# -- curves ---------------------------------------------------------------------------


def write_curves(traj: Trajectory, panel: Panel, oracle: Oracle, path) -> None:
    """CSV of cumulative strategy and oracle losses by period."""
    y0, Y = _class_data(panel, oracle.cls)
    oracle_pred = Y @ oracle.weights.theta + (oracle.weights.intercept or 0.0)
    oracle_cum = np.cumsum((y0 - oracle_pred) ** 2)
    strat_cum = np.cumsum(traj.losses)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "strategy_cumloss", "oracle_cumloss"])
    for t in range(traj.T):
        writer.writerow([t + 1, repr(float(strat_cum[t])), repr(float(oracle_cum[t]))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
