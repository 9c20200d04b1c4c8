"""Online prediction strategies behind one predict/update interface.

A strategy is a small mutable object.  For period t the protocol calls
``predict(y_t)`` with the current control outcomes, scores the returned level
prediction against ``y_0t``, then calls ``update(y_0t, y_t)``.  Predictions
never see ``y_0t`` before it is scored.

Strategies are built from a :class:`StrategyConfig`, a JSON-friendly record
used by the CLI and by FLH to spawn its experts.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass

import numpy as np

from synthreg import simplex
from synthreg.panel import Panel
from synthreg.simplex import PenaltySpec, SolveSpec, Weights

__all__ = [
    "KINDS",
    "StrategyConfig",
    "StrategyError",
    "Strategy",
    "FTL",
    "WeightedFTL",
    "FTRL",
    "DifferencedSC",
    "FirstDiffSC",
    "DemeanedSC",
    "FixedWeights",
    "TWFEFixed",
    "FLH",
    "make_strategy",
    "weighted_ftl_weights",
    "ftrl_weights",
    "twfe_predict",
    "twfe_predict_lstsq",
    "flh_step",
    "fixed_adversary_response",
]

KINDS = (
    "ftl",
    "weighted_ftl",
    "ftrl",
    "differenced_sc",
    "demeaned_sc",
    "first_diff_sc",
    "fixed_weights",
    "uniform_did",
    "twfe_fixed_w",
    "flh",
)

FLH_ALPHA = 0.25


class StrategyError(ValueError):
    pass


def _check_weights(w: Weights) -> None:
    try:
        w.check()
    except ValueError as exc:
        raise StrategyError(str(exc)) from None


@dataclass(frozen=True)
class StrategyConfig:
    """Declarative description of a strategy.

    Fields that do not apply to ``kind`` are ignored.  ``eta=None`` selects the
    learning rate that attains the FTRL bound for the run's horizon.
    """

    kind: str = "ftl"
    theta: tuple | None = None
    intercept: float | None = None
    pi: tuple | None = None
    penalty: str = "ridge"
    eta: float | None = None
    loss: str = "squared"
    H: tuple | None = None
    X: tuple | None = None
    x: tuple | None = None
    base: "StrategyConfig | None" = None
    alpha: float = FLH_ALPHA
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise StrategyError(f"unknown strategy kind {self.kind!r}; expected one of {KINDS}")
        if self.loss not in ("squared", "absolute"):
            raise StrategyError(f"unknown loss {self.loss!r}")
        for name in ("theta", "pi", "x"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(float(v) for v in np.ravel(value)))
        for name in ("H", "X"):
            value = getattr(self, name)
            if value is not None:
                arr = np.atleast_2d(np.asarray(value, dtype=np.float64))
                object.__setattr__(self, name, tuple(tuple(r) for r in arr))
        if self.kind in ("fixed_weights", "twfe_fixed_w") and self.theta is None:
            raise StrategyError(f"{self.kind} needs theta")
        if self.kind == "weighted_ftl" and self.pi is None:
            raise StrategyError("weighted_ftl needs pi")
        if self.kind == "ftrl" and self.penalty not in ("ridge", "entropy", "quadratic"):
            raise StrategyError(f"unknown FTRL penalty {self.penalty!r}")
        if self.eta is not None and not self.eta > 0:
            raise StrategyError(f"eta must be positive, got {self.eta}")
        if self.kind == "flh":
            base = self.base
            if base is None:
                base = StrategyConfig("ftl")
            elif isinstance(base, dict):
                base = StrategyConfig.from_dict(base)
            if base.kind == "flh":
                raise StrategyError("FLH cannot wrap FLH")
            object.__setattr__(self, "base", base)
        if self.pi is not None and any(p < 0 for p in self.pi):
            raise StrategyError("pi must be nonnegative")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "ftrl":
            return f"ftrl-{self.penalty}-{self.loss}"
        if self.kind == "flh":
            return f"flh({self.base.label})"
        return self.kind

    def to_dict(self) -> dict:
        out = {}
        for key, value in asdict(self).items():
            if value is None:
                continue
            if isinstance(value, tuple):
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            out[key] = value
        if self.base is not None:
            out["base"] = self.base.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "StrategyConfig":
        if not isinstance(data, dict):
            raise StrategyError(f"strategy config must be an object, got {type(data).__name__}")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise StrategyError(f"unknown strategy fields: {sorted(unknown)}")
        data = dict(data)
        if isinstance(data.get("base"), dict):
            data["base"] = cls.from_dict(data["base"])
        return cls(**data)


# -- base class ------------------------------------------------------------------


class Strategy:
    """Online strategy over n control units.

    ``t`` counts the periods already observed; the next call to ``predict``
    is for period ``t + 1`` (1-based).
    """

    kind = "base"

    def __init__(self, n: int):
        if n < 1:
            raise StrategyError("need at least one control unit")
        self.n = n
        self.t = 0

    def _controls(self, controls) -> np.ndarray:
        y = np.asarray(controls, dtype=np.float64).reshape(-1)
        if y.size != self.n:
            raise StrategyError(f"expected {self.n} controls, got {y.size}")
        return y

    def predict(self, controls) -> tuple[Weights, float]:
        return self._predict(self._controls(controls))

    def update(self, y0: float, controls) -> None:
        self._update(float(y0), self._controls(controls))
        self.t += 1

    def _predict(self, y):
        raise NotImplementedError

    def _update(self, y0, y):
        raise NotImplementedError

    def clone(self) -> "Strategy":
        return copy.deepcopy(self)


class _Moments:
    """Running weighted sufficient statistics of a least-squares history."""

    __slots__ = ("gram", "cross", "count")

    def __init__(self, n: int):
        self.gram = np.zeros((n, n))
        self.cross = np.zeros(n)
        self.count = 0

    def add(self, y0: float, y: np.ndarray, weight: float = 1.0) -> None:
        wy = weight * y
        self.gram += np.outer(wy, y)
        self.cross += y0 * wy
        self.count += 1


class FTL(Strategy):
    """Synthetic control: least squares over the simplex on all past periods."""

    kind = "ftl"

    def __init__(self, n: int, tol: float = simplex.DEFAULT_TOL):
        super().__init__(n)
        self.moments = _Moments(n)
        self.tol = tol
        self._weights = Weights.uniform(n)
        self._stale = False

    def weights(self) -> Weights:
        if self._stale:
            if self.n == 1:
                theta = np.ones(1)
            else:
                theta = simplex.solve_moments(
                    self.moments.gram, self.moments.cross, None, self._weights.theta, self.tol
                )
            self._weights = Weights(theta)
            self._stale = False
        return self._weights

    def _predict(self, y):
        w = self.weights()
        return w, float(w.theta @ y)

    def _update(self, y0, y):
        self.moments.add(y0, y)
        self._stale = True


class WeightedFTL(FTL):
    """FTL with per-period sample weights ``pi_t`` known in advance."""

    kind = "weighted_ftl"

    def __init__(self, n: int, pi, tol: float = simplex.DEFAULT_TOL):
        super().__init__(n, tol)
        self.pi = np.asarray(pi, dtype=np.float64).reshape(-1)
        if np.any(self.pi < 0) or not np.all(np.isfinite(self.pi)):
            raise StrategyError("pi must be finite and nonnegative")

    def _update(self, y0, y):
        if self.t >= self.pi.size:
            raise StrategyError(f"pi has {self.pi.size} entries, period {self.t + 1} needs one more")
        self.moments.add(y0, y, float(self.pi[self.t]))
        self._stale = True


class FTRL(Strategy):
    """Follow the regularized leader with a strongly convex penalty.

    The squared loss is ``0.5 (y0 - theta'y)^2`` inside the objective (the
    convention of the FTRL bounds); the absolute loss is ``|y0 - theta'y|``.
    """

    kind = "ftrl"

    def __init__(self, n: int, penalty: PenaltySpec, loss: str = "squared"):
        super().__init__(n)
        if penalty.kind == "none":
            raise StrategyError("FTRL needs a penalty")
        if penalty.kind == "entropy" and n < 2:
            penalty = PenaltySpec("ridge", penalty.eta)
        self.penalty = penalty
        self.loss = loss
        self.moments = _Moments(n)
        self.rows: list[np.ndarray] = []
        self.targets: list[float] = []
        self._dual = np.zeros(0)
        self._weights = None
        self._last = None

    def weights(self) -> Weights:
        if self._weights is not None:
            return self._weights
        if self.n == 1:
            theta = np.ones(1)
        elif self.loss == "squared":
            theta = simplex.solve_moments(
                self.moments.gram, self.moments.cross, self.penalty, self._last
            )
        else:
            spec = SolveSpec(
                np.asarray(self.targets),
                np.asarray(self.rows).reshape(len(self.rows), self.n),
                penalty=self.penalty,
                loss="absolute",
            )
            dual = np.concatenate([self._dual, np.zeros(len(self.rows) - self._dual.size)])
            theta, self._dual = simplex._absolute_dual(spec, dual if self._dual.size else None)
        self._weights = Weights(theta)
        self._last = theta
        return self._weights

    def _predict(self, y):
        w = self.weights()
        return w, float(w.theta @ y)

    def _update(self, y0, y):
        if self.loss == "squared":
            self.moments.add(y0, y)
        else:
            self.rows.append(y.copy())
            self.targets.append(y0)
        self._weights = None


class _TransformedFTL(Strategy):
    """FTL on a causally transformed panel, mapped back to levels.

    Subclasses define the transformed regressors/target for the current period
    and the level offset; because ``level residual = transformed residual``,
    level regret equals FTL regret on the transformed data.
    """

    def __init__(self, n: int):
        super().__init__(n)
        self.inner = FTL(n)

    def _offset_and_value(self, y):
        raise NotImplementedError

    def _observe(self, y0, y):
        raise NotImplementedError

    def transformed(self, y) -> tuple[float, np.ndarray]:
        """Offset and transformed controls for the coming period."""
        return self._offset_and_value(y)

    def _predict(self, y):
        offset, value = self._offset_and_value(y)
        w = self.inner.weights()
        return w, offset + float(w.theta @ value)

    def _update(self, y0, y):
        offset, value = self._offset_and_value(y)
        self.inner.update(y0 - offset, value)
        self._observe(y0, y)


class DifferencedSC(_TransformedFTL):
    """Synthetic control on outcomes differenced against their historical means.

    Period 1 uses levels.  The prediction is the treated unit's historical
    mean plus the fitted weights applied to the differenced controls, which is
    the weighted two-way fixed-effects forecast at those weights.
    """

    kind = "differenced_sc"

    def __init__(self, n: int):
        super().__init__(n)
        self.sum0 = 0.0
        self.sums = np.zeros(n)

    def _offset_and_value(self, y):
        if self.t == 0:
            return 0.0, y
        return self.sum0 / self.t, y - self.sums / self.t

    def _observe(self, y0, y):
        self.sum0 += y0
        self.sums += y


class FirstDiffSC(_TransformedFTL):
    """Two-period DID with fitted weights: ``y_0,t-1 + theta'(y_t - y_t-1)``."""

    kind = "first_diff_sc"

    def __init__(self, n: int):
        super().__init__(n)
        self.prev0 = 0.0
        self.prev = None

    def _offset_and_value(self, y):
        if self.t == 0:
            return 0.0, y
        return self.prev0, y - self.prev

    def _observe(self, y0, y):
        self.prev0 = y0
        self.prev = y.copy()


class DemeanedSC(Strategy):
    """Synthetic control with a bounded intercept in [-2, 2]."""

    kind = "demeaned_sc"

    def __init__(self, n: int):
        super().__init__(n)
        self.rows: list[np.ndarray] = []
        self.targets: list[float] = []
        self._weights = Weights.uniform(n, 0.0)
        self._stale = False

    def weights(self) -> Weights:
        if self._stale:
            spec = SolveSpec(
                np.asarray(self.targets),
                np.asarray(self.rows).reshape(len(self.rows), self.n),
                warm_start=Weights(self._weights.theta),
            )
            self._weights = simplex.solve_affine_ls(spec)
            self._stale = False
        return self._weights

    def _predict(self, y):
        w = self.weights()
        return w, w.predict(y)

    def _update(self, y0, y):
        self.rows.append(y.copy())
        self.targets.append(y0)
        self._stale = True


class FixedWeights(Strategy):
    """The same weights (and optional intercept) every period."""

    kind = "fixed_weights"

    def __init__(self, n: int, theta, intercept: float | None = None):
        super().__init__(n)
        w = Weights(theta, intercept)
        if w.n != n:
            raise StrategyError(f"theta has {w.n} entries, panel has {n} controls")
        _check_weights(w)
        self.w = w

    def _predict(self, y):
        return self.w, self.w.predict(y)

    def _update(self, y0, y):
        pass


class TWFEFixed(Strategy):
    """Weighted two-way fixed-effects forecast with fixed unit weights."""

    kind = "twfe_fixed_w"

    def __init__(self, n: int, theta):
        super().__init__(n)
        w = Weights(theta)
        if w.n != n:
            raise StrategyError(f"theta has {w.n} entries, panel has {n} controls")
        _check_weights(w)
        self.w = w
        self.sum0 = 0.0
        self.sums = np.zeros(n)

    def _predict(self, y):
        if self.t == 0:
            return self.w, float(self.w.theta @ y)
        return self.w, self.sum0 / self.t + float(self.w.theta @ (y - self.sums / self.t))

    def _update(self, y0, y):
        self.sum0 += y0
        self.sums += y


class FLH(Strategy):
    """Follow the leading history over copies of a base strategy.

    Expert j starts at period j and sees data from periods j onward.  The
    played weights are the probability-weighted average of the experts'
    weights; probabilities are reweighted by ``exp(-alpha * loss)`` with the
    halved squared loss, then a new expert enters with mass ``1/(t+1)``.
    """

    kind = "flh"

    def __init__(self, n: int, factory, alpha: float = FLH_ALPHA):
        super().__init__(n)
        if not alpha >= 0:
            raise StrategyError("alpha must be nonnegative")
        self.factory = factory
        self.alpha = alpha
        self.experts: list[Strategy] = [factory()]
        self.log_probs = np.zeros(1)
        self._pending = None

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def _expert_outputs(self, y):
        outs = [e.predict(y) for e in self.experts]
        thetas = np.array([w.theta for w, _ in outs])
        preds = np.array([p for _, p in outs])
        return thetas, preds

    def _predict(self, y):
        thetas, preds = self._expert_outputs(y)
        p = self.probs
        theta = p @ thetas
        theta = theta / theta.sum()
        self._pending = (y.copy(), preds)
        return Weights(theta), float(p @ preds)

    def _update(self, y0, y):
        if self._pending is not None and np.array_equal(self._pending[0], y):
            preds = self._pending[1]
        else:
            preds = self._expert_outputs(y)[1]
        self._pending = None
        losses = 0.5 * (y0 - preds) ** 2
        self.log_probs = flh_step(self.log_probs, losses, self.alpha, log_space=True)
        for e in self.experts:
            e.update(y0, y)
        self.experts.append(self.factory())


def flh_step(probs, losses, alpha: float = FLH_ALPHA, log_space: bool = False) -> np.ndarray:
    """One probability update of FLH after period t = len(probs).

    Reweights by ``exp(-alpha * loss)``, normalizes, gives the newborn expert
    mass ``1/(t+1)`` and scales the others by ``1 - 1/(t+1)``.  With
    ``log_space`` the probabilities are passed and returned as logs, which
    keeps the update stable when the losses are large.
    """
    probs = np.asarray(probs, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if probs.shape != losses.shape:
        raise StrategyError("one loss per expert is required")
    t = probs.size
    if log_space:
        logp = probs
    else:
        with np.errstate(divide="ignore"):
            logp = np.log(probs)
    logw = logp - alpha * losses
    top = np.max(logw)
    logw = logw - (top + math.log(np.sum(np.exp(logw - top))))
    out = np.empty(t + 1)
    out[:t] = logw + math.log1p(-1.0 / (t + 1))
    out[t] = -math.log(t + 1)
    return out if log_space else np.exp(out)


# -- construction ------------------------------------------------------------------


def _penalty_for(config: StrategyConfig, n: int, horizon: int | None) -> PenaltySpec:
    kind = config.penalty
    if kind == "quadratic":
        if config.H is None or config.X is None:
            raise StrategyError("quadratic penalty needs H and X")
        pen = PenaltySpec.quadratic(config.H, config.X, config.x)
    else:
        pen = PenaltySpec(kind if n > 1 or kind != "entropy" else "ridge")
    eta = config.eta
    if eta is None:
        if horizon is None:
            raise StrategyError("default eta needs the horizon T")
        K = None
        if kind == "quadratic":
            K = simplex.penalty_value_and_range(pen, n)[1]
        eta = simplex.default_eta(pen.kind, max(n, 2), horizon, K)
    return PenaltySpec(pen.kind, eta, pen.H, pen.X, pen.x)


def make_strategy(config: StrategyConfig | dict, n: int, horizon: int | None = None) -> Strategy:
    """Build a fresh strategy for ``n`` controls; ``horizon`` feeds default rates."""
    if isinstance(config, dict):
        config = StrategyConfig.from_dict(config)
    kind = config.kind
    if kind == "ftl":
        return FTL(n)
    if kind == "weighted_ftl":
        return WeightedFTL(n, config.pi)
    if kind == "ftrl":
        return FTRL(n, _penalty_for(config, n, horizon), config.loss)
    if kind == "differenced_sc":
        return DifferencedSC(n)
    if kind == "first_diff_sc":
        return FirstDiffSC(n)
    if kind == "demeaned_sc":
        return DemeanedSC(n)
    if kind == "fixed_weights":
        return FixedWeights(n, config.theta, config.intercept)
    if kind == "uniform_did":
        return TWFEFixed(n, np.full(n, 1.0 / n))
    if kind == "twfe_fixed_w":
        return TWFEFixed(n, config.theta)
    if kind == "flh":
        base = config.base
        make_strategy(base, n, horizon)  # validate once up front
        return FLH(n, lambda: make_strategy(base, n, horizon), config.alpha)
    raise StrategyError(f"unknown strategy kind {kind!r}")


# -- functional helpers ----------------------------------------------------------


def _history(history) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(history, Panel):
        return history.treated, history.controls
    y0, Y = history
    return np.asarray(y0, dtype=np.float64).reshape(-1), np.atleast_2d(np.asarray(Y, dtype=np.float64))


def weighted_ftl_weights(history, pi) -> Weights:
    """Argmin over the simplex of ``sum_t pi_t (y_0t - theta'y_t)^2`` on the history."""
    y0, Y = _history(history)
    pi = np.asarray(pi, dtype=np.float64).reshape(-1)
    if np.any(pi < 0):
        raise StrategyError("pi must be nonnegative")
    if pi.size < y0.size:
        raise StrategyError("pi shorter than the history")
    return simplex.solve_constrained_ls(SolveSpec(y0, Y, sample_weights=pi[: y0.size]))


def ftrl_weights(history, penalty: PenaltySpec, loss: str = "squared") -> Weights:
    """FTRL weights on a history (halved squared loss or absolute loss)."""
    y0, Y = _history(history)
    if not penalty.eta > 0:
        raise StrategyError("eta must be positive")
    return simplex.solve_constrained_ls(SolveSpec(y0, Y, penalty=penalty, loss=loss))


def twfe_predict(history, current_controls, w) -> float:
    """Forecast of the weighted two-way fixed-effects regression.

    Closed form: historical mean of the treated unit plus the weighted
    deviation of current controls from their historical means.  With no
    history the forecast is ``w'y_1``.
    """
    y0, Y = _history(history)
    w = w if isinstance(w, Weights) else Weights(w)
    _check_weights(w)
    y = np.asarray(current_controls, dtype=np.float64).reshape(-1)
    if y0.size == 0:
        return float(w.theta @ y)
    return float(y0.mean() + w.theta @ (y - Y.mean(axis=0)))


def twfe_predict_lstsq(history, current_controls, w) -> float:
    """The same forecast by solving the weighted fixed-effects regression directly.

    Units 0..N observed over periods 1..S, with unit 0 missing at S.  Regress
    ``y_it`` on unit and period dummies with weights 1 for unit 0 and ``w_i``
    for controls, then predict ``mu_0 + alpha_S``.
    """
    y0, Y = _history(history)
    w = w if isinstance(w, Weights) else Weights(w)
    _check_weights(w)
    y = np.asarray(current_controls, dtype=np.float64).reshape(-1)
    s_prev, n = Y.shape
    if s_prev == 0:
        return float(w.theta @ y)
    S = s_prev + 1
    # observations: unit 0 in periods 1..S-1, then controls in periods 1..S
    unit = np.concatenate([np.zeros(s_prev, dtype=int), np.repeat(np.arange(1, n + 1), S)])
    period = np.concatenate([np.arange(s_prev), np.tile(np.arange(S), n)])
    targets = np.concatenate([y0, np.vstack([Y, y]).T.reshape(-1)])
    weights = np.concatenate([np.ones(s_prev), np.repeat(w.theta, S)])
    # unit dummies for units 0..N, period dummies for periods 2..S
    X = np.zeros((targets.size, n + S))
    X[np.arange(targets.size), unit] = 1.0
    later = period > 0
    X[np.flatnonzero(later), n + period[later]] = 1.0
    sw = np.sqrt(weights)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], targets * sw, rcond=None)
    return float(coef[0] + coef[n + S - 1])


def fixed_adversary_response(theta, eps: float, T: int) -> Panel:
    """Panel on which the fixed weights ``theta`` lose at least ``eps`` every period.

    The alternative is the vertex farthest from ``theta`` in l1; the controls
    are the sign pattern of their difference, held constant over time, and the
    treated unit follows the alternative exactly.
    """
    w = theta if isinstance(theta, Weights) else Weights(theta)
    _check_weights(w)
    n = w.n
    if n < 2:
        raise StrategyError("a single control leaves no alternative weights")
    if not 0 < eps < 1e-4:
        raise StrategyError("eps must lie in (0, 1e-4)")
    if T < 1:
        raise StrategyError("T must be positive")
    alt = np.zeros(n)
    alt[int(np.argmin(w.theta))] = 1.0
    if np.abs(alt - w.theta).sum() < math.sqrt(eps):
        raise StrategyError("no alternative weights far enough from theta")
    y = np.sign(alt - w.theta)
    controls = np.tile(y, (T, 1))
    treated = np.full(T, float(alt @ y))
    return Panel(treated, controls, 1.0)
