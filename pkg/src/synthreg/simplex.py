"""Simplex projection and the constrained least-squares solvers.

Every strategy reduces to one of three problems over the simplex
``{theta >= 0, sum(theta) = 1}``:

* a convex quadratic ``0.5 theta'Q theta - c'theta`` (FTL, weighted FTL,
  ridge/quadratic FTRL), solved exactly by a primal active-set method;
* a quadratic plus a scaled entropy (entropy FTRL), solved by Newton's method
  on the affine hull;
* a weighted absolute loss plus a strongly convex penalty, solved through its
  smooth box-constrained dual.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import logsumexp, softmax

from synthreg import _kernels

__all__ = [
    "Weights",
    "PenaltySpec",
    "SolveSpec",
    "SolverError",
    "InvalidInputError",
    "InvalidPenaltyError",
    "project_simplex",
    "projected_gradient_norm",
    "solve_simplex_qp",
    "solve_moments",
    "solve_constrained_ls",
    "solve_affine_ls",
    "solve_absolute_oracle",
    "penalty_value_and_range",
    "default_eta",
    "TIE_EPS",
    "DEFAULT_TOL",
]

TIE_EPS = 1e-10
DEFAULT_TOL = 1e-10
ABSOLUTE_TOL = 1e-6
INTERCEPT_BOX = 2.0
ENTROPY_FLOOR = 1e-12


class InvalidInputError(ValueError):
    pass


class InvalidPenaltyError(ValueError):
    pass


class SolverError(RuntimeError):
    """Raised when a solve does not certify optimality within its budget."""

    def __init__(self, message, theta=None, kkt_residual=float("nan")):
        super().__init__(f"{message} (KKT residual {kkt_residual:.3e})")
        self.theta = theta
        self.kkt_residual = kkt_residual


@dataclass(frozen=True, eq=False)
class Weights:
    theta: np.ndarray
    intercept: float | None = None

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if self.intercept is not None:
            object.__setattr__(self, "intercept", float(self.intercept))

    @property
    def n(self) -> int:
        return self.theta.size

    def predict(self, controls) -> float:
        value = float(self.theta @ np.asarray(controls, dtype=np.float64))
        if self.intercept is not None:
            value += self.intercept
        return value

    def check(self, atol: float = 1e-9) -> None:
        """Raise ``ValueError`` unless the weights lie in the feasible set."""
        if np.any(self.theta < -1e-12) or abs(self.theta.sum() - 1.0) > atol:
            raise ValueError(f"weights not on the simplex: {self.theta}")
        if self.intercept is not None and abs(self.intercept) > INTERCEPT_BOX + 1e-12:
            raise ValueError(f"intercept {self.intercept} outside [-2, 2]")

    @classmethod
    def uniform(cls, n: int, intercept: float | None = None) -> "Weights":
        return cls(np.full(n, 1.0 / n), intercept)


@dataclass(frozen=True, eq=False)
class PenaltySpec:
    """Convex penalty ``Phi`` scaled by ``1/eta`` in the FTRL objective.

    ``quadratic`` is ``0.5 (x - X theta)' H (x - X theta)``; ``ridge`` is
    ``0.5 ||theta||^2``; ``entropy`` is ``sum theta log theta + log N``.
    """

    kind: str = "none"
    eta: float = 1.0
    H: np.ndarray | None = field(default=None, repr=False)
    X: np.ndarray | None = field(default=None, repr=False)
    x: np.ndarray | None = field(default=None, repr=False)

    KINDS = ("none", "ridge", "entropy", "quadratic")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidPenaltyError(f"unknown penalty kind {self.kind!r}")
        if not (self.eta > 0 and math.isfinite(self.eta) or self.eta == math.inf):
            raise InvalidPenaltyError(f"eta must be positive, got {self.eta}")
        if self.kind != "quadratic":
            return
        if self.H is None or self.X is None:
            raise InvalidPenaltyError("quadratic penalty needs H and X")
        H = np.atleast_2d(np.asarray(self.H, dtype=np.float64))
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        x = np.zeros(X.shape[0]) if self.x is None else np.asarray(self.x, dtype=np.float64)
        if H.shape != (X.shape[0], X.shape[0]) or x.shape != (X.shape[0],):
            raise InvalidPenaltyError("H, X, x shapes are not conformable")
        if not np.allclose(H, H.T, atol=1e-12):
            raise InvalidPenaltyError("H must be symmetric")
        if np.linalg.eigvalsh(H).min() < -1e-12:
            raise InvalidPenaltyError("H must be positive semidefinite")
        hess = X.T @ H @ X
        if np.linalg.eigvalsh(hess).min() <= 1e-12:
            raise InvalidPenaltyError("X'HX must be positive definite")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "x", x)

    @classmethod
    def quadratic(cls, H, X, x=None, eta: float = 1.0, normalize: bool = True) -> "PenaltySpec":
        """Quadratic penalty, rescaling H so the Hessian X'HX has minimum eigenvalue 1."""
        H = np.atleast_2d(np.asarray(H, dtype=np.float64))
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if normalize:
            lam = np.linalg.eigvalsh(X.T @ H @ X).min()
            if lam <= 1e-12:
                raise InvalidPenaltyError("X'HX must be positive definite")
            H = H / lam
        return cls("quadratic", eta, H, X, x)

    @property
    def inv_eta(self) -> float:
        return 0.0 if self.eta == math.inf else 1.0 / self.eta

    def value(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        if self.kind == "none":
            return 0.0
        if self.kind == "ridge":
            return 0.5 * float(theta @ theta)
        if self.kind == "entropy":
            pos = theta[theta > 0]
            return float(pos @ np.log(pos)) + math.log(theta.size)
        r = self.x - self.X @ theta
        return 0.5 * float(r @ self.H @ r)

    def quadratic_terms(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        """Hessian and linear coefficient of Phi when it is quadratic: Phi = 0.5 t'A t - a't + const."""
        if self.kind == "ridge":
            return np.eye(n), np.zeros(n)
        if self.kind == "quadratic":
            return self.X.T @ self.H @ self.X, self.X.T @ self.H @ self.x
        return np.zeros((n, n)), np.zeros(n)


@dataclass
class SolveSpec:
    """Inputs of one constrained least-squares solve.

    ``regressors`` has one row per past period (shape (S, N)); ``targets`` has
    length S.  With ``loss="squared"`` the data term is
    ``sum_s w_s (target_s - theta'y_s)^2`` when ``penalty`` is absent and
    ``sum_s 0.5 w_s (...)^2`` when a penalty is present, matching the FTRL
    convention; ``loss="absolute"`` uses ``sum_s w_s |target_s - theta'y_s|``.
    """

    targets: np.ndarray
    regressors: np.ndarray
    sample_weights: np.ndarray | None = None
    penalty: PenaltySpec | None = None
    loss: str = "squared"
    tolerance: float = DEFAULT_TOL
    max_iters: int | None = None
    warm_start: Weights | None = None

    def __post_init__(self):
        self.regressors = np.atleast_2d(np.asarray(self.regressors, dtype=np.float64))
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if self.targets.size == 0:
            self.regressors = self.regressors.reshape(0, self.regressors.shape[-1])
        if self.regressors.shape[0] != self.targets.size:
            raise InvalidInputError(
                f"{self.targets.size} targets but {self.regressors.shape[0]} regressor rows"
            )
        if self.sample_weights is not None:
            w = np.asarray(self.sample_weights, dtype=np.float64).reshape(-1)
            if w.size != self.targets.size:
                raise InvalidInputError("sample_weights length differs from targets")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise InvalidInputError("sample_weights must be finite and nonnegative")
            self.sample_weights = w
        if not self.tolerance > 0:
            raise InvalidInputError("tolerance must be positive")
        if self.loss not in ("squared", "absolute"):
            raise InvalidInputError(f"unknown loss {self.loss!r}")

    @property
    def n(self) -> int:
        return self.regressors.shape[1]

    def weights_or_ones(self) -> np.ndarray:
        if self.sample_weights is None:
            return np.ones(self.targets.size)
        return self.sample_weights


# -- projection ----------------------------------------------------------------


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise InvalidInputError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("projection input must be finite")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / ind > 0)[-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def projected_gradient_norm(theta, grad) -> float:
    """KKT residual ``||theta - P(theta - grad)||`` for the simplex."""
    theta = np.asarray(theta, dtype=np.float64)
    return float(np.linalg.norm(theta - project_simplex(theta - grad)))


# -- quadratic objectives --------------------------------------------------------


_EMPTY = np.empty(0)


def _start_array(start) -> np.ndarray:
    if start is None:
        return _EMPTY
    if isinstance(start, Weights):
        return start.theta
    return np.asarray(start, dtype=np.float64).reshape(-1)


def solve_simplex_qp(Q, c, start=None, tol: float = DEFAULT_TOL, max_iters: int | None = None):
    """Minimize ``0.5 theta'Q theta - c'theta`` over the simplex.

    Primal active-set method, exact up to rounding.  Q must be symmetric
    positive semidefinite and nonsingular on the faces visited (callers add a
    small ridge).  Returns ``(theta, kkt_residual)``.
    """
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    n = c.size
    if n == 1:
        return np.ones(1), 0.0
    if max_iters is None:
        max_iters = 50 * n + 200
    theta, kkt, converged, scale = _kernels.active_set_qp(Q, c, _start_array(start), max_iters, 1e-13)
    if not converged or not kkt <= tol * scale:
        raise SolverError("active-set QP did not converge", theta, kkt)
    return theta, kkt


def _entropy_newton(Q, c, inv_eta, start=None, tol=DEFAULT_TOL, max_iters=None):
    """Minimize ``0.5 t'Qt - c't + inv_eta * sum t log t`` over the simplex."""
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    n = c.size
    if n == 1:
        return np.ones(1), 0.0
    theta, kkt = _kernels.entropy_newton(
        Q, c, float(inv_eta), _start_array(start), 500 if max_iters is None else max_iters, tol
    )
    scale = _kernels.problem_scale(Q, c) + inv_eta
    # interior optimum: the gradient of the entropy term limits attainable accuracy
    if not kkt <= max(tol, 1e-9) * scale:
        raise SolverError("entropy Newton solve did not converge", theta, kkt)
    return theta, kkt


def solve_moments(
    gram,
    cross,
    penalty: PenaltySpec | None = None,
    start=None,
    tol: float = DEFAULT_TOL,
    max_iters: int | None = None,
) -> np.ndarray:
    """Squared-loss solve from sufficient statistics.

    ``gram = sum_s w_s y_s y_s'`` and ``cross = sum_s w_s y_0s y_s``.  Without a
    penalty the objective is ``sum_s w_s (y_0s - theta'y_s)^2``; with one it is
    ``0.5 sum_s w_s (...)^2 + Phi(theta)/eta``.  Returns theta.
    """
    n = cross.size
    if penalty is None or penalty.kind == "none":
        Q = 2.0 * gram
        c = 2.0 * cross
    else:
        Q = gram.copy()
        c = cross.copy()
        if penalty.kind in ("ridge", "quadratic"):
            A, a = penalty.quadratic_terms(n)
            Q += penalty.inv_eta * A
            c += penalty.inv_eta * a
    Q[np.diag_indices(n)] += 2.0 * TIE_EPS
    if penalty is not None and penalty.kind == "entropy" and penalty.inv_eta > 0:
        return _entropy_newton(Q, c, penalty.inv_eta, start, tol, max_iters)[0]
    return solve_simplex_qp(Q, c, start, tol, max_iters)[0]


def solve_constrained_ls(spec: SolveSpec) -> Weights:
    """Simplex-constrained (weighted, optionally penalized) regression."""
    n = spec.n
    penalty = spec.penalty
    if spec.loss == "absolute":
        if penalty is None or penalty.kind == "none":
            raise InvalidInputError("absolute loss needs a strongly convex penalty")
        theta, _ = _absolute_dual(spec)
        return Weights(theta)
    if spec.targets.size == 0 and (penalty is None or penalty.kind in ("none", "entropy", "ridge")):
        return Weights.uniform(n)
    Y = spec.regressors
    w = spec.weights_or_ones()
    gram = (Y.T * w) @ Y
    cross = (Y.T * w) @ spec.targets
    theta = solve_moments(gram, cross, penalty, spec.warm_start, spec.tolerance, spec.max_iters)
    return Weights(theta)


def solve_affine_ls(spec: SolveSpec) -> Weights:
    """Least squares over ``[-2, 2] x simplex`` (intercept plus convex weights).

    The intercept's profile objective is convex, so the unconstrained-intercept
    solution (regression on weighted-demeaned data) is clipped to the box and,
    if clipping was needed, the weights are re-solved with the intercept fixed.
    """
    n = spec.n
    if spec.targets.size == 0:
        return Weights.uniform(n, 0.0)
    w = spec.weights_or_ones()
    total = w.sum()
    if total <= 0:
        return Weights.uniform(n, 0.0)
    ybar = (w @ spec.regressors) / total
    y0bar = float(w @ spec.targets) / total
    demeaned = SolveSpec(
        spec.targets - y0bar,
        spec.regressors - ybar,
        spec.sample_weights,
        tolerance=spec.tolerance,
        max_iters=spec.max_iters,
        warm_start=spec.warm_start,
    )
    theta = solve_constrained_ls(demeaned).theta
    intercept = y0bar - float(theta @ ybar)
    if abs(intercept) <= INTERCEPT_BOX:
        return Weights(theta, intercept)
    intercept = math.copysign(INTERCEPT_BOX, intercept)
    fixed = SolveSpec(
        spec.targets - intercept,
        spec.regressors,
        spec.sample_weights,
        tolerance=spec.tolerance,
        max_iters=spec.max_iters,
        warm_start=Weights(theta),
    )
    return Weights(solve_constrained_ls(fixed).theta, intercept)


# -- absolute loss -------------------------------------------------------------


def _inner_argmax(g, penalty: PenaltySpec, start=None):
    """argmax over the simplex of ``g'theta - Phi(theta)/eta`` and its value."""
    lam = penalty.inv_eta
    if penalty.kind == "entropy":
        z = g / lam
        theta = softmax(z)
        return theta, lam * (float(logsumexp(z)) - math.log(g.size))
    if penalty.kind == "ridge":
        theta = project_simplex(g / lam)
    else:
        A, a = penalty.quadratic_terms(g.size)
        theta, _ = solve_simplex_qp(lam * A, g + lam * a, start)
    return theta, float(g @ theta) - lam * penalty.value(theta)


def _absolute_dual(spec: SolveSpec, dual_start=None):
    """Weighted absolute-loss FTRL through its box-constrained smooth dual.

    Dual: max over |u_s| <= w_s of ``u'targets - max_theta (Y'u)'theta - Phi/eta``.
    The primal point is the inner maximizer at the dual optimum; the duality
    gap certifies accuracy.  Returns ``(theta, u)``.
    """
    Y = np.ascontiguousarray(spec.regressors)
    y0 = np.ascontiguousarray(spec.targets)
    w = np.ascontiguousarray(spec.weights_or_ones())
    penalty = spec.penalty
    n = spec.n
    if y0.size == 0:
        theta, _ = _inner_argmax(np.zeros(n), penalty)
        return theta, np.zeros(0)
    tol = spec.tolerance if spec.tolerance > DEFAULT_TOL else ABSOLUTE_TOL
    if dual_start is None or dual_start.size != y0.size:
        start_theta = np.full(n, 1.0 / n)
        dual_start = np.sign(y0 - Y @ start_theta) * w
    if penalty.kind in ("ridge", "entropy"):
        theta, u, gap, ok = _kernels.absolute_dual_spg(
            Y, y0, w, penalty.inv_eta, penalty.kind == "entropy",
            np.asarray(dual_start, dtype=np.float64), spec.max_iters or 20000, tol,
        )
        if not ok:
            raise SolverError(f"absolute-loss dual gap {gap:.3e} above tolerance", theta, gap)
        return theta, u

    state = {"theta": None}

    def neg_dual(u):
        theta, val = _inner_argmax(Y.T @ u, penalty, state["theta"])
        state["theta"] = theta
        return -(float(u @ y0) - val), -(y0 - Y @ theta)

    res = optimize.minimize(
        neg_dual,
        dual_start,
        jac=True,
        method="L-BFGS-B",
        bounds=list(zip(-w, w)),
        options={"maxiter": spec.max_iters or 15000, "ftol": 1e-16, "gtol": 1e-13, "maxcor": 20},
    )
    theta, _ = _inner_argmax(Y.T @ res.x, penalty, state["theta"])
    p = float(w @ np.abs(y0 - Y @ theta)) + penalty.inv_eta * penalty.value(theta)
    gap = p + res.fun
    if gap > tol * (1.0 + abs(p)):
        raise SolverError(f"absolute-loss dual gap {gap:.3e} above tolerance", theta, gap)
    return theta, res.x


def solve_absolute_oracle(targets, regressors, sample_weights=None) -> tuple[Weights, float]:
    """Best fixed simplex weights for the weighted absolute loss (linear program)."""
    Y = np.atleast_2d(np.asarray(regressors, dtype=np.float64))
    y0 = np.asarray(targets, dtype=np.float64).reshape(-1)
    m, n = Y.shape
    w = np.ones(m) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    if m == 0:
        return Weights.uniform(n), 0.0
    # variables: theta (n), e (m); minimize w'e with e >= |y0 - Y theta|
    cost = np.concatenate([np.zeros(n), w])
    eye = np.eye(m)
    A_ub = np.block([[-Y, -eye], [Y, -eye]])
    b_ub = np.concatenate([-y0, y0])
    A_eq = np.concatenate([np.ones(n), np.zeros(m)])[None, :]
    res = optimize.linprog(
        cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0],
        bounds=[(0, None)] * (n + m), method="highs",
    )
    if res.status != 0:
        raise SolverError(f"absolute-loss oracle LP failed: {res.message}")
    theta = np.maximum(res.x[:n], 0.0)
    theta /= theta.sum()
    return Weights(theta), float(w @ np.abs(y0 - Y @ theta))


# -- penalties -----------------------------------------------------------------


def penalty_value_and_range(penalty: PenaltySpec, n: int, theta=None) -> tuple[float, float]:
    """Value of Phi at ``theta`` (uniform by default) and its range K over the simplex.

    The maximum of a convex function over the simplex is attained at a vertex,
    so the supremum is exact by enumeration; the infimum needs a solve.
    """
    theta = np.full(n, 1.0 / n) if theta is None else np.asarray(theta, dtype=np.float64)
    value = penalty.value(theta)
    if penalty.kind == "none":
        return value, 0.0
    if penalty.kind == "entropy":
        return value, math.log(n)
    if penalty.kind == "ridge":
        return value, 0.5 * (1.0 - 1.0 / n)
    A, a = penalty.quadratic_terms(n)
    top = max(penalty.value(np.eye(n)[i]) for i in range(n))
    low_theta, _ = solve_simplex_qp(A, a)
    return value, top - penalty.value(low_theta)


def default_eta(kind: str, n: int, horizon: int, K: float | None = None) -> float:
    """Learning rates that attain the FTRL regret bounds."""
    if n < 1 or horizon < 1:
        raise ValueError("n and horizon must be positive")
    if kind == "ridge":
        return 1.0 / math.sqrt(4.0 * n * horizon)
    if kind == "entropy":
        if n < 2:
            raise ValueError("entropy rate needs n >= 2")
        return math.sqrt(math.log(n) / horizon)
    if kind == "quadratic":
        if K is None or K <= 0:
            raise ValueError("quadratic rate needs the penalty range K > 0")
        return math.sqrt(K / (2.0 * n * horizon))
    raise ValueError(f"no default rate for penalty kind {kind!r}")
