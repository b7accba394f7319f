"""Rank-k generalized low-rank model with an L1 penalty on the columns of Y.

Numeric columns get a quadratic loss weighted by 1/variance, binary columns a
hinge loss, and every column of Y pays ``gamma * ||Y_j||_1``. A column of Y
driven exactly to zero means that feature does not enter any low-rank factor,
so the support of Y is a feature selection.

Internally numeric columns are standardized, ``(A_j - mean_j) / sd_j``, which
makes the squared residual equal to the 1/variance-weighted residual of the
raw column; binary 0/1 values are recoded to -1/+1 for the hinge and get an
unpenalized offset. Without a constraint on X the penalty on Y could be shrunk
to nothing by rescaling X up and Y down, so every column of X is held at
Euclidean norm 1/sqrt(m). With that scale a column of Y is zero exactly when
its correlation-like score ``2 |X_l^T g_j|`` stays below gamma, and the score
of a feature that carries structure does not grow with the number of rows.
That is what lets a gamma tuned on training rows be reused on a smaller
validation fold.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, DivergenceError, ShapeError

_MAX_HALVINGS = 60


class LossKind(str, enum.Enum):
    QUADRATIC = "quadratic"
    HINGE = "hinge"


@dataclass(frozen=True)
class FitOptions:
    max_iters: int = 1000
    rel_tol: float = 1e-7
    step_init: float = 1.0
    seed: int = 0
    # fit gamma=0 first when starting cold; from a random X every column's
    # score is below a moderate gamma and the first prox step zeroes all of Y
    warmup: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if not self.rel_tol > 0:
            raise ConfigError("rel_tol must be > 0")
        if not self.step_init > 0:
            raise ConfigError("step_init must be > 0")


@dataclass
class GlrmModel:
    X: np.ndarray
    Y: np.ndarray
    k: int
    gamma: float
    loss_kinds: list[LossKind]
    objective_trace: list[float] = field(default_factory=list)
    offsets: np.ndarray | None = None
    n_iters: int = 0
    converged: bool = False

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.offsets is None:
            self.offsets = np.zeros(self.Y.shape[1])
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        if self.X.shape[1] != self.k or self.Y.shape[0] != self.k:
            raise ShapeError(f"X {self.X.shape} and Y {self.Y.shape} disagree with k={self.k}")
        if len(self.loss_kinds) != self.Y.shape[1] or self.offsets.shape != (self.Y.shape[1],):
            raise ShapeError("loss_kinds / offsets length must equal the number of columns of Y")

    @property
    def hinge_mask(self) -> np.ndarray:
        return np.array([kind is LossKind.HINGE for kind in self.loss_kinds], dtype=bool)


def loss_kinds_for(data: Dataset) -> list[LossKind]:
    return [LossKind.HINGE if c.is_binary else LossKind.QUADRATIC for c in data.columns]


def targets(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """The matrix the model reconstructs, and the hinge-column mask.

    Numeric columns are centered and scaled by the mean and sample standard
    deviation of the rows passed in, so a fold is standardized on its own.
    """
    hinge = data.binary_mask
    A = data.values
    T = np.empty_like(A)
    if hinge.any():
        T[:, hinge] = 2.0 * A[:, hinge] - 1.0
    quad = ~hinge
    if quad.any():
        Aq = A[:, quad]
        sd = Aq.std(axis=0, ddof=1) if data.m > 1 else np.zeros(Aq.shape[1])
        sd[~(sd > 0)] = 1.0
        T[:, quad] = (Aq - Aq.mean(axis=0)) / sd
    return T, hinge


# --------------------------------------------------------------------------
# objective and its gradient

def data_fit(X, Y, offsets, T, hinge) -> float:
    Z = X @ Y + offsets
    quad = ~hinge
    fit = float(np.sum((T[:, quad] - Z[:, quad]) ** 2))
    if hinge.any():
        fit += float(np.sum(np.maximum(0.0, 1.0 - T[:, hinge] * Z[:, hinge])))
    return fit


def residual_grad(X, Y, offsets, T, hinge) -> np.ndarray:
    """d(data fit)/dZ. At the hinge kink the subgradient 0 is used."""
    Z = X @ Y + offsets
    G = 2.0 * (Z - T)
    if hinge.any():
        Th = T[:, hinge]
        G[:, hinge] = np.where(1.0 - Th * Z[:, hinge] > 0.0, -Th, 0.0)
    return G


def data_fit_grad(X, Y, offsets, T, hinge):
    """Gradients of the data-fit term with respect to X, Y and the offsets."""
    G = residual_grad(X, Y, offsets, T, hinge)
    return G @ Y.T, X.T @ G, G.sum(axis=0)


def l1_penalty(Y, gamma: float) -> float:
    return float(gamma * np.abs(Y).sum())


def objective(model: GlrmModel, data: Dataset) -> float:
    """Data fit plus ``gamma * sum_j ||Y_j||_1`` for ``model`` on ``data``."""
    if model.X.shape[0] != data.m or model.Y.shape[1] != data.n:
        raise ShapeError(
            f"model is {model.X.shape[0]}x{model.Y.shape[1]}, data is {data.m}x{data.n}"
        )
    T, hinge = targets(data)
    return data_fit(model.X, model.Y, model.offsets, T, hinge) + l1_penalty(model.Y, model.gamma)


def prox_l1(v, threshold: float) -> np.ndarray:
    """Soft threshold: ``sign(v) * max(|v| - threshold, 0)``."""
    if threshold < 0:
        raise ConfigError("threshold must be >= 0")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


# --------------------------------------------------------------------------
# fitting

def _normalize_columns(X):
    """Rescale columns of X to Euclidean norm 1/sqrt(m)."""
    norms = np.linalg.norm(X, axis=0) * np.sqrt(X.shape[0])
    norms[norms == 0.0] = 1.0
    return X / norms


def initial_factors(m: int, n: int, k: int, seed: int):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, k)) / np.sqrt(k)
    Y = rng.standard_normal((k, n)) / np.sqrt(k)
    return _normalize_columns(X), Y


def _column_fit(Z, T, hinge):
    quad = (T - Z) ** 2
    hng = np.maximum(0.0, 1.0 - T * Z)
    return np.where(hinge, hng, quad).sum(axis=0)


def _x_step(X, Y, b, T, hinge, fit, scale):
    """Projected gradient step on X, each column's step divided by 2||Y_l||^2.

    With quadratic losses only and a unit ``scale`` this is an exact
    minimization over each column of X taken on its own.
    """
    gX = residual_grad(X, Y, b, T, hinge) @ Y.T
    precond = 2.0 * np.einsum("ij,ij->i", Y, Y) + 1e-300
    direction = gX / precond
    s = scale
    for _ in range(_MAX_HALVINGS):
        Xn = _normalize_columns(X - s * direction)
        fit_n = data_fit(Xn, Y, b, T, hinge)
        if fit_n <= fit:
            return Xn, fit_n, min(2.0 * s, 1.0)
        s *= 0.5
    return X, fit, 1.0


def _y_step(X, Y, b, T, hinge, gamma, steps):
    """Proximal gradient step on each column of Y (and its offset) with its own line search.

    Columns are independent given X, so every column is accepted or halved on
    its own and the total objective cannot increase.
    """
    m = X.shape[0]
    G = residual_grad(X, Y, b, T, hinge)
    gY = X.T @ G
    # offsets are stepped as if they were loadings on a constant column of norm 1/sqrt(m)
    gb = np.where(hinge, G.sum(axis=0) / m ** 2, 0.0)
    old = _column_fit(X @ Y + b, T, hinge) + gamma * np.abs(Y).sum(axis=0)
    Y, b, steps = Y.copy(), b.copy(), steps.copy()
    t = steps.copy()
    active = np.ones(Y.shape[1], dtype=bool)
    for _ in range(_MAX_HALVINGS):
        cols = np.flatnonzero(active)
        if cols.size == 0:
            break
        tc = t[cols]
        V = Y[:, cols] - tc * gY[:, cols]
        Yc = np.sign(V) * np.maximum(np.abs(V) - tc * gamma, 0.0)
        bc = b[cols] - tc * gb[cols]
        new = (_column_fit(X @ Yc + bc, T[:, cols], hinge[cols])
               + gamma * np.abs(Yc).sum(axis=0))
        ok = new <= old[cols]
        acc = cols[ok]
        Y[:, acc] = Yc[:, ok]
        b[acc] = bc[ok]
        steps[acc] = 2.0 * tc[ok]
        active[acc] = False
        t[cols[~ok]] *= 0.5
    steps[active] = t[active] * 2.0 ** _MAX_HALVINGS
    return Y, b, steps


def fit_glrm(data: Dataset, k: int, gamma: float, opts: FitOptions = FitOptions(),
             init: GlrmModel | None = None) -> GlrmModel:
    """Fit by alternating (proximal) gradient steps with backtracking.

    Each iteration takes a projected gradient step in X with Y fixed, then a
    proximal gradient step in (Y, offsets) with X fixed. Steps are halved until
    the objective does not increase; a step that cannot be made non-increasing
    is skipped. Iteration stops when the relative change of the objective over
    one iteration falls below ``opts.rel_tol``.

    ``init`` warm-starts from another model's factors (same shape). Without
    it, a positive ``gamma`` and ``opts.warmup`` the unpenalized model is fitted
    first from the seeded Gaussian start and used as the starting point.
    """
    m, n = data.m, data.n
    if k < 1 or k >= n:
        raise ConfigError(f"rank k={k} must satisfy 1 <= k < n={n}")
    if gamma < 0:
        raise ConfigError("gamma must be >= 0")
    T, hinge = targets(data)
    if init is not None:
        if init.X.shape != (m, k) or init.Y.shape != (k, n):
            raise ShapeError("warm-start model has the wrong shape")
        X, Y, b = _normalize_columns(init.X.copy()), init.Y.copy(), init.offsets.copy()
    elif gamma > 0 and opts.warmup:
        base = fit_glrm(data, k, 0.0, opts)
        X, Y, b = base.X, base.Y, base.offsets
    else:
        X, Y = initial_factors(m, n, k, opts.seed)
        b = np.zeros(n)

    fit = data_fit(X, Y, b, T, hinge)
    F = fit + l1_penalty(Y, gamma)
    trace = [F]
    # with X columns of norm 1/sqrt(m), ||X^T X|| <= k/m
    y_steps = np.full(n, opts.step_init * m / (2.0 * k))
    x_scale = min(opts.step_init, 1.0)
    converged = False
    it = 0
    for it in range(1, opts.max_iters + 1):
        F_prev = F
        X, fit, x_scale = _x_step(X, Y, b, T, hinge, fit, x_scale)
        Y, b, y_steps = _y_step(X, Y, b, T, hinge, gamma, y_steps)
        fit = data_fit(X, Y, b, T, hinge)
        F = fit + l1_penalty(Y, gamma)
        if not np.isfinite(F):
            raise DivergenceError(it, F)
        trace.append(F)
        if abs(F_prev - F) <= opts.rel_tol * max(abs(F_prev), 1e-300):
            converged = True
            break

    return GlrmModel(X=X, Y=Y, k=k, gamma=float(gamma), loss_kinds=loss_kinds_for(data),
                     objective_trace=trace, offsets=b, n_iters=it, converged=converged)


def selected_features(model: GlrmModel, tol: float = 1e-8) -> frozenset[int]:
    """Columns of Y with at least one entry larger than ``tol`` in magnitude."""
    if model.Y.shape[1] == 0:
        return frozenset()
    return frozenset(int(j) for j in np.flatnonzero(np.abs(model.Y).max(axis=0) > tol))


# --------------------------------------------------------------------------
# persistence

def model_to_dict(model: GlrmModel) -> dict:
    def mat(a):
        return [[float(format(x, ".17g")) for x in row] for row in np.atleast_2d(a)]

    return {
        "k": model.k,
        "gamma": model.gamma,
        "loss_kinds": [kind.value for kind in model.loss_kinds],
        "X": mat(model.X),
        "Y": mat(model.Y),
        "offsets": [float(format(x, ".17g")) for x in model.offsets],
        "objective_trace": list(map(float, model.objective_trace)),
        "n_iters": model.n_iters,
        "converged": model.converged,
    }


def model_from_dict(d: dict) -> GlrmModel:
    k = int(d["k"])
    n = len(d["loss_kinds"])
    X = np.array(d["X"], dtype=np.float64).reshape(-1, k)
    Y = np.array(d["Y"], dtype=np.float64).reshape(k, n)
    return GlrmModel(X=X, Y=Y, k=k, gamma=float(d["gamma"]),
                     loss_kinds=[LossKind(s) for s in d["loss_kinds"]],
                     objective_trace=list(d["objective_trace"]),
                     offsets=np.array(d["offsets"], dtype=np.float64),
                     n_iters=int(d.get("n_iters", 0)), converged=bool(d.get("converged", False)))


def save_model(model: GlrmModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path) -> GlrmModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
