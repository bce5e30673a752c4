"""
Stage-2 blenders: ridge regression and the SVR / GPR / MLP benchmarks,
with block cross-validated grid search over their regularization.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist

from . import nnkernel as nn
from .container import read_container, write_container
from .errors import ConfigError, DataError, FitError, ShapeError
from .metrics import rmse
from .models import ARCHITECTURES

logger = logging.getLogger(__name__)

METHODS = ('RR', 'SVR', 'ANN', 'GPR')
BLENDER_MAGIC = b'WCB1'

DEFAULT_GRIDS: Dict[str, tuple] = {
    'RR': tuple(float(a) for a in range(1, 101)),
    'SVR': tuple(0.5 * k for k in range(1, 41)),
    'ANN': (1e-4, 3e-4, 1e-3, 3e-3, 1e-2),
    'GPR': tuple(round(0.1 * k, 1) for k in range(1, 11)),
}
# True when a larger value regularizes more (SVR's C works the other way).
_LARGER_IS_STRONGER = {'RR': True, 'GPR': True, 'ANN': True, 'SVR': False}

SVR_EPSILON = 0.1
GPR_LENGTH_SCALE = 1.0


@dataclass
class BlendDataset:
    """Stage-1 forecasts (n, k) in MW and the real power they target."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.targets = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        if self.features.shape[0] != self.targets.size:
            raise ShapeError(f"{self.features.shape[0]} feature rows for {self.targets.size} targets")
        if self.targets.size < 1:
            raise DataError("a blend dataset needs at least one row")

    @classmethod
    def from_forecasts(cls, forecasts: Mapping[str, Sequence[float]],
                       targets: Sequence[float]) -> 'BlendDataset':
        """Stack stage-1 forecasts in (MIMO, MISO, SIMO, SISO) column order."""
        return cls(np.column_stack([forecasts[a] for a in ARCHITECTURES]), targets)

    def subset(self, indices: np.ndarray) -> 'BlendDataset':
        return BlendDataset(self.features[indices], self.targets[indices])

    def __len__(self) -> int:
        return self.targets.size


# Ridge regression

def ridge_fit(data: BlendDataset, alpha: float) -> np.ndarray:
    """
    Solve (X'X + alpha I) w = X'y by Cholesky; no intercept.

    Raises:
        ConfigError: If alpha is negative.
        FitError: If alpha is 0 and X'X is singular.
    """
    if alpha < 0:
        raise ConfigError(f"ridge alpha must be non-negative, got {alpha}")
    X, y = data.features, data.targets
    gram = X.T @ X + alpha * np.eye(X.shape[1])
    if alpha == 0 and np.linalg.matrix_rank(X) < X.shape[1]:
        raise FitError("X'X is singular; ridge with alpha = 0 has no unique solution")
    try:
        factor = cho_factor(gram, lower=True)
    except LinAlgError as e:
        raise FitError(f"ridge system is not positive definite: {e}")
    return cho_solve(factor, X.T @ y)


def ridge_predict(w: np.ndarray, features: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != len(w):
        raise ShapeError(f"feature width {features.shape[1]} != weight length {len(w)}")
    return features @ w


# Gaussian process regression

def rbf_kernel(a: np.ndarray, b: np.ndarray, length_scale: float) -> np.ndarray:
    return np.exp(-cdist(a, b, 'sqeuclidean') / (2.0 * length_scale ** 2))


@dataclass
class GprModel:
    """Zero-mean GP on standardized features; only the posterior mean is kept."""

    train: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    weights: np.ndarray
    noise_alpha: float
    length_scale: float

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(features) - self.center) / self.scale


def gpr_fit(data: BlendDataset, noise_alpha: float,
            length_scale: float = GPR_LENGTH_SCALE) -> GprModel:
    """
    Exact GP regression with an RBF kernel; weights = (K + alpha I)^-1 y.

    Raises:
        FitError: If K + alpha I is not positive definite.
    """
    X = data.features
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    Z = (X - center) / scale
    K = rbf_kernel(Z, Z, length_scale) + noise_alpha * np.eye(len(Z))
    try:
        factor = cho_factor(K, lower=True)
    except LinAlgError as e:
        raise FitError(f"GP kernel matrix is not positive definite "
                       f"(noise alpha {noise_alpha}): {e}")
    return GprModel(Z, center, scale, cho_solve(factor, data.targets), noise_alpha, length_scale)


def gpr_predict(model: GprModel, features: np.ndarray) -> np.ndarray:
    Z = model.standardize(features)
    if Z.shape[1] != model.train.shape[1]:
        raise ShapeError(f"feature width {Z.shape[1]} != {model.train.shape[1]}")
    return rbf_kernel(Z, model.train, model.length_scale) @ model.weights


# Support vector regression

@dataclass
class SvrModel:
    """Epsilon-SVR with an RBF kernel: f(x) = sum coef_i k(x_i, x) + bias."""

    train: np.ndarray
    targets: np.ndarray
    coef: np.ndarray
    dual: np.ndarray
    bias: float
    gamma: float
    C: float
    epsilon: float
    iterations: int = 0


def _svr_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(a, b, 'sqeuclidean'))


def _smo(K: np.ndarray, z: np.ndarray, C: float, epsilon: float, tol: float,
         max_iter: int) -> tuple:
    """
    Solve the epsilon-SVR dual with maximal-violating-pair SMO.

    The 2n dual variables are (alpha, alpha*), labelled +1 and -1. Returns
    (dual variables, rho, iterations).
    """
    n = z.size
    y = np.concatenate([np.ones(n), -np.ones(n)])
    src = np.concatenate([np.arange(n), np.arange(n)])
    p = np.concatenate([epsilon - z, epsilon + z])
    beta = np.zeros(2 * n)
    grad = p.copy()
    diag = np.diagonal(K)[src]
    tau = 1e-12

    for iteration in range(max_iter):
        score = -y * grad
        up = ((y > 0) & (beta < C)) | ((y < 0) & (beta > 0))
        low = ((y > 0) & (beta > 0)) | ((y < 0) & (beta < C))
        up_idx = np.flatnonzero(up)
        low_idx = np.flatnonzero(low)
        if up_idx.size == 0 or low_idx.size == 0:
            break
        i = up_idx[np.argmax(score[up_idx])]
        j = low_idx[np.argmin(score[low_idx])]
        if score[i] - score[j] < tol:
            break

        q_i = y[i] * y * K[src[i], src]
        q_j = y[j] * y * K[src[j], src]
        old_i, old_j = beta[i], beta[j]
        if y[i] != y[j]:
            quad = max(diag[i] + diag[j] + 2.0 * q_i[j], tau)
            delta = (-grad[i] - grad[j]) / quad
            diff = beta[i] - beta[j]
            beta[i] += delta
            beta[j] += delta
            if diff > 0:
                if beta[j] < 0:
                    beta[j] = 0.0
                    beta[i] = diff
            elif beta[i] < 0:
                beta[i] = 0.0
                beta[j] = -diff
            if diff > 0:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = C - diff
            elif beta[j] > C:
                beta[j] = C
                beta[i] = C + diff
        else:
            quad = max(diag[i] + diag[j] - 2.0 * q_i[j], tau)
            delta = (grad[i] - grad[j]) / quad
            total = beta[i] + beta[j]
            beta[i] -= delta
            beta[j] += delta
            if total > C:
                if beta[i] > C:
                    beta[i] = C
                    beta[j] = total - C
                if beta[j] > C:
                    beta[j] = C
                    beta[i] = total - C
            else:
                if beta[j] < 0:
                    beta[j] = 0.0
                    beta[i] = total
                if beta[i] < 0:
                    beta[i] = 0.0
                    beta[j] = total
        grad += q_i * (beta[i] - old_i) + q_j * (beta[j] - old_j)
    else:
        raise FitError(f"SMO did not reach KKT tolerance {tol} within {max_iter} iterations")

    y_grad = y * grad
    at_upper = beta >= C
    at_lower = beta <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        rho = float(y_grad[free].mean())
    else:
        ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
        lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
        ub = y_grad[ub_mask].min() if ub_mask.any() else np.inf
        lb = y_grad[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2.0)
    return beta, rho, iteration


def svr_fit(data: BlendDataset, C: float, epsilon: float = SVR_EPSILON,
            gamma: Optional[float] = None, tol: float = 1e-3,
            max_iter: Optional[int] = None) -> SvrModel:
    """
    Fit epsilon-SVR by SMO to KKT tolerance ``tol``.

    ``gamma`` defaults to 1 / (n_features * var(X)).

    Raises:
        DataError: With fewer than two rows.
        ConfigError: If C is not positive.
        FitError: If SMO hits the iteration cap.
    """
    if len(data) < 2:
        raise DataError("SVR needs at least two training rows")
    if C <= 0:
        raise ConfigError(f"SVR C must be positive, got {C}")
    X, z = data.features, data.targets
    if gamma is None:
        variance = float(X.var())
        gamma = 1.0 / (X.shape[1] * variance) if variance > 0 else 1.0
    if max_iter is None:
        max_iter = max(100_000, 100 * len(z))
    K = _svr_kernel(X, X, gamma)
    beta, rho, iterations = _smo(K, z, C, epsilon, tol, max_iter)
    n = len(z)
    return SvrModel(X.copy(), z.copy(), beta[:n] - beta[n:], beta, -rho, gamma, C, epsilon, iterations)


def svr_predict(model: SvrModel, features: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != model.train.shape[1]:
        raise ShapeError(f"feature width {features.shape[1]} != {model.train.shape[1]}")
    return _svr_kernel(features, model.train, model.gamma) @ model.coef + model.bias


def svr_dual_objective(model: SvrModel) -> float:
    """0.5 b'Qb + p'b, the quantity SMO minimizes."""
    n = model.targets.size
    K = _svr_kernel(model.train, model.train, model.gamma)
    coef = model.dual[:n] - model.dual[n:]
    linear = (model.epsilon * (model.dual[:n] + model.dual[n:]).sum()
              - model.targets @ coef)
    return float(0.5 * coef @ K @ coef + linear)


# Multi-layer perceptron

@dataclass
class MlpModel:
    """4-64-128-1 ReLU network; inputs and outputs are divided by ``scale``."""

    layers: List[nn.FcParams]
    scale: float
    weight_decay: float

    def forward(self, x: np.ndarray) -> nn.Tensor:
        out = nn.Tensor(x / self.scale)
        for layer in self.layers[:-1]:
            out = nn.relu(nn.fc_forward(layer, out))
        return nn.fc_forward(self.layers[-1], out)


def mlp_fit(data: BlendDataset, weight_decay: float, seed: int = 0,
            hidden: Sequence[int] = (64, 128), max_epochs: int = 200,
            batch_size: int = 128, learning_rate: float = 1e-3) -> MlpModel:
    """
    Train the MLP blender with Adam on MSE plus an L2 penalty
    0.5 * weight_decay * sum(W^2) / n. The output layer starts at zero.
    """
    X, y = data.features, data.targets
    rng = np.random.default_rng(seed)
    sizes = [X.shape[1], *hidden]
    layers = [nn.FcParams.create(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]
    layers.append(nn.FcParams.create(sizes[-1], 1, rng, zero=True))
    scale = float(max(np.abs(X).max(), np.abs(y).max(), 1e-12))
    model = MlpModel(layers, scale, weight_decay)

    params = [p for layer in layers for p in layer.parameters()]
    weights = [layer.weights for layer in layers]
    optimizer = nn.Adam(params, learning_rate=learning_rate)
    n = len(y)
    for _ in range(max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            optimizer.zero_grad()
            pred = nn.reshape(model.forward(X[idx]), (len(idx),))
            loss = nn.mse_loss(pred, y[idx] / scale)
            if weight_decay > 0:
                penalty = nn.sum_squares(weights[0])
                for w in weights[1:]:
                    penalty = nn.add(penalty, nn.sum_squares(w))
                loss = nn.add(loss, nn.scale(penalty, 0.5 * weight_decay / n))
            loss.backward()
            optimizer.step()
    return model


def mlp_predict(model: MlpModel, features: np.ndarray) -> np.ndarray:
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[1] != model.layers[0].in_dim:
        raise ShapeError(f"feature width {features.shape[1]} != {model.layers[0].in_dim}")
    with nn.no_grad():
        return model.forward(features).data[:, 0] * model.scale


# Blender dispatch and grid search

@dataclass
class Blender:
    """A fitted stage-2 model with its chosen hyperparameter."""

    method: str
    model: Any
    hyperparameter: float
    cv_score: float = float('nan')

    def predict(self, features: np.ndarray) -> np.ndarray:
        return _PREDICT[self.method](self.model, features)

    def __repr__(self) -> str:
        return f"Blender('{self.method}', {self.hyperparameter}, cv={self.cv_score:.4f})"


_PREDICT: Dict[str, Callable[[Any, np.ndarray], np.ndarray]] = {
    'RR': ridge_predict,
    'SVR': svr_predict,
    'ANN': mlp_predict,
    'GPR': gpr_predict,
}


def fit_blender(method: str, data: BlendDataset, value: float, seed: int = 0) -> Any:
    """Fit one method at one hyperparameter value."""
    method = _check_method(method)
    if method == 'RR':
        return ridge_fit(data, value)
    if method == 'SVR':
        return svr_fit(data, value)
    if method == 'ANN':
        return mlp_fit(data, value, seed=seed)
    return gpr_fit(data, value)


def _check_method(method: str) -> str:
    method = method.upper()
    if method not in METHODS:
        raise ConfigError(f"unknown blender '{method}', expected one of {', '.join(METHODS)}")
    return method


def _cv_score(method: str, data: BlendDataset, value: float, folds: List[np.ndarray],
              seed: int) -> float:
    scores = []
    everything = np.arange(len(data))
    for block in folds:
        train = data.subset(np.setdiff1d(everything, block))
        held_out = data.subset(block)
        model = fit_blender(method, train, value, seed)
        scores.append(rmse(held_out.targets, _PREDICT[method](model, held_out.features)))
    return float(np.mean(scores))


def grid_search(method: str, data: BlendDataset, grid: Optional[Sequence[float]] = None,
                folds: int = 5, seed: int = 0, threads: int = 1) -> Blender:
    """
    Pick the hyperparameter with the lowest mean RMSE over contiguous-block
    folds, then refit on all the data.

    Ties go to the more strongly regularized value.

    Raises:
        DataError: If there are fewer rows than folds.
    """
    method = _check_method(method)
    if len(data) < folds:
        raise DataError(f"grid search needs at least {folds} rows, got {len(data)}")
    grid = sorted(DEFAULT_GRIDS[method] if grid is None else grid,
                  reverse=_LARGER_IS_STRONGER[method])
    blocks = np.array_split(np.arange(len(data)), folds)

    def score(value: float) -> float:
        return _cv_score(method, data, value, blocks, seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(score, grid))
    else:
        scores = [score(value) for value in grid]

    best = 0
    for k, value in enumerate(scores):
        if value < scores[best]:
            best = k
    chosen = float(grid[best])
    logger.debug("%s grid search chose %g (CV RMSE %.4f)", method, chosen, scores[best])
    return Blender(method, fit_blender(method, data, chosen, seed), chosen, scores[best])


def save_blender(blender: Blender, path: str) -> None:
    """Write a fitted blender to a binary container."""
    meta: List[float] = [blender.hyperparameter, blender.cv_score]
    model = blender.model
    if blender.method == 'RR':
        arrays = [np.asarray(model)]
    elif blender.method == 'GPR':
        meta += [model.noise_alpha, model.length_scale]
        arrays = [model.train, model.center, model.scale, model.weights]
    elif blender.method == 'SVR':
        meta += [model.bias, model.gamma, model.C, model.epsilon, model.iterations]
        arrays = [model.train, model.targets, model.coef, model.dual]
    else:
        meta += [model.scale, model.weight_decay]
        arrays = [p.data for layer in model.layers for p in layer.parameters()]
    write_container(path, BLENDER_MAGIC, blender.method, meta, arrays)


def load_blender(path: str) -> Blender:
    method, meta, arrays = read_container(path, BLENDER_MAGIC)
    method = _check_method(method)
    hyperparameter, cv_score = meta[:2]
    if method == 'RR':
        model: Any = arrays[0]
    elif method == 'GPR':
        model = GprModel(*arrays, noise_alpha=meta[2], length_scale=meta[3])
    elif method == 'SVR':
        bias, gamma, C, epsilon, iterations = meta[2:7]
        model = SvrModel(arrays[0], arrays[1], arrays[2], arrays[3], bias, gamma, C, epsilon,
                         int(iterations))
    else:
        layers = [nn.FcParams(nn.Tensor(w), nn.Tensor(b)) for w, b in zip(arrays[::2], arrays[1::2])]
        model = MlpModel(layers, meta[2], meta[3])
    return Blender(method, model, hyperparameter, cv_score)
