"""Least-squares SVM with an RBF kernel.

Training solves one dense linear system; hyperparameters come from a
logarithmic grid search under stratified k-fold cross-validation.  Inputs
are z-scored with statistics taken from the training set and stored in the
model.  Binary models solve

    [[0, 1^T], [1, K + I/gamma]] . [b; beta] = [0; y]

with f(x) = sum_i beta_i k(x_i, x) + b, which is the standard formulation
rewritten so that flipping every label exactly negates the solution.
One-class models have no bias term (f must vanish far from the data) and
fit (K + I/gamma) alpha = 1; their reported score is 2 f(x) - 1.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatchError, InsufficientDataError, SingularSystemError

RESIDUAL_TOL = 1e-6
# fifty log-spaced values with exact endpoints
SIGMA_GRID_DEFAULT = np.geomspace(1.0, 100.0, 50)
GAMMA_GRID_DEFAULT = np.geomspace(1.0, 1000.0, 50)
# fold-training sizes above this use float32 eigendecompositions in CV
_EIG_F32_CUTOFF = 256


def rbf_kernel(x, y, sigma: float) -> float:
    """exp(-||x - y||^2 / (2 sigma^2))"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimMismatchError(f"{x.shape} vs {y.shape}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    d = x - y
    return float(np.exp(-(d @ d) / (2.0 * sigma * sigma)))


def _zscore_stats(X: np.ndarray):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return mean, std


def _sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    aa = (A * A).sum(axis=1)[:, None]
    bb = (B * B).sum(axis=1)[None, :]
    return np.maximum(aa + bb - 2.0 * (A @ B.T), 0.0)


@dataclass
class LssvmModel:
    mode: str  # "binary" | "one_class"
    sigma: float
    gamma: float
    bias: float
    alphas: np.ndarray  # per training point
    training_inputs: np.ndarray  # z-scored, (n, dim)
    z_mean: np.ndarray
    z_std: np.ndarray
    residual: float = 0.0

    @property
    def input_dim(self) -> int:
        return self.training_inputs.shape[1]

    def decision_values(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise DimMismatchError(
                f"expected dim {self.input_dim}, got {X.shape[1]}")
        Z = (X - self.z_mean) / self.z_std
        K = np.exp(-_sq_dists(Z, self.training_inputs) / (2.0 * self.sigma ** 2))
        f = K @ self.alphas + self.bias
        if self.mode == "one_class":
            return 2.0 * f - 1.0
        return f


def score(model: LssvmModel, x) -> float:
    """Decision value for one input (binary: f(x); one-class: 2 f(x) - 1)."""
    return float(model.decision_values(np.asarray(x, dtype=np.float64)[None, :])[0])


def _solve_checked(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from exc
    denom = np.linalg.norm(rhs)
    resid = np.linalg.norm(A @ sol - rhs) / (denom if denom > 0 else 1.0)
    if not np.isfinite(resid) or resid >= RESIDUAL_TOL:
        raise SingularSystemError(f"relative residual {resid:.3e} >= {RESIDUAL_TOL}")
    return sol


def train(X, y, sigma: float, gamma: float) -> LssvmModel:
    """Binary LS-SVM; labels must be in {-1, +1} with both classes present."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or len(X) < 2:
        raise InsufficientDataError("need >= 2 labeled rows")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("labels must be -1 or +1")
    if len(np.unique(y)) < 2:
        raise InsufficientDataError("binary training needs both classes")
    mean, std = _zscore_stats(X)
    Z = (X - mean) / std
    n = len(Z)
    K = np.exp(-_sq_dists(Z, Z) / (2.0 * sigma ** 2))
    A = np.zeros((n + 1, n + 1))
    A[0, 1:] = 1.0
    A[1:, 0] = 1.0
    A[1:, 1:] = K + np.eye(n) / gamma
    rhs = np.concatenate([[0.0], y])
    sol = _solve_checked(A, rhs)
    denom = np.linalg.norm(rhs)
    resid = float(np.linalg.norm(A @ sol - rhs) / denom)
    return LssvmModel(
        mode="binary", sigma=float(sigma), gamma=float(gamma),
        bias=float(sol[0]), alphas=sol[1:], training_inputs=Z,
        z_mean=mean, z_std=std, residual=resid,
    )


def train_one_class(X, sigma: float, gamma: float) -> LssvmModel:
    """Positives-only least-squares fit of f to 1; no bias term, so f decays
    to 0 (score to -1) away from the training cloud."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise InsufficientDataError("need >= 2 rows")
    mean, std = _zscore_stats(X)
    Z = (X - mean) / std
    n = len(Z)
    K = np.exp(-_sq_dists(Z, Z) / (2.0 * sigma ** 2))
    A = K + np.eye(n) / gamma
    rhs = np.ones(n)
    sol = _solve_checked(A, rhs)
    resid = float(np.linalg.norm(A @ sol - rhs) / np.linalg.norm(rhs))
    return LssvmModel(
        mode="one_class", sigma=float(sigma), gamma=float(gamma),
        bias=0.0, alphas=sol, training_inputs=Z,
        z_mean=mean, z_std=std, residual=resid,
    )


def _make_folds(X: np.ndarray, y, k: int, seed: int, mode: str):
    """Stratified folds from a seeded shuffle of canonically sorted rows, so
    the result is invariant to permutations of the input."""
    n = len(X)
    if k < 2 or n < k:
        raise InsufficientDataError(f"{n} rows cannot form {k} folds")
    order = sorted(range(n), key=lambda i: X[i].tobytes())
    rng = np.random.default_rng(seed)
    if mode == "binary":
        groups = [[i for i in order if y[i] > 0], [i for i in order if y[i] < 0]]
        if min(len(g) for g in groups) < 2:
            raise InsufficientDataError("need >= 2 samples per class for CV")
    else:
        groups = [order]
    fold_of = np.empty(n, dtype=np.int64)
    for g in groups:
        for pos, gi in enumerate(rng.permutation(len(g))):
            fold_of[g[gi]] = pos % k
    folds = []
    for f in range(k):
        va = np.flatnonzero(fold_of == f)
        tr = np.flatnonzero(fold_of != f)
        if len(va) == 0:
            continue
        if mode == "binary" and len(np.unique(np.asarray(y)[tr])) < 2:
            raise InsufficientDataError(f"fold {f} lacks a class")
        folds.append((tr, va))
    return folds


def _fold_accuracy(Xtr, ytr, Xva, yva, sigma_grid, inv_gamma, mode):
    """CV accuracy for one fold, all (sigma, gamma) combinations at once.

    One eigendecomposition per sigma makes the gamma sweep a diagonal
    rescaling.
    """
    mean, std = _zscore_stats(Xtr)
    Ztr = (Xtr - mean) / std
    Zva = (Xva - mean) / std
    d2tr = _sq_dists(Ztr, Ztr)
    d2va = _sq_dists(Zva, Ztr)
    dtype = np.float32 if len(Ztr) > _EIG_F32_CUTOFF else np.float64
    ones = np.ones(len(Ztr), dtype=dtype)
    acc = np.empty((len(sigma_grid), len(inv_gamma)))
    for si, s in enumerate(sigma_grid):
        K = np.exp(-d2tr / (2.0 * s * s)).astype(dtype)
        lam, V = np.linalg.eigh(K)
        Q = np.exp(-d2va / (2.0 * s * s)).astype(dtype) @ V
        c1 = V.T @ ones
        dg = 1.0 / (lam[None, :] + inv_gamma[:, None].astype(dtype))
        if mode == "binary":
            cy = V.T @ ytr.astype(dtype)
            b = (dg * (c1 * cy)).sum(axis=1) / (dg * (c1 * c1)).sum(axis=1)
            W = dg * (cy[None, :] - b[:, None] * c1[None, :])
            F = W @ Q.T + b[:, None]
            acc[si] = ((F >= 0) == (yva > 0)[None, :]).mean(axis=1)
        else:
            W = dg * c1[None, :]
            F = W @ Q.T
            acc[si] = (F > 0.5).mean(axis=1)
    return acc


def grid_search(X, y=None, sigma_grid=None, gamma_grid=None, folds: int = 10,
                seed: int = 0, mode: str = "binary", threads: int = 1):
    """Best (sigma, gamma) by mean stratified-CV accuracy.

    Ties are broken toward the smallest sigma, then the smallest gamma.
    """
    X = np.asarray(X, dtype=np.float64)
    sigma_grid = SIGMA_GRID_DEFAULT if sigma_grid is None else np.asarray(sigma_grid, dtype=np.float64)
    gamma_grid = GAMMA_GRID_DEFAULT if gamma_grid is None else np.asarray(gamma_grid, dtype=np.float64)
    if len(sigma_grid) == 0 or len(gamma_grid) == 0:
        raise ValueError("grids must be non-empty")
    if mode == "binary":
        y = np.asarray(y, dtype=np.float64)
    fold_idx = _make_folds(X, y, folds, seed, mode)
    inv_gamma = 1.0 / gamma_grid

    def one_fold(pair):
        tr, va = pair
        return _fold_accuracy(
            X[tr], None if y is None else y[tr], X[va],
            None if y is None else y[va], sigma_grid, inv_gamma, mode)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(one_fold, fold_idx))
    else:
        parts = [one_fold(p) for p in fold_idx]
    acc = np.mean(parts, axis=0)

    best = (-1.0, 0, 0)
    for si in range(len(sigma_grid)):
        for gi in range(len(gamma_grid)):
            if acc[si, gi] > best[0]:
                best = (acc[si, gi], si, gi)
    return float(sigma_grid[best[1]]), float(gamma_grid[best[2]])


_MODEL_MAGIC = b"SVLM"
_MODEL_VERSION = 1
_MODES = {"binary": 0, "one_class": 1}
_MODES_INV = {v: k for k, v in _MODES.items()}


def save_model(path, model: LssvmModel) -> None:
    """Versioned little-endian binary dump; round-trips bit-exactly."""
    n, dim = model.training_inputs.shape
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<IBQQ", _MODEL_VERSION, _MODES[model.mode], n, dim))
        fh.write(struct.pack("<dddd", model.sigma, model.gamma, model.bias,
                             model.residual))
        for arr in (model.alphas, model.z_mean, model.z_std,
                    model.training_inputs):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_model(path) -> LssvmModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _MODEL_MAGIC:
            raise SingularSystemError(f"{path!r} is not a model file")
        version, mode_id, n, dim = struct.unpack("<IBQQ", fh.read(21))
        if version != _MODEL_VERSION:
            raise SingularSystemError(f"unsupported model version {version}")
        sigma, gamma, bias, residual = struct.unpack("<dddd", fh.read(32))
        alphas = np.frombuffer(fh.read(8 * n), dtype="<f8")
        z_mean = np.frombuffer(fh.read(8 * dim), dtype="<f8")
        z_std = np.frombuffer(fh.read(8 * dim), dtype="<f8")
        X = np.frombuffer(fh.read(8 * n * dim), dtype="<f8").reshape(n, dim)
    return LssvmModel(
        mode=_MODES_INV[mode_id], sigma=sigma, gamma=gamma, bias=bias,
        alphas=alphas.copy(), training_inputs=X.copy(),
        z_mean=z_mean.copy(), z_std=z_std.copy(), residual=residual,
    )
