"""The fifteen pairwise distance measures and the 10x15 feature-distance
matrix built from two signatures' feature bundles.

Column order is fixed: dtw, dtw_normalized, edit, hungarian_chi2, then the
eleven histogram measures.  Every measure returns a finite value >= 0 and
is symmetric in its arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.optimize import linear_sum_assignment

from .errors import EmptyVectorError, LengthMismatchError
from .features import FEATURE_NAMES, FeatureBundle

EPS = 1e-10
EDIT_LEVELS = 16
HUNGARIAN_MAX_LEN = 256

HISTOGRAM_KINDS = [
    "intersection", "chi2", "jeffrey", "ks", "hellinger",
    "bhattacharyya", "l1", "l2", "cum_l1", "cum_l2", "pairwise_chi2_min",
]
DISTANCE_NAMES = ["dtw", "dtw_normalized", "edit", "hungarian_chi2"] + HISTOGRAM_KINDS
N_FEATURES = len(FEATURE_NAMES)  # 10
N_DISTANCES = len(DISTANCE_NAMES)  # 15


@njit(cache=True)
def _dtw_table(a, b):
    n, m = a.shape[0], b.shape[0]
    d = np.empty((n, m))
    d[0, 0] = abs(a[0] - b[0])
    for j in range(1, m):
        d[0, j] = d[0, j - 1] + abs(a[0] - b[j])
    for i in range(1, n):
        d[i, 0] = d[i - 1, 0] + abs(a[i] - b[0])
        for j in range(1, m):
            mn = d[i - 1, j - 1]
            if d[i - 1, j] < mn:
                mn = d[i - 1, j]
            if d[i, j - 1] < mn:
                mn = d[i, j - 1]
            d[i, j] = abs(a[i] - b[j]) + mn
    return d


@njit(cache=True)
def _dtw_path_nodes(d):
    """Node count of the backtracked optimal path (diagonal-first ties)."""
    i = d.shape[0] - 1
    j = d.shape[1] - 1
    nodes = 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            mn = d[i - 1, j - 1]
            if d[i - 1, j] < mn:
                mn = d[i - 1, j]
            if d[i, j - 1] < mn:
                mn = d[i, j - 1]
            if d[i - 1, j - 1] == mn:
                i -= 1
                j -= 1
            elif d[i - 1, j] == mn:
                i -= 1
            else:
                j -= 1
        nodes += 1
    return nodes


def _dtw_pair(a: np.ndarray, b: np.ndarray) -> tuple[float, int]:
    """(cost, path node count); operands are canonically ordered so both
    outputs are exactly symmetric."""
    if len(a) == 0 or len(b) == 0:
        raise EmptyVectorError("dtw needs non-empty vectors")
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if b.tobytes() < a.tobytes():
        a, b = b, a
    table = _dtw_table(a, b)
    return float(table[-1, -1]), int(_dtw_path_nodes(table))


def dtw(a, b) -> float:
    """Classic full dynamic time warping with |a_i - b_j| local cost."""
    return _dtw_pair(np.asarray(a), np.asarray(b))[0]


def dtw_normalized(a, b) -> float:
    """DTW cost divided by the optimal warping path length (node count)."""
    cost, nodes = _dtw_pair(np.asarray(a), np.asarray(b))
    return cost / nodes


@njit(cache=True)
def _levenshtein(qa, qb):
    m = qb.shape[0]
    prev = np.arange(m + 1)
    cur = np.empty(m + 1, dtype=np.int64)
    for i in range(1, qa.shape[0] + 1):
        cur[0] = i
        ai = qa[i - 1]
        for j in range(1, m + 1):
            mn = prev[j - 1] + (0 if ai == qb[j - 1] else 1)
            if prev[j] + 1 < mn:
                mn = prev[j] + 1
            if cur[j - 1] + 1 < mn:
                mn = cur[j - 1] + 1
            cur[j] = mn
        prev, cur = cur, prev
    return prev[m]


def quantize_pair(a: np.ndarray, b: np.ndarray, levels: int = EDIT_LEVELS):
    """Map both vectors to uniform symbol levels over their joint range."""
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi == lo:
        return np.zeros(len(a), np.int64), np.zeros(len(b), np.int64)
    qa = np.minimum(((a - lo) / (hi - lo) * levels).astype(np.int64), levels - 1)
    qb = np.minimum(((b - lo) / (hi - lo) * levels).astype(np.int64), levels - 1)
    return qa, qb


def edit_distance(a, b) -> float:
    """Levenshtein distance on 16-level quantized symbols, unit costs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise EmptyVectorError("edit distance needs non-empty vectors")
    qa, qb = quantize_pair(a, b)
    return float(_levenshtein(qa, qb))


def _block_reduce(v: np.ndarray, target: int) -> np.ndarray:
    n = len(v)
    if n <= target:
        return v
    edges = (np.arange(target + 1) * n) // target
    return np.add.reduceat(v, edges[:-1]) / np.diff(edges)


def solve_assignment(cost: np.ndarray) -> float:
    """Minimal total cost of a square assignment problem."""
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def hungarian_chi2(a, b) -> float:
    """Optimal-assignment cost under an element-wise chi-squared matching
    cost; vectors longer than 256 are block-averaged down first."""
    a = _block_reduce(np.asarray(a, dtype=np.float64), HUNGARIAN_MAX_LEN)
    b = _block_reduce(np.asarray(b, dtype=np.float64), HUNGARIAN_MAX_LEN)
    if len(a) != len(b):
        raise LengthMismatchError("hungarian operands differ in length after reduction")
    diff = a[:, None] - b[None, :]
    cost = diff * diff / (np.abs(a)[:, None] + np.abs(b)[None, :] + EPS)
    return solve_assignment(cost)


@njit(cache=True)
def _pairwise_chi2_min(a, b):
    best = np.inf
    for u in range(a.shape[0]):
        au = a[u]
        aau = abs(au)
        for v in range(b.shape[0]):
            d = au - b[v]
            val = d * d / (aau + abs(b[v]) + 1e-10)
            if val < best:
                best = val
    return best


def _to_prob(v: np.ndarray) -> np.ndarray:
    """Shift by the minimum and L1-normalize; constant vectors map to the
    uniform distribution."""
    shifted = v - v.min()
    total = shifted.sum()
    if total <= 0:
        return np.full(len(v), 1.0 / len(v))
    return shifted / total


def histogram_distance(kind: str, a, b) -> float:
    """One of the eleven histogram measures; 0 means identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise EmptyVectorError("histogram distance needs non-empty vectors")
    if len(a) != len(b):
        raise LengthMismatchError(f"{len(a)} vs {len(b)}")
    if kind == "l1":
        return float(np.abs(a - b).sum())
    if kind == "l2":
        return float(np.sqrt(((a - b) ** 2).sum()))
    if kind == "cum_l1":
        return float(np.abs(np.cumsum(a) - np.cumsum(b)).sum())
    if kind == "cum_l2":
        return float(np.sqrt(((np.cumsum(a) - np.cumsum(b)) ** 2).sum()))
    if kind == "chi2":
        return float((((a - b) ** 2) / (np.abs(a) + np.abs(b) + EPS)).sum())
    if kind == "pairwise_chi2_min":
        return float(_pairwise_chi2_min(
            np.ascontiguousarray(a), np.ascontiguousarray(b)))

    p = _to_prob(a)
    q = _to_prob(b)
    if kind == "intersection":
        return float(max(0.0, 1.0 - np.minimum(p, q).sum()))
    if kind == "ks":
        return float(np.abs(np.cumsum(p) - np.cumsum(q)).max())
    if kind == "jeffrey":
        m = (p + q) / 2.0
        tp = np.where(p > 0, p * np.log((p + EPS) / (m + EPS)), 0.0)
        tq = np.where(q > 0, q * np.log((q + EPS) / (m + EPS)), 0.0)
        return float(max(0.0, (tp + tq).sum()))
    if kind == "hellinger":
        # sqrt(1 - BC) computed as sqrt(0.5 sum (sqrt p - sqrt q)^2): exactly
        # 0 on identical inputs instead of sqrt of rounding noise
        return float(np.sqrt(0.5 * ((np.sqrt(p) - np.sqrt(q)) ** 2).sum()))
    if kind == "bhattacharyya":
        bc = np.sqrt(p * q).sum()
        return float(max(0.0, -np.log(bc + EPS)))
    raise ValueError(f"unknown histogram distance kind {kind!r}")


@dataclass
class FDMatrix:
    """Feature-distance matrix of one signature pair (10 features x 15
    distances), optionally tagged with the pair's complexity class."""

    values: np.ndarray  # (10, 15)
    pair: tuple[str, str] = ("", "")
    complexity_class: str | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != (N_FEATURES, N_DISTANCES):
            raise ValueError(f"FD matrix must be {N_FEATURES}x{N_DISTANCES}")
        self.values = vals

    def flatten(self) -> np.ndarray:
        return self.values.reshape(-1).copy()  # row-major


def unflatten_fd(flat: np.ndarray) -> np.ndarray:
    return np.asarray(flat, dtype=np.float64).reshape(N_FEATURES, N_DISTANCES)


def distance_row(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All fifteen distances between two equal-role feature vectors."""
    cost, nodes = _dtw_pair(a, b)
    row = np.empty(N_DISTANCES)
    row[0] = cost
    row[1] = cost / nodes
    row[2] = edit_distance(a, b)
    row[3] = hungarian_chi2(a, b)
    for i, kind in enumerate(HISTOGRAM_KINDS):
        row[4 + i] = histogram_distance(kind, a, b)
    return row


def feature_distance_matrix(fa: FeatureBundle, fb: FeatureBundle,
                            pair: tuple[str, str] = ("", "")) -> FDMatrix:
    """The 10x15 matrix comparing two signatures feature by feature."""
    values = np.empty((N_FEATURES, N_DISTANCES))
    for k, name in enumerate(FEATURE_NAMES):
        values[k] = distance_row(getattr(fa, name), getattr(fb, name))
    return FDMatrix(values=values, pair=pair)
