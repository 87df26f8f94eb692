"""Signature complexity: the eight static features, k-means grouping with
quality metrics, exhaustive feature-subset ranking, and the per-signature /
per-pair complexity assignment used to route feature-distance matrices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

from .errors import DegenerateDataError, SetVerifyError
from .imaging import SignatureRecord, connected_components

N_COMPLEXITY_FEATURES = 8
DEFAULT_SUBSET = (1, 6, 8)  # x size, median column ink, median row ink
PAIR_CLASSES = ["C11", "C22", "C33", "C12", "C13", "C23"]

_FOUR_CONN = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class ComplexityFeatures:
    f1_x_size: float
    f2_y_size: float
    f3_pixel_percent: float
    f4_hole_percent: float
    f5_components: float
    f6_median_col_pixels: float
    f7_percent_col_empty: float
    f8_median_row_pixels: float

    def as_vector(self) -> np.ndarray:
        return np.array([
            self.f1_x_size, self.f2_y_size, self.f3_pixel_percent,
            self.f4_hole_percent, self.f5_components,
            self.f6_median_col_pixels, self.f7_percent_col_empty,
            self.f8_median_row_pixels,
        ])


def complexity_features(sig: SignatureRecord) -> ComplexityFeatures:
    """The eight static complexity features over the tight ink crop."""
    ink = sig.binary.ink
    h, w = ink.shape
    area = h * w
    col_counts = ink.sum(axis=0)
    row_counts = ink.sum(axis=1)

    # holes: background unreachable from the bbox border by 4-connected flood
    bg_labels, n_bg = ndimage.label(~ink, structure=_FOUR_CONN)
    border = np.zeros(n_bg + 1, dtype=bool)
    for edge in (bg_labels[0], bg_labels[-1], bg_labels[:, 0], bg_labels[:, -1]):
        border[np.unique(edge)] = True
    border[0] = True
    hole_pixels = int(((~ink) & ~border[bg_labels]).sum())

    n_comp, _ = connected_components(sig.binary)
    return ComplexityFeatures(
        f1_x_size=float(w),
        f2_y_size=float(h),
        f3_pixel_percent=100.0 * ink.sum() / area,
        f4_hole_percent=100.0 * hole_pixels / area,
        f5_components=float(n_comp),
        f6_median_col_pixels=float(np.median(col_counts)),
        f7_percent_col_empty=100.0 * (col_counts == 0).sum() / w,
        f8_median_row_pixels=float(np.median(row_counts)),
    )


@dataclass(frozen=True)
class ZScoreStats:
    mean: np.ndarray
    std: np.ndarray  # degenerate columns carry std 1 and are flagged
    degenerate: np.ndarray  # bool per feature


def zscore_fit(rows) -> tuple[np.ndarray, ZScoreStats]:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or len(rows) < 2:
        raise DegenerateDataError("z-scoring needs >= 2 rows")
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)  # population std
    degenerate = std == 0
    safe = np.where(degenerate, 1.0, std)
    stats = ZScoreStats(mean=mean, std=safe, degenerate=degenerate)
    return zscore_apply(rows, stats), stats


def zscore_apply(rows, stats: ZScoreStats) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    return (rows - stats.mean) / stats.std


def _kmeans_pp(points: np.ndarray, k: int, rng) -> np.ndarray:
    n = len(points)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[c] = points[idx]
        d2 = np.minimum(d2, ((points - centers[c]) ** 2).sum(axis=1))
    return centers


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int):
    k = len(centers)
    assign = None
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        # repopulate empty clusters with the worst-fit points
        taken = set()
        for c in range(k):
            if (new_assign == c).any():
                continue
            far = np.argsort(-d2[np.arange(len(points)), new_assign])
            pick = next(int(i) for i in far if int(i) not in taken)
            taken.add(pick)
            new_assign[pick] = c
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            centers[c] = points[assign == c].mean(axis=0)
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    wcss = float(d2[np.arange(len(points)), assign].sum())
    return assign, centers, wcss


def kmeans(points, k: int = 3, seed=0, restarts: int = 20, max_iter: int = 300):
    """Lloyd's algorithm with k-means++ seeding; best WCSS over restarts."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.ndim != 2:
        raise DegenerateDataError("points must be 2-D")
    if len(np.unique(points, axis=0)) < k:
        raise DegenerateDataError(f"need >= {k} distinct points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        centers = _kmeans_pp(points, k, rng)
        assign, centers, wcss = _lloyd(points, centers.copy(), max_iter)
        if best is None or wcss < best[2]:
            best = (assign, centers, wcss)
    return best[0], best[1]


def consistency_metric(assignments, writer_ids) -> int:
    """Writers whose signatures all share one cluster."""
    assignments = np.asarray(assignments)
    writer_ids = np.asarray(writer_ids)
    count = 0
    for w in np.unique(writer_ids):
        if len(np.unique(assignments[writer_ids == w])) == 1:
            count += 1
    return count


def spread_metric(assignments) -> float:
    """Evenness of the cluster sizes: N minus the largest cluster (0 when
    everything collapses into one cluster, maximal when perfectly even)."""
    assignments = np.asarray(assignments)
    counts = np.bincount(assignments)
    return float(len(assignments) - counts.max())


def _abs_spearman(a: np.ndarray, b: np.ndarray) -> float:
    ra = rankdata(a)
    rb = rankdata(b)
    if ra.std() == 0 or rb.std() == 0:
        return 0.0
    return float(abs(np.corrcoef(ra, rb)[0, 1]))


def correlation_metric(assignments, raw_feature_rows) -> float:
    """Mean absolute Spearman correlation between the cluster labels and
    each raw feature column."""
    raw = np.atleast_2d(np.asarray(raw_feature_rows, dtype=np.float64))
    if raw.shape[0] == 1 and len(np.asarray(assignments)) > 1:
        raw = raw.T
    assignments = np.asarray(assignments, dtype=np.float64)
    return float(np.mean([_abs_spearman(assignments, raw[:, j])
                          for j in range(raw.shape[1])]))


def all_feature_subsets() -> list[tuple[int, ...]]:
    """The 255 non-empty subsets of {1..8}, ordered by size then indices."""
    subsets = []
    for r in range(1, N_COMPLEXITY_FEATURES + 1):
        subsets.extend(combinations(range(1, N_COMPLEXITY_FEATURES + 1), r))
    return subsets


@dataclass
class SubsetRanking:
    subset: tuple[int, ...]  # one-based feature numbers
    consistency: float
    spread: float
    correlation: float
    sum_of_ranks: float
    rank_of_ranks: int


def rank_subsets(corpus_features, writer_ids, seed: int = 0) -> list[SubsetRanking]:
    """Evaluate k-means (k=3) on every feature subset, score it with the
    three metrics, and order by the rank of summed ranks."""
    X = np.asarray(corpus_features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != N_COMPLEXITY_FEATURES:
        raise SetVerifyError(f"expected (n, {N_COMPLEXITY_FEATURES}) features")
    subsets = all_feature_subsets()
    cons = np.empty(len(subsets))
    spread = np.empty(len(subsets))
    corr = np.empty(len(subsets))
    for i, subset in enumerate(subsets):
        cols = [f - 1 for f in subset]
        Z, _ = zscore_fit(X[:, cols])
        mask = sum(1 << (f - 1) for f in subset)
        assign, _ = kmeans(Z, k=3, seed=[seed, mask])
        cons[i] = consistency_metric(assign, writer_ids)
        spread[i] = spread_metric(assign)
        corr[i] = correlation_metric(assign, X[:, cols])
    # best = rank 1 for every metric (higher value is better)
    ranks = rankdata(-cons) + rankdata(-spread) + rankdata(-corr)
    order = sorted(range(len(subsets)),
                   key=lambda i: (ranks[i], len(subsets[i]), subsets[i]))
    results = [None] * len(subsets)
    for pos, i in enumerate(order):
        results[i] = SubsetRanking(
            subset=subsets[i], consistency=float(cons[i]),
            spread=float(spread[i]), correlation=float(corr[i]),
            sum_of_ranks=float(ranks[i]), rank_of_ranks=pos + 1,
        )
    return sorted(results, key=lambda r: r.rank_of_ranks)


@dataclass
class ComplexityModel:
    feature_indices: tuple[int, ...]  # one-based, subset of 1..8
    stats: ZScoreStats
    centroids: np.ndarray  # (3, len(subset)), z-space
    group_order: np.ndarray  # cluster index -> complexity level 1..3

    def raw_centroids(self) -> np.ndarray:
        return self.centroids * self.stats.std + self.stats.mean


def fit_complexity_model(corpus_features, subset=DEFAULT_SUBSET,
                         seed: int = 0) -> ComplexityModel:
    """z-score + k-means (k=3) on the chosen subset; cluster labels are
    ordered low-to-high complexity by the raw-unit centroid norm."""
    X = np.asarray(corpus_features, dtype=np.float64)
    cols = [f - 1 for f in subset]
    Z, stats = zscore_fit(X[:, cols])
    _, centroids = kmeans(Z, k=3, seed=seed)
    raw = centroids * stats.std + stats.mean
    order = np.argsort(np.linalg.norm(raw, axis=1), kind="stable")
    group_order = np.empty(3, dtype=np.int64)
    for level, cluster in enumerate(order, start=1):
        group_order[cluster] = level
    return ComplexityModel(
        feature_indices=tuple(subset), stats=stats,
        centroids=centroids, group_order=group_order,
    )


def assign_complexity(features, model: ComplexityModel) -> int:
    """Nearest-centroid level in {1, 2, 3} for one signature."""
    if isinstance(features, ComplexityFeatures):
        vec = features.as_vector()
    else:
        vec = np.asarray(features, dtype=np.float64)
    if len(vec) == N_COMPLEXITY_FEATURES:
        vec = vec[[f - 1 for f in model.feature_indices]]
    z = (vec - model.stats.mean) / model.stats.std
    d2 = ((model.centroids - z) ** 2).sum(axis=1)
    return int(model.group_order[int(d2.argmin())])


def pair_class(li: int, lj: int) -> str:
    """Unordered complexity pair label: C11, C22, C33, C12, C13 or C23."""
    a, b = sorted((int(li), int(lj)))
    if not (1 <= a <= 3 and 1 <= b <= 3):
        raise ValueError("complexity levels must be in {1, 2, 3}")
    return f"C{a}{b}"


_CMODEL_MAGIC = b"SVCM"
_CMODEL_VERSION = 1


def save_complexity_model(path, model: ComplexityModel) -> None:
    d = len(model.feature_indices)
    with open(path, "wb") as fh:
        fh.write(_CMODEL_MAGIC)
        fh.write(struct.pack("<II", _CMODEL_VERSION, d))
        fh.write(struct.pack(f"<{d}I", *model.feature_indices))
        for arr in (model.stats.mean, model.stats.std,
                    model.stats.degenerate.astype(np.float64),
                    model.centroids.reshape(-1),
                    model.group_order.astype(np.float64)):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_complexity_model(path) -> ComplexityModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _CMODEL_MAGIC:
            raise SetVerifyError(f"{path!r} is not a complexity model file")
        version, d = struct.unpack("<II", fh.read(8))
        if version != _CMODEL_VERSION:
            raise SetVerifyError(f"unsupported complexity model version {version}")
        idx = struct.unpack(f"<{d}I", fh.read(4 * d))
        mean = np.frombuffer(fh.read(8 * d), dtype="<f8").copy()
        std = np.frombuffer(fh.read(8 * d), dtype="<f8").copy()
        degen = np.frombuffer(fh.read(8 * d), dtype="<f8") != 0
        centroids = np.frombuffer(fh.read(8 * 3 * d), dtype="<f8").reshape(3, d).copy()
        group_order = np.frombuffer(fh.read(8 * 3), dtype="<f8").astype(np.int64)
    return ComplexityModel(
        feature_indices=idx,
        stats=ZScoreStats(mean=mean, std=std, degenerate=degen),
        centroids=centroids, group_order=group_order,
    )
