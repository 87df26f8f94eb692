"""The three set-verification methods.

Method 1 scores every signature of a set against per-signature generative
models trained on duplicated copies, building an n x n similarity matrix
that a set-size-specific classifier judges.  Method 2 classifies the
C(n,2) feature-distance matrices of the set with a single model and fuses
the per-pair scores.  Method 3 routes each pair to one of six classifiers
chosen by the pair's complexity classes.

Heavy ingredients (feature bundles, FD matrices, per-signature models) are
obtained through provider callables so callers can plug in caching and
parallelism; the defaults compute everything inline.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .classifier import (LssvmModel, grid_search, score, train,
                         train_one_class)
from .complexity import (ComplexityModel, PAIR_CLASSES, assign_complexity,
                         complexity_features, pair_class)
from .datasets import TRUTH_MULTI, TRUTH_SINGLE
from .distances import FDMatrix, feature_distance_matrix
from .duplication import DuplicationParams, duplicate
from .errors import (InsufficientDataError, MissingModelError,
                     SetVerifyError)
from .features import extract_all, extract_texture
from .imaging import GrayImage, SignatureRecord, preprocess

FUSIONS = ("min", "max", "avg")
MIN_SET_SIZE = 2
MAX_SET_SIZE = 5


@dataclass(frozen=True)
class Eq1Params:
    """Piecewise score displacement: s+r1 above t1, s-r2 below t2, else s."""

    r1: float = 1.0
    r2: float = 1.0
    t1: float = 1.0
    t2: float = -1.0

    def __post_init__(self):
        if self.t2 > self.t1:
            raise SetVerifyError("t2 must not exceed t1")

    @classmethod
    def literal(cls) -> "Eq1Params":
        """The published parameterization taken literally: t1 = t2 = 1."""
        return cls(r1=1.0, r2=1.0, t1=1.0, t2=1.0)


def eq1_transform(s, p: Eq1Params):
    arr = np.asarray(s, dtype=np.float64)
    out = np.where(arr > p.t1, arr + p.r1,
                   np.where(arr < p.t2, arr - p.r2, arr))
    return float(out) if np.isscalar(s) else out


@dataclass
class SignatureSet:
    """2..5 signatures whose joint authorship is questioned."""

    signatures: list[SignatureRecord]
    truth: str | None = None  # TRUTH_SINGLE / TRUTH_MULTI on labeled data
    set_id: str = ""

    def __post_init__(self):
        if not MIN_SET_SIZE <= len(self.signatures) <= MAX_SET_SIZE:
            raise SetVerifyError(
                f"a set holds {MIN_SET_SIZE}..{MAX_SET_SIZE} signatures, "
                f"got {len(self.signatures)}")
        if self.truth not in (None, TRUTH_SINGLE, TRUTH_MULTI):
            raise SetVerifyError(f"unknown truth {self.truth!r}")

    @property
    def n(self) -> int:
        return len(self.signatures)


@dataclass
class SimilarityMatrix:
    values: np.ndarray  # (n, n), transformed scores

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        n = vals.shape[0]
        if vals.shape != (n, n) or not MIN_SET_SIZE <= n <= MAX_SET_SIZE:
            raise SetVerifyError(f"similarity matrix shape {vals.shape} invalid")
        self.values = vals

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def flatten(self) -> np.ndarray:
        return self.values.reshape(-1).copy()  # row-major


def pair_indices(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def fuse(per_pair, how: str) -> float:
    vals = np.asarray(per_pair, dtype=np.float64)
    if how == "min":
        return float(vals.min())
    if how == "max":
        return float(vals.max())
    if how == "avg":
        return float(vals.mean())
    raise SetVerifyError(f"unknown fusion {how!r}")


# ---------------------------------------------------------------------------
# Method 1


def signature_dup_params(gray: GrayImage, base: DuplicationParams) -> DuplicationParams:
    """Per-signature duplication parameters with a content-derived sub-seed,
    so a signature's generative model does not depend on which set it is in."""
    h = hashlib.blake2b(digest_size=8)
    h.update(np.int64(base.seed).tobytes())
    h.update(np.asarray(gray.pixels.shape, dtype=np.int64).tobytes())
    h.update(gray.pixels.tobytes())
    return replace(base, seed=int.from_bytes(h.digest(), "little") >> 1)


def signature_model(gray: GrayImage, dup: DuplicationParams,
                    sigma_grid=None, gamma_grid=None,
                    folds: int = 2) -> LssvmModel:
    """One-class model of a single signature, trained on the original plus
    its duplicates (texture features), hyperparameters by 2-fold CV."""
    params = signature_dup_params(gray, dup)
    copies = [gray] + duplicate(gray, params)
    X = np.stack([extract_texture(preprocess(im)) for im in copies])
    sg, gm = grid_search(X, mode="one_class", folds=folds, seed=params.seed,
                         sigma_grid=sigma_grid, gamma_grid=gamma_grid)
    return train_one_class(X, sg, gm)


def method1_matrix(sigset: SignatureSet, dup: DuplicationParams,
                   p: Eq1Params, sigma_grid=None, gamma_grid=None,
                   folds: int = 2, model_provider=None,
                   texture_provider=None) -> SimilarityMatrix:
    """The transformed n x n similarity score matrix of one set."""
    if model_provider is None:
        model_provider = lambda rec: signature_model(
            rec.gray, dup, sigma_grid, gamma_grid, folds)
    if texture_provider is None:
        texture_provider = extract_texture
    models = [model_provider(rec) for rec in sigset.signatures]
    textures = [texture_provider(rec) for rec in sigset.signatures]
    n = sigset.n
    raw = np.empty((n, n))
    for i, model in enumerate(models):
        raw[i] = model.decision_values(np.stack(textures))
    return SimilarityMatrix(eq1_transform(raw, p))


def method1_training_rows(train_sets, matrix_provider):
    """Flattened similarity matrices grouped by set size, with labels."""
    rows: dict[int, list[np.ndarray]] = {}
    labels: dict[int, list[float]] = {}
    for sigset in train_sets:
        mat = matrix_provider(sigset)
        rows.setdefault(sigset.n, []).append(mat.flatten())
        labels.setdefault(sigset.n, []).append(
            1.0 if sigset.truth == TRUTH_SINGLE else -1.0)
    return {n: (np.stack(rows[n]), np.asarray(labels[n])) for n in sorted(rows)}


def method1_train(train_sets, dup: DuplicationParams, p: Eq1Params,
                  sigma_grid=None, gamma_grid=None, folds: int = 10,
                  seed: int = 0, matrix_provider=None) -> dict[int, LssvmModel]:
    """One binary classifier per set size over flattened score matrices."""
    if matrix_provider is None:
        matrix_provider = lambda s: method1_matrix(s, dup, p, sigma_grid, gamma_grid)
    grouped = method1_training_rows(train_sets, matrix_provider)
    models = {}
    for n, (X, y) in grouped.items():
        if min((y > 0).sum(), (y < 0).sum()) < 2:
            raise InsufficientDataError(f"size {n} lacks labeled sets per class")
        sg, gm = grid_search(X, y, sigma_grid, gamma_grid, folds=folds,
                             seed=[seed, n])
        models[n] = train(X, y, sg, gm)
    return models


# ---------------------------------------------------------------------------
# Methods 2 and 3


def pair_label(a: SignatureRecord, b: SignatureRecord) -> float:
    """+1 only for two genuine specimens of the same writer; every pair that
    involves a forgery (or different writers) is a negative."""
    same_writer = (a.writer_id is not None and a.writer_id == b.writer_id)
    return 1.0 if (a.genuine and b.genuine and same_writer) else -1.0


def default_fd_provider(a: SignatureRecord, b: SignatureRecord) -> FDMatrix:
    return feature_distance_matrix(
        extract_all(a), extract_all(b),
        pair=(a.path or "", b.path or ""))


def method2_pairs(train_sets, fd_provider=None):
    """Labeled FD matrices from every unordered pair of every training set."""
    fd_provider = fd_provider or default_fd_provider
    matrices, labels = [], []
    for sigset in train_sets:
        for i, j in pair_indices(sigset.n):
            a, b = sigset.signatures[i], sigset.signatures[j]
            matrices.append(fd_provider(a, b))
            labels.append(pair_label(a, b))
    return matrices, np.asarray(labels)


def method2_train(train_sets, fd_provider=None, sigma_grid=None,
                  gamma_grid=None, folds: int = 10, seed: int = 0) -> LssvmModel:
    matrices, y = method2_pairs(train_sets, fd_provider)
    X = np.stack([m.flatten() for m in matrices])
    sg, gm = grid_search(X, y, sigma_grid, gamma_grid, folds=folds, seed=seed)
    return train(X, y, sg, gm)


def method2_verify(sigset: SignatureSet, model: LssvmModel, fusion: str = "avg",
                   fd_provider=None):
    """Fused score over the set's C(n,2) pair scores (higher = more likely
    a single writer)."""
    fd_provider = fd_provider or default_fd_provider
    rows = []
    for i, j in pair_indices(sigset.n):
        rows.append(fd_provider(sigset.signatures[i], sigset.signatures[j]).flatten())
    per_pair = model.decision_values(np.stack(rows))
    return fuse(per_pair, fusion), per_pair.tolist()


def default_level_provider(cx_model: ComplexityModel):
    def level(rec: SignatureRecord) -> int:
        return assign_complexity(complexity_features(rec), cx_model)
    return level


def method3_train(train_sets, cx_model: ComplexityModel, fd_provider=None,
                  level_provider=None, sigma_grid=None, gamma_grid=None,
                  folds: int = 10, seed: int = 0):
    """Six pair-class classifiers; classes whose pools cannot be trained are
    returned as fallback classes (scored by the method-2 model instead)."""
    fd_provider = fd_provider or default_fd_provider
    level_provider = level_provider or default_level_provider(cx_model)
    pools: dict[str, tuple[list[np.ndarray], list[float]]] = {
        c: ([], []) for c in PAIR_CLASSES}
    for sigset in train_sets:
        levels = [level_provider(rec) for rec in sigset.signatures]
        for i, j in pair_indices(sigset.n):
            a, b = sigset.signatures[i], sigset.signatures[j]
            cls = pair_class(levels[i], levels[j])
            pools[cls][0].append(fd_provider(a, b).flatten())
            pools[cls][1].append(pair_label(a, b))
    models: dict[str, LssvmModel] = {}
    fallback: list[str] = []
    for ci, cls in enumerate(PAIR_CLASSES):
        rows, labels = pools[cls]
        y = np.asarray(labels)
        if len(rows) < 4 or min((y > 0).sum(), (y < 0).sum()) < 2:
            fallback.append(cls)
            continue
        X = np.stack(rows)
        try:
            sg, gm = grid_search(X, y, sigma_grid, gamma_grid, folds=folds,
                                 seed=[seed, ci])
            models[cls] = train(X, y, sg, gm)
        except InsufficientDataError:
            fallback.append(cls)
    return models, fallback


def method3_verify(sigset: SignatureSet, models: dict[str, LssvmModel],
                   cx_model: ComplexityModel, fusion: str = "avg",
                   fallback: list[str] = (), m2_model: LssvmModel | None = None,
                   fd_provider=None, level_provider=None):
    """Score each pair with the classifier of its complexity class."""
    fd_provider = fd_provider or default_fd_provider
    level_provider = level_provider or default_level_provider(cx_model)
    levels = [level_provider(rec) for rec in sigset.signatures]
    per_pair, classes = [], []
    for i, j in pair_indices(sigset.n):
        cls = pair_class(levels[i], levels[j])
        flat = fd_provider(sigset.signatures[i], sigset.signatures[j]).flatten()
        model = models.get(cls)
        if model is None or cls in fallback:
            if m2_model is None:
                raise MissingModelError(
                    f"class {cls} needs the method-2 fallback model")
            model = m2_model
        per_pair.append(score(model, flat))
        classes.append(cls)
    return fuse(per_pair, fusion), per_pair, classes


# ---------------------------------------------------------------------------
# Bundle and the user-facing verify


@dataclass
class MethodBundle:
    """Every trained model plus the deployment metadata."""

    eq1: Eq1Params = field(default_factory=Eq1Params)
    dup: DuplicationParams = field(default_factory=DuplicationParams)
    fusion: str = "avg"
    method1_models: dict[int, LssvmModel] = field(default_factory=dict)
    method2_model: LssvmModel | None = None
    method3_models: dict[str, LssvmModel] = field(default_factory=dict)
    complexity_model: ComplexityModel | None = None
    m3_fallback: list[str] = field(default_factory=list)
    thresholds: dict[str, float] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


@dataclass
class VerificationResult:
    method: int
    score: float
    decision: str  # TRUTH_SINGLE / TRUTH_MULTI
    threshold: float
    fusion: str | None = None
    per_pair: list[float] | None = None
    pair_classes: list[str] | None = None
    set_id: str = ""

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "score": self.score,
            "decision": self.decision,
            "threshold": self.threshold,
            "fusion": self.fusion,
            "per_pair": self.per_pair,
            "pair_classes": self.pair_classes,
            "set_id": self.set_id,
        }


def threshold_key(method: int, fusion: str) -> str:
    return str(method) if method == 1 else f"{method}:{fusion}"


def verification_score(sigset: SignatureSet, bundle: MethodBundle, method: int,
                       sigma_grid=None, gamma_grid=None,
                       model_provider=None, texture_provider=None,
                       fd_provider=None, level_provider=None):
    """(fused score, per-pair scores or None, pair classes or None)."""
    if method == 1:
        model = bundle.method1_models.get(sigset.n)
        if model is None:
            raise MissingModelError(f"no method-1 model for sets of {sigset.n}")
        mat = method1_matrix(sigset, bundle.dup, bundle.eq1,
                             sigma_grid, gamma_grid,
                             model_provider=model_provider,
                             texture_provider=texture_provider)
        return score(model, mat.flatten()), None, None
    if method == 2:
        if bundle.method2_model is None:
            raise MissingModelError("method-2 model missing")
        fused, per_pair = method2_verify(sigset, bundle.method2_model,
                                         bundle.fusion, fd_provider)
        return fused, per_pair, None
    if method == 3:
        if bundle.complexity_model is None or not (
                bundle.method3_models or bundle.method2_model):
            raise MissingModelError("method-3 models missing")
        fused, per_pair, classes = method3_verify(
            sigset, bundle.method3_models, bundle.complexity_model,
            bundle.fusion, bundle.m3_fallback, bundle.method2_model,
            fd_provider, level_provider)
        return fused, per_pair, classes
    raise SetVerifyError(f"unknown method {method}")


def verify(sigset: SignatureSet, bundle: MethodBundle, method: int,
           **providers) -> VerificationResult:
    """Decide whether all signatures of the set share one author."""
    fused, per_pair, classes = verification_score(sigset, bundle, method,
                                                  **providers)
    thr = bundle.thresholds.get(threshold_key(method, bundle.fusion), 0.0)
    return VerificationResult(
        method=method,
        score=fused,
        decision=TRUTH_SINGLE if fused >= thr else TRUTH_MULTI,
        threshold=thr,
        fusion=None if method == 1 else bundle.fusion,
        per_pair=per_pair,
        pair_classes=classes,
        set_id=sigset.set_id,
    )
