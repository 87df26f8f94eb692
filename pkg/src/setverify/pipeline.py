"""Orchestration around the method implementations: a caching signature
store with optional process-pool parallelism, end-to-end bundle training
(including decision thresholds), and the on-disk bundle layout.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .classifier import (GAMMA_GRID_DEFAULT, SIGMA_GRID_DEFAULT, LssvmModel,
                         load_model, save_model)
from .complexity import (ComplexityFeatures, ComplexityModel,
                         assign_complexity, complexity_features,
                         fit_complexity_model, load_complexity_model,
                         save_complexity_model)
from .datasets import CorpusIndex, DatasetManifest
from .distances import FDMatrix, feature_distance_matrix
from .duplication import DuplicationParams
from .errors import SetVerifyError
from .evaluation import ScoredOutcome, eer
from .features import (FeatureBundle, extract_all, load_bundle, save_bundle)
from .imaging import SignatureRecord, preprocess
from .methods import (Eq1Params, MethodBundle, SignatureSet, method1_matrix,
                      method1_train, method2_train, method3_train,
                      pair_indices, signature_model, threshold_key,
                      verification_score)

BUNDLE_META_NAME = "meta.json"
BUNDLE_FORMAT = 1


@dataclass(frozen=True)
class StoreConfig:
    """Everything a worker process needs to recompute store entries."""

    sc_dim: int = 60
    dup: DuplicationParams = field(default_factory=DuplicationParams)
    sigma_grid: tuple = tuple(SIGMA_GRID_DEFAULT)
    gamma_grid: tuple = tuple(GAMMA_GRID_DEFAULT)
    folds_signature: int = 2


_WORKER_CFG: StoreConfig | None = None


def _init_worker(cfg: StoreConfig) -> None:
    global _WORKER_CFG
    _WORKER_CFG = cfg


def _w_features(path: str):
    cfg = _WORKER_CFG
    rec = preprocess(path)
    return path, extract_all(rec, sc_dim=cfg.sc_dim), complexity_features(rec)


def _w_m1_model(path: str):
    cfg = _WORKER_CFG
    rec = preprocess(path)
    model = signature_model(rec.gray, cfg.dup,
                            np.asarray(cfg.sigma_grid), np.asarray(cfg.gamma_grid),
                            folds=cfg.folds_signature)
    return path, model


def _w_fd(task):
    ka, kb, ba, bb = task
    return ka, kb, feature_distance_matrix(ba, bb).values


class SignatureStore:
    """Caches records, feature bundles, complexity features, per-signature
    models, and FD matrices, keyed by file path (or pixel content for
    in-memory images).  Pure recomputation semantics: parallel prefetching
    returns bitwise the same entries as the serial path."""

    def __init__(self, sc_dim: int = 60, dup: DuplicationParams | None = None,
                 sigma_grid=None, gamma_grid=None, folds_signature: int = 2,
                 threads: int = 1, feature_cache_dir=None):
        self.config = StoreConfig(
            sc_dim=sc_dim,
            dup=dup or DuplicationParams(),
            sigma_grid=tuple(SIGMA_GRID_DEFAULT if sigma_grid is None else sigma_grid),
            gamma_grid=tuple(GAMMA_GRID_DEFAULT if gamma_grid is None else gamma_grid),
            folds_signature=folds_signature,
        )
        self.threads = max(1, int(threads))
        self.feature_cache_dir = Path(feature_cache_dir) if feature_cache_dir else None
        if self.feature_cache_dir:
            self.feature_cache_dir.mkdir(parents=True, exist_ok=True)
        self._records: dict[str, SignatureRecord] = {}
        self._bundles: dict[str, FeatureBundle] = {}
        self._cx: dict[str, ComplexityFeatures] = {}
        self._m1: dict[str, LssvmModel] = {}
        self._fd: dict[tuple[str, str], FDMatrix] = {}
        self._pool: ProcessPoolExecutor | None = None

    # -- lifecycle --

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _pool_for(self, n_tasks: int):
        if self.threads <= 1 or n_tasks < 2:
            return None
        if self._pool is None:
            self._pool = ProcessPoolExecutor(
                max_workers=self.threads, initializer=_init_worker,
                initargs=(self.config,))
        return self._pool

    # -- keys and records --

    @property
    def dup(self) -> DuplicationParams:
        return self.config.dup

    @property
    def sigma_grid(self) -> np.ndarray:
        return np.asarray(self.config.sigma_grid)

    @property
    def gamma_grid(self) -> np.ndarray:
        return np.asarray(self.config.gamma_grid)

    def _key(self, rec: SignatureRecord) -> str:
        if rec.path:
            return "p:" + os.path.abspath(rec.path)
        h = hashlib.blake2b(digest_size=16)
        h.update(np.asarray(rec.gray.pixels.shape, dtype=np.int64).tobytes())
        h.update(rec.gray.pixels.tobytes())
        return "c:" + h.hexdigest()

    def record(self, path, writer_id=None, genuine=None) -> SignatureRecord:
        key = "p:" + os.path.abspath(str(path))
        rec = self._records.get(key)
        if rec is None:
            rec = preprocess(str(path), writer_id=writer_id, genuine=genuine)
            self._records[key] = rec
        elif (writer_id, genuine) != (rec.writer_id, rec.genuine) and writer_id is not None:
            rec = replace(rec, writer_id=writer_id, genuine=genuine)
            self._records[key] = rec
        return rec

    def load_sets(self, index: CorpusIndex, manifest: DatasetManifest) -> list[SignatureSet]:
        sets = []
        for entry in manifest.sets:
            recs = [
                self.record(index.resolve(ref.path), writer_id=ref.writer_id,
                            genuine=ref.genuine)
                for ref in entry.signatures
            ]
            sets.append(SignatureSet(signatures=recs, truth=entry.truth,
                                     set_id=entry.set_id))
        return sets

    # -- cached ingredients --

    def _disk_bundle_path(self, key: str) -> Path | None:
        if self.feature_cache_dir is None:
            return None
        name = hashlib.blake2b(key.encode(), digest_size=16).hexdigest()
        return self.feature_cache_dir / f"{name}.svfb"

    def bundle(self, rec: SignatureRecord) -> FeatureBundle:
        key = self._key(rec)
        hit = self._bundles.get(key)
        if hit is not None:
            return hit
        disk = self._disk_bundle_path(key)
        if disk is not None and disk.exists():
            bundle = load_bundle(disk)
        else:
            bundle = extract_all(rec, sc_dim=self.config.sc_dim)
            if disk is not None:
                tmp = disk.with_suffix(".tmp")
                save_bundle(tmp, bundle)
                tmp.replace(disk)
        self._bundles[key] = bundle
        return bundle

    def texture(self, rec: SignatureRecord) -> np.ndarray:
        b = self.bundle(rec)
        return np.concatenate([b.lbp, b.ldp])

    def complexity(self, rec: SignatureRecord) -> ComplexityFeatures:
        key = self._key(rec)
        hit = self._cx.get(key)
        if hit is None:
            hit = complexity_features(rec)
            self._cx[key] = hit
        return hit

    def m1_model(self, rec: SignatureRecord) -> LssvmModel:
        key = self._key(rec)
        hit = self._m1.get(key)
        if hit is None:
            hit = signature_model(rec.gray, self.dup, self.sigma_grid,
                                  self.gamma_grid, self.config.folds_signature)
            self._m1[key] = hit
        return hit

    def fd(self, a: SignatureRecord, b: SignatureRecord) -> FDMatrix:
        ka, kb = self._key(a), self._key(b)
        if kb < ka:
            a, b = b, a
            ka, kb = kb, ka
        hit = self._fd.get((ka, kb))
        if hit is None:
            hit = feature_distance_matrix(self.bundle(a), self.bundle(b),
                                          pair=(a.path or ka, b.path or kb))
            self._fd[(ka, kb)] = hit
        return hit

    # -- prefetching --

    def _unique_records(self, sets) -> list[tuple[str, SignatureRecord]]:
        seen = {}
        for sigset in sets:
            for rec in sigset.signatures:
                seen.setdefault(self._key(rec), rec)
        return sorted(seen.items())

    def prefetch_for_sets(self, sets, methods=(1, 2, 3)) -> None:
        """Fill the caches needed by the given methods, in parallel when the
        store was built with threads > 1."""
        records = self._unique_records(sets)
        missing = [(k, r) for k, r in records
                   if k not in self._bundles and r.path]
        pool = self._pool_for(len(missing))
        if pool is not None and missing:
            paths = [os.path.abspath(r.path) for _, r in missing]
            for path, bundle, cx in pool.map(_w_features, paths, chunksize=4):
                key = "p:" + path
                self._bundles[key] = bundle
                self._cx[key] = cx
                disk = self._disk_bundle_path(key)
                if disk is not None and not disk.exists():
                    save_bundle(disk, bundle)
        for key, rec in records:
            self.bundle(rec)

        if 1 in methods:
            m1_missing = [(k, r) for k, r in records
                          if k not in self._m1 and r.path]
            pool = self._pool_for(len(m1_missing))
            if pool is not None and m1_missing:
                paths = [os.path.abspath(r.path) for _, r in m1_missing]
                for path, model in pool.map(_w_m1_model, paths, chunksize=2):
                    self._m1["p:" + path] = model
            for key, rec in records:
                self.m1_model(rec)

        if 2 in methods or 3 in methods:
            tasks = []
            seen_pairs = set()
            for sigset in sets:
                for i, j in pair_indices(sigset.n):
                    a, b = sigset.signatures[i], sigset.signatures[j]
                    ka, kb = sorted((self._key(a), self._key(b)))
                    if (ka, kb) in self._fd or (ka, kb) in seen_pairs:
                        continue
                    seen_pairs.add((ka, kb))
                    tasks.append((ka, kb, self._bundles[ka], self._bundles[kb]))
            pool = self._pool_for(len(tasks))
            if pool is not None and tasks:
                for ka, kb, values in pool.map(_w_fd, tasks, chunksize=8):
                    self._fd[(ka, kb)] = FDMatrix(values=values, pair=(ka, kb))
            else:
                for ka, kb, ba, bb in tasks:
                    self._fd[(ka, kb)] = FDMatrix(
                        values=feature_distance_matrix(ba, bb).values,
                        pair=(ka, kb))


def store_providers(store: SignatureStore, bundle: MethodBundle) -> dict:
    """Provider callables wiring methods.* functions to the store caches."""
    providers = {
        "model_provider": store.m1_model,
        "texture_provider": store.texture,
        "fd_provider": store.fd,
    }
    if bundle.complexity_model is not None:
        cx_model = bundle.complexity_model
        providers["level_provider"] = (
            lambda rec: assign_complexity(store.complexity(rec), cx_model))
    return providers


def train_bundle(train_sets, methods=(1, 2, 3), store: SignatureStore | None = None,
                 fusion: str = "avg", eq1: Eq1Params | None = None,
                 seed: int = 0, folds_set: int = 10,
                 compute_thresholds: bool = True,
                 meta: dict | None = None) -> MethodBundle:
    """Train every requested method on the training sets.

    Thresholds are fixed at the EER point of the training outcomes, one per
    (method, fusion).  Method 3 trains the method-2 model too whenever some
    complexity class has to fall back to it.
    """
    store = store or SignatureStore()
    eq1 = eq1 or Eq1Params()
    bundle = MethodBundle(eq1=eq1, dup=store.dup, fusion=fusion,
                          meta=meta or {})
    store.prefetch_for_sets(train_sets, methods=methods)

    if 1 in methods:
        matrix_provider = lambda s: method1_matrix(
            s, store.dup, eq1, model_provider=store.m1_model,
            texture_provider=store.texture)
        bundle.method1_models = method1_train(
            train_sets, store.dup, eq1, store.sigma_grid, store.gamma_grid,
            folds=folds_set, seed=seed, matrix_provider=matrix_provider)

    if 2 in methods:
        bundle.method2_model = method2_train(
            train_sets, store.fd, store.sigma_grid, store.gamma_grid,
            folds=folds_set, seed=[seed, 2])

    if 3 in methods:
        rows, seen = [], set()
        for sigset in train_sets:
            for rec in sigset.signatures:
                key = store._key(rec)
                if rec.genuine and key not in seen:
                    seen.add(key)
                    rows.append(store.complexity(rec).as_vector())
        cx_model = fit_complexity_model(np.stack(rows), seed=[seed, 30])
        bundle.complexity_model = cx_model
        level_provider = (
            lambda rec: assign_complexity(store.complexity(rec), cx_model))
        models, fallback = method3_train(
            train_sets, cx_model, store.fd, level_provider,
            store.sigma_grid, store.gamma_grid, folds=folds_set, seed=[seed, 3])
        bundle.method3_models = models
        bundle.m3_fallback = fallback
        if fallback and bundle.method2_model is None:
            bundle.method2_model = method2_train(
                train_sets, store.fd, store.sigma_grid, store.gamma_grid,
                folds=folds_set, seed=[seed, 2])

    if compute_thresholds:
        providers = store_providers(store, bundle)
        for m in methods:
            outcomes = [
                ScoredOutcome(
                    verification_score(sigset, bundle, m, **providers)[0],
                    sigset.truth)
                for sigset in train_sets
            ]
            _, thr = eer(outcomes)
            bundle.thresholds[threshold_key(m, fusion)] = thr
    return bundle


# ---------------------------------------------------------------------------
# bundle directory layout


def save_method_bundle(bundle_dir, bundle: MethodBundle,
                       provenance: dict | None = None) -> None:
    """bundle/{meta.json, m1_n2.model .. m1_n5.model, m2.model,
    m3_C11.model .. m3_C23.model, complexity.model}"""
    bundle_dir = Path(bundle_dir)
    bundle_dir.mkdir(parents=True, exist_ok=True)
    files = {}
    for n, model in sorted(bundle.method1_models.items()):
        name = f"m1_n{n}.model"
        save_model(bundle_dir / name, model)
        files[f"m1_n{n}"] = name
    if bundle.method2_model is not None:
        save_model(bundle_dir / "m2.model", bundle.method2_model)
        files["m2"] = "m2.model"
    for cls, model in sorted(bundle.method3_models.items()):
        name = f"m3_{cls}.model"
        save_model(bundle_dir / name, model)
        files[f"m3_{cls}"] = name
    if bundle.complexity_model is not None:
        save_complexity_model(bundle_dir / "complexity.model",
                              bundle.complexity_model)
        files["complexity"] = "complexity.model"
    meta = {
        "format_version": BUNDLE_FORMAT,
        "eq1": asdict(bundle.eq1),
        "dup": asdict(bundle.dup),
        "fusion": bundle.fusion,
        "thresholds": bundle.thresholds,
        "m3_fallback": bundle.m3_fallback,
        "files": files,
        "meta": bundle.meta,
        "provenance": provenance or {},
    }
    (bundle_dir / BUNDLE_META_NAME).write_text(
        json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_method_bundle(bundle_dir) -> MethodBundle:
    bundle_dir = Path(bundle_dir)
    meta_path = bundle_dir / BUNDLE_META_NAME
    if not meta_path.exists():
        raise SetVerifyError(f"{bundle_dir} has no {BUNDLE_META_NAME}")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != BUNDLE_FORMAT:
        raise SetVerifyError("unsupported bundle format")
    dup_raw = dict(meta["dup"])
    dup_raw["warp_periods"] = tuple(dup_raw["warp_periods"])
    bundle = MethodBundle(
        eq1=Eq1Params(**meta["eq1"]),
        dup=DuplicationParams(**dup_raw),
        fusion=meta["fusion"],
        thresholds=dict(meta["thresholds"]),
        m3_fallback=list(meta["m3_fallback"]),
        meta=meta.get("meta", {}),
    )
    for key, name in meta["files"].items():
        path = bundle_dir / name
        if key.startswith("m1_n"):
            bundle.method1_models[int(key[4:])] = load_model(path)
        elif key == "m2":
            bundle.method2_model = load_model(path)
        elif key.startswith("m3_"):
            bundle.method3_models[key[3:]] = load_model(path)
        elif key == "complexity":
            bundle.complexity_model = load_complexity_model(path)
    return bundle
