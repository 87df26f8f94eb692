"""Biometric evaluation: FAR/FRR, DET sweep, EER, AUC, the repeated
train/test experiment runner, and the error rates of Likert-scale human
response files.  The report path also renders the DET curve to an SVG
figure next to the delimited output.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .datasets import (TRUTH_MULTI, TRUTH_SINGLE, CorpusIndex, build_dataset,
                       index_corpus, split)
from .errors import MalformedRowError, OneClassOnlyError


@dataclass(frozen=True)
class ScoredOutcome:
    score: float
    truth: str  # TRUTH_SINGLE or TRUTH_MULTI


def _split_scores(outcomes):
    single = np.array([o.score for o in outcomes if o.truth == TRUTH_SINGLE])
    multi = np.array([o.score for o in outcomes if o.truth == TRUTH_MULTI])
    if len(single) == 0 or len(multi) == 0:
        raise OneClassOnlyError("need outcomes from both truth classes")
    return single, multi


def far_frr(outcomes, threshold: float) -> tuple[float, float]:
    """FAR: % of mixed-author sets accepted as single-writer (score >=
    threshold).  FRR: % of single-writer sets rejected (score < threshold)."""
    single, multi = _split_scores(outcomes)
    far = 100.0 * (multi >= threshold).mean()
    frr = 100.0 * (single < threshold).mean()
    return float(far), float(frr)


def _candidate_thresholds(outcomes) -> np.ndarray:
    scores = np.unique([o.score for o in outcomes])
    mids = (scores[:-1] + scores[1:]) / 2.0
    return np.concatenate([[scores[0] - 1.0], mids, [scores[-1] + 1.0]])


def det_sweep(outcomes) -> list[tuple[float, float, float]]:
    """(threshold, FAR%, FRR%) over all candidate thresholds, ascending."""
    return [(float(t), *far_frr(outcomes, t)) for t in _candidate_thresholds(outcomes)]


def eer(outcomes) -> tuple[float, float]:
    """Equal error rate as (FAR+FRR)/2 at the threshold minimizing |FAR-FRR|
    (lowest such threshold on ties); returns (eer %, threshold)."""
    best = None
    for t, far, frr in det_sweep(outcomes):
        gap = abs(far - frr)
        if best is None or gap < best[0]:
            best = (gap, (far + frr) / 2.0, t)
    return best[1], best[2]


def auc(outcomes) -> float:
    """Trapezoidal area under the ROC, in percent; equals the normalized
    Mann-Whitney U statistic."""
    sweep = det_sweep(outcomes)
    fpr = np.array([p[1] for p in sweep]) / 100.0
    tpr = 1.0 - np.array([p[2] for p in sweep]) / 100.0
    order = np.argsort(fpr, kind="stable")
    return float(100.0 * np.trapezoid(tpr[order], fpr[order]))


# ---------------------------------------------------------------------------
# experiment runner


@dataclass
class RepetitionResult:
    repetition: int
    build_seed: int
    split_seed: int
    eer: float
    auc: float
    eer_threshold: float


@dataclass
class ExperimentReport:
    method: int
    fusion: str
    seed: int
    repetitions: list[RepetitionResult]
    eer: float  # mean over repetitions
    eer_std: float
    auc: float
    auc_std: float
    pooled_eer: float
    pooled_auc: float
    det_points: list[tuple[float, float, float]]  # pooled (thr, FAR%, FRR%)
    provenance: dict = field(default_factory=dict)


def report_to_json(report: ExperimentReport) -> str:
    return json.dumps(asdict(report), sort_keys=True, indent=1) + "\n"


def report_from_json(text: str) -> ExperimentReport:
    raw = json.loads(text)
    raw["repetitions"] = [RepetitionResult(**r) for r in raw["repetitions"]]
    raw["det_points"] = [tuple(p) for p in raw["det_points"]]
    return ExperimentReport(**raw)


def run_experiment(corpus, method: int, repetitions: int = 10, seed: int = 0,
                   fusion: str = "avg", store=None, sets_per_size: int = 100,
                   folds_set: int = 10, provenance: dict | None = None,
                   progress=None) -> ExperimentReport:
    """The full protocol: per repetition, rebuild the dataset of sets with a
    fresh seed, split 50/50, train the method on one half and score the
    other; report per-repetition and pooled EER/AUC plus the pooled DET."""
    from .pipeline import SignatureStore, store_providers, train_bundle

    index = corpus if isinstance(corpus, CorpusIndex) else index_corpus(corpus)
    if store is None:
        store = SignatureStore()
    rep_seeds = np.random.SeedSequence(seed).generate_state(
        2 * repetitions, dtype=np.uint64)
    reps: list[RepetitionResult] = []
    pooled: list[ScoredOutcome] = []
    for r in range(repetitions):
        build_seed = int(rep_seeds[2 * r] >> 1)
        split_seed = int(rep_seeds[2 * r + 1] >> 1)
        manifest = build_dataset(index, seed=build_seed,
                                 sets_per_size=sets_per_size)
        train_m, test_m = split(manifest, 0.5, seed=split_seed)
        train_sets = store.load_sets(index, train_m)
        test_sets = store.load_sets(index, test_m)
        bundle = train_bundle(
            train_sets, methods=(method,), store=store, fusion=fusion,
            seed=build_seed, folds_set=folds_set, compute_thresholds=False)
        providers = store_providers(store, bundle)
        outcomes = []
        from .methods import verification_score
        store.prefetch_for_sets(test_sets, methods=(method,))
        for sigset in test_sets:
            fused, _, _ = verification_score(sigset, bundle, method, **providers)
            outcomes.append(ScoredOutcome(fused, sigset.truth))
        e, thr = eer(outcomes)
        a = auc(outcomes)
        reps.append(RepetitionResult(r, build_seed, split_seed, e, a, thr))
        pooled.extend(outcomes)
        if progress is not None:
            progress(r, repetitions, e, a)
    eers = np.array([rr.eer for rr in reps])
    aucs = np.array([rr.auc for rr in reps])
    pooled_eer, _ = eer(pooled)
    return ExperimentReport(
        method=method, fusion=fusion, seed=int(seed), repetitions=reps,
        eer=float(eers.mean()), eer_std=float(eers.std()),
        auc=float(aucs.mean()), auc_std=float(aucs.std()),
        pooled_eer=pooled_eer, pooled_auc=auc(pooled),
        det_points=det_sweep(pooled),
        provenance=provenance or {},
    )


# ---------------------------------------------------------------------------
# DET artifacts (CSV + SVG figure)


def write_det_csv(path, det_points, provenance: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for key, value in sorted((provenance or {}).items()):
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(["threshold", "far_percent", "frr_percent"])
        for t, far, frr in det_points:
            writer.writerow([repr(t), repr(far), repr(frr)])


def _deviate(p: np.ndarray) -> np.ndarray:
    from scipy.stats import norm
    return norm.ppf(np.clip(p, 1e-4, 1.0 - 1e-4))


def render_det_svg(path, det_points, eer_value: float | None = None,
                   title: str = "DET", deviate: bool = False,
                   hashsalt: str = "setverify") -> None:
    """Standalone DET curve figure; deterministic SVG bytes (no timestamps,
    fixed hash salt)."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    far = np.array([p[1] for p in det_points])
    frr = np.array([p[2] for p in det_points])
    with plt.rc_context({"svg.hashsalt": hashsalt}):
        fig, ax = plt.subplots(figsize=(5.0, 5.0))
        if deviate:
            ax.plot(_deviate(far / 100.0), _deviate(frr / 100.0), "-")
            ticks = np.array([1, 5, 10, 20, 40, 60, 80])
            ax.set_xticks(_deviate(ticks / 100.0), [str(v) for v in ticks])
            ax.set_yticks(_deviate(ticks / 100.0), [str(v) for v in ticks])
        else:
            ax.plot(far, frr, "-")
            ax.set_xlim(0, 100)
            ax.set_ylim(0, 100)
        ax.set_xlabel("FAR (%)")
        ax.set_ylabel("FRR (%)")
        label = title if eer_value is None else f"{title} (EER {eer_value:.2f}%)"
        ax.set_title(label)
        ax.grid(True, alpha=0.4)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


# ---------------------------------------------------------------------------
# Likert response files


@dataclass
class LikertReport:
    fssr: float | None  # % of mixed sets judged same-writer
    fmsr: float | None  # % of single-writer sets judged multiple
    ace: float | None
    n_rows: int
    n_confused: int
    all_confused: bool


def likert_metrics(source) -> LikertReport:
    """FSSR/FMSR/ACE from rows of (set_id, truth, likert 1..7); 5..7 means
    same-writer, 1..3 means multiple writers, 4 is excluded as confusion."""
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            rows = list(csv.reader(fh))
    else:
        rows = [list(r) for r in source]
    if rows and [c.strip().lower() for c in rows[0][:3]] == ["set_id", "truth", "likert"]:
        rows = rows[1:]
    n_confused = 0
    judged_same = {TRUTH_SINGLE: 0, TRUTH_MULTI: 0}
    judged_multi = {TRUTH_SINGLE: 0, TRUTH_MULTI: 0}
    decided = {TRUTH_SINGLE: 0, TRUTH_MULTI: 0}
    for lineno, row in enumerate(rows, start=1):
        if len(row) < 3:
            raise MalformedRowError(f"row {lineno}: expected set_id,truth,likert")
        truth = row[1].strip()
        if truth not in (TRUTH_SINGLE, TRUTH_MULTI):
            raise MalformedRowError(f"row {lineno}: unknown truth {truth!r}")
        try:
            likert = int(row[2])
        except ValueError as exc:
            raise MalformedRowError(f"row {lineno}: bad likert {row[2]!r}") from exc
        if not 1 <= likert <= 7:
            raise MalformedRowError(f"row {lineno}: likert {likert} not in 1..7")
        if likert == 4:
            n_confused += 1
            continue
        decided[truth] += 1
        if likert >= 5:
            judged_same[truth] += 1
        else:
            judged_multi[truth] += 1
    fssr = (100.0 * judged_same[TRUTH_MULTI] / decided[TRUTH_MULTI]
            if decided[TRUTH_MULTI] else None)
    fmsr = (100.0 * judged_multi[TRUTH_SINGLE] / decided[TRUTH_SINGLE]
            if decided[TRUTH_SINGLE] else None)
    ace = (fssr + fmsr) / 2.0 if fssr is not None and fmsr is not None else None
    n_rows = len(rows)
    return LikertReport(
        fssr=fssr, fmsr=fmsr, ace=ace, n_rows=n_rows, n_confused=n_confused,
        all_confused=(n_rows > 0 and n_confused == n_rows),
    )
