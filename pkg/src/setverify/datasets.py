"""Datasets of signature sets: corpus indexing, manifest construction
(100 sets per size n in 2..5, half single-writer and half mixed), the
stratified train/test split, and a desk-scale synthetic corpus generator
used when the real corpora are unavailable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.interpolate import CubicSpline

from .errors import BadLayoutError, EmptyWriterError, InsufficientCorpusError

TRUTH_SINGLE = "single_writer"
TRUTH_MULTI = "multiple_writers"

SET_SIZES = (2, 3, 4, 5)
SETS_PER_SIZE = 100  # 50 single-writer + 50 mixed
MANIFEST_SCHEMA = 1

_IMAGE_SUFFIXES = {".png", ".bmp", ".tif", ".tiff"}


@dataclass
class WriterEntry:
    writer_id: str
    genuine_paths: list[str]
    forgery_paths: list[str]


@dataclass
class CorpusIndex:
    root: str
    writers: list[WriterEntry]

    def resolve(self, rel_path: str) -> Path:
        return Path(self.root) / rel_path


def _list_images(d: Path, root: Path) -> list[str]:
    return sorted(
        p.relative_to(root).as_posix()
        for p in d.iterdir()
        if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES
    )


def index_corpus(root) -> CorpusIndex:
    """Deterministic (sorted) index of root/<writer>/{genuine,forgery}/*.png."""
    root = Path(root)
    if not root.is_dir():
        raise BadLayoutError(f"{root} is not a directory")
    writers = []
    for wdir in sorted(p for p in root.iterdir() if p.is_dir()):
        gdir = wdir / "genuine"
        if not gdir.is_dir():
            raise BadLayoutError(f"{wdir} has no genuine/ directory")
        genuine = _list_images(gdir, root)
        if not genuine:
            raise EmptyWriterError(f"{wdir} has no genuine signatures")
        fdir = wdir / "forgery"
        forgery = _list_images(fdir, root) if fdir.is_dir() else []
        writers.append(WriterEntry(wdir.name, genuine, forgery))
    if not writers:
        raise BadLayoutError(f"{root} contains no writer directories")
    return CorpusIndex(root=str(root), writers=writers)


@dataclass
class SignatureRef:
    path: str  # relative to the corpus root
    writer_id: str
    genuine: bool


@dataclass
class SetEntry:
    set_id: str
    n: int
    truth: str
    signatures: list[SignatureRef]
    source_writers: list[str]


@dataclass
class DatasetManifest:
    corpus_id: str
    seed: int
    sets: list[SetEntry]
    schema_version: int = MANIFEST_SCHEMA

    def by_size(self) -> dict[int, list[SetEntry]]:
        out: dict[int, list[SetEntry]] = {}
        for entry in self.sets:
            out.setdefault(entry.n, []).append(entry)
        return out


def manifest_to_json(manifest: DatasetManifest) -> str:
    return json.dumps(asdict(manifest), sort_keys=True, indent=1) + "\n"


def manifest_from_json(text: str) -> DatasetManifest:
    raw = json.loads(text)
    sets = [
        SetEntry(
            set_id=e["set_id"], n=e["n"], truth=e["truth"],
            signatures=[SignatureRef(**s) for s in e["signatures"]],
            source_writers=e["source_writers"],
        )
        for e in raw["sets"]
    ]
    return DatasetManifest(
        corpus_id=raw["corpus_id"], seed=raw["seed"], sets=sets,
        schema_version=raw["schema_version"],
    )


def save_manifest(path, manifest: DatasetManifest) -> None:
    Path(path).write_text(manifest_to_json(manifest))


def load_manifest(path) -> DatasetManifest:
    return manifest_from_json(Path(path).read_text())


def build_dataset(index: CorpusIndex, seed: int,
                  sets_per_size: int = SETS_PER_SIZE) -> DatasetManifest:
    """Randomly composed dataset of sets: per size n, half the sets hold n
    genuine signatures of one writer and half mix that writer's genuines
    with 1..n-1 forgeries of the same writer."""
    rng = np.random.default_rng(seed)
    half = sets_per_size // 2
    sets: list[SetEntry] = []
    for n in SET_SIZES:
        single_pool = [w for w in index.writers if len(w.genuine_paths) >= n]
        for i in range(half):
            if not single_pool:
                raise InsufficientCorpusError(
                    f"no writer has {n} genuine signatures")
            w = single_pool[rng.integers(len(single_pool))]
            picks = rng.choice(len(w.genuine_paths), size=n, replace=False)
            refs = [SignatureRef(w.genuine_paths[int(p)], w.writer_id, True)
                    for p in sorted(picks)]
            sets.append(SetEntry(
                set_id=f"n{n}_gen_{i:03d}", n=n, truth=TRUTH_SINGLE,
                signatures=refs, source_writers=[w.writer_id],
            ))
        for i in range(half):
            feasible = [
                f for f in range(1, n)
                if any(len(w.genuine_paths) >= n - f and len(w.forgery_paths) >= f
                       for w in index.writers)
            ]
            if not feasible:
                raise InsufficientCorpusError(
                    f"no writer can build a mixed set of {n}")
            f = int(feasible[rng.integers(len(feasible))])
            pool = [w for w in index.writers
                    if len(w.genuine_paths) >= n - f and len(w.forgery_paths) >= f]
            w = pool[rng.integers(len(pool))]
            gpicks = rng.choice(len(w.genuine_paths), size=n - f, replace=False)
            fpicks = rng.choice(len(w.forgery_paths), size=f, replace=False)
            refs = [SignatureRef(w.genuine_paths[int(p)], w.writer_id, True)
                    for p in sorted(gpicks)]
            refs += [SignatureRef(w.forgery_paths[int(p)], w.writer_id, False)
                     for p in sorted(fpicks)]
            sets.append(SetEntry(
                set_id=f"n{n}_mix_{i:03d}", n=n, truth=TRUTH_MULTI,
                signatures=refs, source_writers=[w.writer_id],
            ))
    manifest = DatasetManifest(corpus_id=Path(index.root).name, seed=int(seed),
                               sets=sets)
    validate_manifest(manifest, sets_per_size)
    return manifest


def validate_manifest(manifest: DatasetManifest,
                      sets_per_size: int = SETS_PER_SIZE) -> None:
    by_size = manifest.by_size()
    if sorted(by_size) != list(SET_SIZES):
        raise InsufficientCorpusError("manifest must cover sizes 2..5")
    for n, entries in by_size.items():
        if len(entries) != sets_per_size:
            raise InsufficientCorpusError(f"size {n} has {len(entries)} sets")
        singles = sum(1 for e in entries if e.truth == TRUTH_SINGLE)
        if singles != sets_per_size // 2:
            raise InsufficientCorpusError(f"size {n} is not balanced")
        for e in entries:
            if e.n != n or len(e.signatures) != n:
                raise InsufficientCorpusError(f"{e.set_id} has a wrong size")
            paths = [s.path for s in e.signatures]
            if len(set(paths)) != n:
                raise InsufficientCorpusError(f"{e.set_id} repeats a file")
            if e.truth == TRUTH_MULTI:
                kinds = {s.genuine for s in e.signatures}
                if kinds != {True, False}:
                    raise InsufficientCorpusError(
                        f"{e.set_id} lacks a genuine or a forged specimen")


def split(manifest: DatasetManifest, ratio: float = 0.5, seed: int = 0):
    """Disjoint train/test manifests, stratified by (size, truth)."""
    rng = np.random.default_rng(seed)
    cells: dict[tuple[int, str], list[SetEntry]] = {}
    for entry in manifest.sets:
        cells.setdefault((entry.n, entry.truth), []).append(entry)
    train_sets, test_sets = [], []
    for key in sorted(cells):
        entries = cells[key]
        order = rng.permutation(len(entries))
        cut = int(round(ratio * len(entries)))
        chosen = set(order[:cut].tolist())
        for i, entry in enumerate(entries):
            (train_sets if i in chosen else test_sets).append(entry)
    train = DatasetManifest(manifest.corpus_id, manifest.seed, train_sets)
    test = DatasetManifest(manifest.corpus_id, manifest.seed, test_sets)
    return train, test


# ---------------------------------------------------------------------------
# synthetic corpus


@dataclass
class _WriterStyle:
    strokes: list[np.ndarray]  # control points (k, 2) in canvas units
    canvas: tuple[int, int]  # (h, w)
    pen_width: float
    slant: float
    ink_depth: float
    texture_amp: float


def _random_style(rng) -> _WriterStyle:
    ch = int(rng.integers(150, 220))
    cw = int(rng.integers(340, 460))
    strokes = []
    for _ in range(int(rng.integers(3, 7))):
        k = int(rng.integers(4, 7))
        xs = np.sort(rng.uniform(0.08, 0.92, size=k)) * cw
        ys = rng.uniform(0.18, 0.82, size=k) * ch
        strokes.append(np.column_stack([xs, ys]))
    return _WriterStyle(
        strokes=strokes, canvas=(ch, cw),
        pen_width=float(rng.uniform(1.6, 3.4)),
        slant=float(rng.uniform(-0.22, 0.22)),
        ink_depth=float(rng.uniform(20.0, 90.0)),
        texture_amp=float(rng.uniform(5.0, 35.0)),
    )


def render_signature(style: _WriterStyle, rng) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize a style; returns (gray uint8 canvas, bool ink mask)."""
    h, w = style.canvas
    mask = np.zeros((h, w), dtype=bool)
    r = max(style.pen_width / 2.0, 0.6)
    span = int(np.ceil(r))
    oy, ox = np.mgrid[-span : span + 1, -span : span + 1]
    stamp = [(int(a), int(b)) for a, b in zip(*np.nonzero(oy * oy + ox * ox <= r * r))]
    stamp = [(a - span, b - span) for a, b in stamp]
    for pts in style.strokes:
        t = np.arange(len(pts))
        spline = CubicSpline(t, pts, axis=0)
        approx = np.diff(pts, axis=0)
        length = np.hypot(approx[:, 0], approx[:, 1]).sum()
        dense = spline(np.linspace(0, len(pts) - 1, max(int(3 * length), 8)))
        xs = dense[:, 0] + style.slant * ((h - 1) / 2.0 - dense[:, 1])
        ys = dense[:, 1]
        xi = np.clip(np.rint(xs).astype(int), span, w - 1 - span)
        yi = np.clip(np.rint(ys).astype(int), span, h - 1 - span)
        for dy, dx in stamp:
            mask[yi + dy, xi + dx] = True
    gray = np.full((h, w), 255.0)
    noise = rng.standard_normal(mask.sum())
    gray[mask] = np.clip(style.ink_depth + style.texture_amp * noise, 0.0, 185.0)
    return gray.astype(np.uint8), mask


def _jitter_style(style: _WriterStyle, rng, point_sigma: float,
                  pen: _WriterStyle | None = None) -> _WriterStyle:
    pen = pen or style
    strokes = [pts + rng.normal(0.0, point_sigma, size=pts.shape)
               for pts in style.strokes]
    return _WriterStyle(
        strokes=strokes, canvas=style.canvas,
        pen_width=max(1.0, pen.pen_width + rng.uniform(-0.25, 0.25)),
        slant=pen.slant + rng.uniform(-0.02, 0.02),
        ink_depth=float(np.clip(pen.ink_depth + rng.uniform(-8.0, 8.0), 5.0, 120.0)),
        texture_amp=pen.texture_amp,
    )


GENUINE_JITTER_SIGMA = 1.8
FORGERY_JITTER_SIGMA = 4.5


def synth_corpus(root, writers: int = 30, genuine_per: int = 10,
                 forgeries_per: int = 10, seed: int = 0) -> CorpusIndex:
    """Write a synthetic corpus in the standard layout.

    Genuines re-render a writer's spline skeleton with small jitter; a
    forgery of writer w is another writer tracing w's skeleton with larger
    jitter and their own pen width / slant / ink texture.
    """
    if writers < 3:
        raise InsufficientCorpusError("need at least 3 writers")
    root = Path(root)
    styles = [_random_style(np.random.default_rng([seed, w]))
              for w in range(writers)]
    for w in range(writers):
        wid = f"w{w:03d}"
        gdir = root / wid / "genuine"
        fdir = root / wid / "forgery"
        gdir.mkdir(parents=True, exist_ok=True)
        fdir.mkdir(parents=True, exist_ok=True)
        for i in range(genuine_per):
            rng = np.random.default_rng([seed, w, 1, i])
            gray, _ = render_signature(
                _jitter_style(styles[w], rng, GENUINE_JITTER_SIGMA), rng)
            Image.fromarray(gray, "L").save(gdir / f"g{i:03d}.png", dpi=(600, 600))
        for i in range(forgeries_per):
            rng = np.random.default_rng([seed, w, 2, i])
            forger = (w + 1 + i) % writers
            if forger == w:
                forger = (w + 1) % writers
            gray, _ = render_signature(
                _jitter_style(styles[w], rng, FORGERY_JITTER_SIGMA,
                              pen=styles[forger]), rng)
            Image.fromarray(gray, "L").save(fdir / f"f{i:03d}.png", dpi=(600, 600))
    return index_corpus(root)
