"""Command-line interface.

Subcommands: synth (write a synthetic corpus), build (dataset manifest),
train (method bundle), verify (judge a set of image files), evaluate
(repeated experiment with report + DET CSV + DET SVG), complexity rank
(the 255-subset ranking CSV).

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .complexity import rank_subsets
from .config import RunConfig, config_hash, provenance_block, resolve_config
from .datasets import (build_dataset, index_corpus, load_manifest,
                       save_manifest, split, synth_corpus)
from .duplication import duplicate
from .errors import SetVerifyError
from .evaluation import render_det_svg, report_to_json, run_experiment, write_det_csv
from .methods import SignatureSet, signature_dup_params, verify
from .pipeline import (SignatureStore, load_method_bundle, save_method_bundle,
                       store_providers, train_bundle)

_USAGE_EXIT = 1
_DATA_EXIT = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(_USAGE_EXIT)


def _resolve_threads(cfg: RunConfig) -> int:
    if cfg.threads > 0:
        return cfg.threads
    env = os.environ.get("SETVERIFY_THREADS", "")
    if env.isdigit() and int(env) > 0:
        return int(env)
    return os.cpu_count() or 1


def _make_store(cfg: RunConfig, feature_cache=None) -> SignatureStore:
    return SignatureStore(
        sc_dim=cfg.sc_dim, dup=cfg.dup(),
        sigma_grid=cfg.sigma_grid(), gamma_grid=cfg.gamma_grid(),
        folds_signature=cfg.folds_signature,
        threads=_resolve_threads(cfg), feature_cache_dir=feature_cache,
    )


def _methods_of(cfg: RunConfig) -> tuple[int, ...]:
    if cfg.method == "all":
        return (1, 2, 3)
    if cfg.method in ("1", "2", "3"):
        return (int(cfg.method),)
    raise SetVerifyError(f"method must be 1, 2, 3 or all, got {cfg.method!r}")


def cmd_synth(cfg: RunConfig, args) -> int:
    index = synth_corpus(args.out, writers=args.writers,
                         genuine_per=args.genuine,
                         forgeries_per=args.forgeries, seed=cfg.seed)
    print(json.dumps({
        "corpus": str(args.out),
        "writers": len(index.writers),
        "genuine": sum(len(w.genuine_paths) for w in index.writers),
        "forgeries": sum(len(w.forgery_paths) for w in index.writers),
        "provenance": provenance_block(cfg, __version__),
    }, sort_keys=True, indent=1))
    return 0


def cmd_build(cfg: RunConfig, args) -> int:
    index = index_corpus(cfg.corpus_root)
    manifest = build_dataset(index, seed=cfg.seed,
                             sets_per_size=cfg.sets_per_size)
    save_manifest(args.out, manifest)
    print(json.dumps({
        "manifest": str(args.out),
        "sets": len(manifest.sets),
        "provenance": provenance_block(cfg, __version__),
    }, sort_keys=True, indent=1))
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    index = index_corpus(cfg.corpus_root)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2, dtype=np.uint64)
    if args.manifest:
        manifest = load_manifest(args.manifest)
    else:
        manifest = build_dataset(index, seed=int(seeds[0] >> 1),
                                 sets_per_size=cfg.sets_per_size)
    train_m, _ = split(manifest, 0.5, seed=int(seeds[1] >> 1))
    with _make_store(cfg, feature_cache=args.feature_cache) as store:
        train_sets = store.load_sets(index, train_m)
        bundle = train_bundle(
            train_sets, methods=_methods_of(cfg), store=store,
            fusion=cfg.fusion, eq1=cfg.eq1(), seed=cfg.seed,
            folds_set=cfg.folds_set,
            meta={"config": asdict(cfg), "corpus_id": manifest.corpus_id})
        save_method_bundle(cfg.bundle_dir, bundle,
                           provenance=provenance_block(cfg, __version__))
    print(json.dumps({
        "bundle": cfg.bundle_dir,
        "methods": list(_methods_of(cfg)),
        "thresholds": bundle.thresholds,
        "m3_fallback": bundle.m3_fallback,
        "provenance": provenance_block(cfg, __version__),
    }, sort_keys=True, indent=1))
    return 0


def cmd_verify(cfg: RunConfig, args) -> int:
    bundle = load_method_bundle(cfg.bundle_dir)
    saved = bundle.meta.get("config")
    if saved:
        # evaluate queries with the same feature/model settings as training
        for key in ("sc_dim", "sigma_grid_num", "sigma_grid_lo", "sigma_grid_hi",
                    "gamma_grid_num", "gamma_grid_lo", "gamma_grid_hi",
                    "folds_signature"):
            setattr(cfg, key, saved[key])
    store = _make_store(cfg)
    store.config = store.config.__class__(
        sc_dim=store.config.sc_dim, dup=bundle.dup,
        sigma_grid=store.config.sigma_grid,
        gamma_grid=store.config.gamma_grid,
        folds_signature=store.config.folds_signature)
    method = 2 if cfg.method == "all" else int(cfg.method)
    with store:
        records = [store.record(p) for p in args.images]
        sigset = SignatureSet(records)
        if args.dump_duplicates:
            out = Path(args.dump_duplicates)
            out.mkdir(parents=True, exist_ok=True)
            from PIL import Image
            for i, rec in enumerate(records):
                params = signature_dup_params(rec.gray, bundle.dup)
                for c, dup_img in enumerate(duplicate(rec.gray, params)):
                    Image.fromarray(dup_img.pixels, "L").save(
                        out / f"sig{i:02d}_dup{c:02d}.png")
        result = verify(sigset, bundle, method,
                        **store_providers(store, bundle))
    payload = result.to_dict()
    payload["provenance"] = provenance_block(cfg, __version__)
    print(json.dumps(payload, sort_keys=True, indent=1))
    return 0


def cmd_evaluate(cfg: RunConfig, args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = index_corpus(cfg.corpus_root)
    prov = provenance_block(cfg, __version__)
    with _make_store(cfg, feature_cache=args.feature_cache) as store:
        for method in _methods_of(cfg):
            def progress(r, total, e, a, method=method):
                print(f"method {method} repetition {r + 1}/{total}: "
                      f"EER {e:.2f}% AUC {a:.2f}%", file=sys.stderr)
            report = run_experiment(
                index, method, repetitions=cfg.repetitions, seed=cfg.seed,
                fusion=cfg.fusion, store=store,
                sets_per_size=cfg.sets_per_size, folds_set=cfg.folds_set,
                provenance=prov, progress=progress)
            stem = f"report_m{method}"
            (out_dir / f"{stem}.json").write_text(report_to_json(report))
            write_det_csv(out_dir / f"det_m{method}.csv", report.det_points,
                          provenance=prov)
            render_det_svg(out_dir / f"det_m{method}.svg", report.det_points,
                           eer_value=report.pooled_eer,
                           title=f"Method {method} ({cfg.fusion})",
                           deviate=cfg.det_deviate,
                           hashsalt=config_hash(cfg))
            print(json.dumps({
                "method": method, "eer_mean": report.eer,
                "auc_mean": report.auc, "report": str(out_dir / f"{stem}.json"),
            }, sort_keys=True))
    return 0


def cmd_complexity(cfg: RunConfig, args) -> int:
    if args.action != "rank":
        raise SetVerifyError(f"unknown complexity action {args.action!r}")
    index = index_corpus(cfg.corpus_root)
    store = SignatureStore(threads=1)
    rows, writer_ids = [], []
    for w in index.writers:
        for rel in w.genuine_paths:
            rec = store.record(index.resolve(rel), writer_id=w.writer_id,
                               genuine=True)
            rows.append(store.complexity(rec).as_vector())
            writer_ids.append(w.writer_id)
    ranking = rank_subsets(np.stack(rows), writer_ids, seed=cfg.seed)
    with open(args.out, "w", newline="") as fh:
        for key, value in sorted(provenance_block(cfg, __version__).items()):
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(["subset", "consistency", "spread", "correlation",
                         "rank_of_ranks"])
        for entry in ranking:
            writer.writerow(["+".join(f"F{f}" for f in entry.subset),
                             repr(entry.consistency), repr(entry.spread),
                             repr(entry.correlation), entry.rank_of_ranks])
    print(json.dumps({"ranking": str(args.out), "subsets": len(ranking),
                      "provenance": provenance_block(cfg, __version__)},
                     sort_keys=True, indent=1))
    return 0


def _add_common(sub, *, corpus=False, bundle=False, method=False):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--threads", type=int, default=None)
    sub.add_argument("--fusion", choices=["min", "max", "avg"], default=None)
    sub.add_argument("--eq1-literal", action="store_true",
                     help="use the published Eq. 1 parameters t1 = t2 = 1")
    if corpus:
        sub.add_argument("--corpus", required=True, help="corpus root directory")
    if bundle:
        sub.add_argument("--bundle", required=True, help="model bundle directory")
    if method:
        sub.add_argument("--method", choices=["1", "2", "3", "all"], default=None)


def build_parser() -> _Parser:
    parser = _Parser(prog="setverify",
                     description="Common-authorship verification of "
                                 "signature sets without references")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="write a synthetic corpus")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--writers", type=int, default=30)
    p.add_argument("--genuine", type=int, default=10)
    p.add_argument("--forgeries", type=int, default=10)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("build", help="build a dataset-of-sets manifest")
    _add_common(p, corpus=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sets-per-size", type=int, default=None)
    p.set_defaults(func=cmd_build)

    p = subs.add_parser("train", help="train a method bundle")
    _add_common(p, corpus=True, bundle=True, method=True)
    p.add_argument("--manifest", help="reuse an existing manifest")
    p.add_argument("--feature-cache", help="directory for persistent feature records")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("verify", help="judge 2..5 signature images")
    _add_common(p, bundle=True, method=True)
    p.add_argument("images", nargs="+", help="2..5 signature image files")
    p.add_argument("--dump-duplicates", help="dump duplicates as PNGs here")
    p.set_defaults(func=cmd_verify)

    p = subs.add_parser("evaluate", help="run the repeated experiment")
    _add_common(p, corpus=True, method=True)
    p.add_argument("--out", required=True)
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--sets-per-size", type=int, default=None)
    p.add_argument("--det-deviate", action="store_true",
                   help="normal-deviate DET axes in the SVG")
    p.add_argument("--feature-cache", help="directory for persistent feature records")
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("complexity", help="complexity analyses")
    _add_common(p, corpus=True)
    p.add_argument("action", choices=["rank"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_complexity)
    return parser


def _overrides_from_args(args) -> dict:
    over = {}
    for key, attr in [("seed", "seed"), ("threads", "threads"),
                      ("fusion", "fusion"), ("method", "method"),
                      ("repetitions", "repetitions"),
                      ("sets_per_size", "sets_per_size"),
                      ("corpus_root", "corpus"), ("bundle_dir", "bundle")]:
        if hasattr(args, attr) and getattr(args, attr) is not None:
            over[key] = getattr(args, attr)
    if getattr(args, "det_deviate", False):
        over["det_deviate"] = True
    return over


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(getattr(args, "config", None),
                             _overrides_from_args(args))
        if getattr(args, "eq1_literal", False):
            cfg.apply_eq1_literal()
        return args.func(cfg, args)
    except SetVerifyError as exc:
        print(f"setverify: {exc}", file=sys.stderr)
        return _DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
