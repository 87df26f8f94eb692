"""Run configuration: one flat record resolvable to defaults, loadable from
a commented key=value file, overridable by CLI flags, and hashable for the
provenance block every artifact embeds."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .duplication import DuplicationParams
from .errors import SetVerifyError
from .methods import Eq1Params


@dataclass
class RunConfig:
    corpus_root: str = ""
    bundle_dir: str = ""
    method: str = "all"  # 1 | 2 | 3 | all
    fusion: str = "avg"
    seed: int = 0
    threads: int = 0  # 0: SETVERIFY_THREADS or logical cores
    repetitions: int = 10
    sets_per_size: int = 100
    sc_dim: int = 60
    eq1_r1: float = 1.0
    eq1_r2: float = 1.0
    eq1_t1: float = 1.0
    eq1_t2: float = -1.0
    dup_count: int = 20
    dup_warp_amplitude: float = 2.5
    dup_warp_period_lo: float = 1.0
    dup_warp_period_hi: float = 3.0
    dup_max_rotation_deg: float = 2.0
    dup_scale_low: float = 0.95
    dup_scale_high: float = 1.05
    dup_max_shear: float = 0.03
    dup_ink_jitter_prob: float = 0.3
    sigma_grid_num: int = 50
    sigma_grid_lo: float = 1.0
    sigma_grid_hi: float = 100.0
    gamma_grid_num: int = 50
    gamma_grid_lo: float = 1.0
    gamma_grid_hi: float = 1000.0
    folds_signature: int = 2
    folds_set: int = 10
    det_deviate: bool = False

    def eq1(self) -> Eq1Params:
        return Eq1Params(r1=self.eq1_r1, r2=self.eq1_r2,
                         t1=self.eq1_t1, t2=self.eq1_t2)

    def dup(self) -> DuplicationParams:
        return DuplicationParams(
            count=self.dup_count,
            warp_amplitude=self.dup_warp_amplitude,
            warp_periods=(self.dup_warp_period_lo, self.dup_warp_period_hi),
            max_rotation_deg=self.dup_max_rotation_deg,
            scale_low=self.dup_scale_low,
            scale_high=self.dup_scale_high,
            max_shear=self.dup_max_shear,
            ink_jitter_prob=self.dup_ink_jitter_prob,
            seed=self.seed,
        )

    def sigma_grid(self) -> np.ndarray:
        return np.geomspace(self.sigma_grid_lo, self.sigma_grid_hi,
                            self.sigma_grid_num)

    def gamma_grid(self) -> np.ndarray:
        return np.geomspace(self.gamma_grid_lo, self.gamma_grid_hi,
                            self.gamma_grid_num)

    def apply_eq1_literal(self) -> None:
        """Read Eq. 1 exactly as published: t1 = t2 = 1."""
        self.eq1_t1 = 1.0
        self.eq1_t2 = 1.0


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_config_file(path) -> dict:
    """Flat `key = value` lines; values are JSON when they parse, bare
    strings otherwise; '#' starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SetVerifyError(f"{path}:{lineno}: expected key = value")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise SetVerifyError(f"{path}:{lineno}: unknown key {key!r}")
        val = val.strip()
        try:
            values[key] = json.loads(val)
        except json.JSONDecodeError:
            values[key] = val
    return values


def resolve_config(file_path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults <- config file <- explicit overrides."""
    cfg = RunConfig()
    layers = []
    if file_path:
        layers.append(parse_config_file(file_path))
    if overrides:
        layers.append({k: v for k, v in overrides.items() if v is not None})
    for layer in layers:
        for key, value in layer.items():
            if not hasattr(cfg, key):
                raise SetVerifyError(f"unknown config key {key!r}")
            current = getattr(cfg, key)
            if isinstance(current, bool):
                value = bool(value)
            elif isinstance(current, int):
                value = int(value)
            elif isinstance(current, float):
                value = float(value)
            else:
                value = str(value)
            setattr(cfg, key, value)
    return cfg


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def provenance_block(cfg: RunConfig, version: str) -> dict:
    return {
        "tool_version": version,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
    }
