"""Experiment configuration: defaults, presets, INI files and validation."""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import LossMode

DATASET_DEFAULTS = {
    "waveforms": {"batch_size": 64, "iterations": 2000, "subsample": None},
    "dsprites": {"batch_size": 256, "iterations": 20000, "subsample": None},
}

PRESETS = {
    "waveforms-quick": {"dataset": "waveforms", "iterations": 2000},
    "dsprites-smoke": {"dataset": "dsprites", "iterations": 4000, "subsample": 10000},
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("invalid config:\n  " + "\n  ".join(problems))


@dataclass
class ExperimentConfig:
    dataset: str = "waveforms"
    m: int = 10
    sigma: float = 0.2
    lam: float = 0.2
    loss_mode: str = "eep"
    batch_size: int | None = None
    iterations: int | None = None
    k: int | None = None
    ae_lr: float = 5e-5
    disc_lr: float = 2e-4
    ae_beta1: float = 0.9
    ae_beta2: float = 0.999
    disc_beta1: float = 0.5
    disc_beta2: float = 0.9
    warmup_batches: int = 500
    n_uniform: int = 50
    seed: int = 0
    log_every: int = 50
    subsample: int | None = None
    data_dir: str | None = None
    out: str = "runs"
    # metric protocol overrides; None keeps the per-dataset protocol
    mig_bins: int | None = None
    mig_samples: int | None = None
    fs_train: int | None = None
    fs_test: int | None = None
    sap_train: int | None = None
    sap_test: int | None = None
    dci_train: int | None = None
    dci_test: int | None = None

    def resolved(self) -> "ExperimentConfig":
        """Copy with per-dataset defaults filled in (batch, iterations, k, subsample)."""
        c = dataclasses.replace(self)
        defaults = DATASET_DEFAULTS.get(c.dataset, {})
        for key in ("batch_size", "iterations", "subsample"):
            if getattr(c, key) is None:
                setattr(c, key, defaults.get(key))
        if c.k is None:
            c.k = 5 if c.m <= 10 else 10
        return c

    def validate(self) -> "ExperimentConfig":
        c = self.resolved()
        problems = []
        if c.dataset not in DATASET_DEFAULTS:
            problems.append(f"dataset: expected one of {sorted(DATASET_DEFAULTS)}, got {c.dataset!r}")
        if c.m < 1:
            problems.append(f"m: must be >= 1, got {c.m}")
        if c.sigma < 0:
            problems.append(f"sigma: must be >= 0, got {c.sigma}")
        if c.lam < 0:
            problems.append(f"lambda: must be >= 0, got {c.lam}")
        if c.loss_mode not in {mode.value for mode in LossMode}:
            problems.append(f"loss_mode: expected one of {[m.value for m in LossMode]}, got {c.loss_mode!r}")
        for key in ("batch_size", "iterations", "k", "n_uniform", "log_every"):
            v = getattr(c, key)
            if v is None or v < 1:
                problems.append(f"{key}: must be a positive integer, got {v}")
        if c.warmup_batches < 0:
            problems.append(f"warmup_batches: must be >= 0, got {c.warmup_batches}")
        for key in ("ae_lr", "disc_lr"):
            if getattr(c, key) <= 0:
                problems.append(f"{key}: must be > 0")
        for key in ("ae_beta1", "ae_beta2", "disc_beta1", "disc_beta2"):
            if not 0 <= getattr(c, key) < 1:
                problems.append(f"{key}: must lie in [0, 1)")
        if problems:
            raise ConfigError(problems)
        return c

    def snapshot(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_ALIASES = {"lambda": "lam", "iters": "iterations", "batch": "batch_size"}


def _coerce(name: str, raw):
    if raw is None:
        return None
    typ = _FIELD_TYPES[name]
    if isinstance(raw, str) and raw.strip().lower() in ("none", ""):
        if "None" in typ:
            return None
    if typ.startswith("int"):
        return int(raw)
    if typ.startswith("float"):
        return float(raw)
    return str(raw)


def apply_overrides(cfg: ExperimentConfig, values: dict) -> ExperimentConfig:
    problems, updates = [], {}
    for key, raw in values.items():
        name = _ALIASES.get(key, key).replace("-", "_")
        if name not in _FIELD_TYPES:
            problems.append(f"{key}: unknown setting")
            continue
        try:
            updates[name] = _coerce(name, raw)
        except (TypeError, ValueError):
            problems.append(f"{key}: cannot parse {raw!r} as {_FIELD_TYPES[name]}")
    if problems:
        raise ConfigError(problems)
    return dataclasses.replace(cfg, **updates)


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults < preset < file < overrides. Sections in the file are flattened."""
    cfg = ExperimentConfig()
    if preset:
        if preset not in PRESETS:
            raise ConfigError([f"preset: unknown {preset!r}, expected one of {sorted(PRESETS)}"])
        cfg = apply_overrides(cfg, PRESETS[preset])
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError([f"{path}: {exc}"]) from None
        flat = {}
        for section in parser.sections():
            flat.update(parser.items(section))
        flat.update(parser.defaults())
        if "preset" in flat:
            cfg = load_config(preset=flat.pop("preset"))
        cfg = apply_overrides(cfg, flat)
    if overrides:
        cfg = apply_overrides(cfg, {k: v for k, v in overrides.items() if v is not None})
    return cfg


def write_config(cfg: ExperimentConfig, path) -> None:
    parser = configparser.ConfigParser()
    parser["experiment"] = {k: "none" if v is None else str(v) for k, v in cfg.snapshot().items()}
    with open(Path(path), "w") as fh:
        parser.write(fh)
