"""Training runs, sweeps, correlation, density demos and the EEP ablation."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import datasets as ds
from .checkpoint import read_checkpoint, restore, save_checkpoint
from .config import ExperimentConfig
from .density import (Discriminator, SlotDiscriminator, gaussian_chain_conditional_logpdf,
                      gaussian_chain_sample, isotropic_gaussian_logpdf, mc_kl)
from .metrics import PROTOCOLS, MetricReport, Protocol, evaluate_all
from .model import GcaeTrainer, LossMode, TrainingFault

log = logging.getLogger(__name__)

LOG_FIELDS = ["iteration", "mse", "sigma_i", "eep"]
METRIC_FIELDS = ["final_mse", "final_sigma_i", "log_sigma_i", "mig", "factor_score", "sap", "dci",
                 "latent_drift"]


def fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return "" if v is None else str(v)


# ---------------------------------------------------------------------------
# data

def load_data(cfg: ExperimentConfig) -> tuple[ds.FactorDataset, ds.FactorDataset, Protocol]:
    """(normalized training set, raw factor set, metric protocol) for a config."""
    if cfg.dataset == "waveforms":
        raw = ds.generate_waveforms()
    else:
        path = ds.dsprites_path(cfg.data_dir)
        raw = ds.load_dsprites(path, subsample=cfg.subsample, seed=cfg.seed).to_factor_dataset()
    norm, _ = ds.normalized(raw)
    return norm, raw, protocol_for(cfg)


def protocol_for(cfg: ExperimentConfig) -> Protocol:
    proto = PROTOCOLS[cfg.dataset]
    overrides = {f: getattr(cfg, f) for f in ("mig_bins", "mig_samples", "fs_train", "fs_test",
                                              "sap_train", "sap_test", "dci_train", "dci_test")
                 if getattr(cfg, f) is not None}
    return dataclasses.replace(proto, **overrides)


def build_trainer(cfg: ExperimentConfig, n_features: int) -> GcaeTrainer:
    return GcaeTrainer(
        n=n_features, m=cfg.m, sigma=cfg.sigma, seed=cfg.seed, loss_mode=LossMode(cfg.loss_mode),
        ae_lr=cfg.ae_lr, ae_betas=(cfg.ae_beta1, cfg.ae_beta2), disc_lr=cfg.disc_lr,
        disc_betas=(cfg.disc_beta1, cfg.disc_beta2), n_uniform=cfg.n_uniform)


# ---------------------------------------------------------------------------
# training

@dataclass
class RunResult:
    config: dict
    history: list[dict]
    final_mse: float
    final_sigma_i: float
    report: MetricReport | None
    latent_drift: float
    latent_variances: np.ndarray
    wall_time: float
    run_dir: Path | None = None

    def record(self) -> "SweepRecord":
        r = self.report
        return SweepRecord(
            config=self.config, final_mse=self.final_mse, final_sigma_i=self.final_sigma_i,
            log_sigma_i=math.log(self.final_sigma_i) if self.final_sigma_i > 0 else float("nan"),
            mig=r.mig if r else float("nan"), factor_score=r.factor_score if r else float("nan"),
            sap=r.sap if r else float("nan"), dci=r.dci if r else float("nan"),
            latent_drift=self.latent_drift, wall_time=self.wall_time)


@dataclass
class SweepRecord:
    config: dict
    final_mse: float
    final_sigma_i: float
    log_sigma_i: float
    mig: float
    factor_score: float
    sap: float
    dci: float
    latent_drift: float = float("nan")
    wall_time: float = 0.0
    error: str = ""

    def row(self) -> dict:
        out = {f"cfg_{k}": fmt(v) for k, v in sorted(self.config.items())}
        out.update({k: fmt(getattr(self, k)) for k in METRIC_FIELDS})
        out["error"] = self.error
        return out


def final_estimates(trainer: GcaeTrainer, x: np.ndarray, batch: int, n_batches: int = 10):
    """Average reconstruction MSE (through the channel) and summed information on fixed batches."""
    rng = np.random.default_rng(0)
    mses, sis = [], []
    from . import autodiff as ad
    from .model import channel
    for _ in range(n_batches):
        xb = x[rng.choice(x.shape[0], size=batch, replace=x.shape[0] < batch)]
        with ad.no_grad():
            z = trainer.model.encode(xb)
            noisy = channel(z, trainer.model.sigma, rng).z_noisy
            mses.append(ad.mse(trainer.model.decode(noisy), xb).item())
        sis.append(trainer.info_estimate(xb).sigma_i)
    return float(np.mean(mses)), float(np.mean(sis))


def latent_drift(variances: np.ndarray) -> float:
    """Mean over latents of the variance, across checkpoints, of each latent's variance.

    Only the second half of the checkpoints is used so the common early
    transient does not dominate.
    """
    if len(variances) < 2:
        return 0.0
    tail = np.asarray(variances)[len(variances) // 2:]
    return float(np.mean(np.var(tail, axis=0)))


def train(cfg: ExperimentConfig, out_dir: Path | str | None = None, evaluate: bool = True,
          data=None) -> RunResult:
    """Warm up the bank, train, evaluate; write log/checkpoint/metrics if ``out_dir`` is set."""
    cfg = cfg.validate()
    start = time.perf_counter()
    norm, raw, protocol = data if data is not None else load_data(cfg)
    x_all = norm.inputs.reshape(len(norm), -1)
    trainer = build_trainer(cfg, x_all.shape[1])
    batches = norm.batches(cfg.batch_size, trainer.streams.data)
    next_batch = lambda: x_all[next(batches)]  # noqa: E731
    run_dir = Path(out_dir) if out_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
    probe = x_all[np.random.default_rng(1).choice(len(x_all), size=min(1024, len(x_all)), replace=False)]

    trainer.warmup(next_batch, cfg.warmup_batches)
    history, variances = [], []
    log_fh = open(run_dir / "log.csv", "w", newline="") if run_dir else None
    writer = csv.writer(log_fh) if log_fh else None
    if writer:
        writer.writerow(LOG_FIELDS)
    try:
        for it in range(1, cfg.iterations + 1):
            measure = it % cfg.log_every == 0 or it == cfg.iterations
            rep = trainer.train_step(next_batch, cfg.lam, cfg.k, measure=measure)
            if measure:
                row = {"iteration": it, "mse": rep.mse, "sigma_i": rep.sigma_i, "eep": rep.eep}
                history.append(row)
                variances.append(np.var(trainer.model.representation(probe), axis=0))
                if writer:
                    writer.writerow([fmt(row[k]) for k in LOG_FIELDS])
                    log_fh.flush()
                log.debug("it %d mse %.4f sigma_i %.4f eep %.4f", it, rep.mse, rep.sigma_i, rep.eep)
    except TrainingFault:
        if run_dir:
            save_checkpoint(run_dir / "last_good.ckpt", trainer, cfg.snapshot())
        raise
    finally:
        if log_fh:
            log_fh.close()

    final_mse, final_si = final_estimates(trainer, x_all, cfg.batch_size)
    report = None
    if evaluate:
        report = evaluate_all(trainer.model, _eval_set(norm), protocol, np.random.default_rng(cfg.seed))
    result = RunResult(cfg.snapshot(), history, final_mse, final_si, report,
                       latent_drift(variances), np.asarray(variances), time.perf_counter() - start,
                       run_dir)
    result.trainer = trainer
    if run_dir:
        save_checkpoint(run_dir / "final.ckpt", trainer, cfg.snapshot())
        write_records(run_dir / "metrics.csv", [result.record()])
        write_report(run_dir / "report.jsonl", cfg.snapshot(), result)
    return result


def _eval_set(norm: ds.FactorDataset) -> ds.FactorDataset:
    return ds.FactorDataset(norm.inputs.reshape(len(norm), -1), norm.factors, norm.kinds,
                            norm.names, norm.cardinalities)


def write_report(path, config: dict, result: RunResult, append: bool = False) -> None:
    rec = {"config": config, "final_mse": result.final_mse, "final_sigma_i": result.final_sigma_i,
           "latent_drift": result.latent_drift}
    if result.report is not None:
        rec.update(result.report.scores())
        rec["importance"] = np.asarray(result.report.diagnostics.get("importance", [])).tolist()
    with open(path, "a" if append else "w") as fh:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


def write_records(path, records: Sequence[SweepRecord]) -> None:
    rows = [r.row() for r in records]
    keys = sorted({k for r in rows for k in r if k.startswith("cfg_")}) + METRIC_FIELDS + ["error"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow(r)


def read_records(path) -> list[SweepRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cfg = {k[4:]: v for k, v in row.items() if k.startswith("cfg_")}
            vals = {k: float(row[k]) if row.get(k) not in (None, "") else float("nan")
                    for k in METRIC_FIELDS}
            out.append(SweepRecord(config=cfg, final_mse=vals["final_mse"],
                                   final_sigma_i=vals["final_sigma_i"], log_sigma_i=vals["log_sigma_i"],
                                   mig=vals["mig"], factor_score=vals["factor_score"], sap=vals["sap"],
                                   dci=vals["dci"], latent_drift=vals["latent_drift"],
                                   error=row.get("error", "")))
    return out


# ---------------------------------------------------------------------------
# evaluation of a stored checkpoint

def evaluate_checkpoint(path, cfg: ExperimentConfig | None = None, data=None,
                        seed: int | None = None) -> tuple[MetricReport, dict]:
    header, arrays = read_checkpoint(path)
    from .config import apply_overrides
    stored = ExperimentConfig()
    stored = apply_overrides(stored, {("lam" if k == "lambda" else k): v
                                      for k, v in header["config"].items()})
    if cfg is not None and cfg.dataset != stored.dataset:
        raise ValueError(f"checkpoint was trained on {stored.dataset!r}, not {cfg.dataset!r}")
    stored = stored.validate()
    norm, _, protocol = data if data is not None else load_data(stored)
    trainer = build_trainer(stored, norm.n_features)
    restore(trainer, header, arrays)
    eval_seed = stored.seed if seed is None else seed
    report = evaluate_all(trainer.model, _eval_set(norm), protocol, np.random.default_rng(eval_seed))
    return report, header["config"]


# ---------------------------------------------------------------------------
# sweeps and correlation

def _sweep_job(args):
    cfg, out_dir = args
    try:
        return train(cfg, out_dir).record()
    except (TrainingFault, FloatingPointError, ValueError) as exc:
        log.error("run %s failed: %s", cfg.snapshot(), exc)
        return SweepRecord(cfg.snapshot(), *([float("nan")] * 7), error=str(exc))


def sweep_configs(base: ExperimentConfig, lambdas: Iterable[float], sigmas: Iterable[float],
                  seeds: Iterable[int]) -> list[ExperimentConfig]:
    return [dataclasses.replace(base, lam=float(l), sigma=float(s), seed=int(seed))
            for l in lambdas for s in sigmas for seed in seeds]


def sweep(configs: Sequence[ExperimentConfig], out_dir=None, workers: int = 1) -> list[SweepRecord]:
    """Run every config (optionally in worker processes); failures become error records."""
    out = Path(out_dir) if out_dir else None
    jobs = []
    for cfg in configs:
        name = f"lam{cfg.lam:g}_sig{cfg.sigma:g}_m{cfg.m}_{cfg.loss_mode}_seed{cfg.seed}"
        jobs.append((cfg, out / name if out else None))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_sweep_job, jobs))
    else:
        records = [_sweep_job(j) for j in jobs]
    if out:
        out.mkdir(parents=True, exist_ok=True)
        write_records(out / "sweep.csv", records)
        write_summary(out / "summary.csv", records)
        # wall times vary run to run, so they stay out of the CSV outputs
        timings = [{"lambda": r.config["lambda"], "sigma": r.config["sigma"],
                    "seed": r.config["seed"], "wall_time": round(r.wall_time, 1)} for r in records]
        (out / "timings.json").write_text(json.dumps(timings, indent=1) + "\n")
    return records


def summarize(records: Sequence[SweepRecord]) -> list[dict]:
    cells: dict[tuple, list[SweepRecord]] = {}
    for r in records:
        if r.error:
            continue
        key = (float(r.config["lambda"]), float(r.config["sigma"]))
        cells.setdefault(key, []).append(r)
    rows = []
    for (lam, sig), rs in sorted(cells.items()):
        row = {"lambda": lam, "sigma": sig, "n": len(rs)}
        for k in ("final_mse", "final_sigma_i", "mig", "factor_score", "sap", "dci"):
            vals = np.array([getattr(r, k) for r in rs], dtype=np.float64)
            row[f"{k}_mean"] = float(np.mean(vals))
            row[f"{k}_std"] = float(np.std(vals))
        rows.append(row)
    return rows


def write_summary(path, records: Sequence[SweepRecord]) -> None:
    rows = summarize(records)
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: fmt(v) for k, v in r.items()})


@dataclass
class Correlation:
    r: float | None          # None when undefined (a column has zero variance)
    points: list[tuple[float, float]]
    excluded: int

    @property
    def defined(self) -> bool:
        return self.r is not None


def correlate(records: Sequence[SweepRecord]) -> Correlation:
    """Pearson r between log summed information and MIG over usable records."""
    usable = [r for r in records if not r.error and r.final_sigma_i > 0 and np.isfinite(r.mig)]
    excluded = len(records) - len(usable)
    if excluded:
        log.info("correlate: %d records excluded (non-positive sigma_i or failed)", excluded)
    if len(usable) < 3:
        raise ValueError(f"need at least 3 usable records, have {len(usable)}")
    x = np.array([math.log(r.final_sigma_i) for r in usable])
    y = np.array([r.mig for r in usable])
    points = list(zip(x.tolist(), y.tolist()))
    if np.std(x) == 0 or np.std(y) == 0:
        return Correlation(None, points, excluded)
    return Correlation(float(np.corrcoef(x, y)[0, 1]), points, excluded)


# ---------------------------------------------------------------------------
# density demos

@dataclass
class DensityDemoBudget:
    steps: int = 20000
    batch: int = 256
    width: int = 512
    eval_every: int = 200
    n_eval: int = 4096
    lr: float = 2e-4
    betas: tuple = (0.5, 0.9)


JOINT_BUDGET = DensityDemoBudget()
CONDITIONAL_BUDGET = DensityDemoBudget(steps=40000, width=256)


def density_demo(mode: str, m: int, budget: DensityDemoBudget, seed: int = 0) -> list[tuple[int, float]]:
    """KL trace ``[(step, kl)]`` for recovering a joint or conditional Gaussian density."""
    rng = np.random.default_rng(seed)
    eval_rng = np.random.default_rng(seed + 10_000)
    trace = []
    if mode == "joint":
        disc = Discriminator(m, rng, width=budget.width, lr=budget.lr, betas=budget.betas)
        eval_x = eval_rng.standard_normal((budget.n_eval, m)).astype(np.float32)
        for step in range(1, budget.steps + 1):
            disc.train_step(rng.standard_normal((budget.batch, m)).astype(np.float32), rng)
            if step % budget.eval_every == 0:
                trace.append((step, mc_kl(isotropic_gaussian_logpdf, disc.density, eval_x)))
    elif mode == "conditional":
        disc = SlotDiscriminator(m, m - 1, rng, width=budget.width, lr=budget.lr, betas=budget.betas)
        eval_x = gaussian_chain_sample(m, budget.n_eval, eval_rng).astype(np.float32)
        for step in range(1, budget.steps + 1):
            disc.train_step(gaussian_chain_sample(m, budget.batch, rng), rng)
            if step % budget.eval_every == 0:
                trace.append((step, mc_kl(gaussian_chain_conditional_logpdf, disc.density, eval_x)))
    else:
        raise ValueError(f"mode must be 'joint' or 'conditional', got {mode!r}")
    return trace


def write_trace(path, traces: dict[int, list[tuple[int, float]]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "step", "kl"])
        for m, trace in traces.items():
            for step, kl in trace:
                w.writerow([m, step, repr(kl)])


# ---------------------------------------------------------------------------
# ablation

@dataclass
class AblationResult:
    eep: list[RunResult]
    direct: list[RunResult]

    def table(self) -> list[dict]:
        rows = []
        for mode, runs in (("eep", self.eep), ("sigma_i", self.direct)):
            for r in runs:
                rows.append({"loss_mode": mode, "seed": r.config["seed"], "mig": r.report.mig,
                             "final_sigma_i": r.final_sigma_i, "latent_drift": r.latent_drift})
        return rows

    def mean(self, mode: str, key: str) -> float:
        runs = self.eep if mode == "eep" else self.direct
        vals = [r.report.mig if key == "mig" else getattr(r, key) for r in runs]
        return float(np.mean(vals))


def ablate(base: ExperimentConfig, seeds: Sequence[int], out_dir=None,
           cache: dict | None = None) -> AblationResult:
    """Paired runs differing only in loss mode (EEP vs direct summed information)."""
    eep, direct = [], []
    for seed in seeds:
        for mode, bucket in (("eep", eep), ("sigma_i", direct)):
            cfg = dataclasses.replace(base, loss_mode=mode, seed=seed)
            key = (cfg.dataset, cfg.lam, cfg.sigma, cfg.m, mode, seed, cfg.iterations)
            if cache is not None and key in cache:
                bucket.append(cache[key])
                continue
            sub = Path(out_dir) / f"{mode}_seed{seed}" if out_dir else None
            res = train(cfg, sub)
            if cache is not None:
                cache[key] = res
            bucket.append(res)
    result = AblationResult(eep, direct)
    if out_dir:
        with open(Path(out_dir) / "ablation.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["loss_mode", "seed", "mig", "final_sigma_i", "latent_drift"])
            w.writeheader()
            for row in result.table():
                w.writerow({k: fmt(v) for k, v in row.items()})
    return result
