"""Command line entry point: ``gcae {train,sweep,eval,correlate,density-demo,ablate}``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .autodiff import NumericFault
from .checkpoint import CheckpointError
from .config import PRESETS, ConfigError, load_config
from .datasets import NpyFormatError, SchemaError
from .model import TrainingFault

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--dataset", choices=["waveforms", "dsprites"])
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--loss-mode", choices=["eep", "sigma_i", "none"])
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcae", description="Gaussian channel autoencoder experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model, evaluate it and write log/metrics/checkpoint")
    _common(p)

    p = sub.add_parser("sweep", help="grid over lambda x sigma x seed")
    _common(p)
    p.add_argument("--lambdas", default="0,0.1,0.2,0.3")
    p.add_argument("--sigmas", default="0.2,0.3")
    p.add_argument("--seeds", default="0,1,2")

    p = sub.add_parser("eval", help="score a saved checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--dataset", choices=["waveforms", "dsprites"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("correlate", help="Pearson r(log sigma_i, MIG) over a sweep CSV")
    p.add_argument("sweep_csv")
    p.add_argument("--out")

    p = sub.add_parser("density-demo", help="KL traces for joint or conditional density recovery")
    p.add_argument("--mode", choices=["joint", "conditional"], default="joint")
    p.add_argument("--m-list", default="2,4,8,16")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="density_demo")

    p = sub.add_parser("ablate", help="EEP vs direct summed-information loss on paired seeds")
    _common(p)
    p.add_argument("--seeds", default="0,1,2")
    return parser


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _config(args):
    overrides = {"dataset": args.dataset, "lam": args.lam, "sigma": args.sigma, "m": args.m,
                 "seed": args.seed, "iterations": args.iters, "out": args.out,
                 "loss_mode": args.loss_mode}
    return load_config(args.config, args.preset, overrides).validate()


def cmd_train(args) -> int:
    cfg = _config(args)
    res = ex.train(cfg, cfg.out)
    r = res.report
    print(f"mse {res.final_mse:.5f}  sigma_i {res.final_sigma_i:.5f}  mig {r.mig:.4f}  "
          f"factor {r.factor_score:.4f}  sap {r.sap:.4f}  dci {r.dci:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = _config(args)
    configs = ex.sweep_configs(base, _floats(args.lambdas), _floats(args.sigmas),
                               [int(s) for s in _floats(args.seeds)])
    records = ex.sweep(configs, base.out, workers=args.workers)
    for row in ex.summarize(records):
        print(f"lambda {row['lambda']:g} sigma {row['sigma']:g}  n={row['n']}  "
              f"mig {row['mig_mean']:.3f}±{row['mig_std']:.3f}  sigma_i {row['final_sigma_i_mean']:.4f}  "
              f"mse {row['final_mse_mean']:.4f}")
    failed = [r for r in records if r.error]
    if failed:
        print(f"{len(failed)} run(s) failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = None
    if args.dataset:
        cfg = dataclasses.replace(load_config(), dataset=args.dataset)
    report, config = ex.evaluate_checkpoint(args.checkpoint, cfg, seed=args.seed)
    scores = report.scores()
    for k, v in scores.items():
        print(f"{k} {v:.4f}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(scores))
            w.writerow([repr(float(v)) for v in scores.values()])
    return EXIT_OK


def cmd_correlate(args) -> int:
    records = ex.read_records(args.sweep_csv)
    try:
        corr = ex.correlate(records)
    except ValueError as exc:
        raise ConfigError([str(exc)]) from None
    text = "undefined" if corr.r is None else f"{corr.r:.6f}"
    print(f"pearson_r {text}  n={len(corr.points)}  excluded={corr.excluded}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["log_sigma_i", "mig"])
            for x, y in corr.points:
                w.writerow([repr(x), repr(y)])
            w.writerow(["pearson_r", text])
    return EXIT_OK


def cmd_density_demo(args) -> int:
    budget = ex.JOINT_BUDGET if args.mode == "joint" else ex.CONDITIONAL_BUDGET
    if args.steps:
        budget = dataclasses.replace(budget, steps=args.steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = {}
    for m in [int(v) for v in _floats(args.m_list)]:
        traces[m] = ex.density_demo(args.mode, m, budget, seed=args.seed)
        print(f"{args.mode} m={m}: final kl {traces[m][-1][1]:.4f}" if traces[m] else f"m={m}: no evals")
    ex.write_trace(out / f"kl_{args.mode}.csv", traces)
    return EXIT_OK


def cmd_ablate(args) -> int:
    base = _config(args)
    out = Path(base.out)
    out.mkdir(parents=True, exist_ok=True)
    res = ex.ablate(base, [int(s) for s in _floats(args.seeds)], out)
    for mode in ("eep", "sigma_i"):
        print(f"{mode}: mig {res.mean(mode, 'mig'):.4f}  drift {res.mean(mode, 'latent_drift'):.3e}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "sweep": cmd_sweep, "eval": cmd_eval, "correlate": cmd_correlate,
            "density-demo": cmd_density_demo, "ablate": cmd_ablate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingFault, NumericFault) as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, CheckpointError, NpyFormatError, SchemaError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
