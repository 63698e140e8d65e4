"""lambda=0.2 vs lambda=0 on a 10k dSprites subsample (needs the archive; see README)."""
import argparse
import dataclasses

from gcae import experiments as ex
from gcae.config import load_config

parser = argparse.ArgumentParser()
parser.add_argument("--iters", type=int, default=4000)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--out", default="results/dsprites")
args = parser.parse_args()

base = load_config(preset="dsprites-smoke", overrides={"iterations": args.iters, "seed": args.seed})
for lam in (0.0, 0.2):
    cfg = dataclasses.replace(base, lam=lam, sigma=0.2)
    res = ex.train(cfg, f"{args.out}/lam{lam:g}")
    print(f"lambda {lam:g}: " + "  ".join(f"{k} {v:.4f}" for k, v in res.report.scores().items()))
