"""Joint vs conditional density recovery: KL traces for m in {2,4,8,16}.

    python scripts/density_demo.py --out results/density
"""
import argparse
import dataclasses
from pathlib import Path

from gcae import experiments as ex

parser = argparse.ArgumentParser()
parser.add_argument("--m-list", default="2,4,8,16")
parser.add_argument("--conditional-m", type=int, default=16)
parser.add_argument("--steps-scale", type=float, default=1.0, help="shrink both budgets for a quick look")
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--out", default="results/density")
args = parser.parse_args()

out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)
joint = dataclasses.replace(ex.JOINT_BUDGET, steps=int(ex.JOINT_BUDGET.steps * args.steps_scale))
cond = dataclasses.replace(ex.CONDITIONAL_BUDGET, steps=int(ex.CONDITIONAL_BUDGET.steps * args.steps_scale))

traces = {}
for m in [int(v) for v in args.m_list.split(",")]:
    traces[m] = ex.density_demo("joint", m, joint, args.seed)
    print(f"joint m={m:2d}  final kl {traces[m][-1][1]:.4f}", flush=True)
ex.write_trace(out / "kl_joint.csv", traces)

trace = ex.density_demo("conditional", args.conditional_m, cond, args.seed)
print(f"conditional m={args.conditional_m}  final kl {trace[-1][1]:.4f}")
ex.write_trace(out / "kl_conditional.csv", {args.conditional_m: trace})
