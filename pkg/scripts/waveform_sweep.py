"""Lambda x sigma x seed sweep on the pulse-train waveforms, then r(log sigma_i, MIG).

    python scripts/waveform_sweep.py --out results/sweep --workers 4
"""
import argparse

from gcae import experiments as ex
from gcae.config import ExperimentConfig

parser = argparse.ArgumentParser()
parser.add_argument("--lambdas", default="0,0.1,0.2,0.3")
parser.add_argument("--sigmas", default="0.2,0.3")
parser.add_argument("--seeds", default="0,1,2")
parser.add_argument("--iters", type=int, default=2000)
parser.add_argument("--workers", type=int, default=1)
parser.add_argument("--out", default="results/sweep")
args = parser.parse_args()

floats = lambda s: [float(v) for v in s.split(",")]  # noqa: E731
base = ExperimentConfig(dataset="waveforms", m=10, iterations=args.iters)
configs = ex.sweep_configs(base, floats(args.lambdas), floats(args.sigmas),
                           [int(v) for v in args.seeds.split(",")])
records = ex.sweep(configs, args.out, workers=args.workers)

for row in ex.summarize(records):
    print(f"lambda {row['lambda']:<4g} sigma {row['sigma']:<4g} mig {row['mig_mean']:.3f}  "
          f"sigma_i {row['final_sigma_i_mean']:.4f}  mse {row['final_mse_mean']:.4f}")
corr = ex.correlate(records)
print("pearson r(log sigma_i, mig):", "undefined" if corr.r is None else f"{corr.r:.3f}")
