"""EEP loss vs direct summed-information loss over paired seeds (waveforms)."""
import argparse

from gcae import experiments as ex
from gcae.config import ExperimentConfig

parser = argparse.ArgumentParser()
parser.add_argument("--lam", type=float, default=0.2)
parser.add_argument("--sigma", type=float, default=0.2)
parser.add_argument("--seeds", default="0,1,2")
parser.add_argument("--iters", type=int, default=2000)
parser.add_argument("--out", default="results/ablation")
args = parser.parse_args()

base = ExperimentConfig(dataset="waveforms", m=10, lam=args.lam, sigma=args.sigma, iterations=args.iters)
res = ex.ablate(base, [int(v) for v in args.seeds.split(",")], args.out)
for row in res.table():
    print(f"{row['loss_mode']:8s} seed {row['seed']}  mig {row['mig']:.3f}  drift {row['latent_drift']:.3e}")
for mode in ("eep", "sigma_i"):
    print(f"{mode:8s} mean mig {res.mean(mode, 'mig'):.3f}  mean drift {res.mean(mode, 'latent_drift'):.3e}")
