"""Domain-adversarial training on the two-domain Gaussian toy: probe accuracies with and without DAT.

    python3 scripts/dat_toy.py [--seed 0]
"""
import argparse
import dataclasses
import time

from ffsv.toy import ToyConfig, run_dat_toy


def cli():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args()
    cfg = ToyConfig()
    cfg = dataclasses.replace(cfg, seed=a.seed, finetune=dataclasses.replace(cfg.finetune, seed=a.seed + 1))
    t0 = time.perf_counter()
    res = run_dat_toy(cfg)
    print(f"{'':8} {'domain probe':>13} {'class probe':>12}")
    print(f"{'no DAT':8} {res.domain_acc_base:13.3f} {res.class_acc_base:12.3f}")
    print(f"{'DAT':8} {res.domain_acc_dat:13.3f} {res.class_acc_dat:12.3f}")
    print(f"{time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    cli()
