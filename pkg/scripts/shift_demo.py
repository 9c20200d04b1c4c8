#!/usr/bin/env python3
"""Adaptive regret of FTL and FLH on panels whose best weights switch halfway."""

import argparse

from synthreg.adversary import GeneratorSpec, generate_panel
from synthreg.protocol import adaptive_regret, compute_regret, oracle_fixed_weights, run_protocol


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=4)
    ap.add_argument("--t", type=int, default=200)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--noise", type=float, default=0.1)
    args = ap.parse_args()
    strategies = {"ftl": {"kind": "ftl"}, "flh": {"kind": "flh", "base": {"kind": "ftl"}}}
    print("seed strategy regret adaptive_regret interval")
    for seed in range(args.seeds):
        panel = generate_panel(GeneratorSpec("piecewise_shift", N=args.n, T=args.t, seed=seed, noise=args.noise))
        oracle = oracle_fixed_weights(panel)
        for name, config in strategies.items():
            traj = run_protocol(config, panel)
            adaptive = adaptive_regret(traj, panel)
            regret = compute_regret(traj, oracle).regret
            print(f"{seed} {name} {regret:.4f} {adaptive.value:.4f} {adaptive.interval}")


if __name__ == "__main__":
    main()
