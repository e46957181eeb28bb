"""No-loss fraction of a zero-volatility model against exp(-int lambda) for a linear-in-eta short end."""

import argparse

import numpy as np

from spreadsurf.engine import ModelConfig, simulate
from spreadsurf.function_space import HbSurface, SurfaceGrid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--rate", type=float, default=0.02)
    ap.add_argument("--spread", type=float, default=0.03)
    ap.add_argument("--spread-slope", type=float, default=0.002)
    ap.add_argument("--seed", type=int, default=21)
    args = ap.parse_args()
    r0, s0, s1 = args.rate, args.spread, args.spread_slope
    g = SurfaceGrid(10.0, 120, 10)
    h0 = HbSurface.from_function(g, lambda x, e: r0 + (s0 + s1 * x) * (1 - e))
    times = (0.5, 1.0, 2.0, 3.0, 5.0)
    cfg = ModelConfig(grid=g, initial_surface=h0, n_paths=args.paths, horizon=5.0, seed=args.seed,
                      output_times=times, rate_bound=0.1)
    ens = simulate(cfg)
    print(f"{'T':>4} {'simulated':>10} {'oracle':>10} {'stderr':>9} {'dev/se':>7}")
    for T in times:
        alive = (ens.loss[:, ens.snapshot_index(T)] == 0.0).astype(float)
        p, se = alive.mean(), alive.std(ddof=1) / np.sqrt(args.paths)
        oracle = np.exp(-(s0 * T + 0.5 * s1 * T * T))
        print(f"{T:4g} {p:10.5f} {oracle:10.5f} {se:9.2e} {abs(p - oracle) / se:7.2f}")


if __name__ == "__main__":
    main()
