"""Drift-condition residual of drift_alpha under grid refinement on random registry models."""

import argparse

import numpy as np

from spreadsurf.coefficients import LossState, drift_alpha, drift_residual_values
from spreadsurf.function_space import SurfaceGrid
from spreadsurf.validation import MODEL_KINDS, random_registry_model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--models", type=int, default=20)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--xi-max", type=float, default=10.0)
    ap.add_argument("--n-eta", type=int, default=50)
    args = ap.parse_args()
    steps = (26, 52, 104, 208)
    print("model kind       " + " ".join(f"dxi=1/{n:<4d}" for n in steps) + "  orders")
    for i in range(args.models):
        m = random_registry_model(np.random.default_rng([args.seed, i]), MODEL_KINDS[i % 3])
        loss = LossState(m.loss_level)
        errs = []
        for n in steps:
            g = SurfaceGrid(args.xi_max, int(args.xi_max * n), args.n_eta)
            h = m.surface(g)
            a = drift_alpha(loss, h, m.vol, m.mjump, m.ljump)
            R = drift_residual_values(h, loss, m.vol, m.mjump, m.ljump, a)
            rows = [g.xi_index(T) for T in np.linspace(1, args.xi_max, 10)]
            cols = [g.eta_index(k / 10) for k in range(1, 11)]
            errs.append(float(np.nanmax(np.abs(R[np.ix_(rows, cols)]))))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        print(f"{i:5d} {m.kind:10s} " + " ".join(f"{e:10.2e}" for e in errs) + "  " +
              " ".join(f"{o:.2f}" for o in orders))


if __name__ == "__main__":
    main()
