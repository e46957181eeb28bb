"""Growth and Lipschitz probe estimates for each config at doubling sample counts."""

import argparse
from pathlib import Path

from spreadsurf.config import load_config
from spreadsurf.validation import probe_alpha3, probe_growth, probe_lipschitz


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("configs", nargs="*", type=Path,
                    default=sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.json")))
    ap.add_argument("--samples", type=int, nargs="+", default=[1000, 2000])
    args = ap.parse_args()
    n = tuple(args.samples)
    for path in args.configs:
        m = load_config(path).model
        grow = probe_growth(m.grid, m.vol, m.mjump, m.ljump, n_samples=n)
        lips = probe_lipschitz(m.grid, m.vol, m.mjump, m.ljump, n_samples=n)
        print(f"{path.stem}: alpha3 ratio {probe_alpha3(m.grid, m.ljump):.4g}")
        rows = [("growth", grow)] + [(f"lipschitz r={r:g}", lips[r]) for r in sorted(lips)]
        for label, p in rows:
            est = " ".join(f"{k}:{v:.5g}" for k, v in p.estimates.items())
            print(f"  {label:16s} {est}  change {100 * p.relative_change(n[0], n[-1]):.2f}%")


if __name__ == "__main__":
    main()
