"""Least symmetric input bounds over gamma_d for both certificate conditions.

    python scripts/input_bounds.py --out runs/input_bounds [--gammas 0.05,0.1,0.2,0.4,0.6,0.8,1.0]

Writes one CSV row per (mode, gamma_d); plotting is left to external tools.
"""

import argparse
import csv
import logging
import time
from pathlib import Path

from cbfmpc.certify import least_input_bound
from cbfmpc.config import bundled, load


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(bundled("scenario2")))
    ap.add_argument("--out", default="runs/input_bounds")
    ap.add_argument("--gammas", default="0.05,0.1,0.2,0.4,0.6,0.8,1.0")
    ap.add_argument("--modes", default="qdtcbf,dtcbf")
    ap.add_argument("--bisection-tol", type=float, default=0.05)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    cfg = load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for mode in args.modes.split(","):
        for g in (float(x) for x in args.gammas.split(",")):
            t0 = time.perf_counter()
            b = least_input_bound(mode, g, cfg.verify, bisection_tol=args.bisection_tol, domain=cfg.domain,
                                  tol=cfg.verifier_tol, budget=cfg.verifier_budget)
            rows.append({"mode": mode, "gamma_d": g, "least_input_bound": b,
                         "wall_time": time.perf_counter() - t0})
            print(f"{mode:6s} gamma_d={g:<5} bound {b:.3f}  ({rows[-1]['wall_time']:.0f} s)", flush=True)
    with open(out / "input_bounds.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
