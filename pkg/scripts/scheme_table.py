"""Scheme comparison table with RK45 and training-integrator rollouts.

Each (scheme, seed) model is trained once and rolled out with every
requested prediction integrator.  Usage:

    python3 scripts/scheme_table.py --config configs/dho.cfg --out runs/dho_table
    python3 scripts/scheme_table.py --config configs/vdp.cfg \
        --cells AB1,AB2,AM2,BDF3,Taylor1,Taylor2,Taylor3 --out runs/vdp_table
"""

import argparse
import dataclasses
import time
from pathlib import Path

import numpy as np

from odegp.experiment import ExperimentConfig, fit, load_config, make_data, parse_cells, parse_seeds, predict, score

ALL = "AB1,AB2,AB3,AM1,AM2,AM3,BDF1,BDF2,BDF3"


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=None)
    p.add_argument("--cells", default=ALL)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--integrators", default="rk45,training")
    p.add_argument("--out", default=None)
    args = p.parse_args(argv)
    base = load_config(args.config) if args.config else ExperimentConfig(system="dho")
    integrators = args.integrators.split(",")
    rows = []
    for kind, order in parse_cells(args.cells):
        for seed in parse_seeds(args.seeds):
            cfg = dataclasses.replace(base, kind=kind, order=order, seed=seed)
            data = make_data(cfg)
            t0 = time.perf_counter()
            model = fit(cfg, data)
            t_train = time.perf_counter() - t0
            for integ in integrators:
                c = dataclasses.replace(cfg, predict_integrator=integ)
                t1 = time.perf_counter()
                rep = score(c, model, data, predict(c, model, data))
                rows.append((c.label, integ, seed, rep.mse, rep.n_failed))
                print(f"{c.label:<8}{integ:<9} seed {seed}  MSE {rep.mse:.4g}  failed {rep.n_failed}"
                      f"  train {t_train:.0f}s  rollout {time.perf_counter() - t1:.0f}s", flush=True)
    print("\nmethod  integrator  MSE mean (std)")
    for label in dict.fromkeys(r[0] for r in rows):
        for integ in integrators:
            v = [r[3] for r in rows if r[0] == label and r[1] == integ]
            print(f"{label:<8}{integ:<12}{np.mean(v):.4f} ({np.std(v):.4f})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "table.csv").open("w") as fh:
            fh.write("method,integrator,seed,mse,n_failed\n")
            for r in rows:
                fh.write(f"{r[0]},{r[1]},{r[2]},{r[3]:.17g},{r[4]}\n")


if __name__ == "__main__":
    main()
