"""Synthetic column breakthrough and a Levenberg-Marquardt fit of the adhesion parameters.

    python demos/breakthrough_fit.py [--seed 20] [--noise 0.02] [--start 3]
"""
import argparse

import numpy as np

from fringesim.inverse import (ColumnExperiment, adhesion_from_cells, breakthrough_forward, default_sampling,
                               fit_adhesion, synthetic_experiment)

TRUE = (3e-4, 6.2e-6, 1.6e8)  # k_att [1/s], k_det [1/s], c_max [cells/mL]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=20)
    ap.add_argument("--noise", type=float, default=0.02)
    ap.add_argument("--start", type=float, default=3.0, help="factor applied to every true parameter")
    args = ap.parse_args()
    exp = ColumnExperiment()
    exp = ColumnExperiment(times=default_sampling(exp))
    data = synthetic_experiment(adhesion_from_cells(*TRUE), exp, args.noise, seed=args.seed)
    res = fit_adhesion(data, adhesion_from_cells(*(args.start * v for v in TRUE)), rel_noise=max(args.noise, 1e-3))
    for t in res.trace:
        mark = "accepted" if t["accepted"] else "rejected"
        print(f"iter {t['iter']:2d}  rss {t['rss']:.4g}  lambda {t['lambda']:.1e}  {mark}")
    print(f"{res.message} after {res.iterations} iterations")
    for name, est, true, se in zip(("k_att", "k_det", "c_max"), res.params, TRUE, res.std_errors):
        print(f"{name:6s} {est:.4g} (true {true:.4g}, error {est / true - 1:+.1%}, std err {se:.2g})")
    fit = breakthrough_forward(adhesion_from_cells(*res.params), data)
    pv = np.asarray(data.times) / data.pore_volume_time
    print(" PV    data C/C0   fit C/C0")
    for i in range(0, len(pv), 10):
        print(f"{pv[i]:5.2f}  {data.c_out[i] / data.c_in:9.4f}  {fit[i] / data.c_in:9.4f}")


if __name__ == "__main__":
    main()
