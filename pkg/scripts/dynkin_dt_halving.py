"""Dynkin martingale means for the standard test-function suite as dt is halved.

The mean of M^f_T should shrink with dt (Euler bias) until it is hidden by
Monte Carlo noise.

    python3 scripts/dynkin_dt_halving.py --model brownian_switching --paths 20000
"""

import argparse

from rsjd.model_core import standard_suite
from rsjd.path_simulator import SimulationConfig
from rsjd.presets import build_preset
from rsjd.verifier import dynkin_test

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", default="brownian_switching")
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()

    spec = build_preset(args.model)
    suite = standard_suite(spec.d, spec.K, center=spec.y0, spread=1.0)
    print("dt,function,mean,se")
    for dt in (0.04, 0.02, 0.01, 0.005):
        cfg = SimulationConfig(dt=dt, path_count=args.paths, master_seed=args.seed)
        for rep in dynkin_test(spec, suite, cfg, times=[spec.horizon], bias_allowance=0.0):
            print(f"{dt},{rep.name},{rep.statistic:.5g},{rep.se:.3g}")
