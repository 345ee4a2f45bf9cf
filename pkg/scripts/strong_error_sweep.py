"""Strong error of the Euler scheme against the closed-form exponential-Levy solution.

Both solutions share the recorded Brownian increments, Levy marks and
switching times, so the difference is pure discretisation error.

    python3 scripts/strong_error_sweep.py --paths 20000 --kmin 3 --kmax 9
"""

import argparse

import numpy as np

from rsjd.model_core import LevySpec
from rsjd.path_simulator import SimulationConfig, run_blocks
from rsjd.presets import ExpLevyPreset, build_exp_levy, closed_form_exp_levy_path


def sweep(paths: int, ks, seed: int = 1):
    levy = LevySpec("compound_poisson", atoms=[[0.3], [-0.4], [1.5]], masses=[1.0, 0.8, 0.3])
    pre = ExpLevyPreset(sigma=[0.2, 0.4], rho_matrix=[[0, 0.1], [-0.1, 0]], lam_matrix=[[0, 1.0], [1.5, 0]],
                        levy=levy)
    spec = build_exp_levy(pre)
    rows = []
    for k in ks:
        dt = 2.0**-k
        cfg = SimulationConfig(dt=dt, path_count=paths, master_seed=seed, record_noise=True)
        diffs = np.concatenate(run_blocks(spec, cfg, (), lambda b: np.abs(
            np.log(b.y[:, -1, 0]) - np.log(closed_form_exp_levy_path(pre, b)[:, -1]))))
        rows.append((dt, diffs.mean(), diffs.std(ddof=1) / np.sqrt(diffs.size)))
    return rows


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=20_000)
    ap.add_argument("--kmin", type=int, default=3)
    ap.add_argument("--kmax", type=int, default=9)
    args = ap.parse_args()
    rows = sweep(args.paths, range(args.kmin, args.kmax + 1))
    print("dt,mean_abs_log_error,se")
    for dt, e, se in rows:
        print(f"{dt:.6g},{e:.6g},{se:.3g}")
    dts, errs = np.array([r[0] for r in rows]), np.array([r[1] for r in rows])
    print(f"fitted order {np.polyfit(np.log(dts), np.log(errs), 1)[0]:.3f}")
