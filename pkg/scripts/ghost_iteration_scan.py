"""Ghost energy, PSNR and residual against Richardson-Lucy iteration count.

Reads the artifacts of a finished field-of-view study and re-runs the
single-kernel deconvolution, reporting metrics at a few iteration counts.

    python3 scripts/ghost_iteration_scan.py out/desk/fov --config configs/desk.json
"""

import argparse
import json
from pathlib import Path

import numpy as np

from diffuserscope.analysis import ghost_energy, psnr
from diffuserscope.config import load_config
from diffuserscope.container import read_container
from diffuserscope.forward import ConvOperator
from diffuserscope.recon import richardson_lucy_operator
from diffuserscope.studies import make_simulator


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("study_dir", type=Path)
    ap.add_argument("--config", type=Path, required=True)
    ap.add_argument("--iters", type=int, nargs="+", default=[5, 8, 30, 100, 200])
    args = ap.parse_args()
    cfg = load_config(args.config)
    results_period = json.loads((args.study_dir / "results.json").read_text())["ghost_period_px"]
    phantom = read_container(args.study_dir / "phantom.bin").data.astype(float)
    report = set(args.iters)
    for kind in cfg.fov.layouts:
        y = read_container(args.study_dir / f"{kind}_measurement.bin").data.astype(float)
        op = ConvOperator(make_simulator(cfg, kind)((0.0, 0.0, 0.0)), phantom.shape, y.shape, workers=cfg.workers)

        def cb(i, x, kind=kind):
            if i + 1 in report:
                g = ghost_energy(x[0], phantom, results_period, cfg.fov.guard_px)
                res = np.sqrt(np.mean((y - op.forward(x)) ** 2)) / y.max()
                print(f"{kind} iter {i + 1:4d}: ghost raw {g.raw_fraction:.3f} excess {g.excess_fraction:+.3f} "
                      f"psnr {psnr(x[0], phantom):5.1f} dB  residual/max {res:.4f}", flush=True)

        richardson_lucy_operator(y, op, max(args.iters), callback=cb)


if __name__ == "__main__":
    main()
