"""Run the desk-scale studies and print a one-screen summary.

    python3 scripts/run_studies.py --config configs/desk.json --out out/desk resolution fov depthrange
"""

import argparse
import json
import logging
import time
from pathlib import Path

from diffuserscope.config import STUDIES, load_config
from diffuserscope.studies import run_study


def summarize(name, results):
    if name == "resolution":
        for kind, c in results["curves"].items():
            vals = ["inf" if v is None else f"{v:.1f}" for v in c["lateral_res_um"]]
            print(f"  {kind} lateral um: " + " ".join(vals))
        print(f"  z um: {results['curves'][next(iter(results['curves']))]['z_positions_um']}")
    elif name == "fov":
        for kind, m in results["metrics"].items():
            print(f"  {kind}: ghost {m['ghost_energy_fraction']:.3f} (raw {m['ghost_raw_fraction']:.3f}) "
                  f"psnr {m['psnr_db']:.1f} dB  min similarity {m['min_similarity']:.3f}")
    elif name == "depthrange":
        for kind, e in results["layouts"].items():
            z = e["resolved_z_um"]
            span = f"z {min(z):+.0f}..{max(z):+.0f}" if z else "none"
            print(f"  {kind}: {e['resolved_count']}/{results['n_spheres']} resolved ({span})")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("studies", nargs="*", choices=STUDIES, default=list(STUDIES))
    ap.add_argument("--config", type=Path, default=Path(__file__).resolve().parents[1] / "configs" / "desk.json")
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    cfg = load_config(args.config)
    out = args.out or Path(cfg.output_dir)
    for name in args.studies:
        t0 = time.perf_counter()
        results = run_study(cfg, name, out / name)
        print(f"{name}: {(time.perf_counter() - t0) / 60:.1f} min -> {out / name}")
        summarize(name, results)


if __name__ == "__main__":
    main()
