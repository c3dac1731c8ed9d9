"""Run the three studies (ablation, refinement comparison, Delta sweep) for one config.

    python scripts/run_experiments.py --config configs/quick.toml --out-dir out/quick
"""
import argparse
import dataclasses
import time

from twinforge.config import ExperimentConfig, load_config
from twinforge.experiments import MapCache, run_ablation_experiment, run_delta_sweep, run_refinement_comparison


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--out-dir")
    ap.add_argument("--threads", type=int)
    ap.add_argument("--skip", nargs="*", default=(), choices=("ablate", "compare", "sweep"))
    args = ap.parse_args()
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {k: v for k, v in (("out_dir", args.out_dir), ("threads", args.threads)) if v is not None}
    cfg = dataclasses.replace(cfg, **over)
    # one cache so the hi-fi maps are traced once for all studies
    cache = MapCache(cfg)
    steps = [("ablate", run_ablation_experiment), ("compare", run_refinement_comparison),
             ("sweep", run_delta_sweep)]
    for name, fn in steps:
        if name in args.skip:
            continue
        t0 = time.perf_counter()
        fn(cfg, cfg.out_dir, cache=cache)
        print(f"{name}: {time.perf_counter() - t0:.1f} s -> {cfg.out_dir}")


if __name__ == "__main__":
    main()
