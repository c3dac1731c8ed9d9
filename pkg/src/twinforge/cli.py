"""Command-line driver: ``twinforge <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import warnings
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .baselines import baseline_select_random, baseline_select_volume
from .config import ConfigError, ExperimentConfig, load_config
from .egsr import read_score_csv, score_scene, select_top_w
from .experiments import (
    gamma_grid,
    run_ablation_experiment,
    run_delta_sweep,
    run_refinement_comparison,
    write_table,
)
from .raytrace import Tracer, compute_radio_map
from .scene import (
    CityParams,
    RefinementPlan,
    apply_refinement,
    degrade_scene,
    generate_synthetic_city,
    load_scene,
    save_scene,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _tx_arg(text: str) -> tuple[float, float, float]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return vals


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="TOML or JSON experiment config")
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--out-dir", default=d)
    p.add_argument("--threads", type=int, default=d)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="twinforge", description=__doc__.splitlines()[0])
    _global_flags(ap, suppress=False)
    sub = ap.add_subparsers(dest="command", required=True)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    p = cmd("gen-scene", "generate a seeded synthetic city (hi-fi scene JSON)")
    p.add_argument("--n-buildings", type=int)
    p.add_argument("--extent", type=float)
    p.add_argument("--out")

    p = cmd("degrade", "derive a low-fidelity scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--out")

    p = cmd("score", "EGSR scores of a low-fidelity scene for one Tx")
    p.add_argument("--scene", required=True)
    p.add_argument("--tx", type=_tx_arg, help="x,y,z (default: first configured Tx)")
    p.add_argument("--budget", type=int, default=0, help="mark the top-W rows as selected")
    p.add_argument("--delta", type=float)
    p.add_argument("--pairs", help="also write the per-pair score matrix here (large)")
    p.add_argument("--out")

    p = cmd("select", "refinement plan from scores or a baseline rule")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--method", choices=("egsr", "random", "volume"), default="egsr")
    p.add_argument("--scores", help="score CSV (egsr)")
    p.add_argument("--scene", help="low-fidelity scene (random, volume)")
    p.add_argument("--out")

    p = cmd("refine", "apply a plan: swap selected buildings to hi-fi")
    p.add_argument("--low", required=True)
    p.add_argument("--hi", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--out")

    p = cmd("radiomap", "trace a radio map")
    p.add_argument("--scene", required=True)
    p.add_argument("--tx", type=_tx_arg)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--out")

    cmd("ablate", "building-removal ablation study")
    cmd("compare", "RMSE and beamforming versus budget, all methods")
    cmd("delta-sweep", "EGSR RMSE versus excess path length")

    p = cmd("bf-eval", "MRT beamforming gain of one scene against a reference")
    p.add_argument("--scene-hat", required=True)
    p.add_argument("--scene-star", required=True)
    p.add_argument("--tx", type=_tx_arg)
    return ap


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out_dir is not None:
        over["out_dir"] = args.out_dir
    if args.threads is not None:
        over["threads"] = args.threads
    return dataclasses.replace(cfg, **over) if over else cfg


def _out(args, cfg: ExperimentConfig, default_name: str) -> str:
    path = getattr(args, "out", None) or os.path.join(cfg.out_dir, default_name)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def _tx(args, cfg: ExperimentConfig):
    pos = args.tx if getattr(args, "tx", None) else cfg.tx_positions[0]
    return cfg.radio.tx(pos)


def run(args) -> None:
    cfg = _config(args)
    c = args.command
    if c == "gen-scene":
        src = cfg.scene
        seed = args.seed if args.seed is not None else src.seeds[0]
        clear = tuple((p[0], p[1], src.tx_clearance) for p in cfg.tx_positions)
        scene = generate_synthetic_city(seed, args.n_buildings or src.n_buildings, args.extent or src.extent,
                                        CityParams(cells=src.cells, clear_zones=clear))
        save_scene(scene, _out(args, cfg, "scene_hi.json"))
    elif c == "degrade":
        seed = args.seed if args.seed is not None else cfg.degrade_seed
        save_scene(degrade_scene(load_scene(args.scene), cfg.degrade, seed), _out(args, cfg, "scene_low.json"))
    elif c == "score":
        params = cfg.egsr if args.delta is None else dataclasses.replace(cfg.egsr, delta=args.delta)
        table = score_scene(load_scene(args.scene), _tx(args, cfg).position, params,
                            keep_pairs=bool(args.pairs), threads=cfg.threads)
        for w in table.warnings:
            print(f"warning: {w}", file=sys.stderr)
        table.to_csv(_out(args, cfg, "scores.csv"), args.budget, cfg.stamp())
        if args.pairs:
            table.pair_csv(args.pairs)
    elif c == "select":
        if args.method == "egsr":
            if not args.scores:
                raise ConfigError("select --method egsr needs --scores")
            plan = select_top_w(read_score_csv(args.scores), args.budget)
        else:
            if not args.scene:
                raise ConfigError(f"select --method {args.method} needs --scene")
            low = load_scene(args.scene)
            plan = (baseline_select_volume(low, args.budget) if args.method == "volume"
                    else baseline_select_random(low, args.budget, cfg.seed))
        with open(_out(args, cfg, "plan.json"), "w", encoding="utf-8") as fh:
            json.dump({"budget": plan.budget, "selected": sorted(plan.selected), "method": args.method,
                       "stamp": cfg.stamp()}, fh, indent=1)
            fh.write("\n")
    elif c == "refine":
        with open(args.plan, encoding="utf-8") as fh:
            d = json.load(fh)
        plan = RefinementPlan(frozenset(d["selected"]), int(d["budget"]))
        save_scene(apply_refinement(load_scene(args.low), load_scene(args.hi), plan),
                   _out(args, cfg, "scene_refined.json"))
    elif c == "radiomap":
        radio = cfg.radio if args.max_depth is None else dataclasses.replace(cfg.radio, max_depth=args.max_depth)
        m = compute_radio_map(load_scene(args.scene), _tx(args, cfg), radio.h_r, config=radio.trace(),
                              threads=cfg.threads)
        m.save(_out(args, cfg, "radiomap.txt"))
    elif c == "ablate":
        run_ablation_experiment(cfg, cfg.out_dir)
    elif c == "compare":
        run_refinement_comparison(cfg, cfg.out_dir)
    elif c == "delta-sweep":
        run_delta_sweep(cfg, cfg.out_dir)
    elif c == "bf-eval":
        tx = _tx(args, cfg)
        star_scene = load_scene(args.scene_star)
        star = compute_radio_map(star_scene, tx, cfg.radio.h_r, config=cfg.radio.trace(), threads=cfg.threads)
        cells = np.flatnonzero(metrics.coverage_set(star, cfg.radio.coverage_threshold).ravel())
        h_star = Tracer(star_scene, tx.position, cfg.radio.trace()).grid_channels(cfg.radio.h_r, tx, cells)
        h_hat = Tracer(load_scene(args.scene_hat), tx.position, cfg.radio.trace()).grid_channels(
            cfg.radio.h_r, tx, cells)
        g = metrics.bf_gains(h_hat, h_star)
        ev = metrics.bf_ccdf(g, gamma_grid(cfg.compare.gamma_step))
        os.makedirs(cfg.out_dir, exist_ok=True)
        write_table(os.path.join(cfg.out_dir, "bf_gains.csv"), ["cell", "gain"],
                    [[int(cc), float(v)] for cc, v in zip(cells, g)], cfg.stamp())
        write_table(os.path.join(cfg.out_dir, "bf_ccdf.csv"), ["gamma", "ccdf"],
                    [[float(a), float(b)] for a, b in zip(ev.gamma, ev.ccdf)], cfg.stamp())
        print(f"ssbf_loss={metrics.ssbf_loss(g) if len(g) else float('nan')!r} n={len(g)}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported with exit code 3
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
