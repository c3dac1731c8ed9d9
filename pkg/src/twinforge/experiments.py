"""End-to-end studies: building-removal ablation, refinement comparison, Delta sweep.

All randomness is derived from the config seeds, and radio maps are computed
cell-parallel into disjoint slots, so tables are identical for any thread
count.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import metrics
from .baselines import baseline_select_random, baseline_select_volume
from .config import ExperimentConfig
from .egsr import score_scene, select_top_w
from .geometry import make_ellipsoid
from .raytrace import RadioMap, Tracer, radio_map_from_tracer
from .rx_proxy import build_rx_proxy
from .scene import (
    CityParams,
    RefinementPlan,
    Scene,
    TxConfig,
    apply_refinement,
    degrade_scene,
    generate_synthetic_city,
    load_scene,
)


@dataclass(frozen=True)
class Scenario:
    name: str
    hi: Scene
    low: Scene


def build_scenarios(cfg: ExperimentConfig) -> list[Scenario]:
    src = cfg.scene
    if src.path is not None:
        hi = load_scene(src.path)
        hi = dataclasses.replace(hi, fidelity=())  # treat the file as ground truth
        return [Scenario(os.path.splitext(os.path.basename(src.path))[0], hi,
                         degrade_scene(hi, cfg.degrade, cfg.degrade_seed))]
    clear = tuple((p[0], p[1], src.tx_clearance) for p in cfg.tx_positions)
    params = CityParams(cells=src.cells, clear_zones=clear)
    out = []
    for s in src.seeds:
        hi = generate_synthetic_city(int(s), src.n_buildings, src.extent, params)
        out.append(Scenario(f"city{s}", hi, degrade_scene(hi, cfg.degrade, cfg.degrade_seed)))
    return out


class MapCache:
    """Radio maps keyed by (scenario, tx index, refined-id set).

    The hi-fi map of a scenario is the entry whose refined set is every id;
    refine-all plans therefore hit the same entry.
    """

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._maps: dict = {}
        self._tracers: dict = {}
        self.hits = 0

    def _key(self, sc: Scenario, tx_idx: int, refined: frozenset):
        return (sc.name, tx_idx, "hi" if refined == frozenset(sc.hi.ids) else refined)

    def tracer(self, sc: Scenario, tx_idx: int, tx: TxConfig, refined: frozenset) -> Tracer:
        """Tracer of a refined scene; only hi-fi tracers are kept."""
        key = self._key(sc, tx_idx, refined)
        if key in self._tracers:
            return self._tracers[key]
        scene = sc.hi if key[2] == "hi" else apply_refinement(
            sc.low, sc.hi, RefinementPlan(refined, len(refined)))
        tr = Tracer(scene, tx.position, self.cfg.radio.trace())
        if key[2] == "hi":
            self._tracers[key] = tr
        return tr

    def evaluate(self, sc: Scenario, tx_idx: int, tx: TxConfig, refined: frozenset,
                 want_tracer: bool = False):
        """``(map, tracer or None)``; the map is cached, the tracer is transient."""
        key = self._key(sc, tx_idx, refined)
        if key in self._maps and not want_tracer:
            self.hits += 1
            return self._maps[key], None
        tr = self.tracer(sc, tx_idx, tx, refined)
        if key not in self._maps:
            self._maps[key] = radio_map_from_tracer(tr, tx, self.cfg.radio.h_r, self.cfg.threads)
        else:
            self.hits += 1
        return self._maps[key], tr

    def get(self, sc: Scenario, tx_idx: int, tx: TxConfig, refined: frozenset) -> RadioMap:
        return self.evaluate(sc, tx_idx, tx, refined)[0]

    def hi(self, sc: Scenario, tx_idx: int, tx: TxConfig) -> RadioMap:
        return self.get(sc, tx_idx, tx, frozenset(sc.hi.ids))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_table(path, header: list[str], rows: list[list], stamp: str) -> None:
    buf = io.StringIO()
    buf.write(f"# {stamp}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


# ---------------------------------------------------------------------------
# ablation


@dataclass
class AblationResult:
    # (scenario, tx index) -> {building id: (S, A)}
    profiles: dict = field(default_factory=dict)
    gini: dict = field(default_factory=dict)
    orders: dict = field(default_factory=dict)


def run_ablation_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None,
                            cache: Optional[MapCache] = None) -> AblationResult:
    cache = cache or MapCache(cfg)
    res = AblationResult()
    txs = cfg.txs()
    rows, summary = [], []
    for sc in build_scenarios(cfg):
        mask = sc.hi.footprint_mask()
        for t, tx in enumerate(txs):
            base = cache.hi(sc, t, tx)
            tracer = Tracer(sc.hi, tx.position, cfg.radio.trace())
            prof = {}
            for bid in sc.hi.ids:
                abl = radio_map_from_tracer(tracer.without(bid), tx, cfg.radio.h_r, cfg.threads)
                dev = metrics.deviation_between(base, abl, mask)
                prof[bid] = (metrics.impact_strength(dev), metrics.impact_range(dev, cfg.ablation.tau))
            res.profiles[(sc.name, t)] = prof
            res.gini[(sc.name, t)] = metrics.gini([s for s, _ in prof.values()])
        # the first deployment fixes the display order for all deployments
        first = res.profiles[(sc.name, 0)]
        order = sorted(first, key=lambda b: (-first[b][0], b))
        res.orders[sc.name] = order
        for t in range(len(txs)):
            prof = res.profiles[(sc.name, t)]
            for rank, bid in enumerate(order, 1):
                rows.append([sc.name, t + 1, rank, bid, prof[bid][0], prof[bid][1]])
            summary.append([sc.name, t + 1, len(prof), res.gini[(sc.name, t)]])
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_table(os.path.join(out_dir, "ablation_profile.csv"),
                    ["scenario", "tx", "rank", "building_id", "S_pg_db", f"A_{cfg.ablation.tau:g}db"],
                    rows, cfg.stamp())
        write_table(os.path.join(out_dir, "ablation_summary.csv"),
                    ["scenario", "tx", "n_buildings", "gini_S"], summary, cfg.stamp())
    return res


# ---------------------------------------------------------------------------
# refinement comparison


@dataclass
class ComparisonRow:
    scenario: str
    tx: int
    method: str
    budget: int
    rmse_all: float
    rmse_cov: float
    rmse_all_std: float = 0.0
    rmse_cov_std: float = 0.0
    ssbf_loss: float = float("nan")
    ccdf: Optional[np.ndarray] = None


def _plans(method: str, sc: Scenario, tx_idx: int, budget: int, cfg: ExperimentConfig,
           egsr_table) -> list[RefinementPlan]:
    if method == "egsr":
        return [select_top_w(egsr_table, budget)]
    if method == "volume":
        return [baseline_select_volume(sc.low, budget)]
    if method == "uniform":
        return [RefinementPlan(frozenset(sc.low.ids), len(sc.low.ids))]
    seed_key = int(sc.name.encode().hex(), 16) % (2 ** 32)
    return [baseline_select_random(sc.low, budget, [cfg.seed, seed_key, tx_idx, budget, r])
            for r in range(cfg.compare.random_repeats)]


def gamma_grid(step: float) -> np.ndarray:
    n = int(round(1.0 / step))
    return np.round(np.linspace(0.0, 1.0, n + 1), 12)


def run_refinement_comparison(cfg: ExperimentConfig, out_dir: Optional[str] = None,
                              cache: Optional[MapCache] = None,
                              scenarios: Optional[list[Scenario]] = None) -> list[ComparisonRow]:
    cache = cache or MapCache(cfg)
    txs = cfg.txs()
    grid = gamma_grid(cfg.compare.gamma_step)
    results: list[ComparisonRow] = []
    for sc in scenarios or build_scenarios(cfg):
        for t, tx in enumerate(txs):
            star = cache.hi(sc, t, tx)
            cov = metrics.coverage_set(star, cfg.radio.coverage_threshold).ravel()
            table = None
            if "egsr" in cfg.compare.methods:
                table = score_scene(sc.low, tx.position, cfg.egsr, threads=cfg.threads)
            bf_cells = np.flatnonzero(cov)
            h_star = None
            if cfg.compare.beamforming:
                h_star = cache.tracer(sc, t, tx, frozenset(sc.hi.ids)).grid_channels(cfg.radio.h_r, tx, bf_cells)
            for method in cfg.compare.methods:
                budgets = (len(sc.low.ids),) if method == "uniform" else cfg.compare.budgets
                for w in budgets:
                    r_all, r_cov, ccdfs, losses = [], [], [], []
                    for plan in _plans(method, sc, t, w, cfg, table):
                        m, tr = cache.evaluate(sc, t, tx, plan.selected, cfg.compare.beamforming)
                        r_all.append(metrics.rmse_all(m, star))
                        r_cov.append(metrics.rmse_cov(m, star, cfg.radio.coverage_threshold))
                        if cfg.compare.beamforming:
                            h_hat = tr.grid_channels(cfg.radio.h_r, tx, bf_cells)
                            g = metrics.bf_gains(h_hat, h_star)
                            ccdfs.append(metrics.bf_ccdf(g, grid).ccdf)
                            losses.append(metrics.ssbf_loss(g) if len(g) else float("nan"))
                    results.append(ComparisonRow(
                        sc.name, t + 1, method, int(w),
                        float(np.mean(r_all)), float(np.mean(r_cov)),
                        float(np.std(r_all)), float(np.std(r_cov)),
                        float(np.mean(losses)) if losses else float("nan"),
                        np.mean(ccdfs, axis=0) if ccdfs else None,
                    ))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        rows = [[r.scenario, r.tx, r.method, r.budget, r.rmse_all, r.rmse_cov, r.rmse_all_std,
                 r.rmse_cov_std, r.ssbf_loss] for r in results]
        # expectation over deployments, uniform weights
        agg: dict = {}
        for r in results:
            agg.setdefault((r.scenario, r.method, r.budget), []).append(r)
        for (name, method, w), rs in agg.items():
            rows.append([name, "mean", method, w, float(np.mean([r.rmse_all for r in rs])),
                         float(np.mean([r.rmse_cov for r in rs])), float("nan"), float("nan"),
                         float(np.mean([r.ssbf_loss for r in rs]))])
        write_table(os.path.join(out_dir, "rmse_vs_w.csv"),
                    ["scenario", "tx", "method", "W", "rmse_all", "rmse_cov", "rmse_all_std",
                     "rmse_cov_std", "ssbf_loss"], rows, cfg.stamp())
        if cfg.compare.beamforming:
            crow = [[r.scenario, r.tx, r.method, r.budget, float(g), float(c)]
                    for r in results for g, c in zip(grid, r.ccdf)]
            write_table(os.path.join(out_dir, "bf_ccdf.csv"),
                        ["scenario", "tx", "method", "W", "gamma", "ccdf"], crow, cfg.stamp())
    return results


# ---------------------------------------------------------------------------
# Delta sweep


@dataclass
class SweepRow:
    scenario: str
    tx: int
    delta: float
    rmse_cov: float
    rmse_all: float
    mean_ellipsoid_volume: float


def run_delta_sweep(cfg: ExperimentConfig, out_dir: Optional[str] = None,
                    cache: Optional[MapCache] = None) -> list[SweepRow]:
    cache = cache or MapCache(cfg)
    txs = cfg.txs()
    out: list[SweepRow] = []
    for sc in build_scenarios(cfg):
        for t, tx in enumerate(txs):
            star = cache.hi(sc, t, tx)
            rx = build_rx_proxy(sc.low.terrain, sc.low.buildings, tx.position, cfg.egsr.grid, cfg.egsr.h_r)
            for delta in cfg.sweep.deltas:
                params = dataclasses.replace(cfg.egsr, delta=float(delta))
                table = score_scene(sc.low, tx.position, params, threads=cfg.threads, rx_proxy=rx)
                m = cache.get(sc, t, tx, select_top_w(table, cfg.sweep.budget).selected)
                vol = float(np.mean([make_ellipsoid(tx.position, p, delta).volume for p in rx.positions]))
                out.append(SweepRow(sc.name, t + 1, float(delta),
                                    metrics.rmse_cov(m, star, cfg.radio.coverage_threshold),
                                    metrics.rmse_all(m, star), vol))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_table(os.path.join(out_dir, "delta_sweep.csv"),
                    ["scenario", "tx", "delta", "rmse_cov", "rmse_all", "mean_ellipsoid_volume"],
                    [[r.scenario, r.tx, r.delta, r.rmse_cov, r.rmse_all, r.mean_ellipsoid_volume] for r in out],
                    cfg.stamp())
    return out
