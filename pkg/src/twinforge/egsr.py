"""Ellipsoid-guided selective refinement: per-building relevance scores and top-W selection."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import (
    BuildingProxy,
    DegenerateGeometryError,
    build_proxy,
    footprint_samples,
    make_ellipsoid,
    normalized_overlap,
    overlap_from_samples,
    segment_entries,
    vertical_overlap_thickness,
)
from .rx_proxy import (
    DEFAULT_BAND_BOUNDARIES,
    DEFAULT_MIN_SECTORS,
    DEFAULT_RX_HEIGHT,
    DEFAULT_SPACINGS,
    PolarGrid,
    RxProxySet,
    build_rx_proxy,
)
from .scene import RefinementPlan, Scene


@dataclass(frozen=True)
class EgsrParams:
    delta: float = 50.0
    eta_los: float = 2.0
    sampling_interval: float = 2.0
    band_boundaries: tuple[float, ...] = DEFAULT_BAND_BOUNDARIES
    spacings: tuple[float, ...] = DEFAULT_SPACINGS
    min_sectors: int = DEFAULT_MIN_SECTORS
    h_r: float = DEFAULT_RX_HEIGHT
    seed: int = 0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be non-negative")
        if not self.eta_los > 1:
            raise ValueError("eta_los must exceed 1")
        if not self.sampling_interval > 0:
            raise ValueError("sampling_interval must be positive")

    @property
    def grid(self) -> PolarGrid:
        return PolarGrid.from_bands(self.band_boundaries, self.spacings, self.min_sectors)


@dataclass
class ScoreTable:
    ids: list[int]
    scores: np.ndarray
    n_rx: int
    pair_scores: Optional[np.ndarray] = None  # (N, n_buildings)
    blockers: Optional[np.ndarray] = None  # primary blocker id per Rx, -1 if none
    warnings: list[str] = field(default_factory=list)

    def score_of(self, bid: int) -> float:
        return float(self.scores[self.ids.index(bid)])

    def ranking(self) -> list[int]:
        order = sorted(range(len(self.ids)), key=lambda i: (-self.scores[i], self.ids[i]))
        return [self.ids[i] for i in order]

    def to_csv(self, path, budget: int = 0, header_comment: Optional[str] = None) -> None:
        rank = {bid: r + 1 for r, bid in enumerate(self.ranking())}
        chosen = select_top_w(self, budget).selected
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh)
            w.writerow(["building_id", "score", "rank", "is_selected"])
            for bid in sorted(self.ids, key=rank.get):
                w.writerow([bid, repr(self.score_of(bid)), rank[bid], int(bid in chosen)])

    def pair_csv(self, path) -> None:
        if self.pair_scores is None:
            raise ValueError("pair scores were not retained")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["rx_index"] + [str(i) for i in self.ids])
            for n, row in enumerate(self.pair_scores):
                w.writerow([n] + [repr(float(v)) for v in row])


def weighted_score(rho: float, is_primary_blocker: bool, eta_los: float) -> float:
    """``chi * rho`` with ``chi = eta_los`` for the primary LoS blocker."""
    return (eta_los if is_primary_blocker else 1.0) * rho


def building_samples(proxy: BuildingProxy, params: EgsrParams) -> np.ndarray:
    """Footprint samples of one building; the stream is keyed by ``(seed, id)``."""
    rng = np.random.default_rng([int(params.seed), int(proxy.building_id)])
    return footprint_samples(proxy, params.sampling_interval, rng)


def pair_score(proxy: BuildingProxy, x_t, x_r, params: EgsrParams,
               primary_blocker_id: Optional[int]) -> float:
    """Relevance of one building for one Tx-Rx pair."""
    e = make_ellipsoid(x_t, x_r, params.delta)
    rho = normalized_overlap(overlap_from_samples(proxy, building_samples(proxy, params), e), e)
    return weighted_score(rho, proxy.building_id == primary_blocker_id, params.eta_los)


def _primary_blockers(x_t, rx: np.ndarray, proxies: Sequence[BuildingProxy]) -> np.ndarray:
    """Primary LoS blocker id per Rx (``-1`` if unobstructed)."""
    best_t = np.full(len(rx), np.inf)
    best_id = np.full(len(rx), -1, dtype=np.int64)
    for p in sorted(proxies, key=lambda q: q.building_id):
        t = segment_entries(x_t, rx, p)
        hit = ~np.isnan(t) & (t < best_t)
        best_t[hit] = t[hit]
        best_id[hit] = p.building_id
    return best_id


def _score_rows(x_t, rx: np.ndarray, proxies, samples, delta: float, eta: float,
                blockers: np.ndarray) -> np.ndarray:
    nb = len(proxies)
    rows = np.zeros((len(rx), nb))
    ok = [i for i, (p, s) in enumerate(zip(proxies, samples)) if p is not None and len(s)]
    if not ok:
        return rows
    boxes = np.array([[*proxies[i].bbox(), proxies[i].z_low, proxies[i].z_high] for i in ok])
    owner = np.concatenate([np.full(len(samples[i]), j) for j, i in enumerate(ok)])
    pts = np.vstack([samples[i] for i in ok])
    zlo, zhi = boxes[owner, 4], boxes[owner, 5]
    weight = np.array([proxies[i].area / len(samples[i]) for i in ok])
    bid = np.array([proxies[i].building_id for i in ok])
    ok = np.asarray(ok)
    for n, x_r in enumerate(rx):
        e = make_ellipsoid(x_t, x_r, delta)
        if e.b <= 0.0:
            continue
        lo, hi = e.bbox()
        near = ~((boxes[:, 0] > hi[0]) | (boxes[:, 2] < lo[0]) | (boxes[:, 1] > hi[1])
                 | (boxes[:, 3] < lo[1]) | (boxes[:, 4] > hi[2]) | (boxes[:, 5] < lo[2]))
        if not near.any():
            continue
        sel = near[owner]
        tau = vertical_overlap_thickness(e, pts[sel], zlo[sel], zhi[sel])
        vol = np.bincount(owner[sel], weights=tau, minlength=len(ok)) * weight
        chi = np.where(bid == blockers[n], eta, 1.0)
        rows[n, ok] = chi * vol / e.volume
    return rows


def score_scene(scene_low: Scene, tx_position, params: EgsrParams = EgsrParams(),
                keep_pairs: bool = False, threads: int = 1,
                rx_proxy: Optional[RxProxySet] = None) -> ScoreTable:
    """Score every building of a low-fidelity scene for one Tx.

    Footprint samples are drawn once per building from a stream seeded by
    ``(params.seed, building id)``, so the table does not depend on building
    order or on ``threads``.
    """
    x_t = np.asarray(getattr(tx_position, "position", tx_position), dtype=float)
    ids = scene_low.ids
    if not ids:
        return ScoreTable([], np.zeros(0), 0)
    if rx_proxy is None:
        rx_proxy = build_rx_proxy(scene_low.terrain, scene_low.buildings, x_t, params.grid, params.h_r)
    if rx_proxy.n == 0:
        raise ValueError("receiver proxy set is empty; nothing to score against")
    warnings: list[str] = []
    proxies: list[Optional[BuildingProxy]] = []
    samples = []
    for b in scene_low.buildings:
        try:
            p = build_proxy(b)
        except DegenerateGeometryError as exc:
            warnings.append(f"building {b.id}: {exc}; scored 0")
            proxies.append(None)
            samples.append(np.zeros((0, 2)))
            continue
        proxies.append(p)
        samples.append(building_samples(p, params))
    valid = [p for p in proxies if p is not None]
    rx = rx_proxy.positions
    blockers = _primary_blockers(x_t, rx, valid)

    chunks = np.array_split(np.arange(len(rx)), max(1, threads * 4)) if threads > 1 else [np.arange(len(rx))]

    def work(idx):
        return _score_rows(x_t, rx[idx], proxies, samples, params.delta, params.eta_los, blockers[idx])

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    rows = np.vstack(parts)
    scores = rows.sum(axis=0) / rx_proxy.n
    return ScoreTable(list(ids), scores, rx_proxy.n, rows if keep_pairs else None, blockers, warnings)


def select_top_w(table: ScoreTable, budget: int) -> RefinementPlan:
    """Ids of the ``budget`` largest scores (ties to the smaller id)."""
    if budget < 0:
        raise ValueError("budget must be non-negative")
    return RefinementPlan(frozenset(table.ranking()[:budget]), budget)


def read_score_csv(path) -> ScoreTable:
    ids, scores = [], []
    with open(path, encoding="utf-8") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in rows:
            ids.append(int(row["building_id"]))
            scores.append(float(row["score"]))
    return ScoreTable(ids, np.asarray(scores), 0)
