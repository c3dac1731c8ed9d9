"""Tx-centred radially stratified receiver proxies."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_BAND_BOUNDARIES = (50.0, 100.0, 200.0, 350.0)
DEFAULT_SPACINGS = (0.55, 0.75, 1.5, 2.7, 4.0)
DEFAULT_MIN_SECTORS = 8
DEFAULT_RX_HEIGHT = 1.5


@dataclass(frozen=True)
class RxCandidates:
    """Candidate receivers as parallel arrays.

    ``cell`` is the flat terrain cell index each candidate came from.
    """

    positions: np.ndarray  # (n, 3)
    r: np.ndarray
    phi: np.ndarray
    cell: np.ndarray

    def __len__(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class PolarCell:
    band: int  # 1-based
    ring: int
    sector: int
    r_center: float
    phi_center: float


@dataclass(frozen=True)
class PolarGrid:
    boundaries: tuple[float, ...]  # R_1 = 0 < R_2 < ... < R_L
    spacings: tuple[float, ...]
    min_sectors: int = DEFAULT_MIN_SECTORS

    @classmethod
    def from_bands(cls, band_boundaries=DEFAULT_BAND_BOUNDARIES, spacings=DEFAULT_SPACINGS,
                   min_sectors=DEFAULT_MIN_SECTORS) -> "PolarGrid":
        bounds = tuple(float(b) for b in band_boundaries)
        if not bounds or bounds[0] != 0.0:
            bounds = (0.0,) + bounds
        if any(b1 <= b0 for b0, b1 in zip(bounds, bounds[1:])):
            raise ValueError("band boundaries must be strictly increasing")
        if len(spacings) != len(bounds):
            raise ValueError(f"need {len(bounds)} spacings for {len(bounds)} bands, got {len(spacings)}")
        if any(s <= 0 for s in spacings):
            raise ValueError("spacings must be positive")
        return cls(bounds, tuple(float(s) for s in spacings), int(min_sectors))

    def sector_count(self, band: int, ring: int) -> int:
        delta = self.spacings[band - 1]
        r_mid = self.boundaries[band - 1] + (ring + 0.5) * delta
        return max(self.min_sectors, int(round(2 * math.pi * r_mid / delta)))

    def cell_of(self, r: float, phi: float) -> PolarCell:
        band = int(np.searchsorted(self.boundaries, r, side="right"))
        delta = self.spacings[band - 1]
        ring = int(math.floor((r - self.boundaries[band - 1]) / delta))
        n_sec = self.sector_count(band, ring)
        width = 2 * math.pi / n_sec
        sector = min(int(math.floor((phi + math.pi) / width)), n_sec - 1)
        r_mid = self.boundaries[band - 1] + (ring + 0.5) * delta
        return PolarCell(band, ring, sector, r_mid, -math.pi + (sector + 0.5) * width)


@dataclass(frozen=True)
class RxProxySet:
    positions: np.ndarray  # (N, 3)
    candidate_index: np.ndarray  # index into the candidate arrays
    cells: tuple[PolarCell, ...]

    @property
    def n(self) -> int:
        return len(self.positions)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x", "y", "z", "l", "k", "m"])
            for i, (p, c) in enumerate(zip(self.positions, self.cells)):
                w.writerow([i, repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), c.band, c.ring, c.sector])


def generate_candidates(terrain, buildings, tx_position, h_r: float = DEFAULT_RX_HEIGHT) -> RxCandidates:
    """Cell centres lifted by ``h_r``, minus those inside any footprint."""
    if h_r < 0:
        raise ValueError("h_r must be non-negative")
    from .geometry import points_in_polygon

    centers = terrain.cell_centers()
    keep = np.ones(len(centers), dtype=bool)
    for b in buildings:
        fp = np.asarray(b.footprint)
        box = ((centers[:, 0] >= fp[:, 0].min() - 1e-9) & (centers[:, 0] <= fp[:, 0].max() + 1e-9)
               & (centers[:, 1] >= fp[:, 1].min() - 1e-9) & (centers[:, 1] <= fp[:, 1].max() + 1e-9))
        idx = np.flatnonzero(box & keep)
        if len(idx):
            keep[idx[points_in_polygon(centers[idx, :2], fp)]] = False
    cell = np.flatnonzero(keep)
    pos = centers[cell].copy()
    pos[:, 2] += h_r
    dx = pos[:, 0] - tx_position[0]
    dy = pos[:, 1] - tx_position[1]
    phi = np.arctan2(dy, dx)
    phi = np.where(phi <= -math.pi, math.pi, phi)
    return RxCandidates(pos, np.hypot(dx, dy), phi, cell)


def stratify_polar(candidates: RxCandidates, grid: PolarGrid) -> list[PolarCell]:
    return [grid.cell_of(float(r), float(p)) for r, p in zip(candidates.r, candidates.phi)]


def select_representatives(candidates: RxCandidates, assignment: Sequence[PolarCell],
                           tx_position) -> RxProxySet:
    """Keep the candidate nearest (Euclidean, in x-y) to each cell's centre."""
    best: dict[tuple[int, int, int], tuple[float, int]] = {}
    cell_by_key: dict[tuple[int, int, int], PolarCell] = {}
    for idx, c in enumerate(assignment):
        key = (c.band, c.ring, c.sector)
        cx = tx_position[0] + c.r_center * math.cos(c.phi_center)
        cy = tx_position[1] + c.r_center * math.sin(c.phi_center)
        p = candidates.positions[idx]
        dist = math.hypot(p[0] - cx, p[1] - cy)
        cur = best.get(key)
        if cur is None or (dist, idx) < cur:
            best[key] = (dist, idx)
            cell_by_key[key] = c
    keys = sorted(best)
    chosen = np.array([best[k][1] for k in keys], dtype=int)
    pos = candidates.positions[chosen] if len(chosen) else np.zeros((0, 3))
    return RxProxySet(pos, chosen, tuple(cell_by_key[k] for k in keys))


def build_rx_proxy(terrain, buildings, tx_position, grid: PolarGrid | None = None,
                   h_r: float = DEFAULT_RX_HEIGHT) -> RxProxySet:
    grid = grid or PolarGrid.from_bands()
    cand = generate_candidates(terrain, buildings, tx_position, h_r)
    return select_representatives(cand, stratify_polar(cand, grid), tx_position)
