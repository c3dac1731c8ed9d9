"""Fidelity measures: building-removal ablation, radio-map errors, beamforming gain."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .raytrace import RadioMap, TraceConfig, compute_radio_map
from .scene import Scene, TxConfig

CLAMP_FLOOR_DB = -200.0
DEFAULT_COVERAGE_THRESHOLD_DB = -80.0
DEFAULT_IMPACT_THRESHOLD_DB = 1.0


class EmptyCoverageError(ValueError):
    pass


def _values(m) -> np.ndarray:
    return np.asarray(m.values if isinstance(m, RadioMap) else m, dtype=float)


def clamp_db(values, floor: float = CLAMP_FLOOR_DB) -> np.ndarray:
    """Replace ``NO_COVERAGE`` (and anything below ``floor``) by ``floor``."""
    return np.maximum(np.asarray(values, dtype=float), floor)


def _pairwise_sum(x: np.ndarray) -> float:
    # numpy's add.reduce is pairwise on contiguous data
    return float(np.add.reduce(np.ascontiguousarray(x, dtype=float).ravel()))


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"map shapes differ: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# ablation


@dataclass(frozen=True)
class AblationEntry:
    building_id: int
    deviation: np.ndarray  # NaN where the cell is not a valid receiver
    strength_db: float
    range_fraction: float


def deviation_between(map_a, map_b, exclude: Optional[np.ndarray] = None) -> np.ndarray:
    """``|a - b|`` per cell after clamping; ``exclude`` cells become NaN."""
    a, b = _values(map_a), _values(map_b)
    _check_shapes(a, b)
    dev = np.abs(clamp_db(a) - clamp_db(b))
    if exclude is not None:
        dev = np.where(np.asarray(exclude).reshape(dev.shape), np.nan, dev)
    return dev


def ablation_deviation_map(scene_hi: Scene, tx: TxConfig, building_id: int, h_r: float = 1.5,
                           max_depth: int = 3, config: Optional[TraceConfig] = None,
                           threads: int = 1, base_map: Optional[RadioMap] = None) -> np.ndarray:
    """Path-gain deviation from removing one building.

    Cells inside any footprint of ``scene_hi`` are not receivers of the
    reference twin and are reported as NaN.
    """
    scene_hi.building(building_id)
    cfg = config or TraceConfig(max_depth=max_depth)
    ref = base_map or compute_radio_map(scene_hi, tx, h_r, config=cfg, threads=threads)
    abl = compute_radio_map(scene_hi.without(building_id), tx, h_r, config=cfg, threads=threads)
    return deviation_between(ref, abl, scene_hi.footprint_mask())


def impact_strength(deviation) -> float:
    d = np.asarray(deviation, dtype=float)
    d = d[np.isfinite(d)]
    return float(d.max()) if d.size else 0.0


def impact_range(deviation, tau: float = DEFAULT_IMPACT_THRESHOLD_DB) -> float:
    d = np.asarray(deviation, dtype=float)
    d = d[~np.isnan(d)]
    return float(np.mean(d >= tau)) if d.size else 0.0


def gini(values: Sequence[float]) -> float:
    """Gini coefficient of non-negative values (0 uniform, toward 1 concentrated)."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0 or np.any(x < 0):
        raise ValueError("gini needs a non-empty set of non-negative values")
    total = x.sum()
    if total == 0:
        return 0.0
    n = x.size
    i = np.arange(1, n + 1)
    return float(np.sum((2 * i - n - 1) * x) / (n * total))


# ---------------------------------------------------------------------------
# radio-map errors


def rmse_all(map_hat, map_star) -> float:
    a, b = _values(map_hat), _values(map_star)
    _check_shapes(a, b)
    d = clamp_db(a) - clamp_db(b)
    return math.sqrt(_pairwise_sum(d * d) / d.size)


def coverage_set(map_star, p_th: float = DEFAULT_COVERAGE_THRESHOLD_DB) -> np.ndarray:
    """Boolean mask of cells with ground-truth gain strictly above ``p_th``."""
    return _values(map_star) > p_th


def rmse_cov(map_hat, map_star, p_th: float = DEFAULT_COVERAGE_THRESHOLD_DB) -> float:
    a, b = _values(map_hat), _values(map_star)
    _check_shapes(a, b)
    mask = coverage_set(b, p_th)
    if not mask.any():
        raise EmptyCoverageError(f"coverage set is empty at P_th = {p_th} dB")
    d = clamp_db(a[mask]) - b[mask]
    return math.sqrt(_pairwise_sum(d * d) / d.size)


def rm_mae_loss(map_hat, map_star) -> float:
    a, b = _values(map_hat), _values(map_star)
    _check_shapes(a, b)
    return _pairwise_sum(np.abs(clamp_db(a) - clamp_db(b))) / a.size


# ---------------------------------------------------------------------------
# beamforming


def mrt_beamformer(h) -> np.ndarray:
    h = np.asarray(h, dtype=complex)
    n = np.linalg.norm(h)
    if n == 0:
        raise ValueError("MRT undefined for a zero channel")
    return h / n


def normalized_bf_gain(w_hat, h_star) -> float:
    w = np.asarray(w_hat, dtype=complex)
    h = np.asarray(h_star, dtype=complex)
    hn = np.vdot(h, h).real
    if hn == 0:
        raise ValueError("reference channel is zero")
    g = abs(np.vdot(w, h)) ** 2 / hn
    # Cauchy-Schwarz bound, up to rounding
    return float(min(max(g, 0.0), 1.0))


def ssbf_loss(gains) -> float:
    g = np.asarray(gains, dtype=float)
    if g.size == 0:
        raise ValueError("no gains")
    return float(np.mean(1.0 - g))


DEFAULT_GAMMA_GRID = tuple(np.round(np.linspace(0.0, 1.0, 101), 10))


@dataclass(frozen=True)
class BfEvaluation:
    gains: np.ndarray
    gamma: np.ndarray
    ccdf: np.ndarray


def bf_ccdf(gains, gamma_grid=DEFAULT_GAMMA_GRID) -> BfEvaluation:
    g = np.asarray(gains, dtype=float)
    gam = np.asarray(gamma_grid, dtype=float)
    if np.any(np.diff(gam) < 0):
        raise ValueError("gamma grid must be ascending")
    if g.size == 0:
        return BfEvaluation(g, gam, np.zeros_like(gam))
    ccdf = (g[None, :] >= gam[:, None]).mean(axis=1)
    return BfEvaluation(g, gam, ccdf)


def bf_gains(h_hat: np.ndarray, h_star: np.ndarray) -> np.ndarray:
    """Per-receiver gain of the MRT beam built from ``h_hat`` on ``h_star``.

    Rows with a zero ``h_hat`` get gain 0 (no beam can be formed).
    """
    out = np.zeros(len(h_star))
    for i, (a, b) in enumerate(zip(h_hat, h_star)):
        if np.any(a):
            out[i] = normalized_bf_gain(mrt_beamformer(a), b)
    return out
