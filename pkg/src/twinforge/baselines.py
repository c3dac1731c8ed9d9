"""Non-EGSR selection rules used as comparison baselines."""
from __future__ import annotations

import numpy as np

from .geometry import build_proxy
from .scene import RefinementPlan, Scene


def baseline_select_random(scene: Scene, budget: int, seed) -> RefinementPlan:
    """``budget`` ids drawn uniformly without replacement.

    ``seed`` is anything ``numpy.random.default_rng`` accepts, including a
    list of ints, which the harness uses to derive one stream per repeat.
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    ids = sorted(scene.ids)
    k = min(budget, len(ids))
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(ids), size=k, replace=False) if k else []
    return RefinementPlan(frozenset(ids[i] for i in picked), budget)


def proxy_volume(building) -> float:
    p = build_proxy(building)
    return p.area * (p.z_high - p.z_low)


def volume_ranking(scene: Scene) -> list[int]:
    vols = {b.id: proxy_volume(b) for b in scene.buildings}
    return sorted(vols, key=lambda i: (-vols[i], i))


def baseline_select_volume(scene: Scene, budget: int) -> RefinementPlan:
    """The ``budget`` largest proxy volumes, ties to the smaller id."""
    if budget < 0:
        raise ValueError("budget must be non-negative")
    return RefinementPlan(frozenset(volume_ranking(scene)[:budget]), budget)
