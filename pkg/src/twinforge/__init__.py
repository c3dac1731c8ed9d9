"""Budgeted building-level refinement of wireless digital twins."""
from .egsr import EgsrParams, ScoreTable, score_scene, select_top_w
from .raytrace import NO_COVERAGE, RadioMap, TraceConfig, compute_channel, compute_radio_map, trace_paths
from .scene import Building, Fidelity, RefinementPlan, Scene, Terrain, TxConfig

__all__ = [
    "Building", "EgsrParams", "Fidelity", "NO_COVERAGE", "RadioMap", "RefinementPlan", "Scene",
    "ScoreTable", "Terrain", "TraceConfig", "TxConfig", "compute_channel", "compute_radio_map",
    "score_scene", "select_top_w", "trace_paths",
]
__version__ = "0.1.0"
