"""Deterministic image-method ray tracer over prism scenes.

Mechanisms: line of sight plus specular reflections on vertical facades
(optionally one flat-ground bounce). Because every reflector is vertical,
mirroring preserves height and the horizontal problem is a 2D image method;
candidate facet sequences are pruned per Tx with 2D beams.
"""
from __future__ import annotations

import cmath
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .geometry import is_convex_ccw
from .scene import Scene, TxConfig

NO_COVERAGE = float("-inf")


@dataclass(frozen=True)
class TraceConfig:
    max_depth: int = 3
    reflection_magnitude: float = 0.6
    reflection_phase: float = math.pi
    ground_reflection: bool = False

    @property
    def gamma(self) -> complex:
        return cmath.rect(self.reflection_magnitude, self.reflection_phase)


@dataclass(frozen=True)
class Facet:
    building_id: int
    p0: tuple[float, float]
    p1: tuple[float, float]
    z_low: float
    z_high: float
    normal: tuple[float, float]


@dataclass(frozen=True)
class TracedPath:
    order: int  # 0 for LoS
    points: tuple[tuple[float, float, float], ...]
    length: float
    amplitude: complex
    departure: tuple[float, float, float]
    facets: tuple[int, ...] = ()

    @property
    def kind(self) -> str:
        return "LoS" if self.order == 0 else f"reflection-{self.order}"


def extract_facets(scene: Scene) -> list[Facet]:
    """One vertical facet per footprint edge, outward normal; no rooftops."""
    out = []
    for b in scene.buildings:
        fp = b.footprint
        n = len(fp)
        for i in range(n):
            (x0, y0), (x1, y1) = fp[i], fp[(i + 1) % n]
            ex, ey = x1 - x0, y1 - y0
            L = math.hypot(ex, ey)
            out.append(Facet(b.id, (x0, y0), (x1, y1), b.base_z, b.z_top, (ey / L, -ex / L)))
    return out


class _SceneArrays:
    """Flat arrays the compiled kernels consume."""

    def __init__(self, scene: Scene):
        facets = extract_facets(scene)
        self.facets = facets
        F = len(facets)
        self.fp0 = np.array([f.p0 for f in facets], dtype=float).reshape(F, 2)
        self.fp1 = np.array([f.p1 for f in facets], dtype=float).reshape(F, 2)
        self.fn = np.array([f.normal for f in facets], dtype=float).reshape(F, 2)
        self.fzlo = np.array([f.z_low for f in facets], dtype=float)
        self.fzhi = np.array([f.z_high for f in facets], dtype=float)
        bs = scene.buildings
        self.vx = np.array([p[0] for b in bs for p in b.footprint], dtype=float)
        self.vy = np.array([p[1] for b in bs for p in b.footprint], dtype=float)
        self.voff = np.cumsum([0] + [len(b.footprint) for b in bs]).astype(np.int64)
        self.bbox = np.array([[min(p[0] for p in b.footprint), min(p[1] for p in b.footprint),
                               max(p[0] for p in b.footprint), max(p[1] for p in b.footprint)]
                              for b in bs], dtype=float).reshape(len(bs), 4)
        self.bzlo = np.array([b.base_z for b in bs], dtype=float)
        self.bzhi = np.array([b.z_top for b in bs], dtype=float)
        self.bconvex = np.array([is_convex_ccw(b.footprint) for b in bs], dtype=np.bool_)
        t = scene.terrain
        self.ground_z = t.elevation if isinstance(t.elevation, float) else float("nan")

    def geometry(self):
        return (self.vx, self.vy, self.voff, self.bbox, self.bzlo, self.bzhi, self.bconvex)


def _mirror(pts: np.ndarray, p0: np.ndarray, n: np.ndarray) -> np.ndarray:
    d = np.sum((pts - p0) * n, axis=-1, keepdims=True)
    return pts - 2.0 * d * n


def _clip_halfplanes(q0, q1, planes):
    """Clip segments ``q0 + t (q1 - q0)`` against ``h(x) = a.x + c >= -tol``.

    ``planes`` is a list of ``(a (m,2), c (m,))`` with unit ``a``.
    """
    t0 = np.zeros(len(q0))
    t1 = np.ones(len(q0))
    tol = 1e-7
    for a, c in planes:
        h0 = np.sum(a * q0, axis=1) + c + tol
        h1 = np.sum(a * q1, axis=1) + c + tol
        dh = h1 - h0
        with np.errstate(divide="ignore", invalid="ignore"):
            tc = -h0 / dh
        grow = dh > 0
        shrink = dh < 0
        t0 = np.where(grow, np.maximum(t0, tc), t0)
        t1 = np.where(shrink, np.minimum(t1, tc), t1)
        flat_out = (dh == 0) & (h0 < 0)
        t1 = np.where(flat_out, -1.0, t1)
    return t0, t1


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(n > 0, v / n, 0.0)


def _expand_level(level, fp0, fp1, fn, block: int = 1024):
    """Children of every beam in ``level``: facets lit through its aperture."""
    parent_seq = level["seq"]
    parent_img = np.stack(level["img"], axis=1)
    out_seq, out_img, out_A, out_B = [], [], [], []
    F = len(fp0)
    for b0 in range(0, len(parent_seq), block):
        ps = parent_seq[b0:b0 + block]
        pimg = parent_img[b0:b0 + block]
        I = pimg[:, -1, :]
        A = level["A"][b0:b0 + block]
        B = level["B"][b0:b0 + block]
        sgn = np.sign((A[:, 0] - I[:, 0]) * (B[:, 1] - I[:, 1]) - (A[:, 1] - I[:, 1]) * (B[:, 0] - I[:, 0]))
        lit = np.einsum("pfk,fk->pf", I[:, None, :] - fp0[None, :, :], fn) > 1e-9
        lit &= np.arange(F)[None, :] != ps[:, -1:]
        lit &= (sgn != 0)[:, None]
        pi, gi = np.nonzero(lit)
        if len(pi) == 0:
            continue
        Ip, Ap, Bp, s = I[pi], A[pi], B[pi], sgn[pi][:, None]
        # wedge sides: s*cross(A-I, X-I) >= 0 and s*cross(X-I, B-I) >= 0
        da = _unit(Ap - Ip)
        db = _unit(Bp - Ip)
        a1 = s * np.column_stack([-da[:, 1], da[:, 0]])
        a2 = s * np.column_stack([db[:, 1], -db[:, 0]])
        # beyond the aperture line, on the side opposite I
        dab = _unit(Bp - Ap)
        nab = np.column_stack([-dab[:, 1], dab[:, 0]])
        flip = np.sum(nab * (Ip - Ap), axis=1) > 0
        nab[flip] *= -1
        planes = [
            (a1, -np.sum(a1 * Ip, axis=1)),
            (a2, -np.sum(a2 * Ip, axis=1)),
            (nab, -np.sum(nab * Ap, axis=1)),
        ]
        q0, q1 = fp0[gi], fp1[gi]
        t0, t1 = _clip_halfplanes(q0, q1, planes)
        keep = (t1 - t0) * np.linalg.norm(q1 - q0, axis=1) > 1e-9
        pi, gi, t0, t1, q0, q1 = pi[keep], gi[keep], t0[keep], t1[keep], q0[keep], q1[keep]
        out_seq.append(np.column_stack([ps[pi], gi]))
        nxt = _mirror(I[pi], fp0[gi], fn[gi])
        out_img.append(np.concatenate([pimg[pi], nxt[:, None, :]], axis=1))
        out_A.append(q0 + t0[:, None] * (q1 - q0))
        out_B.append(q0 + t1[:, None] * (q1 - q0))
    if not out_seq:
        return {"seq": np.zeros((0, parent_seq.shape[1] + 1), dtype=np.int64), "img": [],
                "A": np.zeros((0, 2)), "B": np.zeros((0, 2))}
    img = np.concatenate(out_img)
    return {"seq": np.vstack(out_seq), "img": list(np.swapaxes(img, 0, 1)),
            "A": np.vstack(out_A), "B": np.vstack(out_B)}


def build_image_tree(arrays: _SceneArrays, tx_xy, max_depth: int):
    """Facet sequences that can carry a reflected beam from ``tx_xy``.

    Returns ``(seq_f (S, D), seq_ord (S,), seq_img (S, D, 2), seq_ap (S, 2, 2))``
    sorted lexicographically by facet sequence; ``seq_ap`` is the part of the
    last facet the beam actually illuminates.
    """
    F = len(arrays.facets)
    D = max(int(max_depth), 0)
    if D == 0 or F == 0:
        return (np.zeros((0, max(D, 1)), dtype=np.int64), np.zeros(0, dtype=np.int64),
                np.zeros((0, max(D, 1), 2)), np.zeros((0, 2, 2)))
    fp0, fp1, fn = arrays.fp0, arrays.fp1, arrays.fn
    t = np.asarray(tx_xy, dtype=float)[:2]
    front = np.sum((t - fp0) * fn, axis=1) > 1e-9
    idx = np.flatnonzero(front)
    level = {
        "seq": idx[:, None],
        "img": [_mirror(t[None, :], fp0[idx], fn[idx])],
        "A": fp0[idx],
        "B": fp1[idx],
    }
    seqs = [level["seq"]]
    imgs = [np.stack(level["img"], axis=1)]
    aps = [np.stack([level["A"], level["B"]], axis=1)]
    for _ in range(1, D):
        if len(level["seq"]) == 0:
            break
        level = _expand_level(level, fp0, fp1, fn)
        if len(level["seq"]) == 0:
            break
        seqs.append(level["seq"])
        imgs.append(np.stack(level["img"], axis=1))
        aps.append(np.stack([level["A"], level["B"]], axis=1))
    # pad and order lexicographically
    total = sum(len(s) for s in seqs)
    seq_f = np.full((total, D), -1, dtype=np.int64)
    seq_img = np.zeros((total, D, 2))
    seq_ord = np.zeros(total, dtype=np.int64)
    seq_ap = np.concatenate(aps) if aps else np.zeros((0, 2, 2))
    row = 0
    for s, im in zip(seqs, imgs):
        k = s.shape[1]
        seq_f[row:row + len(s), :k] = s
        seq_img[row:row + len(s), :k] = im
        seq_ord[row:row + len(s)] = k
        row += len(s)
    keys = np.where(seq_f < 0, -1, seq_f)
    order = np.lexsort(tuple(keys[:, j] for j in range(D - 1, -1, -1)))
    return seq_f[order], seq_ord[order], seq_img[order], seq_ap[order]


class Tracer:
    """Scene plus a Tx with its image tree, ready to trace many receivers."""

    def __init__(self, scene: Scene, tx_position, config: TraceConfig = TraceConfig(), _tree=None):
        if config.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        self.scene = scene
        self.config = config
        self.tx = np.asarray(tx_position, dtype=float)
        self.arrays = _SceneArrays(scene)
        tree = _tree or build_image_tree(self.arrays, self.tx, config.max_depth)
        self.seq_f, self.seq_ord, self.seq_img, self.seq_ap = tree
        self.ground_on = bool(config.ground_reflection and not math.isnan(self.arrays.ground_z))
        self._all = np.arange(self.n_sequences, dtype=np.int64)

    @property
    def n_sequences(self) -> int:
        return len(self.seq_ord)

    def without(self, building_id: int) -> "Tracer":
        """Tracer for the scene minus one building, reusing this image tree.

        Beam pruning ignores occlusion, so dropping the sequences that touch
        the removed facets gives exactly the tree of the smaller scene.
        """
        facet_bid = np.array([f.building_id for f in self.arrays.facets], dtype=np.int64)
        gone = facet_bid == building_id
        if not gone.any() and building_id not in self.scene.ids:
            raise KeyError(building_id)
        remap = np.cumsum(~gone) - 1
        used = self.seq_f >= 0
        keep = ~np.any(used & gone[np.where(used, self.seq_f, 0)], axis=1)
        f = np.where(used, remap[np.where(used, self.seq_f, 0)], -1)[keep]
        tree = (f, self.seq_ord[keep], self.seq_img[keep], self.seq_ap[keep])
        return Tracer(self.scene.without(building_id), self.tx, self.config, _tree=tree)

    def _buffers(self):
        cap = self.n_sequences + 2
        depth = max(self.seq_f.shape[1], 1)
        return (np.empty(cap), np.empty(cap, dtype=np.int64), np.empty(cap, dtype=np.int64),
                np.empty(cap), np.empty((cap, depth, 3)))

    def _geometry_args(self):
        a = self.arrays
        return (a.fp0, a.fp1, a.fn, a.fzlo, a.fzhi, self.seq_f, self.seq_ord, self.seq_img)

    def _ground_args(self):
        return self.ground_on, (self.arrays.ground_z if self.ground_on else 0.0)

    def _raw(self, rx, seq_idx=None):
        bufs = self._buffers()
        rx = np.asarray(rx, dtype=float)
        if np.array_equal(rx, self.tx):
            raise ValueError("receiver coincides with the transmitter")
        idx = self._all if seq_idx is None else seq_idx
        cnt = _kernels.trace_rx(self.tx, rx, *self._geometry_args(), idx, *self.arrays.geometry(),
                                *self._ground_args(), *bufs)
        return cnt, bufs

    def paths(self, rx, wavelength: float) -> list[TracedPath]:
        cnt, (lens, ords, seqs, uxs, pts) = self._raw(rx)
        gamma = self.config.gamma
        rx = np.asarray(rx, dtype=float)
        out = []
        for k in range(cnt):
            n = int(ords[k])
            L = float(lens[k])
            points = tuple(tuple(float(v) for v in pts[k, j]) for j in range(n))
            first = np.asarray(points[0]) if n else rx
            dep = first - self.tx
            dep = tuple(float(v) for v in dep / np.linalg.norm(dep))
            amp = wavelength / (4 * math.pi * L) * gamma ** n * cmath.exp(-2j * math.pi * L / wavelength)
            facets = () if seqs[k] < 0 else tuple(int(f) for f in self.seq_f[seqs[k], :n])
            out.append(TracedPath(n, points, L, amp, dep, facets))
        return out

    def cell_lists(self, h_r: float = 1.5):
        """Per terrain cell, the sequences whose final beam can reach it (CSR)."""
        t = self.scene.terrain
        return _kernels.beam_cell_lists(self.seq_img, self.seq_ord, self.seq_ap,
                                        t.origin[0], t.origin[1], t.cell_size, t.nx, t.ny, 1e-6)

    def grid_power(self, h_r: float, wavelength: float, threads: int = 1,
                   skip: Optional[np.ndarray] = None) -> np.ndarray:
        """Non-coherent power per terrain cell centre lifted by ``h_r`` (0: no path)."""
        rxs = np.ascontiguousarray(rx_points(self.scene, h_r))
        ptr, lst = self.cell_lists(h_r)
        out = np.zeros(len(rxs))
        todo = np.arange(len(rxs)) if skip is None else np.flatnonzero(~skip)
        head = (self.tx, rxs)
        rest = (wavelength, self.config.reflection_magnitude, *self._geometry_args(), ptr, lst,
                *self.arrays.geometry(), *self._ground_args(), out)
        if threads <= 1:
            _kernels.radio_map_chunk(*head, todo.astype(np.int64), *rest)
        else:
            chunks = [c.astype(np.int64) for c in np.array_split(todo, threads * 4) if len(c)]
            with ThreadPoolExecutor(threads) as ex:
                list(ex.map(lambda c: _kernels.radio_map_chunk(*head, c, *rest), chunks))
        return out

    def channel(self, rx, tx_cfg: TxConfig, seq_idx=None) -> np.ndarray:
        """ULA channel vector (array along x at the Tx), coherent sum over paths."""
        cnt, (lens, ords, seqs, uxs, pts) = self._raw(rx, seq_idx)
        lam = tx_cfg.wavelength
        m = np.arange(tx_cfg.array_size)
        h = np.zeros(tx_cfg.array_size, dtype=complex)
        gamma = self.config.gamma
        for k in range(cnt):
            L = lens[k]
            a = lam / (4 * math.pi * L) * gamma ** int(ords[k]) * cmath.exp(-2j * math.pi * L / lam)
            h += a * np.exp(2j * math.pi * tx_cfg.element_spacing * m * uxs[k])
        return h

    def grid_channels(self, h_r: float, tx_cfg: TxConfig, cells: np.ndarray) -> np.ndarray:
        """Channels at the given flat cell indices, shape ``(len(cells), M)``."""
        rxs = rx_points(self.scene, h_r)
        ptr, lst = self.cell_lists(h_r)
        out = np.zeros((len(cells), tx_cfg.array_size), dtype=complex)
        for j, c in enumerate(np.asarray(cells, dtype=np.int64)):
            out[j] = self.channel(rxs[c], tx_cfg, lst[ptr[c]:ptr[c + 1]])
        return out


def trace_paths(scene: Scene, x_t, x_r, max_depth: int = 3, config: Optional[TraceConfig] = None,
                frequency: float = 3.5e9) -> list[TracedPath]:
    cfg = config or TraceConfig(max_depth=max_depth)
    if cfg.max_depth != max_depth and config is None:
        cfg = TraceConfig(max_depth=max_depth)
    return Tracer(scene, x_t, cfg).paths(x_r, 299_792_458.0 / frequency)


def path_gain_db(paths: Sequence[TracedPath]) -> float:
    """``10 log10`` of the non-coherent power sum; ``NO_COVERAGE`` if empty."""
    if not paths:
        return NO_COVERAGE
    return 10.0 * math.log10(sum(abs(p.amplitude) ** 2 for p in paths))


@dataclass(frozen=True)
class RadioMap:
    """Path gain (dB) per terrain cell, ``-inf`` meaning no coverage."""

    values: np.ndarray  # (ny, nx)
    origin: tuple[float, float]
    cell_size: float

    @property
    def shape(self):
        return self.values.shape

    def to_text(self) -> str:
        ny, nx = self.values.shape
        lines = ["# twinforge-radiomap/1",
                 f"nx={nx} ny={ny} origin_x={self.origin[0]!r} origin_y={self.origin[1]!r} "
                 f"cell_size={self.cell_size!r}"]
        for row in self.values:
            lines.append(" ".join("-inf" if v == NO_COVERAGE else repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "RadioMap":
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
        head = dict(tok.split("=") for tok in lines[0].split())
        nx, ny = int(head["nx"]), int(head["ny"])
        vals = np.array([[float(v) for v in ln.split()] for ln in lines[1:]], dtype=float)
        if vals.shape != (ny, nx):
            raise ValueError(f"radio map body is {vals.shape}, header says {(ny, nx)}")
        return cls(vals, (float(head["origin_x"]), float(head["origin_y"])), float(head["cell_size"]))


def rx_points(scene: Scene, h_r: float = 1.5) -> np.ndarray:
    pts = scene.terrain.cell_centers()
    pts[:, 2] += h_r
    return pts


def compute_radio_map(scene: Scene, tx: TxConfig, h_r: float = 1.5, max_depth: int = 3,
                      config: Optional[TraceConfig] = None, threads: int = 1) -> RadioMap:
    cfg = config or TraceConfig(max_depth=max_depth)
    return radio_map_from_tracer(Tracer(scene, tx.position, cfg), tx, h_r, threads)


def radio_map_from_tracer(tracer: Tracer, tx: TxConfig, h_r: float = 1.5, threads: int = 1) -> RadioMap:
    scene = tracer.scene
    power = tracer.grid_power(h_r, tx.wavelength, threads=threads, skip=scene.footprint_mask())
    with np.errstate(divide="ignore"):
        db = np.where(power > 0, 10.0 * np.log10(power), NO_COVERAGE)
    t = scene.terrain
    return RadioMap(db.reshape(t.shape), t.origin, t.cell_size)


def compute_channel(scene: Scene, tx: TxConfig, x_r, max_depth: int = 3,
                    config: Optional[TraceConfig] = None) -> np.ndarray:
    cfg = config or TraceConfig(max_depth=max_depth)
    return Tracer(scene, tx.position, cfg).channel(x_r, tx)


def compute_channels(scene: Scene, tx: TxConfig, points: np.ndarray, max_depth: int = 3,
                     config: Optional[TraceConfig] = None) -> np.ndarray:
    """Channel vectors for many receivers, shape ``(n, array_size)``."""
    cfg = config or TraceConfig(max_depth=max_depth)
    tracer = Tracer(scene, tx.position, cfg)
    return np.array([tracer.channel(p, tx) for p in np.asarray(points, dtype=float)]).reshape(
        len(points), tx.array_size)
