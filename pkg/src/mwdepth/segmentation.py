"""Planar region detection: fused color/geometry edge weights + graph merging."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import (CameraIntrinsics, DepthMap, DominantDirections, InputError, PointMap,
                       backproject, compute_normals)
from .manhattan import AlignmentResult, align_normals

# (dv, du) offsets covering each undirected 8-neighbour adjacency once
_OFFSETS_8 = ((0, 1), (1, 0), (1, 1), (1, -1))
_OFFSETS_4 = ((0, 1), (1, 0))

FUSIONS = ("fused", "color", "geometry")


@dataclass
class EdgeGraph:
    shape: tuple[int, int]
    p: np.ndarray  # flat pixel index, p < q
    q: np.ndarray
    weight: np.ndarray
    vertex_valid: np.ndarray  # H x W; invalid pixels have no edges

    def __len__(self):
        return len(self.weight)


@dataclass
class Segment:
    id: int
    pixels: np.ndarray  # flat indices, ascending
    area: int


@dataclass
class SegmentationResult:
    labels: np.ndarray  # H x W int, 0 = not planar
    segments: list[Segment]
    planar_mask: np.ndarray = field(init=False)

    def __post_init__(self):
        self.planar_mask = self.labels > 0


@dataclass
class SegmentationParams:
    k: float = 0.15
    min_area_frac: float = 0.01
    min_area: Optional[int] = None  # absolute pixel count; overrides the fraction
    connectivity: int = 8
    fusion: str = "fused"

    def resolve_min_area(self, n_pixels: int) -> int:
        if self.min_area is not None:
            return int(self.min_area)
        return max(1, math.ceil(self.min_area_frac * n_pixels))


def plane_distance_map(points: PointMap, align: AlignmentResult) -> np.ndarray:
    """Plane-to-origin distance -X . n_align; zero where the alignment is invalid."""
    d = -np.sum(points.points * align.aligned, axis=-1)
    return np.where(align.valid, d, 0.0)


def normalize_minmax(x: np.ndarray) -> np.ndarray:
    if x.size == 0:
        return x.astype(np.float64)
    lo, hi = x.min(), x.max()
    if hi <= lo:
        return np.zeros_like(x, dtype=np.float64)
    return (x - lo) / (hi - lo)


def _grid_edges(valid: np.ndarray, connectivity: int):
    H, W = valid.shape
    idx = np.arange(H * W).reshape(H, W)
    offsets = {8: _OFFSETS_8, 4: _OFFSETS_4}.get(connectivity)
    if offsets is None:
        raise InputError(f"connectivity must be 4 or 8, got {connectivity}")
    ps, qs = [], []
    for dv, du in offsets:
        v0, v1 = 0, H - dv
        u0, u1 = max(0, -du), W - max(0, du)
        a = (slice(v0, v1), slice(u0, u1))
        b = (slice(v0 + dv, v1 + dv), slice(u0 + du, u1 + du))
        ok = valid[a] & valid[b]
        ps.append(idx[a][ok])
        qs.append(idx[b][ok])
    p = np.concatenate(ps)
    q = np.concatenate(qs)
    lo, hi = np.minimum(p, q), np.maximum(p, q)
    return lo, hi


def edge_dissimilarity(image: np.ndarray, align: AlignmentResult, dmap: np.ndarray,
                       connectivity: int = 8, fusion: str = "fused") -> EdgeGraph:
    """Edge weights on the pixel grid between pixels with valid alignment.

    ``fusion="fused"`` gives max([Dc], [[Dn] + [Dd]]); ``"color"`` uses [Dc]
    alone (the color-only baseline) and ``"geometry"`` [[Dn] + [Dd]] alone.
    [.] is min-max normalisation over all edges of the graph.
    """
    image = np.asarray(image, dtype=np.float64)
    shape = align.valid.shape
    if image.shape[:2] != shape or dmap.shape != shape:
        raise InputError("image, alignment and distance map must share dimensions")
    if shape[0] * shape[1] < 2:
        raise InputError("need at least 2 pixels")
    if fusion not in FUSIONS:
        raise InputError(f"unknown fusion {fusion!r}")
    p, q = _grid_edges(align.valid, connectivity)
    n_flat = align.aligned.reshape(-1, 3)
    img_flat = image.reshape(-1, image.shape[-1] if image.ndim == 3 else 1)
    d_flat = dmap.reshape(-1)
    Dc = normalize_minmax(np.linalg.norm(img_flat[p] - img_flat[q], axis=1))
    if fusion == "color":
        w = Dc
    else:
        Dn = np.linalg.norm(n_flat[p] - n_flat[q], axis=1)
        Dd = np.abs(d_flat[p] - d_flat[q])
        Dg = normalize_minmax(normalize_minmax(Dn) + normalize_minmax(Dd))
        w = Dg if fusion == "geometry" else np.maximum(Dc, Dg)
    return EdgeGraph(shape=shape, p=p, q=q, weight=w, vertex_valid=align.valid.copy())


def graph_segment(graph: EdgeGraph, k: float = 0.15, min_area: int = 1) -> SegmentationResult:
    """Felzenszwalb-Huttenlocher merging followed by small-area filtering.

    Edges are visited by (weight, p, q). Components C1, C2 merge on an edge of
    weight w when w <= min(Int(C1) + k/|C1|, Int(C2) + k/|C2|), Int being the
    largest edge merged inside a component. Components smaller than
    ``min_area`` and pixels without a valid vertex get label 0; survivors
    are numbered 1.. in raster order of their first pixel.
    """
    if not k > 0:
        raise InputError("merge constant k must be positive")
    H, W = graph.shape
    n = H * W
    order = np.lexsort((graph.q, graph.p, graph.weight))
    ws = graph.weight[order].tolist()
    ps = graph.p[order].tolist()
    qs = graph.q[order].tolist()

    parent = list(range(n))
    size = [1] * n
    thresh = [k] * n  # Int(C) + k/|C|

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    for w, a, b in zip(ws, ps, qs):
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        if w <= thresh[ra] and w <= thresh[rb]:
            if size[ra] < size[rb]:
                ra, rb = rb, ra
            parent[rb] = ra
            size[ra] += size[rb]
            thresh[ra] = w + k / size[ra]

    roots = np.fromiter((find(i) for i in range(n)), dtype=np.int64, count=n)
    return _labels_from_roots(roots, graph.vertex_valid, min_area)


def _labels_from_roots(roots: np.ndarray, vertex_valid: np.ndarray, min_area: int) -> SegmentationResult:
    H, W = vertex_valid.shape
    valid_flat = vertex_valid.reshape(-1)
    _, first, inverse, counts = np.unique(roots, return_index=True, return_inverse=True,
                                          return_counts=True)
    keep = counts >= min_area
    # components may mix valid and invalid pixels only if the graph joined them; it never does
    keep &= valid_flat[first]
    rank = np.zeros(len(first), dtype=np.int64)
    kept = np.flatnonzero(keep)
    kept = kept[np.argsort(first[kept], kind="stable")]
    rank[kept] = np.arange(1, len(kept) + 1)
    labels = rank[inverse]
    labels[~valid_flat] = 0
    labels = labels.reshape(H, W)

    flat = labels.reshape(-1)
    order = np.argsort(flat, kind="stable")
    bounds = np.searchsorted(flat[order], np.arange(1, len(kept) + 2))
    segments = [Segment(id=i + 1, pixels=order[bounds[i]:bounds[i + 1]],
                        area=int(bounds[i + 1] - bounds[i])) for i in range(len(kept))]
    return SegmentationResult(labels=labels, segments=segments)


def segment_planes(image: np.ndarray, points: PointMap, align: AlignmentResult,
                   params: SegmentationParams = SegmentationParams()) -> SegmentationResult:
    dmap = plane_distance_map(points, align)
    graph = edge_dissimilarity(image, align, dmap, params.connectivity, params.fusion)
    n = graph.shape[0] * graph.shape[1]
    return graph_segment(graph, params.k, params.resolve_min_area(n))


def detect_planar_regions(image: np.ndarray, depth: DepthMap, K: CameraIntrinsics,
                          dirs: DominantDirections,
                          params: SegmentationParams = SegmentationParams()) -> SegmentationResult:
    points = backproject(depth, K)
    align = align_normals(compute_normals(points), dirs)
    return segment_planes(image, points, align, params)
