"""Adjacency structure over areal units and spatial statistics.

The adjacency graph uses binary symmetric weights throughout (an edge
means two units share at least one boundary point under queen
contiguity).  Also provides the Leroux-style precision matrix built
from the graph Laplacian and Moran's I with an analytic null
distribution plus a permutation oracle.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import InputError


@dataclass(frozen=True)
class AdjacencyGraph:
    """Symmetric binary neighbor structure over named units.

    Edges are stored once as index pairs (i, j) with i < j; no self
    loops, no duplicates.
    """

    unit_ids: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        n = len(self.unit_ids)
        if len(set(self.unit_ids)) != n:
            raise ValueError("unit_ids contain duplicates")
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < j < n):
                raise ValueError(f"invalid edge ({i}, {j}) for n={n}")
            if (i, j) in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            seen.add((i, j))

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def degree(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=np.int64)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def index_of(self, unit_id: str) -> int:
        try:
            return self.unit_ids.index(unit_id)
        except ValueError:
            raise KeyError(f"unit {unit_id!r} not in graph") from None

    @cached_property
    def _edge_endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        rows = np.fromiter((e[0] for e in self.edges), dtype=np.int64, count=self.n_edges)
        cols = np.fromiter((e[1] for e in self.edges), dtype=np.int64, count=self.n_edges)
        return rows, cols

    @cached_property
    def identity(self) -> sp.csr_matrix:
        return sp.eye(self.n, format="csr")

    @cached_property
    def base_laplacian(self) -> sp.csr_matrix:
        return self.laplacian(None)

    def weight_matrix(self, weights: np.ndarray | None = None) -> sp.csr_matrix:
        """Sparse symmetric W; ``weights`` optionally masks edges (0/1 per edge)."""
        w = np.ones(self.n_edges) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (self.n_edges,):
            raise ValueError(f"expected {self.n_edges} edge weights, got shape {w.shape}")
        if self.n_edges == 0:
            return sp.csr_matrix((self.n, self.n))
        i, j = self._edge_endpoints
        return sp.csr_matrix(
            (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(self.n, self.n),
        )

    def laplacian(self, weights: np.ndarray | None = None) -> sp.csr_matrix:
        """Graph Laplacian D_W - W, optionally with masked edges."""
        if weights is None and "base_laplacian" in self.__dict__:
            return self.base_laplacian
        W = self.weight_matrix(weights)
        deg = np.asarray(W.sum(axis=1)).ravel()
        return (sp.diags(deg) - W).tocsr()

    def subgraph(self, keep_ids: Sequence[str]) -> "AdjacencyGraph":
        """Restrict to the given units, relabeling indices accordingly."""
        old_index = {u: i for i, u in enumerate(self.unit_ids)}
        missing = [u for u in keep_ids if u not in old_index]
        if missing:
            raise KeyError(f"units not in graph: {missing[:5]}")
        new_index = {old_index[u]: k for k, u in enumerate(keep_ids)}
        edges = []
        for i, j in self.edges:
            if i in new_index and j in new_index:
                a, b = new_index[i], new_index[j]
                edges.append((a, b) if a < b else (b, a))
        return AdjacencyGraph(tuple(keep_ids), tuple(sorted(edges)))


def laplacian_precision(
    graph: AdjacencyGraph, rho: float, weights: np.ndarray | None = None
) -> sp.csr_matrix:
    """Leroux precision rho * (D_W - W) + (1 - rho) * I.

    Symmetric positive definite for rho in [0, 1): the Laplacian part is
    PSD and the identity part bounds the smallest eigenvalue below by
    1 - rho.  ``weights`` masks edges for variable-border models.
    """
    if not 0 <= rho < 1:
        raise ValueError(f"rho must lie in [0, 1), got {rho}")
    return (rho * graph.laplacian(weights) + (1.0 - rho) * graph.identity).tocsr()


@dataclass(frozen=True)
class MoranResult:
    I: float
    null_mean: float
    null_sd: float
    z_score: float


def morans_i(x: np.ndarray, graph: AdjacencyGraph) -> MoranResult:
    """Moran's I with binary weights and the normality-assumption null SD.

    The null mean is -1/(n-1); the null SD uses the closed-form
    normality variance (cross-validated in the tests against a
    permutation oracle).  Requires a non-constant x and at least one
    edge.
    """
    x = np.asarray(x, dtype=float)
    n = graph.n
    if x.shape != (n,):
        raise ValueError(f"x has shape {x.shape}, expected ({n},)")
    if graph.n_edges == 0:
        raise ValueError("graph has no edges; Moran's I is undefined")
    dev = x - x.mean()
    denom = float(dev @ dev)
    if denom <= 0:
        raise ValueError("x is constant; Moran's I is undefined")

    s0 = 2.0 * graph.n_edges
    ei, ej = graph._edge_endpoints
    cross = 2.0 * float(dev[ei] @ dev[ej])
    I = (n / s0) * cross / denom

    null_mean = -1.0 / (n - 1)
    # Cliff-Ord moments under the normality assumption; for binary
    # symmetric weights S1 = 2*S0 and S2 = 4 * sum(deg^2).
    s1 = 2.0 * s0
    deg = graph.degree.astype(float)
    s2 = 4.0 * float(deg @ deg)
    e_i2 = (n * n * s1 - n * s2 + 3.0 * s0 * s0) / (s0 * s0 * (n * n - 1.0))
    var = e_i2 - null_mean**2
    null_sd = math.sqrt(max(var, 0.0))
    z = (I - null_mean) / null_sd if null_sd > 0 else 0.0
    return MoranResult(I=I, null_mean=null_mean, null_sd=null_sd, z_score=z)


def morans_i_permutation_sd(
    x: np.ndarray, graph: AdjacencyGraph, n_perm: int, seed: int
) -> float:
    """Permutation-null SD of Moran's I; test oracle for the analytic SD."""
    if n_perm < 100:
        raise ValueError("n_perm must be at least 100")
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float)
    values = np.empty(n_perm)
    for k in range(n_perm):
        values[k] = morans_i(rng.permutation(x), graph).I
    return float(values.std(ddof=1))


# ---------------------------------------------------------------------------
# Queen contiguity from polygon geometry

Ring = Sequence[tuple[float, float]]


def _snap_ring(ring: Ring, tol: float) -> list[tuple[float, float]]:
    snapped = [(round(px / tol), round(py / tol)) for px, py in ring]
    if len(snapped) < 4 or snapped[0] != snapped[-1]:
        raise ValueError("ring is not closed")
    return snapped


def queen_contiguity(
    polygons: Mapping[str, Sequence[Sequence[Ring]]], snap_tolerance: float = 1e-9
) -> AdjacencyGraph:
    """Adjacency graph from per-unit polygon rings.

    ``polygons`` maps unit id to a multipolygon: a sequence of polygons,
    each a sequence of rings (exterior first), each ring a closed
    coordinate list.  Coordinates are snapped to a grid of size
    ``snap_tolerance`` and two units become neighbors when their snapped
    boundaries share at least one point (queen rule, so corner contact
    counts).
    """
    from shapely.geometry import MultiPolygon, Polygon
    from shapely.strtree import STRtree

    if snap_tolerance <= 0:
        raise ValueError("snap_tolerance must be positive")

    unit_ids = tuple(sorted(polygons))
    boundaries = []
    for u in unit_ids:
        parts = []
        for poly in polygons[u]:
            if not poly:
                continue
            rings = [_snap_ring(r, snap_tolerance) for r in poly]
            parts.append(Polygon(rings[0], rings[1:]))
        if not parts:
            raise ValueError(f"unit {u!r} has empty geometry")
        geom = parts[0] if len(parts) == 1 else MultiPolygon(parts)
        if geom.is_empty:
            raise ValueError(f"unit {u!r} has empty geometry")
        boundaries.append(geom.boundary)

    tree = STRtree(boundaries)
    edges = set()
    for i, b in enumerate(boundaries):
        for j in tree.query(b):
            j = int(j)
            if j > i and b.intersects(boundaries[j]):
                edges.add((i, j))
    return AdjacencyGraph(unit_ids, tuple(sorted(edges)))


def load_polygons_geojson(path) -> dict[str, list[list[Ring]]]:
    """Read a FeatureCollection whose features carry a ``unit_id`` property."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise InputError(f"{path}: expected a GeoJSON FeatureCollection")
    out: dict[str, list[list[Ring]]] = {}
    for feat in doc.get("features", []):
        props = feat.get("properties") or {}
        u = props.get("unit_id")
        if u is None:
            raise InputError(f"{path}: feature without a unit_id property")
        geom = feat.get("geometry") or {}
        gtype, coords = geom.get("type"), geom.get("coordinates")
        if gtype == "Polygon":
            polys = [coords]
        elif gtype == "MultiPolygon":
            polys = coords
        else:
            raise InputError(f"{path}: unit {u!r} has unsupported geometry type {gtype!r}")
        out[str(u)] = [[[(float(x), float(y)) for x, y in ring] for ring in poly] for poly in polys]
    return out


def load_edges_csv(path, unit_ids: Sequence[str] | None = None) -> AdjacencyGraph:
    """Read ``unit_id_a,unit_id_b`` pairs into a graph.

    When ``unit_ids`` is given it fixes the node set (isolated units
    allowed); otherwise the node set is all ids mentioned by the edges.
    """
    pairs = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["unit_id_a", "unit_id_b"]:
            raise InputError(f"{path}: expected header 'unit_id_a,unit_id_b', got {header}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 2:
                raise InputError(f"{path}:{lineno}: expected 2 fields")
            if rec[0] == rec[1]:
                raise InputError(f"{path}:{lineno}: self-loop on {rec[0]!r}")
            pairs.append((rec[0], rec[1]))
    if unit_ids is None:
        unit_ids = sorted({u for pair in pairs for u in pair})
    index = {u: i for i, u in enumerate(unit_ids)}
    edges = set()
    for a, b in pairs:
        if a not in index or b not in index:
            raise InputError(f"{path}: edge ({a!r}, {b!r}) references unknown unit")
        i, j = index[a], index[b]
        edges.add((i, j) if i < j else (j, i))
    return AdjacencyGraph(tuple(unit_ids), tuple(sorted(edges)))


def write_edges_csv(graph: AdjacencyGraph, path) -> None:
    """Write the edge list sorted by (id_a, id_b) for deterministic output."""
    rows = sorted(
        tuple(sorted((graph.unit_ids[i], graph.unit_ids[j]))) for i, j in graph.edges
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id_a", "unit_id_b"])
        writer.writerows(rows)
