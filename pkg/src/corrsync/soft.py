"""Soft correspondences by path-weighted forward propagation.

Every admissible flow path from shape i to shape j composes the stored pairwise
maps along its edges into one candidate map. Paths are weighted by the Gibbs
factor exp(-beta * E) and normalized into a distribution; pushing a source
vertex through every path and accumulating mass per target vertex yields a soft
row. Hard maps are extracted from rows either by the most likely vertex or by
the support-restricted Frechet mean under the target's geodesic metric.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .collection import CorrespondenceMap, GeodesicOracle, ShapeCollection, compose_maps
from .errors import EmptyPathSetError, MissingMapError
from .flow import MAX_PATHS_DEFAULT, FlowMatrix, PathRecord, directed_flow_matrix, enumerate_paths


@dataclass(frozen=True)
class PathDistribution:
    """Retained paths with normalized probabilities (threshold applied pre-normalization)."""

    records: tuple[PathRecord, ...]
    probabilities: tuple[float, ...]
    lam: float
    strict: bool

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class SoftCorrespondence:
    """Per-queried-vertex mass distributions over target vertices.

    rows[v] maps target vertex -> probability; provenance records how the rows
    were produced (threshold, beta, path count).
    """

    source_id: str
    target_id: str
    rows: dict[int, dict[int, float]]
    lam: float
    beta: float
    path_count: int
    strict: bool = False
    provenance: dict = field(default_factory=dict)

    def row(self, v: int) -> dict[int, float]:
        try:
            return self.rows[int(v)]
        except KeyError:
            raise KeyError(f"vertex {v} was not in the propagated query set") from None


def path_distribution(
    flow: FlowMatrix,
    lam: float = 0.0,
    max_paths: int = MAX_PATHS_DEFAULT,
    strict: bool = False,
) -> PathDistribution:
    records = enumerate_paths(flow, lam=lam, max_paths=max_paths, strict=strict)
    if not records:
        raise EmptyPathSetError(
            f"no admissible path from {flow.source} to {flow.target} survives "
            f"threshold {lam} in strict mode"
        )
    total = sum(r.weight for r in records)
    probs = tuple(r.weight / total for r in records)
    return PathDistribution(tuple(records), probs, lam, strict)


def _edge_maps(
    collection: ShapeCollection, vertices: tuple[int, ...]
) -> list[CorrespondenceMap]:
    ids = collection.ids
    out = []
    for a, b in zip(vertices, vertices[1:]):
        try:
            out.append(collection.map(ids[a], ids[b]))
        except MissingMapError:
            raise MissingMapError(
                f"no stored map {ids[a]!r} -> {ids[b]!r} on admissible edge "
                f"({a}, {b})"
            ) from None
    return out


def path_composed_map(collection: ShapeCollection, vertices) -> CorrespondenceMap:
    """Materialize the full composite map along one path of shape indices or ids."""
    vertices = tuple(
        collection.index(v) if isinstance(v, str) else int(v) for v in vertices
    )
    maps = _edge_maps(collection, vertices)
    composed = maps[0]
    for m in maps[1:]:
        composed = compose_maps(m, composed)
    return composed


def propagate_soft(
    collection: ShapeCollection,
    source_id: str,
    target_id: str,
    lam: float = 0.978,
    source_points: list[int] | None = None,
    *,
    max_paths: int = MAX_PATHS_DEFAULT,
    strict: bool = False,
) -> SoftCorrespondence:
    """Soft correspondence from source to target over all retained flow paths.

    source_points defaults to the source shape's landmark vertices when it has
    any, otherwise to every vertex; pass an explicit list to control the query
    set. Rows are aggregated per target vertex and normalized.
    """
    i = collection.index(source_id)
    j = collection.index(target_id)
    flow = directed_flow_matrix(
        collection.D, i, j, beta=collection.beta, W=collection.W
    )
    dist = path_distribution(flow, lam=lam, max_paths=max_paths, strict=strict)

    src_shape = collection.shape(source_id)
    if source_points is None:
        if src_shape.landmark_indices:
            source_points = list(src_shape.landmark_indices)
        else:
            source_points = list(range(src_shape.n))

    edge_maps = {rec.vertices: _edge_maps(collection, rec.vertices) for rec in dist.records}
    rows: dict[int, dict[int, float]] = {}
    for p in source_points:
        p = int(p)
        if not 0 <= p < src_shape.n:
            raise KeyError(f"source vertex {p} out of range for {source_id!r}")
        acc: dict[int, float] = {}
        for rec, prob in zip(dist.records, dist.probabilities):
            row: dict[int, float] = {p: 1.0}
            for m in edge_maps[rec.vertices]:
                row = m.push_row(row)
            for t, mass in row.items():
                acc[t] = acc.get(t, 0.0) + prob * mass
        total = sum(acc.values())
        rows[p] = {t: mass / total for t, mass in sorted(acc.items())}

    return SoftCorrespondence(
        source_id=source_id,
        target_id=target_id,
        rows=rows,
        lam=lam,
        beta=collection.beta,
        path_count=len(dist),
        strict=strict,
        provenance={
            "paths": [list(r.vertices) for r in dist.records],
            "path_probabilities": list(dist.probabilities),
        },
    )


def mle(soft: SoftCorrespondence) -> dict[int, int]:
    """Most likely target vertex per queried source vertex; ties take the lowest index."""
    out: dict[int, int] = {}
    for v, row in soft.rows.items():
        best_t, best_m = -1, -1.0
        for t in sorted(row):
            if row[t] > best_m:
                best_t, best_m = t, row[t]
        out[v] = best_t
    return out


def frechet_mean(soft: SoftCorrespondence, oracle: GeodesicOracle) -> dict[int, int]:
    """Support-restricted Frechet mean per row under the target geodesic metric.

    Picks the support vertex minimizing the mass-weighted sum of squared
    geodesic distances to the rest of the support; ties take the lowest index.
    """
    out: dict[int, int] = {}
    for v, row in soft.rows.items():
        support = sorted(row)
        best_t, best_cost = -1, float("inf")
        for x in support:
            dx = oracle.distances_from(x)
            cost = sum(row[q] * float(dx[q]) ** 2 for q in support)
            if cost < best_cost:
                best_t, best_cost = x, cost
        out[v] = best_t
    return out


def ball_mass(
    row: dict[int, float], center: int, radius: float, oracle: GeodesicOracle
) -> float:
    """Total row mass within geodesic distance radius of center (inclusive)."""
    d = oracle.distances_from(center)
    return float(sum(m for t, m in row.items() if d[t] <= radius))


def tv_distance(row_a: dict[int, float], row_b: dict[int, float]) -> float:
    """Total variation distance between two sparse distributions."""
    keys = set(row_a) | set(row_b)
    return 0.5 * sum(abs(row_a.get(k, 0.0) - row_b.get(k, 0.0)) for k in keys)


@dataclass
class AllPairsResult:
    soft: dict[tuple[str, str], SoftCorrespondence]
    mle: dict[tuple[str, str], dict[int, int]]
    frechet: dict[tuple[str, str], dict[int, int]]


def all_pairs_soft(
    collection: ShapeCollection,
    lam: float = 0.978,
    queries: dict[str, list[int]] | None = None,
    *,
    max_paths: int = MAX_PATHS_DEFAULT,
    strict: bool = False,
    k: int = 8,
    threads: int = 1,
) -> AllPairsResult:
    """Soft correspondences and both hard extractions for every ordered pair.

    Failures are re-raised with the offending pair named. Worker threads only
    affect scheduling; pair results are keyed and deterministic.
    """
    ids = collection.ids
    pairs = [(a, b) for a in ids for b in ids if a != b]

    def run(pair: tuple[str, str]):
        a, b = pair
        pts = queries.get(a) if queries else None
        try:
            soft = propagate_soft(
                collection, a, b, lam=lam, source_points=pts,
                max_paths=max_paths, strict=strict,
            )
            hard = mle(soft)
            mean = frechet_mean(soft, collection.oracle(b, k=k))
        except Exception as exc:
            raise type(exc)(f"pair ({a!r} -> {b!r}): {exc}") from exc
        return soft, hard, mean

    results: dict[tuple[str, str], tuple] = {}
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for pair, res in zip(pairs, pool.map(run, pairs)):
                results[pair] = res
    else:
        for pair in pairs:
            results[pair] = run(pair)

    return AllPairsResult(
        soft={p: r[0] for p, r in results.items()},
        mle={p: r[1] for p, r in results.items()},
        frechet={p: r[2] for p, r in results.items()},
    )
