"""Sparse-to-dense correspondence construction for shape pairs.

Pipeline pieces: farthest-point landmark sampling, mutual ball-mass partial
matching from soft correspondences, scalar-field extremum detection, stable
matching of extrema after rigid alignment, joint farthest-point refinement of
the match set, and inverse-distance interpolation to a dense map. A rigid
ICP-style aligner and a hub-composed consistent map table round out the module.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .collection import (
    CorrespondenceMap,
    GeodesicOracle,
    Shape,
    ShapeCollection,
    compose_maps,
    identity_map,
)
from .errors import BallOverlapError, DegenerateGeometryError, MissingMapError
from .soft import SoftCorrespondence, ball_mass


@dataclass(frozen=True)
class LandmarkSet:
    shape_id: str
    indices: tuple[int, ...]
    method: str = "fps"


@dataclass(frozen=True)
class Match:
    source: int
    target: int | None  # None marks an unmatched landmark
    provenance: str

    @property
    def matched(self) -> bool:
        return self.target is not None


@dataclass
class MatchList:
    source_id: str
    target_id: str
    entries: list[Match]

    def matched(self) -> list[Match]:
        return [m for m in self.entries if m.matched]

    def pairs(self) -> list[tuple[int, int]]:
        return [(m.source, m.target) for m in self.matched()]

    def validate_disjoint(self) -> None:
        src = [m.source for m in self.matched()]
        tgt = [m.target for m in self.matched()]
        if len(set(src)) != len(src) or len(set(tgt)) != len(tgt):
            raise ValueError("a vertex appears in two matches")


def fps_landmarks(
    shape: Shape, count: int, start: int, oracle: GeodesicOracle
) -> LandmarkSet:
    """Farthest-point sampling under the geodesic metric.

    Greedily adds the vertex farthest from everything chosen so far; distance
    ties resolve to the lowest vertex index.
    """
    if not 1 <= count <= shape.n:
        raise ValueError(f"need 1 <= count <= {shape.n}, got {count}")
    chosen = [int(start)]
    mindist = oracle.distances_from(start).copy()
    while len(chosen) < count:
        nxt = int(np.argmax(mindist))
        chosen.append(nxt)
        np.minimum(mindist, oracle.distances_from(nxt), out=mindist)
    return LandmarkSet(shape_id=shape.id, indices=tuple(chosen))


def check_ball_disjoint(indices, radius: float, oracle: GeodesicOracle) -> None:
    idx = list(indices)
    for a in range(len(idx)):
        d = oracle.distances_from(idx[a])
        for b in range(a + 1, len(idx)):
            if d[idx[b]] <= 2 * radius:
                raise BallOverlapError(
                    f"landmarks {idx[a]} and {idx[b]} are {d[idx[b]]:.6g} apart; "
                    f"balls of radius {radius} require separation > {2 * radius}"
                )


def gp_partial_match(
    soft_ab: SoftCorrespondence,
    soft_ba: SoftCorrespondence,
    landmarks_a: LandmarkSet,
    landmarks_b: LandmarkSet,
    radius: float,
    oracle_a: GeodesicOracle,
    oracle_b: GeodesicOracle,
) -> MatchList:
    """Match landmarks whose soft images concentrate in each other's balls.

    A pair qualifies when the forward row puts mass >= 0.5 inside the ball
    around the candidate target landmark and the reverse row does the same
    around the source landmark. Each source takes the first qualifying target
    in landmark order; a target is never reused. Unmatched landmarks get one
    sentinel entry each.
    """
    check_ball_disjoint(landmarks_a.indices, radius, oracle_a)
    check_ball_disjoint(landmarks_b.indices, radius, oracle_b)
    taken: set[int] = set()
    entries: list[Match] = []
    for va in landmarks_a.indices:
        row_a = soft_ab.row(va)
        hit = None
        for vb in landmarks_b.indices:
            if vb in taken:
                continue
            if ball_mass(row_a, vb, radius, oracle_b) >= 0.5 and (
                ball_mass(soft_ba.row(vb), va, radius, oracle_a) >= 0.5
            ):
                hit = vb
                break
        if hit is None:
            entries.append(Match(int(va), None, "partial"))
        else:
            taken.add(hit)
            entries.append(Match(int(va), int(hit), "partial"))
    out = MatchList(soft_ab.source_id, soft_ab.target_id, entries)
    out.validate_disjoint()
    return out


def _hop_neighborhoods(neighbor_lists, hops: int) -> list[set[int]]:
    out = []
    for v in range(len(neighbor_lists)):
        seen = {v}
        frontier = {v}
        for _ in range(hops):
            nxt = set()
            for u in frontier:
                nxt.update(int(w) for w in neighbor_lists[u])
            frontier = nxt - seen
            seen |= nxt
        seen.discard(v)
        out.append(seen)
    return out


def strict_extrema(field: np.ndarray, neighbor_lists, hops: int = 1) -> tuple[int, ...]:
    """Indices whose value strictly exceeds every neighbor within the hop radius.

    A vertex with no neighbors in range qualifies vacuously.
    """
    hoods = _hop_neighborhoods(neighbor_lists, hops)
    return tuple(
        v
        for v in range(len(field))
        if all(field[v] > field[u] for u in hoods[v])
    )


def detect_extrema(
    shape: Shape,
    oracle: GeodesicOracle,
    hops: int = 1,
    field: np.ndarray | None = None,
) -> tuple[int, ...]:
    """Strict local maxima of the shape's scalar field, ascending vertex order."""
    if field is None:
        field = shape.scalar_field
    if field is None:
        raise ValueError(f"shape {shape.id!r} has no scalar field")
    field = np.asarray(field, dtype=float)
    if field.shape != (shape.n,):
        raise ValueError("scalar field length does not match the shape")
    return strict_extrema(field, oracle.neighbor_lists, hops)


def project_vertices(points_from: np.ndarray, points_to: np.ndarray, vertices) -> np.ndarray:
    """Nearest-vertex projection by Euclidean distance; ties take the lowest index."""
    src = points_from[np.asarray(vertices, dtype=int)]
    d = np.linalg.norm(points_to[None, :, :] - src[:, None, :], axis=2)
    return np.argmin(d, axis=1).astype(np.int64)


def stable_curvature_match(
    shape_a: Shape,
    shape_b: Shape,
    extrema_a: list[int],
    extrema_b: list[int],
    delta: float,
    oracle_a: GeodesicOracle,
    oracle_b: GeodesicOracle,
) -> MatchList:
    """Stable matching of scalar-field extrema between two aligned shapes.

    Candidate pairs must project within geodesic delta of each other in both
    directions. Source extrema propose in ascending projected-distance order;
    the result admits no blocking pair among candidates.
    """
    ea = [int(v) for v in extrema_a]
    eb = [int(v) for v in extrema_b]
    entries: list[Match] = []
    if not ea or not eb:
        return MatchList(shape_a.id, shape_b.id, [Match(v, None, "curvature") for v in ea])

    proj_a = project_vertices(shape_a.points, shape_b.points, ea)  # images on B
    proj_b = project_vertices(shape_b.points, shape_a.points, eb)  # images on A
    fwd = np.array(
        [[oracle_b.distance(int(proj_a[m]), vb) for vb in eb] for m in range(len(ea))]
    )
    rev = np.array(
        [[oracle_a.distance(int(proj_b[m]), va) for va in ea] for m in range(len(eb))]
    )
    admissible = (fwd < delta) & (rev.T < delta)

    # proposer preference lists, ascending distance then index
    pref = [
        deque(sorted((j for j in range(len(eb)) if admissible[m, j]), key=lambda j: (fwd[m, j], j)))
        for m in range(len(ea))
    ]
    rank = [
        {m: (rev[j, m], m) for m in range(len(ea)) if admissible[m, j]}
        for j in range(len(eb))
    ]
    engaged: dict[int, int] = {}  # target index -> source index
    free = deque(range(len(ea)))
    while free:
        m = free.popleft()
        if not pref[m]:
            continue
        j = pref[m].popleft()
        if j not in engaged:
            engaged[j] = m
        elif rank[j][m] < rank[j][engaged[j]]:
            free.append(engaged[j])
            engaged[j] = m
        else:
            free.append(m)

    matched = {m: j for j, m in engaged.items()}
    for m, va in enumerate(ea):
        if m in matched:
            entries.append(Match(va, eb[matched[m]], "curvature"))
        else:
            entries.append(Match(va, None, "curvature"))
    out = MatchList(shape_a.id, shape_b.id, entries)
    out.validate_disjoint()
    return out


def joint_fps_refine(
    seed_matches: MatchList,
    candidates: MatchList,
    max_matches: int,
    oracle_a: GeodesicOracle,
    oracle_b: GeodesicOracle,
) -> MatchList:
    """Grow the match set by joint farthest-point coverage on both shapes.

    Starting from the seed matches, repeatedly adds the candidate pair
    maximizing the summed geodesic distance to the already chosen vertices on
    each side, until max_matches pairs exist or candidates run out. Ties take
    the lowest source index. Candidates reusing a chosen vertex are skipped.
    """
    seeds = seed_matches.matched()
    if max_matches < len(seeds):
        raise ValueError(
            f"max_matches={max_matches} below the {len(seeds)} seed matches"
        )
    chosen: list[Match] = list(seeds)
    used_a = {m.source for m in chosen}
    used_b = {m.target for m in chosen}
    pool = [
        m
        for m in candidates.matched()
        if m.source not in used_a and m.target not in used_b
    ]

    inf = float("inf")
    mind_a = np.full(oracle_a.n, inf)
    mind_b = np.full(oracle_b.n, inf)
    for m in chosen:
        np.minimum(mind_a, oracle_a.distances_from(m.source), out=mind_a)
        np.minimum(mind_b, oracle_b.distances_from(m.target), out=mind_b)

    while pool and len(chosen) < max_matches:
        best = None
        best_key = None
        for m in pool:
            energy = float(mind_a[m.source]) + float(mind_b[m.target])
            key = (-energy, m.source, m.target)
            if best_key is None or key < best_key:
                best, best_key = m, key
        chosen.append(best)
        used_a.add(best.source)
        used_b.add(best.target)
        np.minimum(mind_a, oracle_a.distances_from(best.source), out=mind_a)
        np.minimum(mind_b, oracle_b.distances_from(best.target), out=mind_b)
        pool = [
            m for m in pool if m.source not in used_a and m.target not in used_b
        ]

    out = MatchList(seed_matches.source_id, seed_matches.target_id, chosen)
    out.validate_disjoint()
    return out


def interpolate_dense(
    matches: MatchList,
    shape_a: Shape,
    shape_b: Shape,
    oracle_a: GeodesicOracle,
    k: int = 4,
) -> CorrespondenceMap:
    """Extend sparse matches to a full discrete map by inverse-distance blending.

    Every unmatched source vertex takes the weighted average position of its k
    geodesically nearest matched landmarks' targets (weights 1/d), snapped to
    the nearest target vertex. Matched vertices keep their exact targets.
    """
    pairs = matches.pairs()
    if not pairs:
        raise ValueError("cannot interpolate from an empty match set")
    srcs = [p[0] for p in pairs]
    tgts = [p[1] for p in pairs]
    k_eff = min(k, len(pairs))
    rows = np.vstack([oracle_a.distances_from(s) for s in srcs])  # (L, n_a)
    exact = {s: t for s, t in pairs}
    tree_b = cKDTree(shape_b.points)
    indices = np.empty(shape_a.n, dtype=np.int64)
    for v in range(shape_a.n):
        if v in exact:
            indices[v] = exact[v]
            continue
        d = rows[:, v]
        order = np.lexsort((np.arange(len(pairs)), d))[:k_eff]
        if d[order[0]] == 0.0:
            indices[v] = tgts[int(order[0])]
            continue
        w = 1.0 / d[order]
        pos = (w[:, None] * shape_b.points[[tgts[int(a)] for a in order]]).sum(0) / w.sum()
        indices[v] = int(tree_b.query(pos)[1])
    return CorrespondenceMap(
        source_id=shape_a.id,
        target_id=shape_b.id,
        kind="discrete",
        indices=indices,
        target_size=shape_b.n,
    )


@dataclass
class AlignResult:
    rotation: np.ndarray
    translation: np.ndarray
    map: CorrespondenceMap
    distance: float


def baseline_pairwise_align(
    shape_a: Shape, shape_b: Shape, iterations: int = 10
) -> AlignResult:
    """Rigidly align a onto b by alternating nearest-neighbor assignment with
    the closed-form orthogonal fit, for a fixed iteration budget.

    Returns the final rotation/translation, the nearest-vertex map a -> b under
    the alignment, and the root-mean-square residual over assigned pairs.
    """
    pa, pb = shape_a.points, shape_b.points
    for pts, who in ((pa, shape_a.id), (pb, shape_b.id)):
        if pts.shape[0] < 3:
            raise DegenerateGeometryError(f"shape {who!r}: alignment needs >= 3 points")
        centered = pts - pts.mean(0)
        s = np.linalg.svd(centered, compute_uv=False)
        if s[1] <= 1e-9 * max(s[0], 1e-30):
            raise DegenerateGeometryError(f"shape {who!r}: points are collinear")

    tree = cKDTree(pb)
    R = np.eye(3)
    t = np.zeros(3)
    assign = None
    for _ in range(max(1, iterations)):
        moved = pa @ R.T + t
        assign = tree.query(moved)[1]
        R, t = _orthogonal_fit(pa, pb[assign])
    moved = pa @ R.T + t
    assign = tree.query(moved)[1]
    residual = float(np.sqrt(np.mean(np.sum((moved - pb[assign]) ** 2, axis=1))))
    return AlignResult(
        rotation=R,
        translation=t,
        map=CorrespondenceMap(
            source_id=shape_a.id,
            target_id=shape_b.id,
            kind="discrete",
            indices=assign.astype(np.int64),
            target_size=shape_b.n,
        ),
        distance=residual,
    )


def _orthogonal_fit(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # least-squares rotation + translation, reflection corrected
    cs, cd = src.mean(0), dst.mean(0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    sign = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, sign]) @ U.T
    return R, cd - R @ cs


def consistent_via_mean(
    collection: ShapeCollection,
    hard_maps: dict[tuple[str, str], CorrespondenceMap],
) -> tuple[dict[tuple[str, str], CorrespondenceMap], str]:
    """Consistent map table routed through the distance-centered hub shape.

    The hub minimizes the summed squared distance to all other shapes (ties to
    the lowest index); every output map composes into-hub then out-of-hub.
    Compositions of output maps collapse exactly whenever each shape's two hub
    maps invert each other.
    """
    sums = (collection.D**2).sum(axis=1)
    mean_idx = int(np.argmin(sums))
    mean_id = collection.ids[mean_idx]

    def hub_map(a: str, b: str) -> CorrespondenceMap:
        if a == b:
            return identity_map(a, collection.shape(a).n)
        if (a, b) not in hard_maps:
            raise MissingMapError(
                f"consistent table needs the map {a!r} -> {b!r} through the hub"
            )
        return hard_maps[(a, b)]

    table: dict[tuple[str, str], CorrespondenceMap] = {}
    for a in collection.ids:
        for b in collection.ids:
            if a == b:
                continue
            table[(a, b)] = compose_maps(hub_map(mean_id, b), hub_map(a, mean_id))
    return table, mean_id
