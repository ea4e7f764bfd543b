"""Shape collections: point clouds, pairwise maps, the inter-shape distance matrix,
and per-shape geodesic queries.

A collection is loaded from a JSON manifest and treated as immutable afterwards.
Maps are stored per ordered pair and never inverted implicitly: the file
``<target>__<source>.csv`` holds the map from ``source`` to ``target``, and the
in-memory table is keyed ``(source_id, target_id)``.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial.distance import cdist

from .errors import (
    DisconnectedGraphError,
    DuplicateShapeError,
    IndexRangeError,
    InverseViolationError,
    ManifestError,
    MetricAsymmetryError,
    MissingMapError,
    SoftRowError,
)

SOFT_PRUNE = 1e-12
SOFT_ROW_TOL = 1e-9
SYMMETRY_TOL = 1e-12


def edge_weight(d: float, beta: float = 1.0) -> float:
    """Similarity weight exp(-beta * d^2) for an inter-shape distance d.

    Maps distance 0 to weight 1 and decays smoothly; beta controls how sharply
    long hops are suppressed.
    """
    if d < 0:
        raise ValueError(f"negative distance {d!r}")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta!r}")
    return math.exp(-beta * d * d)


@dataclass
class Shape:
    """One shape: an (n, 3) point cloud plus optional annotations.

    landmark_indices are distinguished vertices, ground_truth maps string labels
    to vertex indices, scalar_field holds one value per vertex.
    """

    id: str
    points: np.ndarray
    landmark_indices: tuple[int, ...] | None = None
    ground_truth: dict[str, int] | None = None
    scalar_field: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ManifestError(f"shape {self.id!r}: points must be (n, 3)")
        if self.n < 2:
            raise ManifestError(f"shape {self.id!r}: needs at least 2 points")
        if self.landmark_indices is not None:
            self.landmark_indices = tuple(int(i) for i in self.landmark_indices)
        for idx in self.landmark_indices or ():
            self._check_index(idx, "landmark")
        for label, idx in (self.ground_truth or {}).items():
            self._check_index(idx, f"ground truth {label!r}")
        if self.scalar_field is not None:
            self.scalar_field = np.asarray(self.scalar_field, dtype=float)
            if self.scalar_field.shape != (self.n,):
                raise ManifestError(
                    f"shape {self.id!r}: scalar field length "
                    f"{self.scalar_field.shape} != point count {self.n}"
                )

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def _check_index(self, idx: int, what: str) -> None:
        if not 0 <= int(idx) < self.n:
            raise IndexRangeError(f"shape {self.id!r}: {what} index {idx} out of range")


@dataclass
class CorrespondenceMap:
    """Map from one shape's vertices to another's.

    Discrete: ``indices[v]`` is the image vertex. Soft: ``matrix`` is a sparse
    row-stochastic (n_source, n_target) matrix; each row is a distribution over
    image vertices.
    """

    source_id: str
    target_id: str
    kind: str
    indices: np.ndarray | None = None
    matrix: sparse.csr_matrix | None = None
    target_size: int | None = None

    def __post_init__(self) -> None:
        if self.kind == "discrete":
            if self.indices is None or self.target_size is None:
                raise ManifestError("discrete map needs indices and target_size")
            self.indices = np.asarray(self.indices, dtype=np.int64)
            if self.indices.ndim != 1:
                raise ManifestError("discrete map indices must be a vector")
            if self.indices.size and (
                self.indices.min() < 0 or self.indices.max() >= self.target_size
            ):
                raise IndexRangeError(
                    f"map {self.source_id!r}->{self.target_id!r}: "
                    f"target index out of range"
                )
        elif self.kind == "soft":
            if self.matrix is None:
                raise ManifestError("soft map needs a matrix")
            self.matrix = sparse.csr_matrix(self.matrix)
            if (self.matrix.data < 0).any():
                raise SoftRowError(
                    f"map {self.source_id!r}->{self.target_id!r}: negative mass"
                )
            sums = np.asarray(self.matrix.sum(axis=1)).ravel()
            if not np.allclose(sums, 1.0, atol=SOFT_ROW_TOL, rtol=0):
                bad = int(np.argmax(np.abs(sums - 1.0)))
                raise SoftRowError(
                    f"map {self.source_id!r}->{self.target_id!r}: row {bad} "
                    f"sums to {sums[bad]!r}"
                )
        else:
            raise ManifestError(f"unknown map kind {self.kind!r}")

    @property
    def n_source(self) -> int:
        if self.kind == "discrete":
            return int(self.indices.size)
        return self.matrix.shape[0]

    @property
    def n_target(self) -> int:
        if self.kind == "discrete":
            return int(self.target_size)
        return self.matrix.shape[1]

    def apply(self, v: int) -> int:
        """Image of vertex v under a discrete map."""
        if self.kind != "discrete":
            raise ValueError("apply() is for discrete maps; use push_row()")
        return int(self.indices[v])

    def push_row(self, row: dict[int, float]) -> dict[int, float]:
        """Push a sparse distribution over source vertices forward through the map."""
        out: dict[int, float] = {}
        if self.kind == "discrete":
            for v, m in row.items():
                t = int(self.indices[v])
                out[t] = out.get(t, 0.0) + m
            return out
        mat = self.matrix
        for v, m in row.items():
            start, stop = mat.indptr[v], mat.indptr[v + 1]
            for t, p in zip(mat.indices[start:stop], mat.data[start:stop]):
                t = int(t)
                out[t] = out.get(t, 0.0) + m * float(p)
        return out

    def to_soft(self) -> sparse.csr_matrix:
        if self.kind == "soft":
            return self.matrix
        n, m = self.n_source, self.n_target
        data = np.ones(n)
        return sparse.csr_matrix((data, (np.arange(n), self.indices)), shape=(n, m))

    def is_bijection(self) -> bool:
        if self.kind != "discrete" or self.n_source != self.n_target:
            return False
        return np.unique(self.indices).size == self.n_source


def identity_map(shape_id: str, n: int, target_id: str | None = None) -> CorrespondenceMap:
    return CorrespondenceMap(
        source_id=shape_id,
        target_id=target_id if target_id is not None else shape_id,
        kind="discrete",
        indices=np.arange(n, dtype=np.int64),
        target_size=n,
    )


def _clean_soft(mat: sparse.csr_matrix) -> sparse.csr_matrix:
    """Drop per-row mass below the pruning floor and renormalize rows."""
    mat = sparse.csr_matrix(mat)
    mat.data[mat.data < SOFT_PRUNE] = 0.0
    mat.eliminate_zeros()
    sums = np.asarray(mat.sum(axis=1)).ravel()
    if (sums <= 0).any():
        raise SoftRowError("soft row lost all mass during pruning")
    inv = sparse.diags(1.0 / sums)
    out = sparse.csr_matrix(inv @ mat)
    out.sort_indices()
    return out


def compose_maps(outer: CorrespondenceMap, inner: CorrespondenceMap) -> CorrespondenceMap:
    """Composite map: apply ``inner`` first, then ``outer``.

    Discrete maps compose by lookup; any soft participant makes the result soft
    (matrix product of the row-stochastic forms, pruned and renormalized).
    """
    if inner.target_id != outer.source_id:
        raise MissingMapError(
            f"cannot compose {inner.source_id!r}->{inner.target_id!r} "
            f"with {outer.source_id!r}->{outer.target_id!r}"
        )
    if inner.n_target != outer.n_source:
        raise IndexRangeError(
            f"compose size mismatch: {inner.n_target} vs {outer.n_source}"
        )
    if inner.kind == "discrete" and outer.kind == "discrete":
        return CorrespondenceMap(
            source_id=inner.source_id,
            target_id=outer.target_id,
            kind="discrete",
            indices=outer.indices[inner.indices],
            target_size=outer.target_size,
        )
    product = _clean_soft(inner.to_soft() @ outer.to_soft())
    return CorrespondenceMap(
        source_id=inner.source_id,
        target_id=outer.target_id,
        kind="soft",
        matrix=product,
    )


class GeodesicOracle:
    """Geodesic distances within one shape via a symmetrized k-NN graph.

    Edges carry Euclidean length; queries are shortest-path distances. Rows are
    cached per source vertex; the cache is safe under concurrent reads.
    """

    def __init__(self, shape: Shape, k: int = 8, faces: np.ndarray | None = None):
        self.shape = shape
        self.k = k
        self._rows: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()
        self._diameter: float | None = None
        self.graph, self.neighbor_lists = _build_neighbor_graph(shape, k, faces)
        n_comp, labels = csgraph.connected_components(self.graph, directed=False)
        if n_comp > 1:
            sizes = np.bincount(labels)
            detail = ", ".join(
                f"component {c}: {sizes[c]} vertices (e.g. {int(np.argmax(labels == c))})"
                for c in range(n_comp)
            )
            raise DisconnectedGraphError(
                f"shape {shape.id!r}: k={k} graph has {n_comp} components; {detail}"
            )

    @property
    def n(self) -> int:
        return self.shape.n

    def distances_from(self, v: int) -> np.ndarray:
        v = int(v)
        if not 0 <= v < self.n:
            raise IndexRangeError(f"shape {self.shape.id!r}: vertex {v} out of range")
        row = self._rows.get(v)
        if row is None:
            row = csgraph.dijkstra(self.graph, directed=False, indices=v)
            with self._lock:
                self._rows.setdefault(v, row)
        return self._rows[v]

    def distance(self, u: int, v: int) -> float:
        return float(self.distances_from(u)[int(v)])

    def ball(self, center: int, radius: float) -> np.ndarray:
        """Vertices within geodesic distance radius of center (inclusive)."""
        return np.flatnonzero(self.distances_from(center) <= radius)

    def diameter(self, exact: bool = False) -> float:
        """Geodesic diameter; default is a deterministic double sweep from vertex 0."""
        if self._diameter is None:
            if exact:
                best = 0.0
                for v in range(self.n):
                    best = max(best, float(self.distances_from(v).max()))
                self._diameter = best
            else:
                a = int(np.argmax(self.distances_from(0)))
                self._diameter = float(self.distances_from(a).max())
        return self._diameter


def _build_neighbor_graph(
    shape: Shape, k: int, faces: np.ndarray | None
) -> tuple[sparse.csr_matrix, list[np.ndarray]]:
    pts = shape.points
    n = pts.shape[0]
    rows: list[int] = []
    cols: list[int] = []
    if faces is not None:
        for tri in np.asarray(faces, dtype=np.int64):
            for a, b in ((0, 1), (1, 2), (2, 0)):
                rows.append(int(tri[a]))
                cols.append(int(tri[b]))
    else:
        if k < 1:
            raise ValueError("k must be at least 1")
        k_eff = min(k, n - 1)
        dmat = cdist(pts, pts)
        # argpartition with slack, then (distance, index) sort, so exact ties
        # resolve to the lowest index deterministically
        slack = min(n - 1, k_eff + 8)
        for v in range(n):
            cand = np.argpartition(dmat[v], slack)[: slack + 1]
            cand = cand[cand != v]
            order = np.lexsort((cand, dmat[v][cand]))
            for u in cand[order][:k_eff]:
                rows.append(v)
                cols.append(int(u))
    pairs = sorted({(a, b) for a, b in zip(rows, cols)} | {(b, a) for a, b in zip(rows, cols)})
    rows_arr = np.array([p[0] for p in pairs], dtype=np.int64)
    cols_arr = np.array([p[1] for p in pairs], dtype=np.int64)
    lengths = np.linalg.norm(pts[rows_arr] - pts[cols_arr], axis=1)
    # sparse graph routines read 0 as "no edge"; keep coincident points connected
    lengths = np.maximum(lengths, 1e-300)
    graph = sparse.csr_matrix((lengths, (rows_arr, cols_arr)), shape=(n, n))
    neighbor_lists = [graph.indices[graph.indptr[v] : graph.indptr[v + 1]] for v in range(n)]
    return graph, neighbor_lists


def intra_metric(shape: Shape, k: int = 8, faces: np.ndarray | None = None) -> GeodesicOracle:
    """Build the geodesic oracle for a shape (k-NN graph, or mesh edges if faces given)."""
    return GeodesicOracle(shape, k=k, faces=faces)


@dataclass
class ShapeCollection:
    """Shapes plus the symmetric inter-shape distance matrix D and pairwise maps.

    W = exp(-beta * D^2) entrywise. Treated as immutable after construction;
    derived structures (oracles, dijkstra rows) are cached.
    """

    shapes: list[Shape]
    D: np.ndarray
    maps: dict[tuple[str, str], CorrespondenceMap]
    beta: float = 1.0
    allow_duplicates: bool = False
    provenance: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.D = np.asarray(self.D, dtype=float)
        n = len(self.shapes)
        ids = [s.id for s in self.shapes]
        if len(set(ids)) != n:
            raise ManifestError("duplicate shape ids")
        if self.D.shape != (n, n):
            raise ManifestError(f"distance matrix shape {self.D.shape} != ({n}, {n})")
        if (self.D < 0).any():
            raise MetricAsymmetryError("negative inter-shape distance")
        if np.abs(self.D - self.D.T).max(initial=0.0) > SYMMETRY_TOL:
            raise MetricAsymmetryError(
                f"distance matrix asymmetric beyond {SYMMETRY_TOL}"
            )
        if np.diagonal(self.D).any():
            raise MetricAsymmetryError("distance matrix diagonal must be exactly zero")
        off = self.D[~np.eye(n, dtype=bool)]
        if off.size and off.min() <= 0 and not self.allow_duplicates:
            raise DuplicateShapeError(
                "two shapes at distance zero; pass allow_duplicates/--allow-duplicates"
            )
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        self._index = {sid: i for i, sid in enumerate(ids)}
        self.W = np.exp(-self.beta * self.D * self.D)
        self._oracles: dict[tuple[str, int], GeodesicOracle] = {}
        self._oracle_lock = threading.Lock()
        for (src, tgt), m in self.maps.items():
            if src not in self._index or tgt not in self._index:
                raise ManifestError(f"map for unknown pair ({src!r}, {tgt!r})")
            if (m.source_id, m.target_id) != (src, tgt):
                raise ManifestError(f"map table key ({src!r}, {tgt!r}) mislabeled")
            if m.n_source != self.shape(src).n or m.n_target != self.shape(tgt).n:
                raise IndexRangeError(
                    f"map {src!r}->{tgt!r} sized {m.n_source}x{m.n_target}, "
                    f"shapes have {self.shape(src).n} and {self.shape(tgt).n} points"
                )
        _check_declared_inverses(self)

    @property
    def n(self) -> int:
        return len(self.shapes)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.shapes]

    def index(self, shape_id: str) -> int:
        try:
            return self._index[shape_id]
        except KeyError:
            raise ManifestError(f"unknown shape id {shape_id!r}") from None

    def shape(self, shape_id: str) -> Shape:
        return self.shapes[self.index(shape_id)]

    def map(self, source_id: str, target_id: str) -> CorrespondenceMap:
        if source_id == target_id:
            return identity_map(source_id, self.shape(source_id).n)
        try:
            return self.maps[(source_id, target_id)]
        except KeyError:
            raise MissingMapError(
                f"no stored map {source_id!r} -> {target_id!r}"
            ) from None

    def oracle(self, shape_id: str, k: int = 8) -> GeodesicOracle:
        key = (shape_id, k)
        if key not in self._oracles:
            built = intra_metric(self.shape(shape_id), k=k)
            with self._oracle_lock:
                self._oracles.setdefault(key, built)
        return self._oracles[key]


def _check_declared_inverses(collection: ShapeCollection) -> None:
    # binds only pairs where both stored directions are discrete bijections
    seen = set()
    for (src, tgt) in collection.maps:
        if (tgt, src) in seen or (tgt, src) not in collection.maps:
            seen.add((src, tgt))
            continue
        seen.add((src, tgt))
        fwd = collection.maps[(src, tgt)]
        rev = collection.maps[(tgt, src)]
        if fwd.is_bijection() and rev.is_bijection():
            roundtrip = rev.indices[fwd.indices]
            if not np.array_equal(roundtrip, np.arange(fwd.n_source)):
                raise InverseViolationError(
                    f"maps {src!r}<->{tgt!r} are bijections but not mutual inverses"
                )


# ---------------------------------------------------------------------------
# manifest I/O


def _fmt(x: float) -> str:
    return repr(float(x))


def load_collection(manifest_path: str, allow_duplicates: bool = False) -> ShapeCollection:
    """Load a collection from a manifest JSON file.

    The manifest references a points file per shape, a distances CSV, and a map
    directory; all paths are resolved relative to the manifest's directory.
    """
    manifest_path = os.path.abspath(manifest_path)
    if not os.path.exists(manifest_path):
        raise ManifestError(f"manifest not found: {manifest_path}")
    base = os.path.dirname(manifest_path)
    with open(manifest_path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}") from exc

    def resolve(rel: str) -> str:
        path = os.path.join(base, rel)
        if not os.path.exists(path):
            raise ManifestError(f"referenced file not found: {path}")
        return path

    if "shapes" not in doc or "distances_file" not in doc or "maps_dir" not in doc:
        raise ManifestError("manifest requires shapes, distances_file, maps_dir")

    shapes: list[Shape] = []
    for entry in doc["shapes"]:
        points = np.loadtxt(resolve(entry["points_file"]), ndmin=2)
        field_vals = None
        if entry.get("scalar_field_file"):
            field_vals = np.loadtxt(resolve(entry["scalar_field_file"]), ndmin=1)
        shapes.append(
            Shape(
                id=str(entry["id"]),
                points=points,
                landmark_indices=[int(i) for i in entry["landmarks"]]
                if entry.get("landmarks") is not None
                else None,
                ground_truth={str(k): int(v) for k, v in entry["ground_truth"].items()}
                if entry.get("ground_truth") is not None
                else None,
                scalar_field=field_vals,
            )
        )

    D = np.loadtxt(resolve(doc["distances_file"]), delimiter=",", ndmin=2)
    maps_dir = os.path.join(base, doc["maps_dir"])
    if not os.path.isdir(maps_dir):
        raise ManifestError(f"maps directory not found: {maps_dir}")

    sizes = {s.id: s.n for s in shapes}
    maps: dict[tuple[str, str], CorrespondenceMap] = {}
    for tgt in sizes:
        for src in sizes:
            if src == tgt:
                continue
            path = os.path.join(maps_dir, f"{tgt}__{src}.csv")
            if os.path.exists(path):
                maps[(src, tgt)] = _read_map(path, src, tgt, sizes[src], sizes[tgt])

    return ShapeCollection(
        shapes=shapes,
        D=D,
        maps=maps,
        beta=float(doc.get("beta", 1.0)),
        allow_duplicates=allow_duplicates,
    )


def _read_map(path: str, src: str, tgt: str, n_src: int, n_tgt: int) -> CorrespondenceMap:
    rows: list[list[str]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            rows.append(line.split(","))
    if not rows:
        raise ManifestError(f"empty map file: {path}")
    width = len(rows[0])
    if any(len(r) != width for r in rows) or width not in (2, 3):
        raise ManifestError(f"map file {path}: expected 2 or 3 columns throughout")
    if width == 2:
        indices = np.full(n_src, -1, dtype=np.int64)
        for s, t in rows:
            si, ti = int(s), int(t)
            if not 0 <= si < n_src:
                raise IndexRangeError(f"map file {path}: source index {si} out of range")
            indices[si] = ti
        if (indices < 0).any():
            missing = int(np.argmax(indices < 0))
            raise ManifestError(f"map file {path}: no row for source index {missing}")
        return CorrespondenceMap(
            source_id=src, target_id=tgt, kind="discrete",
            indices=indices, target_size=n_tgt,
        )
    data, ri, ci = [], [], []
    for s, t, m in rows:
        si, ti = int(s), int(t)
        if not 0 <= si < n_src or not 0 <= ti < n_tgt:
            raise IndexRangeError(f"map file {path}: index ({si},{ti}) out of range")
        ri.append(si)
        ci.append(ti)
        data.append(float(m))
    mat = sparse.csr_matrix((data, (ri, ci)), shape=(n_src, n_tgt))
    covered = np.diff(mat.indptr) > 0
    if not covered.all():
        raise ManifestError(
            f"map file {path}: no mass for source index {int(np.argmin(covered))}"
        )
    return CorrespondenceMap(source_id=src, target_id=tgt, kind="soft", matrix=mat)


def atomic_write(path: str, text: str) -> None:
    """Write text to path via a temp file and rename, never leaving partial output."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_collection(
    collection: ShapeCollection, out_dir: str, manifest_name: str = "manifest.json"
) -> str:
    """Write a collection in the manifest layout; returns the manifest path.

    Float serialization uses shortest round-trip representation, so
    load(save(c)) reproduces every array bit for bit.
    """
    os.makedirs(os.path.join(out_dir, "maps"), exist_ok=True)
    entries = []
    for s in collection.shapes:
        points_file = f"{s.id}.xyz"
        atomic_write(
            os.path.join(out_dir, points_file),
            "".join(" ".join(_fmt(c) for c in p) + "\n" for p in s.points),
        )
        entry: dict = {"id": s.id, "points_file": points_file}
        if s.landmark_indices is not None:
            entry["landmarks"] = [int(i) for i in s.landmark_indices]
        if s.ground_truth is not None:
            entry["ground_truth"] = {k: int(v) for k, v in sorted(s.ground_truth.items())}
        if s.scalar_field is not None:
            field_file = f"{s.id}.field"
            atomic_write(
                os.path.join(out_dir, field_file),
                "".join(_fmt(v) + "\n" for v in s.scalar_field),
            )
            entry["scalar_field_file"] = field_file
        entries.append(entry)

    atomic_write(
        os.path.join(out_dir, "distances.csv"),
        "".join(",".join(_fmt(v) for v in row) + "\n" for row in collection.D),
    )
    for (src, tgt), m in sorted(collection.maps.items()):
        lines = []
        if m.kind == "discrete":
            for si, ti in enumerate(m.indices):
                lines.append(f"{si},{int(ti)}\n")
        else:
            mat = m.matrix
            for si in range(mat.shape[0]):
                for pos in range(mat.indptr[si], mat.indptr[si + 1]):
                    lines.append(f"{si},{int(mat.indices[pos])},{_fmt(mat.data[pos])}\n")
        atomic_write(os.path.join(out_dir, "maps", f"{tgt}__{src}.csv"), "".join(lines))

    manifest = {
        "shapes": entries,
        "distances_file": "distances.csv",
        "maps_dir": "maps",
        "beta": collection.beta,
    }
    manifest_path = os.path.join(out_dir, manifest_name)
    atomic_write(manifest_path, json.dumps(manifest, indent=2) + "\n")
    return manifest_path
