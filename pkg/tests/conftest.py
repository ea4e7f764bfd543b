import numpy as np
import pytest

from corrsync.collection import CorrespondenceMap, Shape, ShapeCollection


def line_distances(coords) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    return np.abs(coords[:, None] - coords[None, :])


def two_point_shape(shape_id: str) -> Shape:
    return Shape(id=shape_id, points=np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))


def build_l4(swapped_pair=None) -> ShapeCollection:
    """Four 2-point shapes at positions 0,1,2,3 on a line.

    All pairwise maps are identity except the ordered pair in ``swapped_pair``
    (and its reverse), which swap the two points.
    """
    coords = [0.0, 1.0, 2.0, 3.0]
    shapes = [two_point_shape(f"s{k}") for k in range(4)]
    ident = np.array([0, 1])
    swap = np.array([1, 0])
    swapped = set()
    if swapped_pair is not None:
        a, b = swapped_pair
        swapped = {(a, b), (b, a)}
    maps = {}
    for a in range(4):
        for b in range(4):
            if a == b:
                continue
            arr = swap if (a, b) in swapped else ident
            maps[(f"s{a}", f"s{b}")] = CorrespondenceMap(
                f"s{a}", f"s{b}", "discrete", indices=arr.copy(), target_size=2
            )
    return ShapeCollection(shapes=shapes, D=line_distances(coords), maps=maps)


def permutation_collection(perms, D=None) -> ShapeCollection:
    """Shapes are index sets; map a->b is perms[b] o perms[a]^{-1}."""
    n = len(perms[0])
    pts = np.c_[np.arange(n, dtype=float), np.zeros(n), np.zeros(n)]
    shapes = [Shape(id=f"p{k}", points=pts.copy()) for k in range(len(perms))]
    if D is None:
        idx = np.arange(len(perms), dtype=float)
        D = np.abs(idx[:, None] - idx[None, :])
    maps = {}
    for a, pa in enumerate(perms):
        inv_a = np.argsort(pa)
        for b, pb in enumerate(perms):
            if a == b:
                continue
            maps[(f"p{a}", f"p{b}")] = CorrespondenceMap(
                f"p{a}", f"p{b}", "discrete", indices=pb[inv_a], target_size=n
            )
    return ShapeCollection(shapes=shapes, D=np.asarray(D, dtype=float), maps=maps)


def random_euclidean_distances(rng, n, dim=3):
    pts = rng.normal(size=(n, dim))
    diff = pts[:, None, :] - pts[None, :, :]
    return np.sqrt((diff**2).sum(axis=2))


@pytest.fixture
def l4_identity():
    return build_l4()


@pytest.fixture
def l4_swap():
    return build_l4(swapped_pair=(1, 3))


@pytest.fixture
def t3_distances():
    # only the direct edge is admissible for pair (0, 2): the lone candidate
    # intermediate sits at distance 1 from the source but 1.9 from the target
    return np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.9], [1.0, 1.9, 0.0]])
