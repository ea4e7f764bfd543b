import numpy as np
import pytest

from corrsync.baselines import (
    compose_along,
    direct_propagate,
    kruskal_mst,
    min_connecting_epsilon,
    mst_propagate,
    shortest_path_propagate,
)
from corrsync.errors import DisconnectedGraphError

from conftest import build_l4, line_distances, random_euclidean_distances


class TestKruskal:
    def test_chain(self):
        D = line_distances([0.0, 1.0, 2.0, 3.0])
        tree = kruskal_mst(D)
        assert tree.edges == ((0, 1), (1, 2), (2, 3))

    def test_tie_breaks_lexicographically(self):
        # all three pairwise distances equal: edges (0,1) and (0,2) win
        D = np.array([[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]])
        tree = kruskal_mst(D)
        assert tree.edges == ((0, 1), (0, 2))

    def test_tree_path(self):
        D = line_distances([0.0, 1.0, 2.0, 3.0])
        tree = kruskal_mst(D)
        assert tree.path(0, 3) == (0, 1, 2, 3)
        assert tree.path(3, 1) == (3, 2, 1)
        assert tree.path(2, 2) == (2,)

    def test_spans_random_instances(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            n = int(rng.integers(2, 12))
            D = random_euclidean_distances(rng, n)
            tree = kruskal_mst(D)
            assert len(tree.edges) == n - 1
            seen = set()
            stack = [0]
            adj = tree.adjacency
            while stack:
                v = stack.pop()
                if v in seen:
                    continue
                seen.add(v)
                stack.extend(adj[v])
            assert seen == set(range(n))


class TestMinConnectingEpsilon:
    def test_equals_longest_mst_edge(self):
        D = line_distances([0.0, 1.0, 2.0, 5.0])
        assert min_connecting_epsilon(D) == pytest.approx(3.0)

    def test_threshold_graph_connects_exactly_at_epsilon(self):
        rng = np.random.default_rng(4)
        D = random_euclidean_distances(rng, 9)
        eps = min_connecting_epsilon(D)
        # strictly below epsilon the graph splits
        shaved = eps * (1 - 1e-9)
        from scipy.sparse import csr_matrix
        from scipy.sparse.csgraph import connected_components

        def n_comp(thresh):
            A = (D <= thresh) & ~np.eye(len(D), dtype=bool)
            return connected_components(csr_matrix(A), directed=False)[0]

        assert n_comp(eps) == 1
        assert n_comp(shaved) > 1


class TestPropagationRoutes:
    def test_direct_is_stored_map(self, l4_swap):
        m = direct_propagate(l4_swap, "s0", "s3")
        assert list(m.indices) == [0, 1]
        m2 = direct_propagate(l4_swap, "s1", "s3")
        assert list(m2.indices) == [1, 0]

    def test_direct_same_shape_identity(self, l4_identity):
        m = direct_propagate(l4_identity, "s2", "s2")
        assert list(m.indices) == [0, 1]

    def test_mst_route_on_chain(self, l4_swap):
        m, route = mst_propagate(l4_swap, "s0", "s3")
        assert route == ("s0", "s1", "s2", "s3")
        # chain maps are all identity; the swap sits on the skipped direct edge
        assert list(m.indices) == [0, 1]

    def test_shortest_route_prefers_low_energy(self, l4_swap):
        # squared-distance costs: 0-1-2-3 costs 3, direct costs 9
        m, route = shortest_path_propagate(l4_swap, "s0", "s3")
        assert route == ("s0", "s1", "s2", "s3")
        assert list(m.indices) == [0, 1]

    def test_shortest_tie_breaks_on_path_tuple(self):
        # two exactly tied routes 0-1-3 and 0-2-3; the lexicographically
        # smaller vertex sequence must win
        D = np.array(
            [
                [0.0, 1.0, 1.0, 2.0],
                [1.0, 0.0, 1.5, 1.0],
                [1.0, 1.5, 0.0, 1.0],
                [2.0, 1.0, 1.0, 0.0],
            ]
        )
        coll = build_l4()
        coll = type(coll)(shapes=coll.shapes, D=D, maps=coll.maps)
        m, route = shortest_path_propagate(coll, "s0", "s3")
        assert route == ("s0", "s1", "s3")

    def test_epsilon_prunes_to_disconnection(self, l4_identity):
        with pytest.raises(DisconnectedGraphError):
            shortest_path_propagate(l4_identity, "s0", "s3", epsilon=0.5)

    def test_epsilon_keeps_boundary_edges(self, l4_identity):
        m, route = shortest_path_propagate(l4_identity, "s0", "s3", epsilon=1.0)
        assert route == ("s0", "s1", "s2", "s3")

    def test_compose_along_identity_route(self, l4_identity):
        m = compose_along(l4_identity, ("s0", "s2", "s3"))
        assert list(m.indices) == [0, 1]

    def test_compose_along_single_shape(self, l4_identity):
        m = compose_along(l4_identity, ("s1",))
        assert list(m.indices) == [0, 1]
        assert m.source_id == "s1" and m.target_id == "s1"
