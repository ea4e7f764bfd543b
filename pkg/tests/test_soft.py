import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corrsync.collection import GeodesicOracle, Shape
from corrsync.errors import EmptyPathSetError, MissingMapError
from corrsync.flow import directed_flow_matrix
from corrsync.soft import (
    SoftCorrespondence,
    all_pairs_soft,
    ball_mass,
    frechet_mean,
    mle,
    path_composed_map,
    path_distribution,
    propagate_soft,
    tv_distance,
)

from conftest import build_l4, line_distances, two_point_shape


class TestPathDistribution:
    def test_l4_probabilities(self):
        D = line_distances([0.0, 1.0, 2.0, 3.0])
        flow = directed_flow_matrix(D, 0, 3)
        dist = path_distribution(flow, lam=0.0, max_paths=100)
        Z = np.exp(-9) + 2 * np.exp(-5) + np.exp(-3)
        by_path = dict(zip((r.vertices for r in dist.records), dist.probabilities))
        assert by_path[(0, 3)] == pytest.approx(np.exp(-9) / Z)
        assert by_path[(0, 1, 2, 3)] == pytest.approx(np.exp(-3) / Z)
        assert sum(dist.probabilities) == pytest.approx(1.0)

    def test_strict_empty_raises(self):
        D = line_distances([0.0, 1.0, 2.0, 3.0])
        flow = directed_flow_matrix(D, 0, 3)
        with pytest.raises(EmptyPathSetError):
            path_distribution(flow, lam=0.9999, max_paths=100, strict=True)


class TestPropagateSoft:
    def test_l4_swap_masses(self, l4_swap):
        soft = propagate_soft(l4_swap, "s0", "s3", lam=0.0, source_points=[0], max_paths=100)
        Z = np.exp(-9) + 2 * np.exp(-5) + np.exp(-3)
        row = soft.rows[0]
        assert row[0] == pytest.approx((np.exp(-9) + np.exp(-5) + np.exp(-3)) / Z, abs=1e-4)
        assert row[1] == pytest.approx(np.exp(-5) / Z, abs=1e-4)
        assert row[0] == pytest.approx(0.8937, abs=1e-4)
        assert row[1] == pytest.approx(0.1063, abs=1e-4)

    def test_identity_collection_gives_delta_rows(self, l4_identity):
        soft = propagate_soft(l4_identity, "s0", "s3", lam=0.0, max_paths=100)
        for v, row in soft.rows.items():
            assert row == pytest.approx({v: 1.0})

    def test_rows_normalized(self, l4_swap):
        soft = propagate_soft(l4_swap, "s0", "s3", lam=0.0, max_paths=100)
        for row in soft.rows.values():
            assert sum(row.values()) == pytest.approx(1.0, abs=1e-12)

    def test_landmarks_limit_rows(self):
        coll = build_l4()
        coll.shapes[0].landmark_indices = (1,)
        soft = propagate_soft(coll, "s0", "s3", lam=0.0, max_paths=100)
        assert sorted(soft.rows) == [1]

    def test_missing_map_names_edge(self, l4_swap):
        l4_swap.maps.pop(("s1", "s3"))
        l4_swap.maps.pop(("s3", "s1"))
        with pytest.raises(MissingMapError, match="s1"):
            propagate_soft(l4_swap, "s0", "s3", lam=0.0, max_paths=100)

    def test_provenance_lists_paths(self, l4_swap):
        soft = propagate_soft(l4_swap, "s0", "s3", lam=0.0, source_points=[0], max_paths=100)
        paths = soft.provenance["paths"]
        assert [tuple(p) for p in paths] == [(0, 1, 2, 3), (0, 1, 3), (0, 2, 3), (0, 3)]
        assert sum(soft.provenance["path_probabilities"]) == pytest.approx(1.0)


class TestHardMaps:
    def test_mle_majority(self, l4_swap):
        soft = propagate_soft(l4_swap, "s0", "s3", lam=0.0, source_points=[0], max_paths=100)
        assert mle(soft) == {0: 0}

    def test_mle_tie_breaks_low(self):
        sc = SoftCorrespondence("a", "b", {0: {1: 0.5, 0: 0.5}}, 0.0, 1.0, 1, False)
        assert mle(sc) == {0: 0}

    def test_frechet_prefers_heavier_point(self):
        sc = SoftCorrespondence("a", "b", {0: {0: 0.6, 1: 0.4}}, 0.0, 1.0, 1, False)
        oracle = GeodesicOracle(two_point_shape("b"), k=1)
        assert frechet_mean(sc, oracle) == {0: 0}
        flipped = SoftCorrespondence("a", "b", {0: {0: 0.4, 1: 0.6}}, 0.0, 1.0, 1, False)
        assert frechet_mean(flipped, oracle) == {0: 1}

    def test_frechet_tie_breaks_low(self):
        sc = SoftCorrespondence("a", "b", {0: {0: 0.5, 1: 0.5}}, 0.0, 1.0, 1, False)
        oracle = GeodesicOracle(two_point_shape("b"), k=1)
        assert frechet_mean(sc, oracle) == {0: 0}

    def test_frechet_restricted_to_support(self):
        # mass splits over the two ends of a 3-point line; the middle vertex
        # would minimize the energy but lies outside the support
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
        oracle = GeodesicOracle(Shape(id="b", points=pts), k=1)
        sc = SoftCorrespondence("a", "b", {0: {0: 0.5, 2: 0.5}}, 0.0, 1.0, 1, False)
        assert frechet_mean(sc, oracle) == {0: 0}


class TestRowHelpers:
    def test_ball_mass_inclusive(self):
        pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
        oracle = GeodesicOracle(Shape(id="b", points=pts), k=1)
        row = {0: 0.2, 1: 0.3, 2: 0.5}
        assert ball_mass(row, 0, 1.0, oracle) == pytest.approx(0.5)
        assert ball_mass(row, 1, 1.0, oracle) == pytest.approx(1.0)

    def test_tv_distance(self):
        assert tv_distance({0: 1.0}, {0: 1.0}) == 0.0
        assert tv_distance({0: 1.0}, {1: 1.0}) == 1.0
        assert tv_distance({0: 0.5, 1: 0.5}, {0: 1.0}) == pytest.approx(0.5)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_tv_bounds(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 6))
        a = rng.random(n)
        b = rng.random(n)
        row_a = dict(enumerate(a / a.sum()))
        row_b = dict(enumerate(b / b.sum()))
        t = tv_distance(row_a, row_b)
        assert 0.0 <= t <= 1.0 + 1e-12
        assert tv_distance(row_a, row_a) == 0.0


class TestAllPairs:
    def test_matches_single_pair_calls(self, l4_swap):
        res = all_pairs_soft(l4_swap, lam=0.0, max_paths=1000)
        single = propagate_soft(l4_swap, "s0", "s3", lam=0.0, max_paths=1000)
        assert res.soft[("s0", "s3")].rows == single.rows
        assert set(res.mle) == {(a, b) for a in l4_swap.ids for b in l4_swap.ids if a != b}

    def test_query_sets_restrict_rows(self, l4_swap):
        res = all_pairs_soft(l4_swap, lam=0.0, queries={"s0": [1]}, max_paths=1000)
        assert sorted(res.soft[("s0", "s3")].rows) == [1]
        # shapes without an entry fall back to all vertices
        assert sorted(res.soft[("s1", "s3")].rows) == [0, 1]

    def test_threads_agree_with_serial(self, l4_swap):
        serial = all_pairs_soft(l4_swap, lam=0.0, max_paths=1000)
        threaded = all_pairs_soft(l4_swap, lam=0.0, max_paths=1000, threads=4)
        assert serial.mle == threaded.mle
        for key in serial.soft:
            assert serial.soft[key].rows == threaded.soft[key].rows


class TestPathComposedMap:
    def test_matches_manual_composition(self, l4_swap):
        m = path_composed_map(l4_swap, ["s0", "s1", "s3"])
        # identity into s1, then the swapping map into s3
        assert list(m.indices) == [1, 0]
        direct = path_composed_map(l4_swap, ["s0", "s3"])
        assert list(direct.indices) == [0, 1]
