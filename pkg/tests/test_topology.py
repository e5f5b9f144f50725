import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socbal.errors import DisconnectedGraph, NoAccessUnit, NotSymmetric, SelfLoop, TopologyError
from socbal.topology import (
    build_topology,
    complete_edges,
    fiedler_value,
    h_matrix,
    laplacian,
    path_edges,
    ring_edges,
    spectral_summary,
    symmetric_eigenvalues,
)


@pytest.fixture
def ring6():
    return build_topology(6, ring_edges(6), [1, 0, 0, 0, 0, 0])


class TestBuild:
    def test_ring_normalized(self, ring6):
        assert ring6.edges == ((1, 2), (1, 6), (2, 3), (3, 4), (4, 5), (5, 6))
        assert ring6.neighbors(0) == [1, 5]

    def test_duplicates_and_reversed_pairs_collapse(self):
        t = build_topology(3, [(1, 2), (2, 1), (2, 3)], [1, 0, 0])
        assert t.edges == ((1, 2), (2, 3))

    def test_self_loop(self):
        with pytest.raises(SelfLoop):
            build_topology(3, [(1, 2), (2, 2), (2, 3)], [1, 0, 0])

    def test_disconnected(self):
        with pytest.raises(DisconnectedGraph):
            build_topology(4, [(1, 2), (3, 4)], [1, 0, 0, 0])

    def test_no_access_unit(self):
        with pytest.raises(NoAccessUnit):
            build_topology(3, path_edges(3), [0, 0, 0])

    @pytest.mark.parametrize(
        "edges, flags",
        [([(1, 4)], [1, 0, 0]), ([(1, 2, 3)], [1, 0, 0]), (path_edges(3), [1, 0]), (path_edges(3), [2, 0, 0])],
    )
    def test_malformed(self, edges, flags):
        with pytest.raises(TopologyError):
            build_topology(3, edges, flags)

    def test_single_unit(self):
        t = build_topology(1, [], [1])
        assert t.is_connected()
        assert laplacian(t).tolist() == [[0]]

    def test_adjacency_read_only(self, ring6):
        with pytest.raises(ValueError):
            ring6.adjacency[0, 1] = 0


class TestMatrices:
    def test_laplacian_rows_sum_to_zero(self, ring6):
        lap = laplacian(ring6)
        assert lap.dtype.kind == "i"
        assert np.all(lap.sum(axis=1) == 0)
        assert np.array_equal(lap, lap.T)

    def test_h_two_node_path(self):
        t = build_topology(2, [(1, 2)], [1, 0])
        assert h_matrix(t).tolist() == [[2, -1], [-1, 1]]


class TestEigenvalues:
    def test_not_symmetric(self):
        with pytest.raises(NotSymmetric):
            symmetric_eigenvalues([[1.0, 2.0], [0.0, 1.0]])

    def test_diagonal_passthrough(self):
        assert symmetric_eigenvalues(np.diag([3.0, -1.0, 2.0])) == [-1.0, 2.0, 3.0]

    def test_two_by_two(self):
        # [[2, 1], [1, 2]] has eigenvalues 1 and 3
        assert symmetric_eigenvalues([[2.0, 1.0], [1.0, 2.0]]) == pytest.approx([1.0, 3.0], abs=1e-14)

    @pytest.mark.parametrize("n", [2, 3, 5, 8, 13])
    def test_path_fiedler(self, n):
        t = build_topology(n, path_edges(n), [1] + [0] * (n - 1))
        assert fiedler_value(t) == pytest.approx(2 * (1 - math.cos(math.pi / n)), rel=1e-12)

    def test_ring6_pinned_spectrum(self, ring6):
        # independent reference: LAPACK symmetric solver
        s = spectral_summary(ring6)
        ref = np.linalg.eigvalsh(h_matrix(ring6).astype(float))
        assert s.lambda_min_H == pytest.approx(ref[0], rel=1e-12)
        assert s.lambda_max_H == pytest.approx(ref[-1], rel=1e-12)
        assert s.lambda_min_H == pytest.approx(0.1087801513, rel=1e-9)
        assert s.lambda_max_H == pytest.approx(4.278413609, rel=1e-9)
        assert (s.lambda2_L, s.lambda_max_L) == pytest.approx((1.0, 4.0), rel=1e-12)

    def test_fiedler_needs_two_nodes(self):
        with pytest.raises(TopologyError):
            fiedler_value(build_topology(1, [], [1]))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 24), st.integers(0, 2**32 - 1))
    def test_matches_lapack(self, n, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(n, n)) * 10 ** rng.uniform(-3, 3)
        m = a + a.T
        ours = np.array(symmetric_eigenvalues(m))
        ref = np.linalg.eigvalsh(m)
        assert np.max(np.abs(ours - ref)) <= 1e-9 * max(1.0, np.max(np.abs(ref)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 12), st.data())
    def test_random_connected_graph(self, n, data):
        extra = data.draw(st.lists(st.tuples(st.integers(1, n), st.integers(1, n)).filter(lambda e: e[0] != e[1]), max_size=20))
        t = build_topology(n, path_edges(n) + extra, [1] + [0] * (n - 1))
        lap = laplacian(t).astype(float)
        ev = symmetric_eigenvalues(lap)
        assert abs(ev[0]) <= 1e-9 * ev[-1]
        assert ev[1] > 1e-9
        assert sum(ev) == pytest.approx(np.trace(lap), rel=1e-9)
        assert min(symmetric_eigenvalues(h_matrix(t).astype(float))) > 0
