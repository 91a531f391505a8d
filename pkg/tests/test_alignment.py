"""DTW kernels: path validity, kernel equivalence, oracle spot checks."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from melosvc import alignment
from melosvc._dtw_py import dtw_alignment as python_kernel
from melosvc.alignment import align, dtw_cost, dtw_path
from melosvc.errors import AlignmentError

from oracles import brute_force_dtw

contours = st.lists(
    st.floats(min_value=-100.0, max_value=100.0, allow_nan=False, allow_infinity=False),
    min_size=1,
    max_size=12,
)


def test_compiled_backend_active():
    # the build must produce the extension; the fallback is for source
    # installs without a compiler, not for this test environment
    assert alignment.BACKEND == "cython"


class TestPathShape:
    def test_endpoints_anchored(self, rng):
        x = rng.normal(size=9)
        y = rng.normal(size=5)
        _, path = dtw_path(x, y)
        assert tuple(path[0]) == (0, 0)
        assert tuple(path[-1]) == (8, 4)

    def test_steps_are_monotone_unit_moves(self, rng):
        x = rng.normal(size=10)
        y = rng.normal(size=7)
        _, path = dtw_path(x, y)
        deltas = np.diff(path, axis=0)
        assert set(map(tuple, deltas)) <= {(1, 0), (0, 1), (1, 1)}

    def test_cost_equals_path_sum(self, rng):
        x = rng.normal(size=8)
        y = rng.normal(size=6)
        cost, path = dtw_path(x, y)
        assert cost == pytest.approx(np.sum(np.abs(x[path[:, 0]] - y[path[:, 1]])), rel=1e-12)

    def test_identical_contours_zero_cost_diagonal(self):
        x = np.array([1.0, 2.0, 3.0])
        cost, path = dtw_path(x, x)
        assert cost == 0.0
        np.testing.assert_array_equal(path, [[0, 0], [1, 1], [2, 2]])

    def test_single_frame_inputs(self):
        cost, path = dtw_path([2.0], [5.0, 6.0, 7.0])
        assert cost == pytest.approx(3.0 + 4.0 + 5.0)
        np.testing.assert_array_equal(path[:, 0], 0)


class TestValidation:
    def test_empty_rejected(self):
        with pytest.raises(AlignmentError):
            dtw_cost([], [1.0])

    def test_nan_rejected(self):
        with pytest.raises(AlignmentError):
            dtw_cost([np.nan], [1.0])

    def test_2d_rejected(self):
        with pytest.raises(AlignmentError):
            dtw_cost(np.zeros((2, 2)), [1.0])


class TestKernelEquivalence:
    def test_bitwise_identical_to_python_kernel(self, rng):
        for _ in range(300):
            x = np.ascontiguousarray(rng.normal(size=rng.integers(1, 30)))
            y = np.ascontiguousarray(rng.normal(size=rng.integers(1, 30)))
            cost_a, path_a = dtw_path(x, y)
            cost_b, path_b = python_kernel(x, y)
            assert cost_a == cost_b  # bitwise, no tolerance
            assert path_a.tolist() == [list(p) for p in path_b]

    @settings(max_examples=100, deadline=None)
    @given(contours, contours)
    def test_kernels_agree_on_arbitrary_contours(self, xs, ys):
        x = np.asarray(xs)
        y = np.asarray(ys)
        cost_a, path_a = dtw_path(x, y)
        cost_b, path_b = python_kernel(x, y)
        assert cost_a == cost_b
        assert path_a.tolist() == [list(p) for p in path_b]


class TestAgainstBruteForce:
    def test_random_pairs_match_enumeration(self, rng):
        for _ in range(40):
            x = rng.normal(size=rng.integers(1, 7))
            y = rng.normal(size=rng.integers(1, 7))
            assert dtw_cost(x, y) == brute_force_dtw(x, y)

    @settings(max_examples=60, deadline=None)
    @given(contours.filter(lambda v: len(v) <= 6), contours.filter(lambda v: len(v) <= 6))
    def test_hypothesis_pairs_match_enumeration(self, xs, ys):
        assert dtw_cost(xs, ys) == brute_force_dtw(xs, ys)


class TestProperties:
    @settings(max_examples=80, deadline=None)
    @given(contours, contours)
    def test_cost_symmetric(self, xs, ys):
        assert dtw_cost(xs, ys) == dtw_cost(ys, xs)

    @settings(max_examples=80, deadline=None)
    @given(contours)
    def test_self_alignment_free(self, xs):
        assert dtw_cost(xs, xs) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(contours, st.floats(min_value=-50, max_value=50, allow_nan=False))
    def test_shift_both_contours_invariant(self, xs, c):
        x = np.asarray(xs)
        base = dtw_cost(x, x + 1.0)
        shifted = dtw_cost(x + c, x + c + 1.0)
        assert shifted == pytest.approx(base, rel=1e-9, abs=1e-9)


class TestAlign:
    def test_aligned_values_match_path(self, rng):
        x = rng.normal(size=6)
        y = rng.normal(size=9)
        ax, ay, cost = align(x, y)
        assert len(ax) == len(ay)
        assert cost == pytest.approx(np.sum(np.abs(ax - ay)), rel=1e-12)
