import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svdrecycle.svdwindow import SolutionWindow, SvdMode, maybe_refresh, push_solution


def test_eviction():
    w = SolutionWindow(2, 1, 1)
    a, b, c = (np.full(3, v) for v in (1.0, 2.0, 3.0))
    push_solution(w, a)
    assert len(w) == 1
    push_solution(w, b)
    push_solution(w, c)
    assert np.array_equal(w.matrix(), np.column_stack([b, c]))


def test_push_dimension_mismatch():
    w = SolutionWindow(3, 1, 1)
    w.push(np.ones(4))
    with pytest.raises(ValueError):
        w.push(np.ones(5))


def test_parameter_validation():
    for args in ((0, 1, 1), (3, 0, 1), (3, 1, 4), (3, 1, 0)):
        with pytest.raises(ValueError):
            SolutionWindow(*args)


def test_largest_and_smallest_mode():
    big, small = 5 * np.eye(6)[:, 0], np.eye(6)[:, 3]
    for mode, expected in ((SvdMode.LARGEST, 0), (SvdMode.SMALLEST, 3)):
        w = SolutionWindow(2, 1, 1, mode)
        w.push(big)
        w.push(small)
        basis = maybe_refresh(w)
        assert basis.shape == (6, 1)
        assert np.allclose(np.abs(basis[:, 0]), np.eye(6)[:, expected])


def test_smallest_mode_skips_zero_singular_values(rng):
    v = rng.standard_normal(10)
    u = rng.standard_normal(10)
    w = SolutionWindow(3, 1, 1, SvdMode.SMALLEST)
    for x in (v, 2 * v, u):
        w.push(x)
    basis = w.maybe_refresh()
    # the null direction of the window is not returned
    assert np.linalg.norm(basis) > 0.99
    assert np.linalg.matrix_rank(np.column_stack([v, u, basis[:, 0]]), tol=1e-8) == 2


def test_schedule():
    w = SolutionWindow(4, 3, 2)
    out = []
    for i in range(7):
        w.push(np.arange(5.0) + i ** 2)
        out.append(w.maybe_refresh() is not None)
    assert out == [False, False, True, False, False, True, False]


def test_refresh_needs_enough_solutions():
    w = SolutionWindow(4, 1, 3)
    w.push(np.ones(5))
    w.push(np.arange(5.0))
    assert w.maybe_refresh() is None
    assert w.cold_start_basis().shape == (5, 2)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_basis_orthonormal_and_in_window_span(m, s, seed):
    s = min(s, m)
    rng = np.random.default_rng(seed)
    w = SolutionWindow(m, 1, s)
    for _ in range(m):
        w.push(rng.standard_normal(40))
    B = w.maybe_refresh()
    assert B is not None and B.shape[1] == s
    assert np.abs(B.T @ B - np.eye(s)).max() <= 1e-10
    X = w.matrix()
    coef = np.linalg.lstsq(X, B, rcond=None)[0]
    assert np.abs(X @ coef - B).max() <= 1e-8


def test_full_basis_spans_window(rng):
    w = SolutionWindow(5, 1, 5)
    for _ in range(5):
        w.push(rng.standard_normal(30))
    B = w.maybe_refresh()
    assert np.linalg.matrix_rank(np.column_stack([B, w.matrix()]), tol=1e-8) == 5
