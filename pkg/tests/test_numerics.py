import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from structnet_ce.numerics import RngStream, SingularMatrixError, as_stream, cmod, finite_diff_grad, lstsq, solve_hermitian

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestCmod:
    def test_inside_cell(self):
        assert cmod(0.3, 2.0) == 0.3

    def test_ties_resolve_down(self):
        assert cmod(1.0, 2.0) == -1.0
        assert cmod(-1.0, 2.0) == -1.0

    def test_wraps(self):
        assert_allclose(cmod(7.4, 2.0), -0.6, atol=1e-12)

    def test_qpsk_levels_share_residue(self):
        a = 1 / np.sqrt(2)
        assert cmod(a, 2 * a) == cmod(-a, 2 * a)

    @pytest.mark.parametrize("p", [0.0, -1.0])
    def test_rejects_nonpositive_period(self, p):
        with pytest.raises(ValueError):
            cmod(0.5, p)

    def test_array_input(self):
        assert_allclose(cmod(np.array([0.3, 7.4, -1.0]), 2.0), [0.3, -0.6, -1.0], atol=1e-12)

    @given(st.integers(-10**6, 10**6), st.integers(-1000, 1000), st.sampled_from([0.5, 1.0, 2.0, 4.0]))
    def test_periodic_exact_for_power_of_two(self, n, k, p):
        # dyadic u keeps u + k*p exactly representable
        u = n / 1024
        assert cmod(u + k * p, p) == cmod(u, p)

    @given(finite, st.integers(-1000, 1000), st.floats(0.1, 10.0))
    def test_periodic(self, u, k, p):
        d = abs(cmod(u + k * p, p) - cmod(u, p))
        # a value on a cell edge may land on either side after rounding
        assert min(d, abs(d - p)) <= 1e-9

    @given(st.floats(-1e6, 1e6, allow_nan=False), st.floats(1e-3, 1e3))
    def test_range(self, u, p):
        r = cmod(u, p)
        assert -p / 2 <= r < p / 2


class TestSolveHermitian:
    def test_identity(self):
        assert_allclose(solve_hermitian(np.eye(2), [1 + 1j, 2]), [1 + 1j, 2])

    @given(st.integers(0, 10_000))
    def test_residual(self, seed):
        g = np.random.default_rng(seed)
        M = g.normal(size=(4, 4)) + 1j * g.normal(size=(4, 4))
        A = M.conj().T @ M + np.eye(4)
        b = g.normal(size=4) + 1j * g.normal(size=4)
        x = solve_hermitian(A, b)
        assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-10

    def test_singular(self):
        with pytest.raises(SingularMatrixError):
            solve_hermitian(np.diag([1.0, 0.0]), [1.0, 1.0])

    def test_not_hermitian(self):
        with pytest.raises(ValueError):
            solve_hermitian(np.array([[1.0, 2.0], [0.0, 1.0]]), [1.0, 1.0])

    def test_not_square(self):
        with pytest.raises(ValueError):
            solve_hermitian(np.ones((2, 3)), [1.0, 1.0])


class TestLstsq:
    def test_identity(self):
        b = np.array([1 - 2j, 3, 0.5j])
        assert_allclose(lstsq(np.eye(3), b), b)

    @given(st.integers(0, 10_000))
    def test_consistent_overdetermined(self, seed):
        g = np.random.default_rng(seed)
        A = g.normal(size=(8, 3)) + 1j * g.normal(size=(8, 3))
        x = g.normal(size=3) + 1j * g.normal(size=3)
        assert_allclose(lstsq(A, A @ x), x, atol=1e-10)

    @given(st.integers(0, 10_000))
    def test_normal_equations(self, seed):
        g = np.random.default_rng(seed)
        A = g.normal(size=(8, 2)) + 1j * g.normal(size=(8, 2))
        b = g.normal(size=8) + 1j * g.normal(size=8)
        x = lstsq(A, b)
        Ah = A.conj().T
        assert np.linalg.norm(Ah @ (A @ x - b)) <= 1e-9 * np.linalg.norm(Ah @ b)

    def test_duplicated_column(self):
        A = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        with pytest.raises(SingularMatrixError):
            lstsq(A, [1.0, 2.0, 3.0])

    def test_wide(self):
        with pytest.raises(ValueError):
            lstsq(np.ones((1, 2)), [1.0])


class TestFiniteDiff:
    def test_quadratic(self):
        assert_allclose(finite_diff_grad(lambda x: x @ x, [1.0, 2.0], 1e-5), [2.0, 4.0], atol=1e-8)

    def test_constant(self):
        assert_array_equal(finite_diff_grad(lambda x: 3.0, np.ones(5)), np.zeros(5))

    def test_logistic_cross_entropy(self):
        g = np.random.default_rng(0)
        feats, y = g.normal(size=(20, 3)), g.choice([-1.0, 1.0], 20)

        def loss(w):
            return np.mean(np.logaddexp(0.0, -y * (feats @ w)))

        w = g.normal(size=3)
        s = 1 / (1 + np.exp(y * (feats @ w)))
        hand = -(feats * (y * s)[:, None]).mean(axis=0)
        assert_allclose(finite_diff_grad(loss, w, 1e-6), hand, rtol=1e-6)

    def test_does_not_modify_input(self):
        x = np.array([1.0, 2.0])
        finite_diff_grad(lambda v: v.sum(), x)
        assert_array_equal(x, [1.0, 2.0])


class TestRngStream:
    def test_reproducible(self):
        assert_array_equal(RngStream(7, 3).normal(size=10), RngStream(7, 3).normal(size=10))

    def test_streams_differ(self):
        assert not np.array_equal(RngStream(7, 3).normal(size=10), RngStream(7, 4).normal(size=10))
        assert not np.array_equal(RngStream(7, 3).normal(size=10), RngStream(8, 3).normal(size=10))

    def test_child_independent_of_creation_order(self):
        root = RngStream(5)
        a = root.child(1).uniform(size=4)
        root.child(2).uniform(size=100)
        assert_array_equal(RngStream(5).child(1).uniform(size=4), a)

    def test_child_matches_tuple_id(self):
        assert_array_equal(RngStream(5, 2).child(9).normal(size=3), RngStream(5, (2, 9)).normal(size=3))

    def test_frozen_draws(self):
        # [DERIVED] Philox-4x64 keyed by SeedSequence(42, spawn_key=(0,)), recorded once
        got = RngStream(42, 0).integers(0, 1000, size=5)
        want = np.random.Generator(np.random.Philox(np.random.SeedSequence(42, spawn_key=(0,)))).integers(0, 1000, 5)
        assert_array_equal(got, want)

    def test_complex_normal_variance(self):
        z = RngStream(1).complex_normal(200_000, 0.5)
        assert abs(np.mean(np.abs(z) ** 2) - 0.5) < 0.01
        assert abs(np.mean(z.real ** 2) - np.mean(z.imag ** 2)) < 0.01

    def test_as_stream(self):
        s = RngStream(3)
        assert as_stream(s) is s
        assert_array_equal(as_stream(3, 5).normal(size=2), RngStream(3, 5).normal(size=2))
