import numpy as np
import pytest

from fairprice.numkit import (
    Rng,
    matmul,
    pearson,
    rank_transform,
    standardize_columns,
    svd_small,
)
from oracles import jacobi_eigenvalues, matmul_triple_loop


class TestMatmul:
    def test_identity(self):
        a = np.array([[2.0, -1.0], [0.5, 3.0]])
        assert np.array_equal(matmul(np.eye(2), a), a)

    def test_hand_arithmetic(self):
        out = matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
        assert np.array_equal(out, np.array([[3.0], [7.0]]))

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(5, 7))
        b = rng.normal(size=(7, 3))
        assert np.max(np.abs(matmul(a, b) - matmul_triple_loop(a, b))) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_associativity(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            a = rng.normal(size=(4, 6))
            b = rng.normal(size=(6, 5))
            c = rng.normal(size=(5, 3))
            left = matmul(matmul(a, b), c)
            right = matmul(a, matmul(b, c))
            assert np.max(np.abs(left - right)) < 1e-9 * np.max(np.abs(left))


class TestSvdSmall:
    def test_diagonal(self):
        sigma, _, _ = svd_small(np.diag([3.0, 1.0]))
        assert np.allclose(sigma, [3.0, 1.0])

    def test_orthogonal_all_ones(self):
        rng = np.random.default_rng(2)
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        sigma, _, _ = svd_small(q)
        assert np.max(np.abs(sigma - 1.0)) < 1e-10

    def test_against_jacobi_eigen_oracle(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(6, 4))
        sigma, _, _ = svd_small(a)
        eigs = jacobi_eigenvalues(a.T @ a)
        ref = np.sqrt(np.maximum(eigs, 0.0))
        assert np.max(np.abs(sigma - ref) / ref) < 1e-8

    def test_reconstruction_and_order(self):
        rng = np.random.default_rng(4)
        for shape in [(3, 3), (6, 4), (4, 7)]:
            a = rng.normal(size=shape)
            sigma, left, right = svd_small(a)
            recon = left @ np.diag(sigma) @ right.T
            assert np.linalg.norm(a - recon) <= 1e-9 * np.linalg.norm(a)
            assert np.all(np.diff(sigma) <= 0)
            assert np.all(sigma >= 0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            svd_small(np.array([[1.0, np.nan], [0.0, 1.0]]))


class TestStandardizeColumns:
    def test_closed_form(self):
        out, means, stds = standardize_columns(np.array([[1.0], [2.0], [3.0]]))
        # population std of (1,2,3) is sqrt(2/3)
        expected = (np.array([1.0, 2.0, 3.0]) - 2.0) / np.sqrt(2.0 / 3.0)
        assert np.max(np.abs(out.ravel() - expected)) < 1e-12
        assert abs(expected[0] + 1.2247) < 1e-3
        assert means[0] == 2.0

    def test_constant_column(self):
        out, _, stds = standardize_columns(np.array([[5.0], [5.0], [5.0]]))
        assert np.array_equal(out, np.zeros((3, 1)))
        assert stds[0] == 1.0

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(200, 3))
        once, _, _ = standardize_columns(a)
        twice, _, _ = standardize_columns(once)
        assert np.max(np.abs(once - twice)) < 1e-12

    def test_moments_and_reconstruction(self):
        rng = np.random.default_rng(6)
        a = rng.normal(3.0, 7.0, size=(500, 4))
        out, means, stds = standardize_columns(a)
        assert np.max(np.abs(out.mean(axis=0))) < 1e-12
        assert np.max(np.abs(out.var(axis=0) - 1.0)) < 1e-10
        recon = out * stds + means
        assert np.max(np.abs(recon - a)) < 1e-10

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            standardize_columns(np.zeros((0, 2)))


class TestRankTransform:
    def test_three_values(self):
        assert np.allclose(rank_transform([10.0, 30.0, 20.0]), [0.25, 0.75, 0.50])

    def test_all_ties(self):
        assert np.allclose(rank_transform([7.0] * 4), [0.5] * 4)

    def test_monotone(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=300)
        r = rank_transform(x)
        assert np.array_equal(np.argsort(x, kind="stable"), np.argsort(r, kind="stable"))
        assert np.all(r > 0) and np.all(r < 1)


class TestPearson:
    def test_exact_linear(self):
        assert pearson([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]) == 1.0

    def test_exact_antilinear(self):
        assert pearson([1.0, 2.0, 3.0], [3.0, 2.0, 1.0]) == -1.0

    def test_cosine_uncorrelated(self):
        # a standard normal and its cosine transform are essentially
        # uncorrelated in the linear sense
        u = Rng(11).normal(size=10000)
        assert abs(pearson(u, np.cos(u))) < 0.05

    def test_affine_invariance_and_sign(self):
        rng = np.random.default_rng(8)
        u = rng.normal(size=100)
        v = rng.normal(size=100)
        base = pearson(u, v)
        assert abs(pearson(2.5 * u + 7.0, v) - base) < 1e-12
        assert abs(pearson(u, 0.3 * v - 2.0) - base) < 1e-12
        assert abs(pearson(-u, v) + base) < 1e-12

    def test_constant_degenerate(self):
        assert pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            pearson([1.0, 2.0], [1.0, 2.0, 3.0])


class TestRng:
    def test_stream_equality(self):
        a = Rng(123).uniform(size=10000)
        b = Rng(123).uniform(size=10000)
        assert np.array_equal(a, b)

    def test_children_differ_and_are_stable(self):
        parent = Rng(9)
        c0 = parent.child(0).normal(size=100)
        c1 = parent.child(1).normal(size=100)
        again = Rng(9).child(0).normal(size=100)
        assert not np.array_equal(c0, c1)
        assert np.array_equal(c0, again)
