import numpy as np
import pytest

from plastic_rl import linalg


def naive_matmul(a, b):
    """Triple-loop oracle: scalar accumulation in increasing k."""
    n, kk = a.shape
    m = b.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(kk):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def gram_eigen_singular_values(a, iters=200):
    """Oracle: sigma_i = sqrt(eig(G)) for G = A^T A (smaller Gram side),
    via cyclic two-sided Jacobi eigenvalue iteration on the symmetric G."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[0] < a.shape[1]:
        a = a.T
    g = a.T @ a
    n = g.shape[0]
    for _ in range(iters):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                if g[p, q] == 0.0:
                    continue
                off = max(off, abs(g[p, q]))
                theta = 0.5 * np.arctan2(2.0 * g[p, q], g[q, q] - g[p, p])
                c, s = np.cos(theta), np.sin(theta)
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                g = rot.T @ g @ rot
        if off < 1e-14 * max(1.0, np.max(np.abs(np.diag(g)))):
            break
    ev = np.sort(np.diag(g))[::-1]
    return np.sqrt(np.clip(ev, 0.0, None))


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((2, 3))
        assert np.array_equal(linalg.matmul(np.eye(2), a), a)

    def test_hand_case(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0], [6.0]])
        assert np.array_equal(linalg.matmul(a, b), [[17.0], [39.0]])

    def test_matches_naive_oracle_to_zero_ulp(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((7, 5))
        b = rng.standard_normal((5, 3))
        got = linalg.matmul(a, b)
        assert np.array_equal(got, naive_matmul(a, b))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_naive_oracle_varied_shapes(self, seed):
        rng = np.random.default_rng(100 + seed)
        n, k, m = rng.integers(1, 40, size=3)
        a = rng.standard_normal((n, k))
        b = rng.standard_normal((k, m))
        assert np.array_equal(linalg.matmul(a, b), naive_matmul(a, b))

    def test_repeat_calls_bitwise_identical(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((33, 17))
        b = rng.standard_normal((17, 21))
        assert np.array_equal(linalg.matmul(a, b), linalg.matmul(a, b))

    def test_dimension_mismatch_reports_shapes(self):
        with pytest.raises(ValueError, match=r"2x3 @ 4x2"):
            linalg.matmul(np.zeros((2, 3)), np.zeros((4, 2)))

    @pytest.mark.parametrize("seed", range(5))
    def test_associativity(self, seed):
        rng = np.random.default_rng(200 + seed)
        a = rng.uniform(-1, 1, (6, 5))
        b = rng.uniform(-1, 1, (5, 7))
        c = rng.uniform(-1, 1, (7, 4))
        left = linalg.matmul(linalg.matmul(a, b), c)
        right = linalg.matmul(a, linalg.matmul(b, c))
        assert np.allclose(left, right, rtol=1e-10, atol=1e-12)


class TestFrobenius:
    def test_zero(self):
        assert linalg.frobenius_norm_sq(np.zeros((4, 3))) == 0.0

    def test_identity(self):
        assert linalg.frobenius_norm_sq(np.eye(3)) == 3.0

    def test_hand_case(self):
        assert linalg.frobenius_norm_sq(np.array([[1.0, 2.0], [3.0, 4.0]])) == 30.0


class TestQrHaar:
    def test_square_orthonormal(self):
        rng = np.random.default_rng(11)
        q = linalg.qr_haar(4, 4, rng)
        assert np.max(np.abs(q @ q.T - np.eye(4))) < 1e-12

    def test_wide_rows_orthonormal(self):
        rng = np.random.default_rng(12)
        q = linalg.qr_haar(2, 6, rng)
        assert q.shape == (2, 6)
        assert np.max(np.abs(q @ q.T - np.eye(2))) < 1e-12

    def test_tall_columns_orthonormal(self):
        rng = np.random.default_rng(13)
        q = linalg.qr_haar(9, 3, rng)
        assert q.shape == (9, 3)
        assert np.max(np.abs(q.T @ q - np.eye(3))) < 1e-12

    def test_min_side_gram_identity_property(self):
        rng = np.random.default_rng(14)
        for rows, cols in [(5, 5), (3, 8), (8, 3), (1, 4)]:
            q = linalg.qr_haar(rows, cols, rng)
            k = min(rows, cols)
            g = q @ q.T if rows <= cols else q.T @ q
            assert np.sqrt(linalg.frobenius_norm_sq(g - np.eye(k))) < 1e-10

    def test_entry_mean_near_zero(self):
        # Monte-Carlo over draws: Haar entries are symmetric about zero.
        rng = np.random.default_rng(15)
        mean = np.mean([np.mean(linalg.qr_haar(64, 64, rng)) for _ in range(100)])
        assert -0.05 < mean < 0.05

    def test_zero_dimension_rejected(self):
        rng = np.random.default_rng(16)
        with pytest.raises(ValueError):
            linalg.qr_haar(0, 3, rng)


class TestSvdValues:
    def test_identity(self):
        assert np.allclose(linalg.svd_values(np.eye(5)), np.ones(5), atol=1e-12)

    def test_diagonal(self):
        sv = linalg.svd_values(np.diag([3.0, 2.0, 1.0]))
        assert np.allclose(sv, [3.0, 2.0, 1.0], atol=1e-12)

    @pytest.mark.parametrize("shape", [(10, 6), (6, 10), (12, 12)])
    def test_matches_gram_eigen_oracle(self, shape):
        rng = np.random.default_rng(31)
        a = rng.standard_normal(shape)
        got = linalg.svd_values(a)
        want = gram_eigen_singular_values(a)
        assert np.allclose(got, want, rtol=1e-8)

    def test_scaled_orthogonal_all_equal(self):
        rng = np.random.default_rng(32)
        q = linalg.qr_haar(8, 8, rng)
        sv = linalg.svd_values(2.5 * q)
        assert np.max(np.abs(sv - 2.5)) < 1e-10

    @pytest.mark.parametrize("seed", range(4))
    def test_sum_sq_equals_frobenius(self, seed):
        rng = np.random.default_rng(40 + seed)
        a = rng.standard_normal((rng.integers(2, 30), rng.integers(2, 30)))
        sv = linalg.svd_values(a)
        assert np.isclose(np.sum(sv**2), linalg.frobenius_norm_sq(a), rtol=1e-8)

    def test_rank_deficient(self):
        rng = np.random.default_rng(50)
        u = rng.standard_normal((9, 2))
        v = rng.standard_normal((2, 7))
        sv = linalg.svd_values(u @ v)
        assert np.all(sv[2:] < 1e-10 * sv[0])

    def test_nonfinite_rejected(self):
        a = np.ones((3, 3))
        a[1, 1] = np.nan
        with pytest.raises(ValueError):
            linalg.svd_values(a)
