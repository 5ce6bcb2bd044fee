import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tempoly.numkit import (
    RngStream,
    as_matrix,
    batched_kron,
    cyclic_shift,
    expm,
    fit_scalar,
    gamma_conjugation_check,
    ginibre,
    haar_unitary,
    kron,
    matrix_from_json,
    matrix_to_json,
    orthonormal_extend,
    permutation_operator,
    proportionality,
    random_state,
    swap_operator,
)


def _taylor_expm(m, terms=60):
    # independent oracle: scale down, sum the series, square back up
    k = max(0, math.ceil(math.log2(max(np.linalg.norm(m, 1), 1e-300))) + 1)
    a = m / 2**k
    out = np.eye(m.shape[0], dtype=complex)
    term = np.eye(m.shape[0], dtype=complex)
    for i in range(1, terms):
        term = term @ a / i
        out = out + term
    for _ in range(k):
        out = out @ out
    return out


class TestRng:
    def test_same_pair_same_draws(self):
        a = RngStream(7, 3).generator.standard_normal(5)
        b = RngStream(7, 3).generator.standard_normal(5)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = RngStream(7, 3).generator.standard_normal(1000)
        b = RngStream(7, 4).generator.standard_normal(1000)
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.15

    def test_spawn_is_deterministic_and_parent_dependent(self):
        assert RngStream(1).spawn(2) == RngStream(1).spawn(2)
        assert RngStream(1, 0).spawn(2) != RngStream(1, 5).spawn(2)

    def test_named_streams(self):
        assert RngStream.named(0, "x") == RngStream.named(0, "x")
        assert RngStream.named(0, "x") != RngStream.named(0, "y")


class TestKron:
    def test_identity(self):
        assert np.array_equal(kron(np.eye(2), np.eye(2)), np.eye(4))

    def test_diagonal(self):
        assert np.array_equal(kron(np.diag([1, 2]), np.eye(2)), np.diag([1, 1, 2, 2]))

    def test_mixed_product(self):
        g = np.random.default_rng(0)
        a, b, c, d = (ginibre(2, 2, g) for _ in range(4))
        assert np.allclose(kron(a, b) @ kron(c, d), kron(a @ c, b @ d), atol=1e-12)

    def test_batched_matches_loop(self):
        g = np.random.default_rng(1)
        a, b = ginibre(2, 3, g, (4,)), ginibre(3, 2, g, (4,))
        out = batched_kron(a, b)
        for i in range(4):
            assert np.allclose(out[i], np.kron(a[i], b[i]))


class TestExpm:
    def test_zero(self):
        assert np.allclose(expm(np.zeros((3, 3))), np.eye(3))

    def test_diagonal(self):
        a, b = 0.3 + 1j, -2.0
        assert np.allclose(expm(np.diag([a, b])), np.diag([np.exp(a), np.exp(b)]), rtol=1e-13)

    def test_against_taylor_oracle(self):
        g = np.random.default_rng(2)
        for _ in range(10):
            m = ginibre(3, 3, g) * 2
            ref = _taylor_expm(m)
            assert np.linalg.norm(expm(m) - ref) <= 1e-10 * np.linalg.norm(ref)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            expm(np.zeros((2, 3)))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 10))
    def test_inverse_property(self, seed, scale):
        a = ginibre(3, 3, np.random.default_rng(seed))
        a = a / np.linalg.norm(a, 2) * scale
        assert np.linalg.norm(expm(a) @ expm(-a) - np.eye(3)) <= 1e-10 * max(1.0, np.linalg.norm(expm(a)) ** 2)


class TestEnsembles:
    def test_d1_is_phase(self):
        u = haar_unitary(1, RngStream(0))
        assert u.shape == (1, 1) and abs(abs(u[0, 0]) - 1) < 1e-14

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 64), st.integers(0, 2**31))
    def test_unitarity(self, d, seed):
        u = haar_unitary(d, RngStream(seed))
        assert np.max(np.abs(u.conj().T @ u - np.eye(d))) <= 1e-12

    def test_trace_moment(self):
        # E|tr U|^2 = 1 for Haar U(d), d >= 1
        u = haar_unitary(2, RngStream(11), size=(100_000,))
        val = np.mean(np.abs(np.trace(u, axis1=1, axis2=2)) ** 2)
        assert abs(val - 1) <= 0.03

    def test_entry_moments(self):
        # E|U_11|^2 = 1/d and E|U_11|^4 = 2/(d(d+1))
        d = 3
        u = haar_unitary(d, RngStream(12), size=(100_000,))
        a = np.abs(u[:, 0, 0]) ** 2
        assert abs(a.mean() - 1 / d) < 0.005
        assert abs((a**2).mean() - 2 / (d * (d + 1))) < 0.005

    def test_left_invariance(self):
        # the distribution of |tr(A U)|^2 depends on A only through A^dag A
        fixed = haar_unitary(2, RngStream(5))
        u = haar_unitary(2, RngStream(6), size=(100_000,))
        v = fixed @ u
        assert abs(np.mean(np.abs(v[:, 0, 0]) ** 2) - 0.5) < 0.01

    def test_ginibre_moments(self):
        z = ginibre(1000, 1000, RngStream(3))
        assert abs(z.mean()) < 0.005
        assert abs(np.mean(np.abs(z) ** 2) - 1) < 0.01

    def test_ginibre_empty(self):
        assert ginibre(0, 3, RngStream(0)).shape == (0, 3)

    def test_random_state_normalised(self):
        psi = random_state(5, RngStream(0), size=(10,))
        assert np.allclose(np.linalg.norm(psi, axis=-1), 1, atol=1e-12)


class TestOrthonormalExtend:
    def test_in_span(self):
        e1 = np.array([1, 0, 0], complex)
        assert orthonormal_extend([e1], e1) == (False, None)

    def test_new_direction(self):
        e1, e2 = np.eye(3, dtype=complex)[:2]
        ok, u = orthonormal_extend([e1], e2)
        assert ok and np.allclose(u, e2)

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            orthonormal_extend([], np.zeros(3))

    def test_rank_oracle(self):
        g = np.random.default_rng(4)
        sub = np.linalg.qr(ginibre(32, 8, g))[0]
        vecs = [sub @ ginibre(8, 1, g)[:, 0] for _ in range(50)]
        basis = []
        for v in vecs:
            ok, u = orthonormal_extend(basis, v)
            if ok:
                basis.append(u)
        assert len(basis) == 8 == np.linalg.matrix_rank(np.array(vecs))
        q = np.column_stack(basis)
        assert np.allclose(q.conj().T @ q, np.eye(8), atol=1e-9)

    def test_never_exceeds_ambient(self):
        basis = list(np.eye(4, dtype=complex))
        assert orthonormal_extend(basis, np.ones(4)) == (False, None)


class TestProportionality:
    def test_scalar_multiple(self):
        assert proportionality(2 * np.eye(2), np.eye(2)) == pytest.approx(2)

    def test_orthogonal(self):
        assert proportionality(np.array([[0, 1], [1, 0]]), np.eye(2)) is None

    def test_degenerate(self):
        r = fit_scalar(np.zeros((2, 2)), np.zeros((2, 2)))
        assert r.degenerate and r.scalar == 0

    def test_rewinding_identity(self):
        g = RngStream(8)
        v, w = haar_unitary(2, g, size=(2,))
        s = 3
        c = w @ v - v @ w
        vs = np.linalg.matrix_power(v, s)
        r = c @ vs @ c @ vs
        val = proportionality(r, np.eye(2))
        assert val is not None and abs(val) > 1e-6

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31), st.floats(-6, 6), st.floats(0, 2 * math.pi))
    def test_recovers_scalar(self, seed, log_mag, phase):
        a = ginibre(3, 3, np.random.default_rng(seed))
        c = 10**log_mag * np.exp(1j * phase)
        got = proportionality(c * a, a)
        assert got is not None and abs(got - c) <= 1e-12 * abs(c)


class TestPermutations:
    def test_identity(self):
        assert np.array_equal(permutation_operator(3, 2, (0, 1, 2)), np.eye(8))

    def test_swap(self):
        s = swap_operator(2)
        expected = np.eye(4)[[0, 2, 1, 3]]
        assert np.array_equal(s, expected)
        assert np.array_equal(s @ s, np.eye(4))

    def test_three_cycle_from_transpositions(self):
        # direct index oracle for the cycle perm = (1, 2, 0)
        d, perm = 2, (1, 2, 0)
        direct = np.zeros((8, 8))
        for idx in itertools.product(range(d), repeat=3):
            src = idx[0] * 4 + idx[1] * 2 + idx[2]
            dst_idx = tuple(idx[p] for p in perm)
            direct[dst_idx[0] * 4 + dst_idx[1] * 2 + dst_idx[2], src] = 1
        t01 = permutation_operator(3, d, (1, 0, 2))
        t12 = permutation_operator(3, d, (0, 2, 1))
        assert np.array_equal(permutation_operator(3, d, perm), direct)
        assert np.array_equal(t12 @ t01, direct)

    @settings(max_examples=40, deadline=None)
    @given(st.permutations(range(4)), st.permutations(range(4)))
    def test_composition_law(self, a, b):
        c = [b[a[k]] for k in range(4)]
        pa, pb = permutation_operator(4, 2, a), permutation_operator(4, 2, b)
        assert np.array_equal(pa @ pb, permutation_operator(4, 2, c))

    def test_invalid(self):
        with pytest.raises(ValueError):
            permutation_operator(3, 2, (0, 0, 1))


class TestGamma:
    def test_identity(self):
        for d in range(2, 7):
            assert gamma_conjugation_check(d, np.eye(d))

    def test_d2(self):
        g = cyclic_shift(2)
        y = np.diag([2.0, 3.0])
        assert np.allclose(g @ y @ g.T, np.diag([3.0, 2.0]))
        assert gamma_conjugation_check(2, y)

    def test_random_d5(self):
        gen = np.random.default_rng(0)
        y = np.diag(gen.standard_normal(5) + 1j * gen.standard_normal(5))
        assert gamma_conjugation_check(5, y, tol=1e-10)

    def test_singular(self):
        with pytest.raises(ValueError):
            gamma_conjugation_check(3, np.diag([1.0, 0.0, 2.0]))

    def test_non_diagonal(self):
        with pytest.raises(ValueError):
            gamma_conjugation_check(2, np.ones((2, 2)))


class TestJson:
    def test_round_trip(self):
        m = ginibre(2, 3, RngStream(0))
        assert np.array_equal(matrix_from_json(matrix_to_json(m)), m)

    def test_row_major(self):
        doc = matrix_to_json(np.array([[1, 2], [3, 4]]))
        assert doc["re"] == [1, 2, 3, 4]

    def test_bad_length(self):
        with pytest.raises(ValueError):
            matrix_from_json({"rows": 2, "cols": 2, "re": [1], "im": [0]})

    def test_non_finite(self):
        with pytest.raises(ValueError):
            as_matrix([[np.nan]])
