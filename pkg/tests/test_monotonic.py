"""Training-mode weight functions against independent brute-force oracles."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dacs import autodiff as ad
from dacs.mechattn import dacs_weights, hma_alpha, mocha_beta, smocha_alpha
from oracles import (dacs_stepwise_scan, hma_bernoulli_enumeration,
                     mocha_double_sum, smocha_product_loop)
from dacs.monotonic import (context_from_weights, dacs_keep_mask,
                            dacs_train_weights, hma_expected_matrix,
                            hma_expected_weights, mocha_expected_weights,
                            mta_weights, smocha_weights)

RNG = np.random.default_rng(99)


# -- hma ------------------------------------------------------------------------

class TestHMA:
    def test_first_step_reduces_to_product_form(self):
        alpha = hma_expected_weights([0.5, 0.5], [1.0, 0.0])
        np.testing.assert_allclose(alpha, [0.5, 0.25])

    def test_all_ones_returns_alpha_prev(self):
        aprev = np.array([0.3, 0.2, 0.5, 0.0])
        np.testing.assert_array_equal(hma_expected_weights(np.ones(4), aprev), aprev)

    def test_matches_bernoulli_path_enumeration(self):
        for trial in range(25):
            rng = np.random.default_rng(1000 + trial)
            T = int(rng.integers(2, 9))
            p = rng.uniform(0.05, 0.95, size=T)
            aprev = np.zeros(T)
            aprev[0] = 1.0
            for _ in range(int(rng.integers(1, 4))):  # L <= 3 chained steps
                expected = hma_bernoulli_enumeration(p, aprev)
                got = hma_expected_weights(p, aprev)
                np.testing.assert_allclose(got, expected, atol=1e-10)
                aprev = got
                p = rng.uniform(0.05, 0.95, size=T)

    def test_rejects_negative_alpha_prev(self):
        with pytest.raises(ValueError):
            hma_expected_weights([0.5, 0.5], [-0.1, 1.0])

    @given(st.integers(0, 2 ** 16))
    @settings(max_examples=60)
    def test_mass_never_grows(self, seed):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(1, 10))
        P = rng.uniform(0, 1, size=(4, T))
        alpha = hma_expected_matrix(P)
        prev = 1.0
        for i in range(4):
            cur = alpha[i].sum()
            assert cur <= prev + 1e-9
            prev = cur

    def test_tape_twin_matches_numpy(self):
        P = RNG.uniform(0.05, 0.95, size=(3, 7))
        np.testing.assert_allclose(hma_alpha(ad.Tensor(P)).value,
                                   hma_expected_matrix(P), atol=1e-14)


# -- mocha ------------------------------------------------------------------------

class TestMoChA:
    def test_window_one_is_identity(self):
        alpha = RNG.uniform(0, 1, size=(2, 5))
        U = RNG.normal(size=(2, 5))
        np.testing.assert_allclose(mocha_expected_weights(alpha, U, 1), alpha,
                                   atol=1e-12)

    def test_one_hot_uniform_energies_split_window(self):
        # trigger mass at index 3 (0-based), w=2: the window covers the
        # trigger frame and the one before it, half and half.
        alpha = np.zeros((1, 5))
        alpha[0, 3] = 1.0
        beta = mocha_expected_weights(alpha, np.zeros((1, 5)), 2)
        np.testing.assert_allclose(beta[0], [0, 0, 0.5, 0.5, 0], atol=1e-12)

    def test_matches_literal_double_sum(self):
        for trial in range(20):
            rng = np.random.default_rng(2000 + trial)
            L, T = 2, 7
            alpha = rng.uniform(0, 1, size=(L, T))
            alpha /= alpha.sum(axis=1, keepdims=True) * rng.uniform(1, 3)
            U = rng.normal(size=(L, T))
            w = int(rng.integers(1, 5))
            np.testing.assert_allclose(mocha_expected_weights(alpha, U, w),
                                       mocha_double_sum(alpha, U, w), atol=1e-10)

    def test_rejects_bad_window(self):
        with pytest.raises(ValueError):
            mocha_expected_weights(np.ones((1, 3)), np.ones((1, 3)), 0)

    @given(st.integers(0, 2 ** 16), st.integers(1, 6))
    @settings(max_examples=60)
    def test_conserves_row_mass(self, seed, w):
        rng = np.random.default_rng(seed)
        L, T = 3, int(rng.integers(1, 9))
        alpha = rng.uniform(0, 1, size=(L, T))
        U = rng.normal(size=(L, T)) * 2
        beta = mocha_expected_weights(alpha, U, w)
        np.testing.assert_allclose(beta.sum(axis=1), alpha.sum(axis=1), atol=1e-8)

    def test_tape_twin_matches_numpy(self):
        alpha = RNG.uniform(0, 1, size=(2, 6))
        U = RNG.normal(size=(2, 6))
        got = mocha_beta(ad.Tensor(alpha), ad.Tensor(U), 3).value
        np.testing.assert_allclose(got, mocha_expected_weights(alpha, U, 3),
                                   atol=1e-12)


# -- smocha / mta ------------------------------------------------------------------

class TestSMoChAAndMTA:
    def test_geometric_halving(self):
        np.testing.assert_allclose(smocha_weights(np.array([[0.5, 0.5, 0.5]]))[0],
                                   [0.5, 0.25, 0.125])

    def test_all_ones_puts_mass_on_first(self):
        got = smocha_weights(np.ones((1, 4)))[0]
        np.testing.assert_array_equal(got, [1, 0, 0, 0])

    @given(st.integers(0, 2 ** 16))
    @settings(max_examples=60)
    def test_matches_product_loop(self, seed):
        rng = np.random.default_rng(seed)
        P = rng.uniform(0, 1, size=(2, int(rng.integers(1, 9))))
        np.testing.assert_allclose(smocha_weights(P), smocha_product_loop(P),
                                   atol=1e-12)

    def test_mta_is_same_computation(self):
        P = RNG.uniform(0, 1, size=(3, 6))
        np.testing.assert_array_equal(mta_weights(P), smocha_weights(P))

    def test_tape_twin_matches_numpy(self):
        P = RNG.uniform(0.05, 0.95, size=(3, 6))
        np.testing.assert_allclose(smocha_alpha(ad.Tensor(P)).value,
                                   smocha_weights(P), atol=1e-14)


# -- dacs ---------------------------------------------------------------------------

class TestDACSTrainWeights:
    def test_keeps_prefix_until_threshold_crossing(self):
        P = np.array([[0.5, 0.6, 0.7, 0.2]])
        np.testing.assert_array_equal(dacs_keep_mask(P), [[1, 1, 0, 0]])
        np.testing.assert_allclose(dacs_train_weights(P), [[0.5, 0.6, 0, 0]])

    def test_threshold_never_crossed_keeps_everything(self):
        P = np.full((1, 6), 1e-4)
        np.testing.assert_array_equal(dacs_keep_mask(P), np.ones((1, 6)))
        np.testing.assert_allclose(dacs_train_weights(P), P)

    def test_near_one_first_step_keeps_two(self):
        P = np.array([[1.0 - 1e-9, 0.9, 0.9, 0.9]])
        np.testing.assert_array_equal(dacs_keep_mask(P), [[1, 1, 0, 0]])

    def test_exact_boundary_is_not_a_crossing(self):
        # running sum equal to 1 does not halt; the next position is kept
        P = np.array([[0.5, 0.5, 0.3, 0.3]])
        np.testing.assert_array_equal(dacs_keep_mask(P), [[1, 1, 1, 0]])

    @given(st.integers(0, 2 ** 16))
    @settings(max_examples=80)
    def test_kept_set_is_contiguous_prefix_with_bracketing_sums(self, seed):
        rng = np.random.default_rng(seed)
        L, T = int(rng.integers(1, 5)), int(rng.integers(1, 12))
        P = rng.uniform(0, 0.9, size=(L, T))
        mask = dacs_keep_mask(P)
        for i in range(L):
            kept = np.nonzero(mask[i])[0]
            n = kept.size
            assert n >= 1 and (kept == np.arange(n)).all()
            if n < T:  # threshold was crossed at position n-1 (0-based)
                assert P[i, :n - 1].sum() <= 1.0 < P[i, :n].sum()

    @given(st.integers(0, 2 ** 16))
    @settings(max_examples=80)
    def test_matches_stepwise_scan_bit_for_bit(self, seed):
        rng = np.random.default_rng(seed)
        P = rng.uniform(0, 1, size=(3, int(rng.integers(1, 12))))
        np.testing.assert_array_equal(dacs_train_weights(P), dacs_stepwise_scan(P))

    def test_tape_twin_matches_numpy(self):
        P = RNG.uniform(0, 1, size=(3, 8))
        E = np.log(P / (1 - P))  # logit, so sigmoid(E) == P
        np.testing.assert_allclose(dacs_weights(ad.sigmoid(ad.Tensor(E))).value,
                                    dacs_train_weights(P), atol=1e-12)


# -- contexts --------------------------------------------------------------------

class TestContextFromWeights:
    def test_one_hot_selects_value_row(self):
        V = RNG.normal(size=(5, 3))
        W = np.zeros((1, 5))
        W[0, 2] = 1.0
        np.testing.assert_array_equal(context_from_weights(W, V)[0], V[2])

    def test_zero_weights_give_zero_vector(self):
        V = RNG.normal(size=(4, 3))
        assert (context_from_weights(np.zeros((2, 4)), V) == 0).all()

    def test_matches_naive_loop(self):
        W = RNG.uniform(0, 1, size=(3, 6))
        V = RNG.normal(size=(6, 4))
        naive = np.zeros((3, 4))
        for i in range(3):
            for j in range(6):
                naive[i] += W[i, j] * V[j]
        np.testing.assert_allclose(context_from_weights(W, V), naive, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            context_from_weights(np.ones((2, 3)), np.ones((4, 2)))
