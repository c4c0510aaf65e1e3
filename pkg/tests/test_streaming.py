"""Step-wise inference rules: scans, triggers, synchronization, bounds."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dacs.autodiff import stable_sigmoid
from dacs.monotonic import (context_from_weights, dacs_train_weights,
                            mta_weights, smocha_weights)
from dacs.streaming import (MechanismConfig, StepLog, dacs_head_scan, hma_step,
                            mocha_step, mta_step, sync_step)

RNG = np.random.default_rng(42)


def keys_for_probs(p, d=4, seed=0):
    """Build q, K so that sigmoid(K @ q / sqrt(d)) equals p exactly enough.

    q is a unit-ish vector; each key row is the logit times sqrt(d) along q.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.zeros(d)
    q[0] = 1.0
    logits = np.log(p / (1.0 - p))
    K = np.zeros((p.size, d))
    K[:, 0] = logits * np.sqrt(d)
    rng = np.random.default_rng(seed)
    K[:, 1:] = rng.normal(size=(p.size, d - 1))  # orthogonal noise, ignored by q
    return q, K


class TestDacsHeadScan:
    def test_constant_point_six_halts_at_two(self):
        q, K = keys_for_probs(np.full(10, 0.6))
        V = RNG.normal(size=(10, 4))
        c, halt, steps = dacs_head_scan(q, K, V, 0, 10)
        assert halt == steps == 2
        np.testing.assert_allclose(c, 0.6 * V[0] + 0.6 * V[1], atol=1e-9)

    def test_weak_probabilities_truncate_at_lookahead(self):
        q, K = keys_for_probs(np.full(12, 0.05))
        V = RNG.normal(size=(12, 4))
        c, halt, steps = dacs_head_scan(q, K, V, 0, 5)
        assert halt == steps == 5
        np.testing.assert_allclose(c, 0.05 * V[:5].sum(axis=0), atol=1e-9)

    def test_strict_inequality_threshold(self):
        q, K = keys_for_probs(np.array([0.9, 0.2, 0.5, 0.5]))
        V = np.eye(4)
        _, halt, _ = dacs_head_scan(q, K, V, 0, math.inf)
        assert halt == 2  # 0.9 + 0.2 = 1.1 > 1

    def test_empty_input_raises(self):
        with pytest.raises(ValueError):
            dacs_head_scan(np.zeros(2), np.zeros((0, 2)), np.zeros((0, 2)), 0)

    def test_bound_is_min_of_lookahead_and_length(self):
        q, K = keys_for_probs(np.full(6, 0.01))
        V = RNG.normal(size=(6, 4))
        _, halt, steps = dacs_head_scan(q, K, V, 4, 8)
        assert halt == steps == 6  # min(4+8, 6)

    @given(st.integers(0, 2 ** 16), st.integers(1, 12))
    @settings(max_examples=80, deadline=None)
    def test_matches_matrix_form_exactly_with_unbounded_lookahead(self, seed, T):
        """Step/matrix consistency at the weight level: same sums, same order."""
        rng = np.random.default_rng(seed)
        p = rng.uniform(0, 1, size=T)
        q, K = keys_for_probs(np.clip(p, 1e-6, 1 - 1e-6), seed=seed)
        V = rng.normal(size=(T, 3))
        c, halt, _ = dacs_head_scan(q, K, V, 0, math.inf)
        P = stable_sigmoid((K @ q / np.sqrt(q.size)))[None, :]
        W = dacs_train_weights(P)
        kept = np.nonzero(W[0])[0]
        expected_halt = int(kept[-1]) + 1 if kept.size else 1
        assert halt == expected_halt or (not kept.size)
        np.testing.assert_array_equal(
            np.pad(stable_sigmoid(K[:halt] @ q / np.sqrt(q.size)), (0, T - halt)),
            W[0])
        np.testing.assert_allclose(c, context_from_weights(W, V)[0], atol=1e-12)


class TestSyncStep:
    def test_takes_maximum(self):
        assert sync_step([3, 7, 5], 2) == 7

    def test_stationary_when_heads_do_not_advance(self):
        assert sync_step([4, 4], 4) == 4

    def test_never_goes_backwards(self):
        assert sync_step([4], 9) == 9

    def test_requires_results(self):
        with pytest.raises(ValueError):
            sync_step([], 0)


class TestHmaStep:
    def test_first_crossing_selects_value(self):
        q, K = keys_for_probs(np.array([0.4, 0.6, 0.9]))
        V = RNG.normal(size=(3, 4))
        c, halt, steps, w = hma_step(q, K, V, 0)
        assert halt == 2 and steps == 2
        np.testing.assert_array_equal(c, V[1])
        np.testing.assert_array_equal(w, [0, 1, 0])

    def test_no_trigger_returns_zero_context(self):
        q, K = keys_for_probs(np.full(5, 0.3))
        V = RNG.normal(size=(5, 4))
        c, halt, steps, w = hma_step(q, K, V, 0)
        assert halt == 5 and steps == 5
        assert (c == 0).all() and (w == 0).all()

    def test_exhausted_input_is_immediate_fallback(self):
        q, K = keys_for_probs(np.full(3, 0.9))
        V = RNG.normal(size=(3, 4))
        c, halt, steps, _ = hma_step(q, K, V, 3)
        assert halt == 3 and steps == 0 and (c == 0).all()

    def test_scan_starts_after_t_prev(self):
        q, K = keys_for_probs(np.array([0.9, 0.2, 0.7]))
        V = RNG.normal(size=(3, 4))
        _, halt, _, _ = hma_step(q, K, V, 1)
        assert halt == 3  # position 1's p=0.9 is behind the cursor

    @given(st.integers(0, 2 ** 16))
    @settings(max_examples=60, deadline=None)
    def test_trigger_is_first_threshold_crossing(self, seed):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(1, 10))
        p = rng.uniform(0, 1, size=T)
        t_prev = int(rng.integers(0, T + 1))
        q, K = keys_for_probs(np.clip(p, 1e-9, 1 - 1e-9), seed=seed)
        V = rng.normal(size=(T, 4))
        _, halt, _, _ = hma_step(q, K, V, t_prev)
        probs = stable_sigmoid(K @ q / 2.0)
        crossings = [j for j in range(t_prev, T) if probs[j] > 0.5]
        assert halt == (crossings[0] + 1 if crossings else T)


class TestMochaStep:
    def test_window_one_equals_hard_step(self):
        q, K = keys_for_probs(np.array([0.2, 0.8, 0.5]))
        V = RNG.normal(size=(3, 4))
        c1, h1, s1, _ = mocha_step(q, K, V, 0, 1)
        c2, h2, s2, _ = hma_step(q, K, V, 0)
        np.testing.assert_allclose(c1, c2, atol=1e-12)
        assert h1 == h2
        assert s1 == s2 + 1  # second pass adds its single-frame window

    def test_uniform_energies_average_window(self):
        # constant p=0.8 with the cursor at 4: trigger fires at position 5 and
        # the 3-frame window (positions 3..5) has uniform chunk energies
        q, K = keys_for_probs(np.full(6, 0.8))
        K[:, 1:] = 0.0  # drop the noise columns so window energies are equal
        V = RNG.normal(size=(6, 4))
        c, halt, steps, w = mocha_step(q, K, V, 4, 3)
        assert halt == 5
        np.testing.assert_allclose(c, V[2:5].mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(w[2:5], [1 / 3] * 3, atol=1e-12)
        assert steps == 1 + 3  # first pass inspected one frame, window adds 3

    def test_matches_softmax_over_window_oracle(self):
        for trial in range(20):
            rng = np.random.default_rng(3000 + trial)
            T = int(rng.integers(2, 10))
            w = int(rng.integers(1, 5))
            p = rng.uniform(0, 1, size=T)
            q, K = keys_for_probs(np.clip(p, 1e-9, 1 - 1e-9), seed=trial)
            V = rng.normal(size=(T, 3))
            c, halt, _, _ = mocha_step(q, K, V, 0, w)
            probs = stable_sigmoid(K @ q / 2.0)
            hits = np.nonzero(probs > 0.5)[0]
            if not hits.size:
                assert (c == 0).all()
                continue
            j = int(hits[0]) + 1
            lo = max(0, j - w)
            u = K[lo:j] @ q / 2.0
            soft = np.exp(u) / np.exp(u).sum()
            np.testing.assert_allclose(c, soft @ V[lo:j], atol=1e-10)


class TestMtaStep:
    def test_trigger_at_first_frame(self):
        q, K = keys_for_probs(np.array([0.6, 0.4]))
        V = RNG.normal(size=(2, 4))
        c, halt, steps, w = mta_step(q, K, V, 0)
        assert halt == 1 and steps == 1
        np.testing.assert_allclose(c, 0.6 * V[0], atol=1e-9)

    def test_prefix_weights_follow_product_form(self):
        q, K = keys_for_probs(np.array([0.5 - 1e-6, 0.6]))
        V = np.eye(2)
        c, halt, steps, w = mta_step(q, K, V, 0)
        assert halt == 2
        np.testing.assert_allclose(w, [0.5, 0.3], atol=1e-5)

    def test_no_trigger_covers_full_sequence(self):
        p = np.array([0.3, 0.2, 0.4])
        q, K = keys_for_probs(p)
        V = RNG.normal(size=(3, 4))
        c, halt, steps, w = mta_step(q, K, V, 0)
        assert halt == 3 and steps == 3
        probs = stable_sigmoid(K @ q / 2.0)
        expected = mta_weights(probs[None, :])[0]
        np.testing.assert_allclose(w, expected, atol=1e-12)
        np.testing.assert_allclose(c, expected @ V, atol=1e-12)

    def test_weights_match_training_form_over_prefix(self):
        rng = np.random.default_rng(5)
        p = rng.uniform(0, 1, size=8)
        q, K = keys_for_probs(np.clip(p, 1e-9, 1 - 1e-9))
        V = rng.normal(size=(8, 3))
        _, halt, _, w = mta_step(q, K, V, 2)
        probs = stable_sigmoid(K @ q / 2.0)
        expected = smocha_weights(probs[None, :halt])[0]
        np.testing.assert_allclose(w[:halt], expected, atol=1e-12)
        assert (w[halt:] == 0).all()


class TestMechanismConfig:
    def test_validates_kind(self):
        with pytest.raises(ValueError):
            MechanismConfig("softmax")

    def test_validates_lookahead(self):
        with pytest.raises(ValueError):
            MechanismConfig("dacs", max_lookahead=0)
        MechanismConfig("dacs", max_lookahead=math.inf)

    def test_roundtrips_through_dict(self):
        for mech in (MechanismConfig("dacs", max_lookahead=8),
                     MechanismConfig("mocha", window=3),
                     MechanismConfig("mta")):
            assert MechanismConfig.from_dict(mech.to_dict()) == mech


class TestStepLog:
    def test_full_attention_log_counts_everything(self):
        log = StepLog.full_attention(3, 2, 2, 10)
        assert log.total_steps() == 3 * 2 * 2 * 10
        assert log.n_output_steps() == 3
        assert log.n_layers() == log.n_heads() == 2
