import numpy as np
import pytest

from dacs.toytask import (ToyTaskConfig, class_templates, gen_toy_dataset,
                          load_dataset, save_dataset)


class TestGeneration:
    def test_noiseless_unit_durations_are_exact_templates(self):
        cfg = ToyTaskConfig(vocab_size=8, d_feat=4, d_min=1, d_max=1, sigma=0.0,
                            min_tokens=3, max_tokens=3, seed=1)
        templates = class_templates(cfg)
        for utt in gen_toy_dataset(cfg, 5):
            assert utt.features.shape == (3, 4)
            for row, tok in zip(utt.features, utt.tokens):
                np.testing.assert_array_equal(row, templates[tok - 3])

    def test_same_seed_is_bit_identical(self):
        cfg = ToyTaskConfig(seed=9)
        a = gen_toy_dataset(cfg, 4, split_seed=2)
        b = gen_toy_dataset(cfg, 4, split_seed=2)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.features, y.features)
            assert x.tokens == y.tokens and x.alignment == y.alignment

    def test_different_split_seeds_share_templates_not_utterances(self):
        cfg = ToyTaskConfig(seed=9)
        a = gen_toy_dataset(cfg, 4, split_seed=0)
        b = gen_toy_dataset(cfg, 4, split_seed=1)
        assert any(x.tokens != y.tokens for x, y in zip(a, b))

    def test_frame_count_bounded_by_durations(self):
        cfg = ToyTaskConfig(d_min=2, d_max=4, min_tokens=3, max_tokens=6, seed=2)
        for utt in gen_toy_dataset(cfg, 10):
            k = len(utt.tokens)
            assert 2 * k <= utt.features.shape[0] <= 4 * k
            assert utt.alignment[-1][1] == utt.features.shape[0]
            # alignment spans tile the utterance
            cursor = 0
            for start, end in utt.alignment:
                assert start == cursor and end > start
                cursor = end

    def test_validation(self):
        with pytest.raises(ValueError):
            ToyTaskConfig(vocab_size=3)
        with pytest.raises(ValueError):
            ToyTaskConfig(d_min=0)
        with pytest.raises(ValueError):
            ToyTaskConfig(d_min=5, d_max=2)
        with pytest.raises(ValueError):
            ToyTaskConfig(sigma=-1.0)
        with pytest.raises(ValueError):
            gen_toy_dataset(ToyTaskConfig(), 0)


class TestCache:
    def test_roundtrip(self, tmp_path):
        cfg = ToyTaskConfig(sigma=0.2, seed=4)
        utts = gen_toy_dataset(cfg, 6)
        path = tmp_path / "data.npz"
        save_dataset(path, utts, cfg)
        back, cfg2 = load_dataset(path)
        assert cfg2 == cfg
        assert len(back) == 6
        for x, y in zip(utts, back):
            np.testing.assert_array_equal(x.features, y.features)
            assert x.tokens == y.tokens
            assert x.alignment == y.alignment
