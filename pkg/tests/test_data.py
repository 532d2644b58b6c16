"""Generator tests: determinism, the confound construction, containers, oracles."""

import numpy as np
import pytest

from causaltrim.data import (
    QUESTION_LESION,
    QUESTION_LOCATION,
    GeneratorConfig,
    answer_background_mi,
    answer_candidates,
    answer_for,
    background_oracle,
    build_splits,
    config_echo,
    config_from_echo,
    lesion_oracle,
    make_prototypes,
    paired_background,
    paired_background_rate,
    read_dataset,
    sample_instance,
    write_dataset,
)
from causaltrim.errors import ConfigError

SMALL = GeneratorConfig(train_count=600, iid_count=200, ood_count=200, seed=5)


@pytest.fixture(scope="module")
def small_splits():
    return build_splits(SMALL)


class TestConfig:
    def test_defaults_are_valid(self):
        GeneratorConfig().validate()

    def test_bias_above_one_names_key(self):
        with pytest.raises(ConfigError, match="train_bias"):
            GeneratorConfig(train_bias=1.5).validate()

    def test_too_small_dimension_rejected(self):
        with pytest.raises(ConfigError, match="raw_dim"):
            GeneratorConfig(raw_dim=6).validate()

    def test_answer_vocabulary_size(self):
        assert GeneratorConfig(lesions=4).answer_count == 8

    def test_echo_roundtrip(self):
        config = GeneratorConfig(noise_sigma=0.17, train_bias=0.85, seed=99)
        assert config_from_echo(config_echo(config)) == config


class TestPrototypes:
    def test_unit_norm(self):
        bg, les = make_prototypes(GeneratorConfig(), np.random.default_rng(0))
        norms = np.linalg.norm(np.vstack([bg, les]), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_minimal_case(self):
        config = GeneratorConfig(backgrounds=1, lesions=1, raw_dim=8)
        bg, les = make_prototypes(config, np.random.default_rng(1))
        assert abs(float(bg[0] @ les[0])) < 0.5

    def test_pairwise_separation_over_seeds(self):
        config = GeneratorConfig(backgrounds=4, lesions=4, raw_dim=32)
        for seed in range(100):
            bg, les = make_prototypes(config, np.random.default_rng(seed))
            protos = np.vstack([bg, les])
            gram = np.abs(protos @ protos.T)
            np.fill_diagonal(gram, 0.0)
            assert gram.max() < 0.5


class TestSampling:
    def test_maximal_confounding(self):
        config = GeneratorConfig(train_bias=1.0)
        protos = make_prototypes(config, np.random.default_rng(2))
        rng = np.random.default_rng(3)
        for _ in range(200):
            inst = sample_instance(config, protos, "train", rng)
            assert inst.meta.background_id == paired_background(
                inst.meta.lesion_id, config.backgrounds
            )

    def test_independence_at_floor_bias(self):
        config = GeneratorConfig(train_bias=0.25, train_count=10000)
        splits = build_splits(GeneratorConfig(train_bias=0.25, train_count=10000,
                                              iid_count=1, ood_count=1, seed=11))
        rate = paired_background_rate(splits.train, config)
        assert abs(rate - 0.25) < 0.02

    def test_monte_carlo_prior_within_two_percent(self):
        splits = build_splits(GeneratorConfig(train_count=10000, iid_count=1, ood_count=1, seed=8))
        rate = paired_background_rate(splits.train, GeneratorConfig())
        assert abs(rate - 0.9) < 0.02

    def test_ood_split_inverts_prior(self, small_splits):
        assert paired_background_rate(small_splits.ood_test, SMALL) == 0.0

    def test_exactly_one_lesion_region(self):
        config = GeneratorConfig(noise_sigma=0.0)
        protos = make_prototypes(config, np.random.default_rng(4))
        rng = np.random.default_rng(5)
        bg, les = protos
        for _ in range(50):
            inst = sample_instance(config, protos, "train", rng)
            matches = [
                np.allclose(row, les[inst.meta.lesion_id], atol=1e-12)
                for row in inst.features
            ]
            assert sum(matches) == 1
            assert matches[inst.meta.lesion_region_index]

    def test_unknown_split_rejected(self):
        config = GeneratorConfig()
        protos = make_prototypes(config, np.random.default_rng(6))
        with pytest.raises(ConfigError):
            sample_instance(config, protos, "validation", np.random.default_rng(0))


class TestAnswers:
    def test_open_answer_is_lesion_id(self):
        config = GeneratorConfig()
        for lesion in range(config.lesions):
            assert answer_for(QUESTION_LESION, lesion, 0, config) == lesion

    def test_closed_answer_tracks_position(self):
        config = GeneratorConfig()  # regions=9: indices 0..3 upper, 4..8 lower
        assert answer_for(QUESTION_LOCATION, 0, 0, config) == config.lesions
        assert answer_for(QUESTION_LOCATION, 0, 3, config) == config.lesions
        assert answer_for(QUESTION_LOCATION, 0, 4, config) == config.lesions + 1
        assert answer_for(QUESTION_LOCATION, 0, 8, config) == config.lesions + 1

    def test_candidates_partition(self):
        config = GeneratorConfig()
        assert answer_candidates(QUESTION_LESION, config) == [0, 1, 2, 3]
        assert answer_candidates(QUESTION_LOCATION, config) == [4, 5]

    def test_background_never_enters_labels(self):
        """Permuting which visual background each lesion co-occurs with
        changes no answer: labels are a function of (question, lesion, region).
        """
        config = GeneratorConfig(train_count=300, iid_count=1, ood_count=1, seed=21)
        protos = make_prototypes(config, np.random.default_rng(21))
        bg, les = protos
        permuted = (bg[::-1].copy(), les)
        a = [sample_instance(config, protos, "train", np.random.default_rng([21, i]))
             for i in range(300)]
        b = [sample_instance(config, permuted, "train", np.random.default_rng([21, i]))
             for i in range(300)]
        for x, y in zip(a, b):
            assert x.answer == y.answer
            assert x.question_id == y.question_id

    def test_stored_answers_match_causal_function(self, small_splits):
        for inst in small_splits.train + small_splits.iid_test + small_splits.ood_test:
            expected = answer_for(
                inst.question_id, inst.meta.lesion_id, inst.meta.lesion_region_index, SMALL
            )
            assert inst.answer == expected


class TestBuildSplits:
    def test_deterministic(self):
        a = build_splits(SMALL)
        b = build_splits(SMALL)
        for inst_a, inst_b in zip(a.train, b.train):
            np.testing.assert_array_equal(inst_a.features, inst_b.features)
            assert inst_a.answer == inst_b.answer

    def test_sizes_match_config(self, small_splits):
        assert len(small_splits.train) == SMALL.train_count
        assert len(small_splits.iid_test) == SMALL.iid_count
        assert len(small_splits.ood_test) == SMALL.ood_count

    def test_mutual_information_drops_on_ood(self, small_splits):
        mi_iid = answer_background_mi(small_splits.iid_test, SMALL)
        mi_ood = answer_background_mi(small_splits.ood_test, SMALL)
        assert mi_iid > mi_ood


class TestOracles:
    def test_background_oracle_shortcut_profile(self):
        splits = build_splits(GeneratorConfig(seed=33))
        config = splits.config
        iid = background_oracle(splits.train, splits.iid_test, config)
        ood = background_oracle(splits.train, splits.ood_test, config)
        assert iid.open_style >= 85.0
        assert ood.open_style <= 30.0

    def test_lesion_oracle_is_perfect_everywhere(self, small_splits):
        for split in ("train", "iid_test", "ood_test"):
            report = lesion_oracle(small_splits.by_name(split), SMALL)
            assert report.overall == 100.0


class TestContainer:
    def test_roundtrip(self, tmp_path, small_splits):
        path = tmp_path / "split.lctd"
        write_dataset(path, small_splits.iid_test, SMALL)
        instances, config = read_dataset(path)
        assert config == SMALL
        assert len(instances) == len(small_splits.iid_test)
        for a, b in zip(instances, small_splits.iid_test):
            np.testing.assert_array_equal(a.features, b.features)
            assert (a.question_id, a.answer) == (b.question_id, b.answer)
            assert a.meta == b.meta

    def test_write_read_write_bitwise_stable(self, tmp_path, small_splits):
        first = tmp_path / "a.lctd"
        second = tmp_path / "b.lctd"
        write_dataset(first, small_splits.ood_test, SMALL)
        instances, config = read_dataset(first)
        write_dataset(second, instances, config)
        assert first.read_bytes() == second.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.lctd"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        from causaltrim.errors import DataError

        with pytest.raises(DataError):
            read_dataset(path)
