"""
Test cases for interaction loading, filtering, splitting and synthetic corpora
"""

import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy import stats

# Add src to path
sys.path.append(str(Path(__file__).parent.parent / "src"))

from core.exceptions import DataParseError, SchemaError, SynthConfigError
from interactions import (
    IdMap, InteractionRecord, SynthConfig, compute_user_statistics, filter_min_interactions,
    fit_standardizer, generate_synthetic_corpus, load_attributes, load_interactions,
    make_split_spec, temporal_split_with_report,
)
from interactions.records import COLUMNS, build_log
from interactions.statistics import statistics_matrix


def make_log(rows, n_behaviors=2, target_behavior=1):
    frame = pd.DataFrame(rows, columns=COLUMNS).astype("int64")
    return build_log(frame, n_behaviors=n_behaviors, target_behavior=target_behavior)


class TestLoader:
    """Test interaction and attribute file parsing"""

    def test_header_and_densify(self, tmp_path):
        """Header rows are skipped and ids are densified in original-id order"""
        path = tmp_path / "log.tsv"
        path.write_text("user item timestamp behavior\n10 500 3 0\n10 700 1 1\n42 500 2 0\n")
        log = load_interactions(str(path))

        assert len(log) == 3
        assert (log.n_users, log.n_items, log.n_behaviors) == (2, 2, 2)
        assert log.id_map.users == {10: 0, 42: 1}
        assert log.id_map.items == {500: 0, 700: 1}
        # sorted by (user, timestamp)
        assert log.frame["timestamp"].tolist() == [1, 3, 2]
        assert IdMap.load(f"{path}.idmap").users == log.id_map.users

    def test_custom_schema(self, tmp_path):
        """Columns can come in another order"""
        path = tmp_path / "log.tsv"
        path.write_text("1 5 0 7\n")
        log = load_interactions(str(path), schema=("user", "timestamp", "behavior", "item"))
        record = next(log.records())
        assert record == InteractionRecord(user_id=0, item_id=0, timestamp=5, behavior=0)

    def test_short_row_reports_line(self, tmp_path):
        """A three-column row fails with its line number"""
        path = tmp_path / "log.tsv"
        path.write_text("1 2 3 0\n1 2 3\n")
        with pytest.raises(DataParseError) as info:
            load_interactions(str(path))
        assert info.value.line == 2

    def test_non_integer_row(self, tmp_path):
        path = tmp_path / "log.tsv"
        path.write_text("1 2 3 0\n1 x 3 0\n")
        with pytest.raises(DataParseError) as info:
            load_interactions(str(path))
        assert info.value.line == 2

    def test_behavior_outside_declared_range(self, tmp_path):
        path = tmp_path / "log.tsv"
        path.write_text("1 2 3 4\n")
        with pytest.raises(SchemaError):
            load_interactions(str(path), n_behaviors=4)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_interactions(str(tmp_path / "absent.tsv"))

    def test_attributes_follow_user_map(self, tmp_path):
        """Attribute rows land on dense ids; unknown users are dropped, absent ones get -1"""
        path = tmp_path / "users.tsv"
        path.write_text("10 1 2\n42 0 3\n99 1 1\n")
        attributes = load_attributes(str(path), n_users=3, user_map={10: 0, 42: 2})
        np.testing.assert_array_equal(attributes, [[1, 2], [-1, -1], [0, 3]])

    def test_attribute_vocab_check(self, tmp_path):
        path = tmp_path / "users.tsv"
        path.write_text("0 5\n")
        with pytest.raises(SchemaError):
            load_attributes(str(path), n_users=1, vocab_sizes=[4])


class TestFiltering:
    """Test iterative minimum-interaction filtering"""

    def test_fixed_point(self):
        """Removing a sparse item can push a user under the threshold"""
        rows = []
        for user in range(3):
            for t, item in enumerate([0, 1]):
                rows.append((user, item, t, 0))
        rows.append((3, 0, 0, 0))
        rows.append((3, 9, 1, 0))  # item 9 appears once
        log = make_log(rows, n_behaviors=1, target_behavior=0)

        filtered = filter_min_interactions(log, 2)
        counts_user = filtered.frame.groupby("user").size()
        counts_item = filtered.frame.groupby("item").size()
        assert (counts_user >= 2).all() and (counts_item >= 2).all()
        assert filtered.n_users == 3
        assert filtered.n_items == 2

    def test_id_map_composes_with_loader(self):
        rows = [(5, 100, 0, 0), (5, 200, 1, 0), (7, 100, 0, 0), (7, 200, 1, 0), (8, 300, 0, 0)]
        log = make_log(rows, n_behaviors=1, target_behavior=0)
        filtered = filter_min_interactions(log, 2)
        assert filtered.id_map.users == {5: 0, 7: 1}
        assert filtered.id_map.items == {100: 0, 200: 1}

    def test_invalid_threshold(self):
        log = make_log([(0, 0, 0, 0)], n_behaviors=1, target_behavior=0)
        with pytest.raises(ValueError):
            filter_min_interactions(log, 0)


class TestSplitting:
    """Test the temporal split and the leave-one-out positions"""

    def test_per_user_ratio(self):
        """Ten records at ratio 0.7 put exactly seven in pretraining"""
        log = make_log([(0, t, t, 0) for t in range(10)], n_behaviors=1, target_behavior=0)
        pretrain, finetune, report = temporal_split_with_report(log, 0.7)
        assert len(pretrain) == 7 and len(finetune) == 3
        assert pretrain.frame["timestamp"].max() < finetune.frame["timestamp"].min()
        assert report.flagged_users == []

    def test_short_user_is_flagged(self):
        """A user left with no finetune records stays in pretraining"""
        rows = [(0, t, t, 0) for t in range(10)] + [(1, 0, 0, 0), (1, 1, 1, 0)]
        log = make_log(rows, n_behaviors=1, target_behavior=0)
        pretrain, finetune, report = temporal_split_with_report(log, 0.6, min_finetune=2)
        assert report.flagged_users == [1]
        assert 1 not in finetune.users()
        assert (pretrain.frame["user"] == 1).sum() == 2

    def test_global_granularity(self):
        rows = [(0, 0, 0, 0), (0, 1, 5, 0), (1, 0, 1, 0), (1, 1, 9, 0)]
        log = make_log(rows, n_behaviors=1, target_behavior=0)
        pretrain, finetune, _ = temporal_split_with_report(log, 0.5, "global", min_finetune=1)
        assert sorted(pretrain.frame["timestamp"]) == [0, 1]
        assert sorted(finetune.frame["timestamp"]) == [5, 9]

    def test_leave_one_out_positions(self):
        """Last target is the test item, the previous target the validation item"""
        rows = [(0, t, t, t % 2) for t in range(6)] + [(1, 0, 0, 0), (1, 1, 1, 1)]
        spec = make_split_spec(make_log(rows), target_behavior=1)
        split = spec.users[0]
        assert (split.valid_position, split.test_position) == (3, 5)
        assert split.train_positions == [0, 1, 2, 4]
        assert spec.eval_users == [0]
        assert spec.excluded_users == 1

    def test_target_outside_range(self):
        with pytest.raises(ValueError):
            make_split_spec(make_log([(0, 0, 0, 0)]), target_behavior=2)


class TestStatistics:
    """Test the per-user statistics vector"""

    def test_three_clicks_one_purchase(self):
        statistics = compute_user_statistics([0, 0, 0, 1], n_behaviors=2)
        assert statistics.counts_per_behavior == [3, 1]
        assert statistics.ratio(0, 1) == pytest.approx(1 / 3)
        assert statistics.ratio(1, 0) == pytest.approx(3.0)
        np.testing.assert_allclose(statistics.to_vector(), [3, 1, 1 / 3, 3, 4])

    def test_missing_source_uses_sentinel(self):
        statistics = compute_user_statistics([1, 1], n_behaviors=2)
        assert statistics.ratio(0, 1) == 0.0

    def test_standardizer_floor(self):
        mean, std = fit_standardizer(np.array([[1.0, 10.0], [1.0, 20.0]]))
        np.testing.assert_allclose(mean, [1.0, 15.0])
        np.testing.assert_allclose(std, [1.0, 5.0])

    def test_statistics_matrix_stacks_vectors(self):
        matrix = statistics_matrix([[0, 0, 0, 1], [1, 1]], n_behaviors=2)
        assert matrix.shape == (2, 5)
        np.testing.assert_allclose(matrix[0], [3, 1, 1 / 3, 3, 4])
        np.testing.assert_allclose(matrix[1], compute_user_statistics([1, 1], 2).to_vector())
        assert statistics_matrix([], n_behaviors=2).shape == (0, 5)


class TestSyntheticCorpus:
    """Test the planted-interest generator"""

    def setup_method(self):
        self.config = SynthConfig(n_users=60, n_items=200, n_behaviors=3, seq_len=30,
                                  n_latent_interests=10, noise_rate=0.3, seed=3)

    def test_deterministic(self):
        first = generate_synthetic_corpus(self.config)
        second = generate_synthetic_corpus(self.config)
        assert first.log.equals(second.log)
        np.testing.assert_array_equal(first.attributes, second.attributes)

    def test_sequence_lengths(self):
        corpus = generate_synthetic_corpus(self.config)
        sizes = corpus.log.frame.groupby("user").size()
        assert (sizes == self.config.seq_len).all()
        assert corpus.log.target_behavior == 2

    def test_noise_rate_is_monotone(self):
        """More click noise never lowers the out-of-cluster click fraction"""
        for seed in range(5):
            fractions = [
                generate_synthetic_corpus(self.config.model_copy(update={"seed": seed, "noise_rate": rate}))
                .out_of_cluster_fraction(0)
                for rate in (0.0, 0.3, 0.6, 1.0)
            ]
            assert fractions == sorted(fractions)
            assert fractions[0] == 0.0

    def test_full_noise_clicks_are_uniform(self):
        """With noise_rate 1 click items pass a chi-square uniformity test"""
        config = SynthConfig(n_users=250, n_items=20, n_behaviors=2, seq_len=40, n_latent_interests=4,
                             noise_rate=1.0, escalation_prob=0.0, seed=11)
        clicks = generate_synthetic_corpus(config).log.frame.query("behavior == 0")["item"]
        assert len(clicks) == 10_000
        observed = np.bincount(clicks.to_numpy(), minlength=config.n_items)
        assert stats.chisquare(observed).pvalue > 0.01

    def test_infeasible_config(self):
        with pytest.raises(SynthConfigError):
            generate_synthetic_corpus(SynthConfig(n_items=5, n_latent_interests=10))
