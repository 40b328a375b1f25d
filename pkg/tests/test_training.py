"""
Test cases for losses, sampling, checkpoints, pretraining and prompt tuning
"""

import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import torch
from scipy import stats

# Add src to path
sys.path.append(str(Path(__file__).parent.parent / "src"))

from core.config import (
    DataConfig, EvalConfig, LoggingConfig, ModelConfig, PretrainConfig, PromptConfig, RunConfig, TuneConfig,
    reference_config,
)
from core.exceptions import CheckpointCorruptError, CheckpointIncompatibleError, SamplingError
from core.seeding import SeedStreams
from interactions import SynthConfig, generate_synthetic_corpus, make_split_spec, temporal_split_with_report
from interactions.records import COLUMNS, build_log
from interactions.statistics import compute_user_statistics
from models.behavior_miner import encode_user
from models.model_manager import ModelManager
from training.batching import UserFeatureStore, build_pretrain_examples, build_tune_cases, collate_histories
from training.budget import param_budget, set_trainable
from training.checkpoint import (
    BACKBONE_KIND, PROMPTS_KIND, Checkpoint, capture_rng_state, load_checkpoint, restore_rng, save_checkpoint,
)
from training.losses import prediction_loss, pretrain_loss, tune_loss
from training.pretrainer import PretrainValidator, run_pretraining
from training.sampling import sample_negative_behavior, sample_negative_item, sample_negative_items
from training.tuner import backbone_hash, restore_prompt_module, run_tuning, vocab_from


def tiny_config(**tune) -> RunConfig:
    return RunConfig(
        seed=3,
        synth=SynthConfig(n_users=40, n_items=100, n_behaviors=2, seq_len=30, n_latent_interests=5,
                          n_attribute_fields=2, attribute_vocab=3, seed=3),
        data=DataConfig(min_interactions=2),
        model=ModelConfig(d=8, n_layers=2, k=2, max_len=16),
        pretrain=PretrainConfig(batch_size=64, max_epochs=2, patience=2, valid_negatives=20, valid_ks=[5],
                                max_batches_per_epoch=4),
        prompt=PromptConfig(n_factors=2, n_tokens=2, prompt_dim=4),
        tune=TuneConfig(**{**dict(batch_size=64, max_epochs=2, patience=2, seq_len=16, valid_negatives=20,
                                  valid_ks=[5]), **tune}),
        eval=EvalConfig(ks=[5, 10], n_neg=20),
        logging=LoggingConfig(file=None),
    )


def vectors(*rows):
    return [torch.tensor([row], dtype=torch.float64) for row in rows]


class TestLosses:
    """Test the softplus ranking objectives on closed-form cases"""

    def test_equal_margins(self):
        u, e = vectors([0.3, -0.2], [0.5, 0.5])
        assert float(pretrain_loss(u, e, e, e, e)) == pytest.approx(2 * math.log(2), abs=1e-9)
        assert float(prediction_loss(u, e, e)) == pytest.approx(math.log(2), abs=1e-9)

    def test_unit_vectors(self):
        u, e_p, e_n, b_p, b_n = vectors([1, 0], [1, 0], [0, 1], [1, 0], [0, 0])
        value = float(pretrain_loss(u, e_p, e_n, b_p, b_n))
        assert value == pytest.approx(2 * math.log(1 + math.exp(-1)), abs=1e-9)
        assert value == pytest.approx(0.626523, abs=1e-6)

    def test_large_item_margin_leaves_behavior_term(self):
        u, e_p, e_n, b = vectors([1, 0], [500, 0], [-500, 0], [0, 1])
        assert float(pretrain_loss(u, e_p, e_n, b, b)) == pytest.approx(math.log(2), abs=1e-9)

    def test_never_negative(self):
        generator = torch.Generator().manual_seed(0)
        tensors = [torch.randn(64, 4, generator=generator) * 10 for _ in range(5)]
        assert float(pretrain_loss(*tensors)) >= 0.0

    def test_tune_loss_without_regularizer(self):
        u, e = vectors([0.3, -0.2], [0.5, 0.5])
        factors = torch.randn(1, 6, 4, dtype=torch.float64)
        prompts = torch.randn(1, 2, 4, dtype=torch.float64)
        value = tune_loss(u, e, e, factors, prompts, lambda_=0.0, n_factors=2)
        assert float(value) == pytest.approx(math.log(2), abs=1e-9)
        assert float(tune_loss(u, e, e)) == pytest.approx(math.log(2), abs=1e-9)

    def test_tune_loss_adds_weighted_term(self):
        u, e = vectors([0.3, -0.2], [0.5, 0.5])
        generator = torch.Generator().manual_seed(1)
        factors = torch.randn(1, 6, 4, generator=generator, dtype=torch.float64)
        prompts = torch.randn(1, 2, 4, generator=generator, dtype=torch.float64)
        small = tune_loss(u, e, e, factors, prompts, lambda_=0.01, n_factors=2)
        large = tune_loss(u, e, e, factors, prompts, lambda_=0.02, n_factors=2)
        base = math.log(2)
        assert float(large) - base == pytest.approx(2 * (float(small) - base), rel=1e-9)


class TestSampling:
    """Test negative item and behavior sampling"""

    def setup_method(self):
        self.rng = np.random.default_rng(0)

    def test_item_avoids_interacted(self):
        interacted = {0, 1, 2, 3, 5}
        draws = {sample_negative_item(interacted, 8, self.rng) for _ in range(200)}
        assert draws == {4, 6, 7}

    def test_dense_history_uses_complement(self):
        assert sample_negative_item(set(range(9)), 10, self.rng) == 9

    def test_all_items_interacted(self):
        with pytest.raises(SamplingError):
            sample_negative_item(set(range(5)), 5, self.rng)

    def test_distinct_negatives(self):
        negatives = sample_negative_items({0, 1}, 20, 10, self.rng)
        assert len(set(negatives.tolist())) == 10
        assert not {0, 1} & set(negatives.tolist())
        with pytest.raises(SamplingError):
            sample_negative_items({0, 1}, 5, 4, self.rng)

    def test_behavior_is_uniform_over_others(self):
        draws = [sample_negative_behavior(2, 4, self.rng) for _ in range(4000)]
        counts = np.bincount(draws, minlength=4)
        assert counts[2] == 0
        assert np.all(np.abs(counts[[0, 1, 3]] / 4000 - 1 / 3) < 0.04)

    def test_behavior_needs_two(self):
        with pytest.raises(SamplingError):
            sample_negative_behavior(0, 1, self.rng)

    @pytest.mark.parametrize("interacted", [{0, 1, 2}, set(range(12))])
    def test_item_draws_are_uniform(self, interacted):
        """Sparse histories take the rejection path, dense ones the complement"""
        draws = [sample_negative_item(interacted, 16, self.rng) for _ in range(6000)]
        counts = np.bincount(draws, minlength=16)
        assert not counts[sorted(interacted)].any()
        eligible = np.setdiff1d(np.arange(16), sorted(interacted))
        assert stats.chisquare(counts[eligible]).pvalue > 1e-3



class TestBudget:
    """Test trainable-parameter accounting"""

    def test_reference_config_ratio(self):
        config = reference_config()
        manager = ModelManager(config)
        backbone = manager.build_backbone(config.synth.n_items, config.synth.n_behaviors,
                                          torch.Generator().manual_seed(0))
        prompt_module = manager.build_prompt_module(backbone, [4, 4], 17, torch.Generator().manual_seed(1))
        set_trainable(backbone, False)
        budget = param_budget(backbone, prompt_module)

        assert budget.trainable == ModelManager.count(prompt_module)
        assert budget.total == ModelManager.count(backbone) + ModelManager.count(prompt_module)
        assert 0 < budget.ratio <= 0.02

    def test_shared_parameters_counted_once(self):
        layer = torch.nn.Linear(3, 2)
        budget = param_budget(layer, layer, None)
        assert budget.total == 8
        assert budget.to_dict() == {"trainable": 8, "total": 8, "ratio": 1.0}

    def test_set_trainable(self):
        layer = set_trainable(torch.nn.Linear(3, 2), False)
        assert param_budget(layer).trainable == 0
        assert param_budget(layer).ratio == 0.0


class TestCheckpoint:
    """Test checkpoint save, load and validation"""

    def setup_method(self):
        self.header = {"d": 8, "n_layers": 2, "k": 2, "n_behaviors": 2}
        self.checkpoint = Checkpoint(
            kind=BACKBONE_KIND, header=self.header, fingerprint="abc",
            state={"w": torch.arange(6, dtype=torch.float32).reshape(2, 3)}, epoch=4, metric=0.5,
        )

    def test_round_trip(self, tmp_path):
        path = save_checkpoint(str(tmp_path / "ckpt" / "backbone.pt"), self.checkpoint)
        loaded = load_checkpoint(path, expected_header=self.header, expected_fingerprint="abc")
        assert loaded.epoch == 4
        assert loaded.metric == 0.5
        assert torch.equal(loaded.state["w"], self.checkpoint.state["w"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(str(tmp_path / "absent.pt"))

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "broken.pt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(str(path))

    def test_incompatible_fields_are_named(self, tmp_path):
        path = save_checkpoint(str(tmp_path / "backbone.pt"), self.checkpoint)
        with pytest.raises(CheckpointIncompatibleError) as info:
            load_checkpoint(path, expected_header={**self.header, "d": 16, "k": 4}, expected_fingerprint="xyz")
        assert info.value.fields == ["d", "k", "fingerprint"]
        assert info.value.exit_code == 1

    def test_kind_mismatch(self, tmp_path):
        path = save_checkpoint(str(tmp_path / "backbone.pt"), self.checkpoint)
        with pytest.raises(CheckpointIncompatibleError) as info:
            load_checkpoint(path, kind=PROMPTS_KIND)
        assert info.value.fields == ["kind"]

    def test_rng_state_resumes_stream(self):
        rng = np.random.default_rng(7)
        rng.random(3)
        state = capture_rng_state(rng)
        expected = rng.random(4)
        restored = restore_rng(state)
        np.testing.assert_array_equal(restored.random(4), expected)

    def test_truncated_file(self, tmp_path):
        path = save_checkpoint(str(tmp_path / "backbone.pt"), self.checkpoint)
        data = Path(path).read_bytes()
        Path(path).write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(path)

    def test_restored_backbone_encodes_identically(self, tmp_path):
        config = tiny_config()
        manager = ModelManager(config)
        model = manager.build_backbone(30, 2, torch.Generator().manual_seed(0))
        checkpoint = Checkpoint(kind=BACKBONE_KIND, header=model.header(),
                                fingerprint=config.backbone_fingerprint(), state=model.state_dict())
        path = save_checkpoint(str(tmp_path / "backbone.pt"), checkpoint)

        loaded = load_checkpoint(path, expected_header=model.header(),
                                 expected_fingerprint=config.backbone_fingerprint())
        restored = manager.restore_backbone(loaded.header, loaded.state)
        triples = [(3, 1, 0), (7, 2, 1), (29, 3, 0)]
        with torch.no_grad():
            assert torch.equal(encode_user(triples, restored), encode_user(triples, model))



class TestPretraining:
    """Test pretraining on a tiny synthetic corpus"""

    def setup_method(self):
        self.config = tiny_config()
        self.corpus = generate_synthetic_corpus(self.config.synth)

    def test_examples_hold_out_last_event(self):
        train, valid = build_pretrain_examples(self.corpus.log, min_ctx=4)
        assert len(valid) == self.corpus.log.n_users
        lengths = {u: len(s) for u, s in train.sequences.items()}
        assert all(t == lengths[u] - 1 for u, t in valid.index)
        assert all(4 <= t < lengths[u] - 1 for u, t in train.index)

    def test_collate_left_pads(self):
        histories = [np.array([[3, 1], [4, 0]]), np.array([[5, 0]])]
        batch = collate_histories(histories, 4)
        assert batch.mask.tolist() == [[False, False, True, True], [False, False, False, True]]
        assert batch.items[0, 2:].tolist() == [3, 4]

    def test_run_records_curve_and_checkpoint(self, tmp_path):
        curve_path = tmp_path / "curve.csv"
        result = run_pretraining(self.corpus.log, self.config, curve_path=str(curve_path))

        assert result.epochs_run == 2
        assert list(result.curve.columns) == ["epoch", "train_loss", "valid_ndcg"]
        assert np.isfinite(result.curve["train_loss"]).all()
        assert curve_path.exists()
        assert 1 <= result.best_epoch <= 2
        assert result.checkpoint.fingerprint == self.config.backbone_fingerprint()
        assert result.checkpoint.header == result.model.header()

    def test_same_seed_same_weights(self):
        first = run_pretraining(self.corpus.log, self.config)
        second = run_pretraining(self.corpus.log, self.config)
        assert backbone_hash(first.model) == backbone_hash(second.model)

    def test_validator_pads_rows_of_heavy_users(self):
        """User 0 has touched 9 of 12 items; user 1 still gets every requested negative"""
        rows = [(0, item, item, 0) for item in range(9)] + [(1, 9, 0, 0), (1, 3, 1, 1), (1, 4, 2, 0)]
        log = build_log(pd.DataFrame(rows, columns=COLUMNS), n_behaviors=2, target_behavior=1,
                        densify_ids=False, n_items=12)
        _, valid = build_pretrain_examples(log, min_ctx=1)
        validator = PretrainValidator(valid, 12, log.user_item_sets(), n_neg=5, ks=[5], seq_len=8,
                                      streams=SeedStreams(0))

        assert validator.candidates.shape == (2, 6)
        heavy, light = validator.candidates
        assert set(heavy[1:4].tolist()) == {9, 10, 11}
        assert heavy[4:].tolist() == [8, 8]
        assert light[0] == 4 and len(set(light.tolist())) == 6

    def test_zero_learning_rate_keeps_weights(self):
        config = self.config.model_copy(update={"pretrain": self.config.pretrain.model_copy(update={"lr": 0.0})})
        log = self.corpus.log
        model = ModelManager(config).build_backbone(log.n_items, log.n_behaviors, torch.Generator().manual_seed(0))
        before = backbone_hash(model)
        result = run_pretraining(log, config, model=model)
        assert result.epochs_run >= 1
        assert backbone_hash(result.model) == before

    @pytest.mark.slow
    def test_memorizes_tiny_corpus(self):
        """Three users with disjoint items; one training prefix each"""
        rows = [(user, user * 6 + t, t, t % 2) for user in range(3) for t in range(6)]
        log = build_log(pd.DataFrame(rows, columns=COLUMNS), n_behaviors=2, target_behavior=1,
                        densify_ids=False, n_items=20)
        config = self.config.model_copy(update={
            "model": ModelConfig(d=16, n_layers=1, k=2, max_len=8),
            "pretrain": PretrainConfig(lr=0.05, batch_size=8, max_epochs=300, patience=300, min_ctx=4,
                                       prefix_mode="final", valid_negatives=5, valid_ks=[5]),
        })
        result = run_pretraining(log, config)
        assert result.epochs_run == 300
        assert result.curve["train_loss"].iloc[-10:].mean() < 0.1



class TestPromptTuning:
    """Test prompt tuning against a frozen backbone"""

    def setup_method(self):
        self.config = tiny_config()
        corpus = generate_synthetic_corpus(self.config.synth)
        pretrain, finetune, _ = temporal_split_with_report(corpus.log, 0.6)
        self.spec = make_split_spec(finetune, 1, pretrain)
        self.attributes = corpus.attributes
        self.backbone = run_pretraining(pretrain, self.config, SeedStreams(self.config.seed)).model

    def test_tune_cases_use_target_behavior(self):
        sequences = self.spec.finetune_log.user_sequences()
        cases = build_tune_cases(self.spec)
        assert cases
        for case in cases:
            assert sequences[case.user][case.target, 2] == 1
            assert len(case.context) > 0 and case.context.max() < case.target

    def test_backbone_stays_frozen(self):
        result = run_tuning(self.backbone, self.spec, self.config, attributes=self.attributes)

        assert result.backbone_unchanged
        assert result.budget.trainable == ModelManager.count(result.prompt_module)
        assert result.report.ks == [5, 10]
        assert 0 < result.report.n_eval_users <= len(self.spec.eval_users)
        assert 0.0 <= result.report.hr(10) <= 1.0
        assert result.checkpoint.extra["backbone_hash"] == result.backbone_hash_after

    def test_full_finetune_trains_everything(self):
        config = tiny_config(full_finetune=True)
        result = run_tuning(self.backbone, self.spec, config, attributes=self.attributes)
        assert result.budget.ratio == 1.0
        assert "full_finetune" in result.flags

    def test_restore_checks_backbone_hash(self, tmp_path):
        result = run_tuning(self.backbone, self.spec, self.config, attributes=self.attributes)
        path = save_checkpoint(str(tmp_path / "prompts.pt"), result.checkpoint)
        vocab = vocab_from(self.attributes)
        n_statistics = result.prompt_module.statistics_generator.mean.numel()

        module = restore_prompt_module(path, self.backbone, self.config, vocab, n_statistics)
        for name, tensor in result.prompt_module.state_dict().items():
            assert torch.equal(module.state_dict()[name], tensor)

        with torch.no_grad():
            self.backbone.tables.item_table[0] += 1.0
        with pytest.raises(CheckpointIncompatibleError) as info:
            restore_prompt_module(path, self.backbone, self.config, vocab, n_statistics)
        assert info.value.fields == ["backbone_hash"]

    def test_restore_rejects_other_tuning_config(self, tmp_path):
        result = run_tuning(self.backbone, self.spec, self.config, attributes=self.attributes)
        path = save_checkpoint(str(tmp_path / "prompts.pt"), result.checkpoint)
        other = tiny_config(lr=0.01)
        with pytest.raises(CheckpointIncompatibleError) as info:
            restore_prompt_module(path, self.backbone, other, vocab_from(self.attributes),
                                  result.prompt_module.statistics_generator.mean.numel())
        assert "fingerprint" in info.value.fields

    def test_feature_store_statistics_use_train_positions(self):
        store = UserFeatureStore(self.spec, self.attributes, seq_len=16)
        sequences = self.spec.finetune_log.user_sequences()
        users = sorted(self.spec.users)
        for user in users[:5]:
            behaviors = sequences[user][self.spec.users[user].train_positions, 2]
            expected = compute_user_statistics(behaviors.tolist(), 2).to_vector()
            np.testing.assert_allclose(store.statistics[user], expected)
        np.testing.assert_allclose(store.mean, store.statistics[users].mean(axis=0))

    def test_zero_epochs_keep_tokens_zero(self):
        config = tiny_config(max_epochs=0)
        result = run_tuning(self.backbone, self.spec, config, attributes=self.attributes)
        assert result.epochs_run == 0
        assert result.curve.empty

        store = UserFeatureStore(self.spec, self.attributes, seq_len=config.tune.seq_len)
        _, features = store.collate(build_tune_cases(self.spec)[:8])
        with torch.no_grad():
            output = result.prompt_module(features, self.backbone.tables)
        assert len(output.tokens) == config.model.n_layers
        for tokens in output.tokens:
            assert int(torch.count_nonzero(tokens)) == 0

    @pytest.mark.slow
    def test_full_finetune_fits_training_cases(self):
        config = tiny_config(full_finetune=True, max_epochs=40, patience=40, lr=0.03)
        result = run_tuning(self.backbone, self.spec, config, attributes=self.attributes)
        losses = result.curve["pred_loss"]
        assert len(losses) == 40
        assert losses.iloc[-5:].mean() < 0.7 * losses.iloc[0]

    def test_no_denoise_bypasses_filters_of_a_filtered_backbone(self, tmp_path):
        config = tiny_config(no_denoise=True)
        assert config.backbone_fingerprint() == self.config.backbone_fingerprint()
        assert config.tuning_fingerprint() != self.config.tuning_fingerprint()

        result = run_tuning(self.backbone, self.spec, config, attributes=self.attributes)
        assert self.backbone.filter_mode == "efl"
        assert not result.backbone.denoising
        assert result.backbone_unchanged
        assert "no_denoise" in result.flags
        assert result.checkpoint.header["no_denoise"]

        path = save_checkpoint(str(tmp_path / "prompts.pt"), result.checkpoint)
        vocab = vocab_from(self.attributes)
        n_statistics = result.prompt_module.statistics_generator.mean.numel()
        restore_prompt_module(path, self.backbone, config, vocab, n_statistics)
        assert not self.backbone.denoising
        with pytest.raises(CheckpointIncompatibleError) as info:
            restore_prompt_module(path, self.backbone, self.config, vocab, n_statistics)
        assert "no_denoise" in info.value.fields
        assert self.backbone.denoising

