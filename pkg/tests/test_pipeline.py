"""
Test cases for the pipeline components
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add src to path
sys.path.append(str(Path(__file__).parent.parent / "src"))

from core.config import (
    BenchConfig, DataConfig, EvalConfig, ExperimentsConfig, LoggingConfig, ModelConfig, PathsConfig,
    PretrainConfig, PromptConfig, RunConfig, TuneConfig,
)
from interactions import IdMap, SynthConfig, generate_synthetic_corpus
from pipeline.benchmark import census_table, halving_ratios, runtime_table
import typer

from pipeline.cli import app, main
from pipeline.config import save_config
from pipeline.diagnostics import gradient_check_table
from pipeline.experiments import efficiency_comparison, paired_test, run_ablation, variant_config
from pipeline.exports import mean_pairwise_cosine
from pipeline.pipeline_manager import PipelineManager
from pipeline.stages import prepare_data, pretrain_stage
from training.tuner import backbone_hash


def tiny_config(root: Path, **tune) -> RunConfig:
    return RunConfig(
        seed=5,
        synth=SynthConfig(n_users=40, n_items=100, n_behaviors=2, seq_len=30, n_latent_interests=5,
                          n_attribute_fields=2, attribute_vocab=3, seed=5),
        data=DataConfig(min_interactions=2),
        model=ModelConfig(d=8, n_layers=2, k=2, max_len=16),
        pretrain=PretrainConfig(batch_size=64, max_epochs=2, patience=2, valid_negatives=20, valid_ks=[5],
                                max_batches_per_epoch=4),
        prompt=PromptConfig(n_factors=2, n_tokens=2, prompt_dim=4),
        tune=TuneConfig(batch_size=64, max_epochs=2, patience=2, seq_len=16, valid_negatives=20,
                        valid_ks=[5], **tune),
        eval=EvalConfig(ks=[5, 10], n_neg=20),
        experiments=ExperimentsConfig(seeds=[1, 2], variants=["static_prompt"]),
        paths=PathsConfig(runs_dir=str(root / "runs")),
        logging=LoggingConfig(file=None),
    )


class TestPipelineManager:
    """Test the stages behind each command"""

    def test_pipeline_status(self, tmp_path):
        """Test pipeline status reporting"""
        pipeline = PipelineManager(tiny_config(tmp_path))
        status = pipeline.get_pipeline_status()

        assert status["fingerprint"] == pipeline.config.fingerprint()
        assert status["run_dir"] is None
        assert status["model_loaded"] is False
        assert status["data_loaded"] is False

    def test_full_run(self, tmp_path):
        """synth -> pretrain -> tune -> eval -> export on one run directory"""
        config = tiny_config(tmp_path)
        data_dir = tmp_path / "data"

        synth = PipelineManager(config).synthesize(str(data_dir))
        assert synth["success"]
        assert synth["users"] == 40
        assert 0.0 <= synth["click_noise_fraction"] <= 1.0
        assert (data_dir / "interactions.tsv").exists() and (data_dir / "users.tsv").exists()

        pretrained = PipelineManager(config).pretrain(str(data_dir))
        assert pretrained["success"], pretrained
        run = Path(pretrained["run_dir"])
        assert run.name.startswith(config.fingerprint()[:12])
        for name in ("config.yaml", "interactions.tsv", "users.tsv", "split_report.yaml", "backbone.pt",
                     "curve_pretrain.csv", "original_ids.idmap"):
            assert (run / name).exists(), name
        assert len(IdMap.load(str(run / "original_ids.idmap")).users) == 40

        tuned = PipelineManager(config).tune(str(run))
        assert tuned["success"], tuned
        assert tuned["backbone_unchanged"]
        assert 0 < tuned["budget"]["ratio"] < 1
        assert (run / "prompts.pt").exists()
        assert (run / "eval_report.json").exists()

        evaluated = PipelineManager(config).evaluate(str(run))
        assert evaluated["success"], evaluated
        assert evaluated["prompted"]
        assert evaluated["report"].ks == [5, 10]
        assert evaluated["report"].metrics == tuned["report"].metrics

        exported = PipelineManager(config).export_prompts(str(run))
        assert exported["success"], exported
        assert set(exported["paths"]) == {"prompts", "factors", "tokens"}
        assert all(Path(path).exists() for path in exported["paths"].values())

        other = tiny_config(tmp_path)
        other.model.d = 16
        mismatched = PipelineManager(other).evaluate(str(run))
        assert not mismatched["success"]
        assert mismatched["type"] == "CheckpointIncompatibleError"
        assert mismatched["exit_code"] == 1

    def test_tune_without_denoising_on_a_filtered_backbone(self, tmp_path):
        """The bypass variant loads a normally pretrained backbone and records itself in the prompts"""
        config = tiny_config(tmp_path)
        data_dir = str(tmp_path / "data")
        assert PipelineManager(config).synthesize(data_dir)["success"]
        pretrained = PipelineManager(config).pretrain(data_dir)
        assert pretrained["success"], pretrained
        run = pretrained["run_dir"]

        bypass = tiny_config(tmp_path, no_denoise=True)
        assert bypass.model.filter_mode == "efl"
        tuned = PipelineManager(bypass).tune(run)
        assert tuned["success"], tuned
        assert tuned["flags"] == ["no_denoise"]
        assert tuned["backbone_unchanged"]

        evaluated = PipelineManager(bypass).evaluate(run)
        assert evaluated["success"], evaluated
        assert evaluated["prompted"]
        assert evaluated["report"].metrics == tuned["report"].metrics

        filtered = PipelineManager(config).evaluate(run)
        assert not filtered["success"]
        assert filtered["type"] == "CheckpointIncompatibleError"

    def test_same_seed_same_report_bytes(self, tmp_path):
        reports = []
        for name in ("first", "second"):
            root = tmp_path / name
            config = tiny_config(root)
            data_dir = str(root / "data")
            assert PipelineManager(config).synthesize(data_dir)["success"]
            pretrained = PipelineManager(config).pretrain(data_dir)
            assert pretrained["success"], pretrained
            assert PipelineManager(config).tune(pretrained["run_dir"])["success"]
            reports.append((Path(pretrained["run_dir"]) / "eval_report.json").read_bytes())
        assert reports[0] == reports[1]

    def test_bench_adds_efficiency_table_for_a_run(self, tmp_path):
        config = tiny_config(tmp_path)
        config.bench = BenchConfig(d=8, k=2, lengths=[16], reps=1, census_lengths=[16])
        data_dir = str(tmp_path / "data")
        assert PipelineManager(config).synthesize(data_dir)["success"]
        run = PipelineManager(config).pretrain(data_dir)["run_dir"]
        backbone_bytes = (Path(run) / "backbone.pt").read_bytes()

        out = tmp_path / "bench"
        result = PipelineManager(config).bench(str(out), run_dir=run, epochs=1)
        assert result["success"], result
        table = result["tables"]["efficiency"]
        assert table["mode"].tolist() == ["prompt_tuning", "full_finetune"]
        assert bool(table.loc[0, "backbone_unchanged"])
        assert (out / "bench_efficiency.csv").exists()
        assert (Path(run) / "backbone.pt").read_bytes() == backbone_bytes

        without_run = PipelineManager(config).bench()
        assert "efficiency" not in without_run["tables"]

    def test_eval_without_checkpoint(self, tmp_path):

        run = tmp_path / "empty_run"
        run.mkdir()
        result = PipelineManager(tiny_config(tmp_path)).evaluate(str(run))
        assert not result["success"]
        assert result["exit_code"] == 1
        assert result["stage"] == "eval"

    def test_missing_data_dir(self, tmp_path):
        result = PipelineManager(tiny_config(tmp_path)).pretrain(str(tmp_path / "nowhere"))
        assert not result["success"]
        assert result["exit_code"] == 1


class TestCLI:
    """Test the command-line entry point and its exit codes"""

    def write_config(self, tmp_path) -> str:
        return save_config(tiny_config(tmp_path), str(tmp_path / "config.yaml"))

    def test_synth_pretrain_tune_eval(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        config = self.write_config(tmp_path)
        data = str(tmp_path / "data")

        assert main(["synth", "--config", config, "--out", data]) == 0
        assert main(["pretrain", "--config", config, "--data", data]) == 0
        runs = list((tmp_path / "runs").iterdir())
        assert len(runs) == 1
        run = str(runs[0])
        assert (runs[0] / "run.log").exists()

        assert main(["tune", "--run", run]) == 0
        assert main(["eval", "--run", run, "--k", "5"]) == 0
        assert main(["export-prompts", "--run", run]) == 0
        assert (runs[0] / "prompts" / "tokens.csv").exists()

    def test_tune_no_ds_on_a_pretrained_run(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        config = self.write_config(tmp_path)
        data = str(tmp_path / "data")
        assert main(["synth", "--config", config, "--out", data]) == 0
        assert main(["pretrain", "--config", config, "--data", data]) == 0
        run = str(next((tmp_path / "runs").iterdir()))

        assert main(["tune", "--run", run, "--no-ds"]) == 0
        assert main(["eval", "--run", run]) == 0

    def test_unknown_key_exits_one(self, tmp_path, monkeypatch):

        monkeypatch.chdir(tmp_path)
        config = self.write_config(tmp_path)
        assert main(["synth", "--config", config, "--set", "modle.d=8"]) == 1

    def test_bad_k_exits_one(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        config = self.write_config(tmp_path)
        assert main(["eval", "--config", config, "--run", str(tmp_path), "--k", "ten"]) == 1

    def test_missing_run_exits_one(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        config = self.write_config(tmp_path)
        assert main(["eval", "--config", config, "--run", str(tmp_path / "absent")]) == 1

    def test_unknown_command_exits_one(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(["frobnicate"]) == 1

    def test_option_help_texts(self):
        commands = typer.main.get_command(app).commands
        options = lambda name: {p.name: p.help for p in commands[name].params}
        assert options("eval")["cold_start"] == "Only users with at most two target-behavior interactions"
        assert options("tune")["no_ds"] == "Bypass the backbone filters while tuning"
        assert "run" in options("bench") and "epochs" in options("bench")


class TestDiagnostics:
    """Test the finite-difference gradient table"""

    def test_every_target_passes(self):
        table = gradient_check_table(seed=0, max_coords=8)

        assert set(table["target"]) == {"pretrain_loss", "encode_user", "coding_rate", "tune_loss"}
        assert list(table.columns) == ["target", "parameter", "checked", "max_rel_error", "worst_index", "passed"]
        assert table["passed"].all(), table[~table["passed"]]
        assert (table["max_rel_error"] < 1e-4).all()


class TestBenchmark:
    """Test the parameter census and the runtime table"""

    def test_census_matches_closed_form(self):
        table = census_table([8, 64], [2, 3, 4], [16, 64])

        assert len(table) == 4
        assert (table["census"] == table["closed_form"]).all()
        assert table["length_independent"].all()

    def test_doubling_k_halves_weights(self):
        ratios = halving_ratios(256, [1, 2, 4, 8, 16])
        assert [r["k"] for r in ratios] == [1, 2, 4, 8]
        assert all(0.5 <= r["ratio"] < 0.55 for r in ratios)

    def test_runtime_table(self):
        config = BenchConfig(d=8, k=2, lengths=[16, 32], reps=2)
        table = runtime_table(config)

        assert table["mode"].tolist() == ["efl", "efl", "attention", "attention"]
        assert math.isnan(table.loc[0, "ratio_vs_half"])
        assert (table["median_seconds"] > 0).all()
        assert np.isfinite(table.loc[1, "ratio_vs_half"])


class TestExperiments:
    """Test the seed-paired comparison"""

    def test_paired_test_closed_form(self):
        result = paired_test([0.3, 0.5, 0.4], [0.1, 0.2, 0.3])
        assert result["t"] == pytest.approx(2 * math.sqrt(3), rel=1e-9)
        assert result["p_value"] == pytest.approx(0.5 - math.sqrt(3) / math.sqrt(14), rel=1e-6)
        assert result["significant"]

    def test_constant_difference(self):
        assert paired_test([0.5, 0.6], [0.4, 0.5])["p_value"] == 0.0
        assert paired_test([0.4, 0.5], [0.5, 0.6])["p_value"] == 1.0

    def test_single_seed(self):
        result = paired_test([0.5], [0.4])
        assert math.isnan(result["t"])
        assert not result["significant"]

    def test_variant_config(self, tmp_path):
        base = tiny_config(tmp_path)
        config = variant_config(base, 7, "no_denoise")
        assert config.seed == 7 and config.synth.seed == 7
        assert config.tune.no_denoise and config.model.filter_mode == "identity"
        assert variant_config(base, 7, "full").model.filter_mode == "efl"
        assert config.backbone_fingerprint() != variant_config(base, 7, "full").backbone_fingerprint()

    @pytest.mark.slow
    def test_prompt_tuning_trains_a_fraction_of_full_finetuning(self, tmp_path):
        config = tiny_config(tmp_path)
        corpus = generate_synthetic_corpus(config.synth)
        prepared = prepare_data(corpus.log, corpus.attributes, config)
        backbone = pretrain_stage(prepared, config).model
        before = backbone_hash(backbone)

        table = efficiency_comparison(prepared, backbone, config, epochs=2)
        assert table["mode"].tolist() == ["prompt_tuning", "full_finetune"]
        assert bool(table.loc[0, "backbone_unchanged"])
        assert not bool(table.loc[1, "backbone_unchanged"])
        assert table.loc[1, "ratio"] == 1.0
        assert 0 < table.loc[0, "ratio"] < table.loc[1, "ratio"]
        assert table.loc[0, "trainable"] < table.loc[1, "trainable"]
        assert table.loc[0, "time_vs_prompt"] == 1.0
        assert backbone_hash(backbone) == before

    @pytest.mark.slow
    def test_ablation_tables(self, tmp_path):

        tables = run_ablation(tiny_config(tmp_path))
        per_seed, summary = tables["per_seed"], tables["summary"]

        assert len(per_seed) == 4
        assert set(per_seed["variant"]) == {"full", "static_prompt"}
        assert summary["comparison"].tolist() == ["full vs static_prompt"]
        assert 0.0 <= summary.loc[0, "p_value"] <= 1.0


class TestExports:
    """Test prompt diversity statistics"""

    def test_mean_pairwise_cosine(self):
        assert mean_pairwise_cosine(np.eye(3)) == pytest.approx(0.0)
        assert mean_pairwise_cosine(np.ones((2, 4, 3))) == pytest.approx(1.0)
        opposite = np.array([[[1.0, 0.0], [-1.0, 0.0]]])
        assert mean_pairwise_cosine(opposite) == pytest.approx(-1.0)
        assert math.isnan(mean_pairwise_cosine(np.ones((1, 3))))
