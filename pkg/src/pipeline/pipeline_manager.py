"""
Pipeline Manager

Runs the stages behind each CLI command and keeps every artifact of a run
under one directory named by config fingerprint and timestamp.
"""

from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import yaml
from loguru import logger

from core.config import RunConfig
from core.exceptions import RecommenderError
from interactions import (
    filter_min_interactions, generate_synthetic_corpus, load_attributes, load_interactions, save_attributes,
)
from models.model_manager import ModelManager
from training.batching import UserFeatureStore
from training.checkpoint import BACKBONE_KIND, load_checkpoint, save_checkpoint
from training.tuner import restore_prompt_module
from .config import save_config
from .stages import PreparedData, evaluate_stage, pretrain_stage, split_data, tune_stage

INTERACTIONS_FILE = "interactions.tsv"
ATTRIBUTES_FILE = "users.tsv"
SPLIT_REPORT_FILE = "split_report.yaml"
BACKBONE_FILE = "backbone.pt"
PROMPTS_FILE = "prompts.pt"
CONFIG_FILE = "config.yaml"
ORIGINAL_IDS_FILE = "original_ids.idmap"


class PipelineManager:
    """Main pipeline manager that orchestrates the stages of a run"""

    def __init__(self, config: Optional[RunConfig] = None):
        self.config = config or RunConfig()
        self.model_manager = ModelManager(self.config)
        self.run_dir: Optional[Path] = None
        self.prepared: Optional[PreparedData] = None
        self.history = []

    def _guard(self, stage: str, action) -> Dict[str, Any]:
        """Run ``action`` and convert failures to a result dictionary"""
        try:
            result = {"success": True, "stage": stage, **action()}
        except RecommenderError as e:
            logger.error(f"{stage} failed: {e.message}")
            result = {"success": False, "stage": stage, **e.to_dict()}
        except FileNotFoundError as e:
            logger.error(f"{stage} failed: missing file {e}")
            result = {"success": False, "stage": stage, "error": f"file not found: {e}",
                      "type": "FileNotFoundError", "exit_code": 1}
        except Exception as e:
            logger.exception(f"{stage} failed unexpectedly")
            result = {"success": False, "stage": stage, "error": str(e),
                      "type": type(e).__name__, "exit_code": 2}
        result["timestamp"] = self._get_timestamp()
        self.history.append({"stage": stage, "success": result["success"]})
        return result

    def new_run_dir(self) -> Path:
        runs = Path(self.config.paths.runs_dir)
        stamp = datetime.now().strftime("%Y%m%d-%H%M%S-%f")
        run_dir = runs / f"{self.config.fingerprint()[:12]}-{stamp}"
        run_dir.mkdir(parents=True, exist_ok=False)
        self.run_dir = run_dir
        return run_dir

    # synth

    def synthesize(self, out_dir: str) -> Dict[str, Any]:
        def action():
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            synth = self.config.synth
            corpus = generate_synthetic_corpus(synth)
            corpus.log.to_tsv(str(out / INTERACTIONS_FILE))
            save_attributes(str(out / ATTRIBUTES_FILE), corpus.attributes)
            with open(out / "synth_config.yaml", "w") as f:
                yaml.safe_dump(synth.model_dump(mode="json"), f, sort_keys=False)
            logger.info(f"Wrote synthetic corpus to {out}")
            return {
                "out": str(out),
                "records": len(corpus.log),
                "users": corpus.log.n_users,
                "items": corpus.log.n_items,
                "click_noise_fraction": corpus.out_of_cluster_fraction(0),
            }
        return self._guard("synth", action)

    # data

    def read_data_dir(self, data_dir: str):
        """Filtered log and dense attribute rows of a data directory"""
        path = Path(data_dir) / INTERACTIONS_FILE
        log = load_interactions(str(path), n_behaviors=self.config.data.n_behaviors,
                                target_behavior=self.config.data.target_behavior)
        filtered = filter_min_interactions(log, self.config.data.min_interactions)
        attributes_path = Path(data_dir) / ATTRIBUTES_FILE
        if attributes_path.exists():
            attributes = load_attributes(str(attributes_path), filtered.n_users, user_map=filtered.id_map.users)
        else:
            attributes = np.full((filtered.n_users, 0), -1, dtype=np.int64)
        return filtered, attributes

    def load_data_dir(self, data_dir: str) -> PreparedData:
        filtered, attributes = self.read_data_dir(data_dir)
        self.prepared = split_data(filtered, attributes, self.config)
        return self.prepared

    def save_prepared(self, prepared: PreparedData, run_dir: Path) -> None:
        """The filtered log and attributes are stored in the run so it can be re-evaluated alone"""
        prepared.log.to_tsv(str(run_dir / INTERACTIONS_FILE))
        if prepared.log.id_map is not None:
            prepared.log.id_map.save(str(run_dir / ORIGINAL_IDS_FILE))
        save_attributes(str(run_dir / ATTRIBUTES_FILE), prepared.attributes)
        with open(run_dir / SPLIT_REPORT_FILE, "w") as f:
            yaml.safe_dump(prepared.summary(), f, sort_keys=False)

    def load_run(self, run_dir: str) -> PreparedData:
        run = Path(run_dir)
        if not run.is_dir():
            raise FileNotFoundError(run_dir)
        with open(run / SPLIT_REPORT_FILE) as f:
            summary = yaml.safe_load(f)
        log = load_interactions(str(run / INTERACTIONS_FILE), n_behaviors=summary["n_behaviors"],
                                id_map_path=str(run / f"{INTERACTIONS_FILE}.idmap"))
        attributes = load_attributes(str(run / ATTRIBUTES_FILE), log.n_users)
        if attributes.shape[1] < len(summary["attribute_vocab"]):
            attributes = np.full((log.n_users, len(summary["attribute_vocab"])), -1, dtype=np.int64)
        self.run_dir = run
        self.prepared = split_data(log, attributes, self.config, summary["attribute_vocab"])
        return self.prepared

    def load_backbone(self, run_dir: Path):
        prepared = self.prepared
        header = self.model_manager.backbone_header(prepared.log.n_items, prepared.log.n_behaviors)
        checkpoint = load_checkpoint(str(run_dir / BACKBONE_FILE), expected_header=header,
                                     expected_fingerprint=self.config.backbone_fingerprint(),
                                     kind=BACKBONE_KIND)
        backbone = self.model_manager.restore_backbone(checkpoint.header, checkpoint.state)
        return backbone.set_denoising(not self.config.tune.no_denoise)

    # stages

    def resolve_run_dir(self) -> Path:
        if self.run_dir is not None:
            return self.run_dir
        if self.config.paths.run_dir:
            self.run_dir = Path(self.config.paths.run_dir)
            self.run_dir.mkdir(parents=True, exist_ok=True)
            return self.run_dir
        return self.new_run_dir()

    def pretrain(self, data_dir: str) -> Dict[str, Any]:
        def action():
            prepared = self.load_data_dir(data_dir)
            run_dir = self.resolve_run_dir()
            save_config(self.config, str(run_dir / CONFIG_FILE))
            self.save_prepared(prepared, run_dir)
            result = pretrain_stage(prepared, self.config, curve_path=str(run_dir / "curve_pretrain.csv"))
            save_checkpoint(str(run_dir / BACKBONE_FILE), result.checkpoint)
            self.model_manager.backbone = result.model
            return {
                "run_dir": str(run_dir),
                "best_epoch": result.best_epoch,
                "epochs_run": result.epochs_run,
                "stopped_early": result.stopped_early,
                "split": prepared.spec.summary(),
                "flagged_users": len(prepared.split_report.flagged_users),
            }
        return self._guard("pretrain", action)

    def tune(self, run_dir: str) -> Dict[str, Any]:
        def action():
            prepared = self.load_run(run_dir)
            run = Path(run_dir)
            backbone = self.load_backbone(run)
            result = tune_stage(prepared, backbone, self.config, curve_path=str(run / "curve_tune.csv"))
            save_checkpoint(str(run / PROMPTS_FILE), result.checkpoint)
            save_config(self.config, str(run / CONFIG_FILE))
            paths = result.report.save(str(run))
            self.model_manager.prompt_module = result.prompt_module
            return {
                "run_dir": str(run),
                "report": result.report,
                "report_paths": paths,
                "budget": result.budget.to_dict(),
                "best_epoch": result.best_epoch,
                "epochs_run": result.epochs_run,
                "backbone_unchanged": result.backbone_unchanged,
                "flags": result.flags,
            }
        return self._guard("tune", action)

    def prompt_module_for(self, run: Path, backbone, store: UserFeatureStore):
        if not (run / PROMPTS_FILE).exists():
            return None
        return restore_prompt_module(str(run / PROMPTS_FILE), backbone, self.config,
                                     self.prepared.attribute_vocab, store.n_statistics)

    def evaluate(self, run_dir: str) -> Dict[str, Any]:
        def action():
            prepared = self.load_run(run_dir)
            run = Path(run_dir)
            backbone = self.load_backbone(run)
            store = UserFeatureStore(prepared.spec, prepared.attributes, seq_len=self.config.tune.seq_len)
            prompt_module = self.prompt_module_for(run, backbone, store)
            report = evaluate_stage(prepared, backbone, self.config, prompt_module)
            paths = report.save(str(run))
            return {"run_dir": str(run), "report": report, "report_paths": paths,
                    "prompted": prompt_module is not None}
        return self._guard("eval", action)

    def export_prompts(self, run_dir: str, out_dir: Optional[str] = None) -> Dict[str, Any]:
        from .exports import export_prompts

        def action():
            prepared = self.load_run(run_dir)
            run = Path(run_dir)
            backbone = self.load_backbone(run)
            store = UserFeatureStore(prepared.spec, prepared.attributes, seq_len=self.config.tune.seq_len)
            prompt_module = self.prompt_module_for(run, backbone, store)
            if prompt_module is None:
                raise FileNotFoundError(str(run / PROMPTS_FILE))
            paths = export_prompts(prompt_module, backbone, store, out_dir or str(run / "prompts"))
            return {"run_dir": str(run), "paths": paths}
        return self._guard("export-prompts", action)

    def gradcheck(self) -> Dict[str, Any]:
        from .diagnostics import gradient_check_table

        def action():
            table = gradient_check_table(seed=self.config.seed)
            return {"table": table, "passed": bool(table["passed"].all())}
        return self._guard("gradcheck", action)

    def bench(self, out_dir: Optional[str] = None, run_dir: Optional[str] = None,
              epochs: int = 2) -> Dict[str, Any]:
        """Runtime and census tables; with ``run_dir`` also prompt tuning vs full fine-tuning on that run"""
        from .benchmark import run_benchmarks
        from .experiments import efficiency_comparison

        def action():
            tables = run_benchmarks(self.config.bench, seed=self.config.seed)
            if run_dir:
                prepared = self.load_run(run_dir)
                backbone = self.load_backbone(Path(run_dir))
                tables["efficiency"] = efficiency_comparison(prepared, backbone, self.config, epochs)
            paths = {}
            if out_dir:
                out = Path(out_dir)
                out.mkdir(parents=True, exist_ok=True)
                for name, table in tables.items():
                    paths[name] = str(out / f"bench_{name}.csv")
                    table.to_csv(paths[name], index=False)
            return {"tables": tables, "paths": paths}
        return self._guard("bench", action)

    def ablate(self, out_dir: str, seeds=None, data_dir: Optional[str] = None) -> Dict[str, Any]:
        from .experiments import run_ablation

        def action():
            data = self.read_data_dir(data_dir) if data_dir else None
            tables = run_ablation(self.config, seeds=seeds, data=data)
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            save_config(self.config, str(out / CONFIG_FILE))
            paths = {}
            for name, table in tables.items():
                paths[name] = str(out / f"ablation_{name}.csv")
                table.to_csv(paths[name], index=False)
            return {"tables": tables, "paths": paths}
        return self._guard("ablate", action)

    def get_pipeline_status(self) -> Dict[str, Any]:
        """Get the current status of the pipeline"""
        return {
            "fingerprint": self.config.fingerprint(),
            "run_dir": str(self.run_dir) if self.run_dir else None,
            "data_loaded": self.prepared is not None,
            "model_loaded": self.model_manager.is_loaded(),
            "model_info": self.model_manager.get_model_info(),
            "stages_run": len(self.history),
        }

    def shutdown(self):
        logger.info("Shutting down pipeline...")
        self.model_manager.unload_model()
        self.prepared = None

    def _get_timestamp(self) -> str:
        return datetime.now().isoformat()
