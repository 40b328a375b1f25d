"""
Run configuration schema.

Every section forbids unknown keys. The fingerprint covers everything that
can change results: all sections except ``paths`` and ``logging``.
"""

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from interactions.synthetic import SynthConfig
from .seeding import stable_hash


BACKBONE_SECTIONS = ("seed", "synth", "data", "model", "pretrain")
TUNING_SECTIONS = BACKBONE_SECTIONS + ("prompt", "tune")


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class DataConfig(Section):
    min_interactions: int = 20
    split_ratio: float = 0.6
    split_granularity: Literal["per_user", "global"] = "per_user"
    min_finetune: int = 2
    n_behaviors: Optional[int] = None
    target_behavior: Optional[int] = None


class ModelConfig(Section):
    d: int = 64
    n_layers: int = 2
    k: int = 4
    max_len: int = 64
    d_ff: Optional[int] = None
    filter_mode: Literal["efl", "identity", "attention"] = "efl"
    full_fft: bool = False
    readout: Literal["last", "mean"] = "last"


class PretrainConfig(Section):
    lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 1000
    patience: int = 20
    min_ctx: int = 4
    prefix_mode: Literal["all", "final"] = "all"
    valid_negatives: int = 100
    valid_ks: List[int] = Field(default_factory=lambda: [10, 20])
    max_batches_per_epoch: Optional[int] = None


class PromptConfig(Section):
    n_factors: int = 8
    n_tokens: int = 8
    prompt_dim: int = 8
    lambda_e: float = 1.0
    lambda_p: float = 1.0
    eps_e2: float = 1.0
    eps_p2: float = 1.0
    compactness_sign: Literal["promote_diversity", "literal"] = "promote_diversity"
    static_init_std: float = 0.01


class TuneConfig(Section):
    lambda_: float = Field(0.01, alias="lambda")
    lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 1000
    patience: int = 20
    seq_len: int = 32
    valid_negatives: int = 100
    valid_ks: List[int] = Field(default_factory=lambda: [10, 20])
    target_behavior: Optional[int] = None
    no_denoise: bool = False
    static_prompt: bool = False
    first_layer_only: bool = False
    no_compactness: bool = False
    full_finetune: bool = False

    @property
    def effective_lambda(self) -> float:
        return 0.0 if self.no_compactness else self.lambda_

    def ablation_flags(self) -> List[str]:
        names = ("no_denoise", "static_prompt", "first_layer_only", "no_compactness", "full_finetune")
        return [name for name in names if getattr(self, name)]


class EvalConfig(Section):
    ks: List[int] = Field(default_factory=lambda: [10, 20])
    n_neg: int = 100
    cold_start: bool = False
    target_behavior: Optional[int] = None
    seed: Optional[int] = None


class BenchConfig(Section):
    d: int = 64
    k: int = 4
    lengths: List[int] = Field(default_factory=lambda: [256, 512, 1024])
    reps: int = 100
    census_lengths: List[int] = Field(default_factory=lambda: [16, 64, 256])


class ExperimentsConfig(Section):
    seeds: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    alpha: float = 0.05
    variants: List[str] = Field(
        default_factory=lambda: ["no_denoise", "static_prompt", "first_layer_only", "no_compactness"]
    )


class PathsConfig(Section):
    data_dir: str = "data"
    runs_dir: str = "runs"
    run_dir: Optional[str] = None


class LoggingConfig(Section):
    level: str = "INFO"
    file: Optional[str] = "logs/pipeline.log"
    format: str = "{time:YYYY-MM-DD HH:mm:ss} | {level} | {message}"


class RunConfig(Section):
    seed: int = 1
    synth: SynthConfig = Field(default_factory=SynthConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    prompt: PromptConfig = Field(default_factory=PromptConfig)
    tune: TuneConfig = Field(default_factory=TuneConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    experiments: ExperimentsConfig = Field(default_factory=ExperimentsConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)

    def canonical(self) -> dict:
        return self.model_dump(mode="json", by_alias=True, exclude={"paths", "logging"})

    def fingerprint(self) -> str:
        return stable_hash(self.canonical())

    def backbone_fingerprint(self) -> str:
        """Hash of the sections that determine a pretrained backbone"""
        canonical = self.canonical()
        return stable_hash({key: canonical[key] for key in BACKBONE_SECTIONS})

    def tuning_fingerprint(self) -> str:
        canonical = self.canonical()
        return stable_hash({key: canonical[key] for key in TUNING_SECTIONS})

    def to_yaml_dict(self) -> dict:
        return self.model_dump(mode="json", by_alias=True)


def reference_config() -> RunConfig:
    """Full-scale dimensions used for the trainable-parameter budget"""
    return RunConfig(
        synth=SynthConfig(n_items=5000, n_behaviors=4),
        model=ModelConfig(d=128, n_layers=4, k=4, max_len=64),
        prompt=PromptConfig(n_factors=8, n_tokens=8, prompt_dim=4),
    )


def small_config() -> RunConfig:
    """Gradient-check scale: d=8, L=8, k=2, N=2, C=2, two layers, double precision"""
    return RunConfig(
        synth=SynthConfig(n_users=4, n_items=12, n_behaviors=2, seq_len=8, n_latent_interests=3,
                          n_attribute_fields=1, attribute_vocab=2),
        model=ModelConfig(d=8, n_layers=2, k=2, max_len=8),
        prompt=PromptConfig(n_factors=2, n_tokens=2, prompt_dim=8),
        tune=TuneConfig(seq_len=8),
    )
