"""
Model Manager for building, loading and describing recommender models
"""

from typing import Any, Dict, Optional, Sequence

import torch
from loguru import logger
from torch import nn

from core.config import RunConfig
from .behavior_miner import BehaviorMiner
from .prompt_learner import CustomizedPromptLearner, StaticPromptBank


class ModelManager:
    """Builds the backbone and prompt modules from a run configuration"""

    def __init__(self, config: Optional[RunConfig] = None, dtype: torch.dtype = torch.float32):
        self.config = config or RunConfig()
        self.dtype = dtype
        self.backbone: Optional[BehaviorMiner] = None
        self.prompt_module: Optional[nn.Module] = None
        self.device = self._get_device()

    def _get_device(self) -> str:
        """Runs are CPU-only"""
        return "cpu"

    def backbone_header(self, n_items: int, n_behaviors: int) -> Dict[str, Any]:
        model = self.config.model
        return {
            "n_items": n_items,
            "n_behaviors": n_behaviors,
            "d": model.d,
            "n_layers": model.n_layers,
            "k": model.k,
            "max_len": model.max_len,
            "d_ff": model.d_ff or 2 * model.d,
            "filter_mode": self.filter_mode,
            "full_fft": model.full_fft,
            "readout": model.readout,
        }

    @property
    def filter_mode(self) -> str:
        return self.config.model.filter_mode

    def build_backbone(self, n_items: int, n_behaviors: int,
                       generator: Optional[torch.Generator] = None) -> BehaviorMiner:
        model = self.config.model
        seed = None if generator is None else int(torch.randint(0, 2**31 - 1, (1,), generator=generator))
        with torch.random.fork_rng():
            # nn.Linear and LayerNorm draw from the global generator
            if seed is not None:
                torch.manual_seed(seed)
            backbone = BehaviorMiner(
                n_items=n_items, n_behaviors=n_behaviors, d=model.d, n_layers=model.n_layers,
                k=model.k, max_len=model.max_len, d_ff=model.d_ff, filter_mode=self.filter_mode,
                full_fft=model.full_fft, readout=model.readout,
            )
        backbone.tables.reset_parameters(generator)
        for layer in backbone.layers:
            for efl in list(layer.view_filters) + [layer.overall_filter]:
                if hasattr(efl, "mlp"):
                    efl.mlp.reset_parameters(generator)
        self.backbone = backbone.to(self.dtype)
        logger.info(f"Built backbone: d={model.d}, layers={model.n_layers}, k={model.k}, "
                    f"filter={self.filter_mode}, {self.count(self.backbone)} parameters")
        return self.backbone

    def restore_backbone(self, header: Dict[str, Any], state: Dict[str, torch.Tensor]) -> BehaviorMiner:
        """Rebuild a backbone from a checkpoint header and load its weights"""
        backbone = BehaviorMiner(
            n_items=header["n_items"], n_behaviors=header["n_behaviors"], d=header["d"],
            n_layers=header["n_layers"], k=header["k"], max_len=header["max_len"],
            d_ff=header["d_ff"], filter_mode=header["filter_mode"], full_fft=header["full_fft"],
            readout=header["readout"],
        ).to(self.dtype)
        backbone.load_state_dict(state)
        self.backbone = backbone
        return backbone

    def build_prompt_module(self, backbone: BehaviorMiner, attribute_vocab: Sequence[int],
                            n_statistics: int, generator: Optional[torch.Generator] = None) -> nn.Module:
        prompt, tune = self.config.prompt, self.config.tune
        if tune.static_prompt:
            module = StaticPromptBank(backbone.n_layers, backbone.d, prompt.n_tokens,
                                      first_layer_only=tune.first_layer_only,
                                      init_std=prompt.static_init_std)
        else:
            module = CustomizedPromptLearner(
                n_layers=backbone.n_layers, d=backbone.d, width=prompt.prompt_dim,
                n_factors=prompt.n_factors, n_tokens=prompt.n_tokens,
                n_behaviors=backbone.n_behaviors, attribute_vocab=attribute_vocab,
                n_statistics=n_statistics, first_layer_only=tune.first_layer_only,
            )
        module.reset_parameters(generator)
        self.prompt_module = module.to(self.dtype)
        logger.info(f"Built {type(module).__name__} with {self.count(module)} parameters")
        return self.prompt_module

    @staticmethod
    def count(module: Optional[nn.Module]) -> int:
        return 0 if module is None else sum(p.numel() for p in module.parameters())

    def is_loaded(self) -> bool:
        """Check if a backbone is available"""
        return self.backbone is not None

    def get_model_info(self) -> Dict[str, Any]:
        """Get information about the built models"""
        if not self.is_loaded():
            return {"loaded": False}
        return {
            "loaded": True,
            "device": self.device,
            "header": self.backbone.header(),
            "backbone_parameters": self.count(self.backbone),
            "prompt_parameters": self.count(self.prompt_module),
            "prompt_module": type(self.prompt_module).__name__ if self.prompt_module else None,
        }

    def unload_model(self):
        """Drop references to the built models"""
        self.backbone = None
        self.prompt_module = None
        logger.info("Models unloaded")
