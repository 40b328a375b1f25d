"""
Synthetic multi-behavior corpora with planted interests and injected click noise.

Each user holds a few latent interests; every interest owns a disjoint cluster
of items. Events walk a behavior funnel (click, then escalations up to the
highest behavior) on items of the user's current interest. A ``noise_rate``
fraction of clicks is replaced by uniformly random catalog items. All random
draws are made unconditionally so that, for a fixed seed, raising the noise
rate only ever replaces more clicks.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict

from core.exceptions import SynthConfigError
from .records import COLUMNS, InteractionLog, build_log


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_users: int = 2000
    n_items: int = 1000
    n_behaviors: int = 4
    seq_len: int = 50
    n_latent_interests: int = 20
    noise_rate: float = 0.4
    seed: int = 1
    interests_per_user: int = 2
    interest_stickiness: float = 0.8
    escalation_prob: float = 0.7
    n_attribute_fields: int = 2
    attribute_vocab: int = 4
    target_behavior: Optional[int] = None

    def validate_feasible(self) -> None:
        if self.n_items < self.n_latent_interests:
            raise SynthConfigError(
                f"n_items ({self.n_items}) must be >= n_latent_interests ({self.n_latent_interests})"
            )
        if not 0.0 <= self.noise_rate <= 1.0:
            raise SynthConfigError(f"noise_rate must lie in [0, 1], got {self.noise_rate}")
        for name in ("n_users", "n_items", "n_behaviors", "seq_len", "n_latent_interests", "interests_per_user"):
            if getattr(self, name) < 1:
                raise SynthConfigError(f"{name} must be >= 1")
        if self.target_behavior is not None and not 0 <= self.target_behavior < self.n_behaviors:
            raise SynthConfigError(f"target_behavior outside [0, {self.n_behaviors})")


@dataclass
class SyntheticCorpus:
    log: InteractionLog
    attributes: np.ndarray
    clusters: List[np.ndarray]
    user_interests: Dict[int, np.ndarray]

    def item_cluster(self) -> np.ndarray:
        owner = np.empty(self.log.n_items, dtype=np.int64)
        for c, items in enumerate(self.clusters):
            owner[items] = c
        return owner

    def out_of_cluster_fraction(self, behavior: int = 0) -> float:
        """Fraction of records of ``behavior`` whose item lies outside the user's interests"""
        owner = self.item_cluster()
        frame = self.log.frame[self.log.frame["behavior"] == behavior]
        if not len(frame):
            return 0.0
        outside = [
            owner[item] not in self.user_interests[user]
            for user, item in zip(frame["user"].to_numpy(), frame["item"].to_numpy())
        ]
        return float(np.mean(outside))


def generate_synthetic_corpus(config: SynthConfig) -> SyntheticCorpus:
    config.validate_feasible()
    rng = np.random.default_rng(config.seed)
    n_interests = config.n_latent_interests
    clusters = np.array_split(rng.permutation(config.n_items), n_interests)
    per_user = min(config.interests_per_user, n_interests)

    rows: List[tuple] = []
    attributes = np.zeros((config.n_users, config.n_attribute_fields), dtype=np.int64)
    user_interests: Dict[int, np.ndarray] = {}
    top = config.n_behaviors - 1

    for user in range(config.n_users):
        interests = rng.choice(n_interests, size=per_user, replace=False)
        user_interests[user] = interests
        if config.n_attribute_fields:
            attributes[user] = rng.integers(config.attribute_vocab, size=config.n_attribute_fields)
            attributes[user, 0] = interests[0] % config.attribute_vocab

        timestamp = int(rng.integers(0, 1000))
        current = interests[0]
        events = 0
        while events < config.seq_len:
            switch, pick = rng.random(), rng.integers(per_user)
            if switch > config.interest_stickiness:
                current = interests[pick]
            cluster = clusters[current]
            item = int(cluster[rng.integers(len(cluster))])

            noise_draw, noise_item = rng.random(), int(rng.integers(config.n_items))
            timestamp += int(rng.integers(1, 10))
            clicked = noise_item if noise_draw < config.noise_rate else item
            rows.append((user, clicked, timestamp, 0))
            events += 1

            behavior = 0
            while behavior < top and events < config.seq_len:
                if rng.random() >= config.escalation_prob:
                    break
                behavior += 1
                timestamp += int(rng.integers(1, 10))
                rows.append((user, item, timestamp, behavior))
                events += 1

    frame = pd.DataFrame(rows, columns=COLUMNS).astype("int64")
    target = top if config.target_behavior is None else config.target_behavior
    log = build_log(frame, n_behaviors=config.n_behaviors, target_behavior=target,
                    densify_ids=False, n_items=config.n_items)
    log.n_users = config.n_users
    logger.info(f"Generated synthetic corpus: {len(log)} records, {config.n_users} users, "
                f"{config.n_items} items, noise_rate={config.noise_rate}, seed={config.seed}")
    return SyntheticCorpus(log=log, attributes=attributes, clusters=list(clusters),
                           user_interests=user_interests)


def generate_synthetic(config: SynthConfig) -> InteractionLog:
    return generate_synthetic_corpus(config).log
