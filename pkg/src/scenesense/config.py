"""Run configuration: one JSON file, overridable by CLI flags.

Every command resolves a RunConfig and embeds the resolved values in its
outputs so results are traceable to the exact settings that produced them.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .cooccurrence import SelectionConfig
from .errors import ConfigError, ParseError
from .evaluation import SplitSpec
from .mlp import TrainConfig
from .query import DEFAULT_BOOTSTRAP_SCHEDULE, StructuredStringConfig


@dataclass
class RunConfig:
    seed: int = 0
    backend: str = "mock"  # mock | http
    endpoint: str = ""
    model: str = ""
    k: int = 3
    tie_break: str = "lexicographic"
    alpha: float = 1.0
    count_mode: str = "presence"
    mode: str = "gt"  # co-occurrence source: gt | proxy
    include_room_size: bool = True
    include_positions: bool = True
    max_objects: int = 100
    decimals: int = 3
    split_ratios: tuple[float, float, float] = (0.5, 0.2, 0.3)
    split_unit: str = "building"
    embed_dimension: int = 256
    hidden_sizes: tuple[int, ...] = (256,)
    bootstrap_schedule: tuple[tuple[int, int], ...] = DEFAULT_BOOTSTRAP_SCHEDULE
    epochs: int = 200
    batch_size: int = 512
    learning_rate: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-3
    lr_step: int = 10
    lr_gamma: float = 0.5
    http_timeout: float = 30.0
    http_max_attempts: int = 3
    http_batch_size: int = 32
    http_max_in_flight: int = 4

    def __post_init__(self):
        if self.backend not in ("mock", "http"):
            raise ConfigError(f"backend must be 'mock' or 'http', got {self.backend!r}")
        if self.mode not in ("gt", "proxy"):
            raise ConfigError(f"mode must be 'gt' or 'proxy', got {self.mode!r}")

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.merged(cls(), doc)

    @classmethod
    def merged(cls, base: "RunConfig", overrides: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values = dataclasses.asdict(base)
        values.update(overrides)
        # JSON has no tuples; normalize list-valued fields
        for key in ("split_ratios", "adam_betas", "hidden_sizes"):
            values[key] = tuple(values[key])
        values["bootstrap_schedule"] = tuple(tuple(p) for p in values["bootstrap_schedule"])
        return cls(**values)

    def override(self, **kwargs) -> "RunConfig":
        updates = {k: v for k, v in kwargs.items() if v is not None}
        return self.merged(self, updates)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["split_ratios"] = list(self.split_ratios)
        doc["adam_betas"] = list(self.adam_betas)
        doc["hidden_sizes"] = list(self.hidden_sizes)
        doc["bootstrap_schedule"] = [list(p) for p in self.bootstrap_schedule]
        return doc

    # Typed sub-configurations

    def selection(self) -> SelectionConfig:
        return SelectionConfig(k=self.k, tie_break=self.tie_break)

    def structured(self) -> StructuredStringConfig:
        return StructuredStringConfig(
            include_room_size=self.include_room_size,
            include_positions=self.include_positions,
            max_objects=self.max_objects,
            decimals=self.decimals,
        )

    def split_spec(self) -> SplitSpec:
        return SplitSpec(ratios=self.split_ratios, unit=self.split_unit, seed=self.seed)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            adam_betas=self.adam_betas,
            weight_decay=self.weight_decay,
            lr_step=self.lr_step,
            lr_gamma=self.lr_gamma,
            seed=self.seed,
        )

    def http_kwargs(self) -> dict:
        return {
            "timeout": self.http_timeout,
            "max_attempts": self.http_max_attempts,
            "batch_size": self.http_batch_size,
            "max_in_flight": self.http_max_in_flight,
        }
