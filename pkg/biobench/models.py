"""Configuration and record models for the application"""

import hashlib
import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from biobench.numerics import ActivationKind

RuleKind = Literal["bp", "fa", "dfa", "hebb_vanilla", "hebb_instar"]
NoiseKind = Literal["none", "random", "pepper"]
DatasetKind = Literal["synthetic", "cifar10", "cifar100"]

SCHEMA_VERSION = 1


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Schedule(Strict):
    kind: Literal["constant", "step"] = "constant"
    gamma: float = Field(default=0.9, gt=0.0, le=1.0)
    step_size: int = Field(default=1, ge=1)

    def lr_at(self, lr0: float, epoch: int) -> float:
        """Learning rate used during 0-based ``epoch``."""
        if self.kind == "constant":
            return lr0
        return lr0 * self.gamma ** (epoch // self.step_size)


class RuleSettings(Strict):
    lr: float = Field(default=1e-3, ge=0.0)
    schedule: Schedule = Field(default_factory=Schedule)
    k: int = Field(default=1, ge=1)
    weight_decay: float = Field(default=1.0, gt=0.0, le=1.0)
    decay_every: Literal["epoch", "step"] = "epoch"
    ridge_lambda: float = Field(default=1.0, ge=0.0)
    prune: float = Field(default=0.0, ge=0.0, lt=1.0)
    zca: bool = False
    zca_epsilon: float = Field(default=1e-5, gt=0.0)


class UpdateRule(RuleSettings):
    kind: RuleKind

    @property
    def is_hebbian(self) -> bool:
        return self.kind in ("hebb_vanilla", "hebb_instar")


class NoiseSpec(Strict):
    kind: NoiseKind = "none"
    level: float = Field(default=0.0, ge=0.0, le=1.0)
    seed: int = Field(default=0, ge=0)
    per_channel: bool = False
    target: Literal["train", "test", "both"] = "both"


class NetworkConfig(Strict):
    conv_channels: list[int] = Field(default_factory=lambda: [100, 196, 400], min_length=1)
    kernel: int = Field(default=5, ge=1)
    stride: int = Field(default=1, ge=1)
    padding: int = Field(default=2, ge=0)
    pool: int | None = Field(default=2, ge=1)
    pool_stride: int | None = Field(default=None, ge=1)
    activation: ActivationKind = "relu"
    hebbian_activation: ActivationKind = "triangle"
    gain: float = Field(default=1.0, gt=0.0)
    dtype: Literal["float64", "float32"] = "float64"

    @field_validator("conv_channels")
    @classmethod
    def _positive(cls, v: list[int]) -> list[int]:
        if any(c < 1 for c in v):
            raise ValueError("conv_channels must all be >= 1")
        return v


class TrainingConfig(Strict):
    rule: UpdateRule
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    dataset: DatasetKind = "synthetic"
    epochs: int = Field(ge=1)
    batch_size: int = Field(default=100, ge=1)
    data_fraction: float = Field(default=1.0, gt=0.0, le=1.0)
    stratified: bool = True
    sparsity: float | None = Field(default=None, ge=0.0, lt=1.0)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    seed: int = Field(default=0, ge=0)
    eval_every: int = Field(default=1, ge=1)

    def comparable(self) -> dict:
        """Everything that identifies the configuration apart from its seeds."""
        return self.model_dump(mode="json", exclude={"seed": True, "noise": {"seed"}})

    def fingerprint(self) -> str:
        blob = json.dumps(self.comparable(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


class RunRecord(Strict):
    schema_version: int = SCHEMA_VERSION
    fingerprint: str
    config: TrainingConfig
    seed: int
    epochs: list[int] = Field(default_factory=list)
    accuracy: list[float] = Field(default_factory=list)
    wall_clock: list[float] = Field(default_factory=list)
    sparsity: list[float] = Field(default_factory=list)
    failed: bool = False
    error: str | None = None

    @field_validator("accuracy")
    @classmethod
    def _in_unit_interval(cls, v: list[float]) -> list[float]:
        if any(not 0.0 <= a <= 1.0 for a in v):
            raise ValueError("accuracy values must lie in [0, 1]")
        return v

    @model_validator(mode="after")
    def _aligned(self) -> "RunRecord":
        n = len(self.accuracy)
        if not (len(self.epochs) == n and len(self.wall_clock) == n and len(self.sparsity) == n):
            raise ValueError("epochs, accuracy, wall_clock and sparsity must have equal length")
        return self

    @property
    def final_sparsity(self) -> float | None:
        return self.sparsity[-1] if self.sparsity else None


class Aggregate(Strict):
    fingerprint: str
    epochs: list[int]
    mean: list[float]
    std: list[float]
    run_count: int = Field(ge=1)
    single_run: bool = False


# --- experiment files ---


class SyntheticConfig(Strict):
    per_class_train: int = Field(default=200, ge=1)
    per_class_test: int = Field(default=100, ge=1)
    size: int = Field(default=8, ge=4)


class TrainingDefaults(Strict):
    epochs: int = Field(default=20, ge=1)
    batch_size: int = Field(default=100, ge=1)
    eval_every: int = Field(default=1, ge=1)
    stratified: bool = True
    noise_target: Literal["train", "test", "both"] = "both"
    pepper_per_channel: bool = False


class SweepAxes(Strict):
    rules: list[RuleKind] = Field(default_factory=list)
    data_fractions: list[float] = Field(default_factory=lambda: [1.0])
    noise_kinds: list[NoiseKind] = Field(default_factory=lambda: ["none"])
    noise_levels: list[float] = Field(default_factory=lambda: [0.0])
    sparsities: list[float] = Field(default_factory=lambda: [0.0])
    seeds: list[int] = Field(default_factory=list)


class ExperimentConfig(Strict):
    name: str
    dataset: DatasetKind = "synthetic"
    output_dir: Path = Path("results")
    save_checkpoints: bool = False
    training: TrainingDefaults = Field(default_factory=TrainingDefaults)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    rules: dict[RuleKind, RuleSettings] = Field(default_factory=dict)
    sweep: SweepAxes = Field(default_factory=SweepAxes)

    def rule(self, kind: RuleKind) -> UpdateRule:
        settings = self.rules.get(kind, RuleSettings())
        return UpdateRule(kind=kind, **settings.model_dump())
