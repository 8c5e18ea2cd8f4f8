"""
Experiment configuration and run manifests
"""

import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .conformal import ConformalMethod
from .errors import ConfigInvalidError
from .models import ReferenceLaw, SolverSettings, TrainConfig, TrainMethod

SYNTHETIC_DATASETS = ("banana", "star", "glasses", "funnel")
CONVEX_DATASETS = ("convex-banana", "convex-star", "convex-glasses")
METRIC_NAMES = ("w2", "sliced_w2", "kde_l1", "kde_kl", "l2_uv")
HPD_MAX_DIM = 16


class DatasetSpec(BaseModel):
    """Which data to train and evaluate on"""
    model_config = ConfigDict(extra="forbid")

    name: str = Field("banana", description="Synthetic generator, convex-<base>, or csv")
    n: int = Field(10000, ge=1, description="Rows to generate (synthetic)")
    split: List[float] = Field(default_factory=lambda: [0.6, 0.2, 0.2], description="train/cal/test ratios")
    standardize: bool = True
    # funnel
    k: Optional[int] = Field(None, ge=1)
    m: Optional[int] = Field(None, ge=1)
    sigma: float = Field(3.0, ge=0)
    # glasses
    two_dim: bool = False
    # convex variants
    reference_potential: Optional[str] = Field(None, description="potential.json of a strongly convex model")
    train_reference_if_missing: bool = False
    # csv
    path: Optional[str] = None
    x_columns: List[str] = Field(default_factory=list)
    y_columns: List[str] = Field(default_factory=list)
    # residual hook
    residual_predictions: Optional[str] = Field(None, description="CSV of per-row point predictions of Y")
    residual_columns: List[str] = Field(default_factory=list)

    def funnel_shape(self):
        return self.k or 1, self.m or 2


class ModelSpec(BaseModel):
    """Potential network architecture; input dimensions come from the data"""
    model_config = ConfigDict(extra="forbid")

    width: int = Field(18, ge=1)
    depth: int = Field(8, ge=1)
    strong_convexity: bool = True
    alpha_log_init: Optional[float] = None


class ConformalSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    methods: List[ConformalMethod] = Field(default_factory=lambda: list(ConformalMethod))
    alphas: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2])
    split_fraction: float = Field(0.5, gt=0, lt=1, description="RPB fitting share of the calibration set")
    volume_points: int = Field(100_000, ge=1)
    volume_conditions: int = Field(10, ge=1)
    wsc_directions: int = Field(1000, ge=1)
    wsc_delta: float = Field(0.1, gt=0, le=1)

    @field_validator("alphas")
    @classmethod
    def _alphas_in_range(cls, v: List[float]) -> List[float]:
        bad = [a for a in v if not 0 < a < 1]
        if bad:
            raise ValueError(f"alphas must lie in (0, 1): {bad}")
        return v


class MetricsSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    names: List[str] = Field(default_factory=lambda: ["sliced_w2", "kde_l1", "kde_kl"])
    conditions: int = Field(10, ge=1, description="Test conditions x at which conditionals are compared")
    samples: int = Field(1000, ge=10, description="Draws per conditional, model and truth each")
    projections: int = Field(256, ge=1)
    n_u: int = Field(1000, ge=1, description="Reference draws per condition for L2-UV")
    bandwidth: str = "scott"

    @field_validator("names")
    @classmethod
    def _known_metrics(cls, v: List[str]) -> List[str]:
        unknown = [m for m in v if m not in METRIC_NAMES]
        if unknown:
            raise ValueError(f"unknown metric(s) {unknown}; expected any of {list(METRIC_NAMES)}")
        return v


class SweepSpec(BaseModel):
    """Grid axes; an empty axis keeps the base config's value"""
    model_config = ConfigDict(extra="forbid")

    datasets: List[str] = Field(default_factory=list)
    methods: List[TrainMethod] = Field(default_factory=list)
    dimensions: List[int] = Field(default_factory=list, description="Funnel output dimensions")
    workers: int = Field(1, ge=1, description="Cells trained concurrently")


class ExperimentConfig(BaseModel):
    """Everything a run needs, loaded from YAML"""
    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    model: ModelSpec = Field(default_factory=ModelSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    solver: SolverSettings = Field(default_factory=SolverSettings)
    conformal: ConformalSpec = Field(default_factory=ConformalSpec)
    metrics: MetricsSpec = Field(default_factory=MetricsSpec)
    sweep: SweepSpec = Field(default_factory=SweepSpec)
    seeds: List[int] = Field(default_factory=lambda: [0])
    output_dir: str = "runs"

    @classmethod
    def load(cls, path: Union[str, Path], check_files: bool = True) -> "ExperimentConfig":
        """Parse and validate a YAML file, reporting every problem at once"""
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except FileNotFoundError:
            raise ConfigInvalidError([f"{path}: config file not found"]) from None
        except yaml.YAMLError as e:
            raise ConfigInvalidError([f"{path}: YAML parse error: {e}"]) from e
        if not isinstance(raw, dict):
            raise ConfigInvalidError([f"{path}: top level must be a mapping"])
        try:
            config = cls.model_validate(raw)
        except ValidationError as e:
            problems = [
                f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
            ]
            raise ConfigInvalidError(problems) from e
        config.validate_semantics(check_files=check_files, base_dir=path.parent)
        return config

    def validate_semantics(self, check_files: bool = True, base_dir: Optional[Path] = None) -> None:
        problems = self.problems(check_files, base_dir)
        if problems:
            raise ConfigInvalidError(problems)

    def resolve(self, value: str, base_dir: Optional[Path] = None) -> Path:
        p = Path(value)
        return p if p.is_absolute() or base_dir is None else base_dir / p

    def problems(self, check_files: bool = True, base_dir: Optional[Path] = None) -> List[str]:
        """Cross-field checks that single-field validation cannot express"""
        out: List[str] = []
        ds = self.dataset
        known = SYNTHETIC_DATASETS + CONVEX_DATASETS + ("csv",)
        names = self.sweep.datasets or [ds.name]
        for name in names:
            if name not in known:
                out.append(f"dataset.name: unknown dataset {name!r}; expected one of {list(known)}")
        if abs(sum(ds.split) - 1.0) > 1e-9 or not 1 <= len(ds.split) <= 3 or any(r < 0 for r in ds.split):
            out.append(f"dataset.split: ratios must be 1-3 nonnegative numbers summing to 1, got {ds.split}")
        if "csv" in names:
            if not ds.path:
                out.append("dataset.path: required for csv datasets")
            elif check_files and not self.resolve(ds.path, base_dir).exists():
                out.append(f"dataset.path: file not found: {ds.path}")
            if not ds.y_columns:
                out.append("dataset.y_columns: at least one column is required for csv datasets")
        if any(n in CONVEX_DATASETS for n in names) and not ds.train_reference_if_missing:
            if not ds.reference_potential:
                out.append("dataset.reference_potential: convex variants need a reference potential "
                           "(or set train_reference_if_missing)")
            elif check_files and not self.resolve(ds.reference_potential, base_dir).exists():
                out.append(f"dataset.reference_potential: file not found: {ds.reference_potential}")
        if ds.residual_predictions and not ds.residual_columns:
            out.append("dataset.residual_columns: required with residual_predictions")
        if "l2_uv" in self.metrics.names and not all(n in CONVEX_DATASETS for n in names):
            out.append("metrics.names: l2_uv needs a convex dataset with a ground-truth map")
        if "csv" in names and any(m in self.metrics.names for m in ("w2", "sliced_w2", "kde_l1", "kde_kl")):
            out.append("metrics.names: distribution metrics need a synthetic truth sampler, not csv data")
        if self.sweep.dimensions and names != ["funnel"]:
            out.append("sweep.dimensions: only the funnel dataset has a dimension axis")
        if any(d < 1 for d in self.sweep.dimensions):
            out.append("sweep.dimensions: dimensions must be >= 1")
        if ConformalMethod.QUANTILE in self.conformal.methods and self.train.reference != ReferenceLaw.GAUSSIAN:
            out.append("conformal.methods: the Quantile baseline requires the gaussian reference")
        if ConformalMethod.HPD in self.conformal.methods:
            dims = self.sweep.dimensions or ([ds.funnel_shape()[0] * ds.funnel_shape()[1]] if ds.name == "funnel" else [])
            if any(d > HPD_MAX_DIM for d in dims):
                out.append(f"conformal.methods: HPD needs d_y <= {HPD_MAX_DIM}")
        methods = self.sweep.methods or [self.train.method]
        if TrainMethod.EC_NQR in methods and self.train.variant.value != "U":
            out.append("train.variant: EC-NQR trains the U-variant only")
        if not self.seeds:
            out.append("seeds: at least one seed is required")
        return out

    def config_hash(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


class RunStatus(str, Enum):
    RUNNING = "running"
    COMPLETE = "complete"
    FAILED = "failed"


class RunManifest(BaseModel):
    """Written atomically when a run ends; a complete run directory is immutable"""
    config_hash: str
    version: str
    seed: int
    status: RunStatus = RunStatus.RUNNING
    started_at: str
    finished_at: Optional[str] = None
    stage_timings: Dict[str, float] = Field(default_factory=dict, description="Seconds per stage")
    artifacts: Dict[str, str] = Field(default_factory=dict, description="Artifact name -> path relative to the run")
    median_epoch_ms: Optional[float] = None
    median_inference_ms: Optional[float] = Field(None, description="Batch rank-map time over 8192 points")
    error: Optional[Dict[str, str]] = None
