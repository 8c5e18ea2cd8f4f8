"""
Run directories and artifact (de)serialization

Every file is written to a temporary sibling and renamed into place. Once a
run's manifest says ``complete`` the directory refuses further writes.
"""

import json
import logging
import os
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Optional, Union

import pandas as pd

from .. import __version__
from ..datasets.table import SampleTable
from ..engine.amortizer import AmortizerParams
from ..engine.model import QuantileModel
from ..engine.picnn import PicnnParams
from ..metrics.prometheus import get_metrics_text
from ..types.conformal import CalibrationArtifact
from ..types.datasets import TableSidecar
from ..types.errors import RunDirectoryError
from ..types.experiment import RunManifest, RunStatus
from ..types.models import EpochRecord, ReferenceLaw, SolverSettings, Variant

logger = logging.getLogger(__name__)

SCORE_CAP = int(os.getenv("NEURALVQR_SCORE_CAP", "10000"))
MODEL_FORMAT = "neuralvqr.model"
MODEL_VERSION = 1

PathLike = Union[str, Path]


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")


def atomic_write_text(path: PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: PathLike, payload) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True))


def read_json(path: PathLike):
    return json.loads(Path(path).read_text())


# Models

def model_record(model: QuantileModel, seed: Optional[int] = None) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "variant": model.variant.value,
        "reference": model.reference.value,
        "seed": seed,
        "solver": model.settings.model_dump(mode="json"),
        "potential": model.potential.to_record(),
        "amortizer": model.amortizer.to_record() if model.amortizer is not None else None,
    }


def save_model(path: PathLike, model: QuantileModel, seed: Optional[int] = None) -> None:
    write_json(path, model_record(model, seed))
    logger.info(f"model written to {path}")


def model_from_record(record: dict) -> QuantileModel:
    if record.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a model artifact (format {record.get('format')!r})")
    if record.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model artifact version {record.get('version')}")
    amortizer = AmortizerParams.from_record(record["amortizer"]) if record.get("amortizer") else None
    return QuantileModel(
        PicnnParams.from_record(record["potential"]),
        Variant(record["variant"]),
        ReferenceLaw(record["reference"]),
        settings=SolverSettings(**record["solver"]),
        amortizer=amortizer,
    )


def load_model(path: PathLike) -> QuantileModel:
    return model_from_record(read_json(path))


def load_potential(path: PathLike) -> PicnnParams:
    """The potential of a saved model (or a bare potential record)"""
    record = read_json(path)
    if record.get("format") == MODEL_FORMAT:
        return PicnnParams.from_record(record["potential"])
    return PicnnParams.from_record(record)


# Calibration artifacts

def save_calibration(path: PathLike, artifact: CalibrationArtifact, cap: int = SCORE_CAP) -> None:
    """Scores are dropped above ``cap`` entries; the calibrated threshold is always kept"""
    if len(artifact.scores) > cap:
        artifact = artifact.model_copy(update={"scores": [], "scores_truncated": True})
    # json keeps +inf radii as Infinity
    write_json(path, artifact.model_dump(mode="python"))


def load_calibration(path: PathLike) -> CalibrationArtifact:
    return CalibrationArtifact.model_validate(read_json(path))


# Tables and logs

def save_table(path: PathLike, table: SampleTable) -> None:
    """CSV of x*/y* columns plus a JSON sidecar with seed, standardization and splits"""
    path = Path(path)
    x_cols = [f"x{i}" for i in range(table.d_x)]
    y_cols = [f"y{i}" for i in range(table.d_y)]
    frame = pd.DataFrame(table.X, columns=x_cols).join(pd.DataFrame(table.Y, columns=y_cols))
    atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g"))
    sidecar = TableSidecar(
        generator=table.generator, seed=table.seed, x_columns=x_cols, y_columns=y_cols,
        standardization=table.standardization, splits=table.splits, params=table.params,
    )
    write_json(path.with_suffix(".json"), sidecar.model_dump(mode="json"))


def load_table(path: PathLike) -> SampleTable:
    path = Path(path)
    sidecar = TableSidecar.model_validate(read_json(path.with_suffix(".json")))
    frame = pd.read_csv(path)
    return SampleTable(
        X=frame[sidecar.x_columns].to_numpy(dtype=float), Y=frame[sidecar.y_columns].to_numpy(dtype=float),
        generator=sidecar.generator, seed=sidecar.seed, standardization=sidecar.standardization,
        splits=sidecar.splits, params=sidecar.params,
    )


def save_epoch_log(path: PathLike, records: Iterable[EpochRecord]) -> None:
    frame = pd.DataFrame([r.model_dump() for r in records],
                         columns=list(EpochRecord.model_fields))
    atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g"))


def save_frame(path: PathLike, frame: pd.DataFrame) -> None:
    atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g"))


class RunDirectory:
    """One seed's outputs under <output_dir>/<name>/seed-<s>"""

    MANIFEST = "manifest.json"

    def __init__(self, path: PathLike):
        self.path = Path(path)

    def file(self, name: str) -> Path:
        return self.path / name

    @property
    def manifest_path(self) -> Path:
        return self.file(self.MANIFEST)

    def manifest(self) -> Optional[RunManifest]:
        if not self.manifest_path.exists():
            return None
        return RunManifest.model_validate(read_json(self.manifest_path))

    def is_complete(self) -> bool:
        manifest = self.manifest()
        return manifest is not None and manifest.status == RunStatus.COMPLETE

    def start(self, config_hash: str, seed: int) -> RunManifest:
        """Open for writing; a complete directory is rejected"""
        if self.is_complete():
            raise RunDirectoryError(f"{self.path} holds a complete run and is immutable")
        self.path.mkdir(parents=True, exist_ok=True)
        return RunManifest(config_hash=config_hash, version=__version__, seed=seed, started_at=utc_now())

    def guard(self) -> None:
        if self.is_complete():
            raise RunDirectoryError(f"{self.path} holds a complete run and is immutable")

    def finish(self, manifest: RunManifest, status: RunStatus = RunStatus.COMPLETE) -> RunManifest:
        manifest = manifest.model_copy(update={"status": status, "finished_at": utc_now()})
        write_json(self.manifest_path, manifest.model_dump(mode="json"))
        logger.info(f"run {self.path} finished with status {status.value}")
        return manifest


def write_metrics_file(path: PathLike) -> None:
    """Snapshot of the process-wide metrics registry next to run artifacts.

    Counters are cumulative over the process, so a sweep cell's snapshot also
    counts work done by cells that ran before it or alongside it.
    """
    atomic_write_text(path, get_metrics_text())
