"""
Experiment orchestration behind the neuralvqr CLI

A run lives in ``<output_dir>/<name>/seed-<s>`` (sweep cells add a cell
directory level) and holds the resolved config, the sample table, the model,
the epoch log, optional metrics, ``metrics.prom`` and a manifest written last.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import yaml

from ..conformal.calibration import calibrate
from ..conformal.evaluation import bounding_box, evaluate_sets
from ..datasets.convex import GroundTruthMap, gen_convex_variant
from ..datasets.synthetic import funnel_blocks, get_generator
from ..datasets.table import SampleTable
from ..datasets.tabular import load_csv
from ..datasets.transforms import ResidualTransform
from ..engine.model import QuantileModel
from ..engine.picnn import PicnnParams
from ..metrics.distances import W2_EXACT_MAX_N, sliced_w2, wasserstein2_exact
from ..metrics.kde import kde_kl, kde_l1
from ..metrics.unexplained_variance import l2_uv_report
from ..storage.artifacts import (
    RunDirectory,
    atomic_write_text,
    load_model,
    load_potential,
    load_table,
    read_json,
    save_calibration,
    save_epoch_log,
    save_frame,
    save_model,
    save_table,
    write_json,
    write_metrics_file,
)
from ..training.loops import train
from ..types.conformal import ConformalMethod, EvaluationRow
from ..types.datasets import TableSidecar
from ..types.errors import NeuralVqrError, TrainingDivergedError
from ..types.experiment import CONVEX_DATASETS, ExperimentConfig, RunManifest, RunStatus
from ..types.metrics import MetricReport
from ..types.models import PicnnConfig, TrainMethod

logger = logging.getLogger(__name__)

INFERENCE_POINTS = 8192
INFERENCE_REPEATS = 3

MODEL_FILE = "model.json"
TABLE_FILE = "data.csv"
EPOCHS_FILE = "epochs.csv"
METRICS_FILE = "metrics.csv"
PROM_FILE = "metrics.prom"
CONFIG_FILE = "config.yaml"
REFERENCE_FILE = "reference_potential.json"
EVALUATION_FILE = "evaluation.csv"
SWEEP_FILE = "sweep.csv"
SUMMARY_FILE = "summary.csv"

TruthSampler = Callable[[np.ndarray, int, np.random.Generator], np.ndarray]


@dataclass
class DataBundle:
    """A sample table plus, for synthetic data, a sampler of Y | X = x in table coordinates"""
    table: SampleTable
    truth: Optional[TruthSampler] = None
    truth_map: Optional[QuantileModel] = None
    reference: Optional[PicnnParams] = None


@dataclass
class Cell:
    """One point of a sweep grid"""
    dataset: str
    method: TrainMethod
    dimension: Optional[int]
    seed: int

    @property
    def label(self) -> str:
        label = f"{self.dataset}-{self.method.value}"
        return label if self.dimension is None else f"{label}-d{self.dimension}"


def picnn_config_for(config: ExperimentConfig, table: SampleTable) -> PicnnConfig:
    spec = config.model
    extra = {} if spec.alpha_log_init is None else {"alpha_log_init": spec.alpha_log_init}
    return PicnnConfig(d_u=table.d_y, d_x=table.d_x, width=spec.width, depth=spec.depth,
                       strong_convexity=spec.strong_convexity, **extra)


def _standardized_sampler(sample, table: SampleTable) -> TruthSampler:
    state = table.standardization

    def sampler(x, n, rng):
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        if state is None:
            return sample(x[0], n, rng)
        return state.transform_y(sample(state.inverse_x(x)[0], n, rng))
    return sampler


def _residualized(table: SampleTable, transform: ResidualTransform, standardize: bool) -> SampleTable:
    """Residuals are taken in original units and standardized afterwards"""
    X, Y = table.raw()
    table = transform.apply(replace(table, X=X, Y=Y, standardization=None))
    return table.standardized() if standardize else table


class ExperimentRunner:
    """Runs train / conformal / metrics / sweep stages from a validated config"""

    def __init__(self, config: ExperimentConfig, base_dir: Optional[Path] = None,
                 out_dir: Optional[str] = None, resume: bool = False, workers: Optional[int] = None):
        self.config = config
        self.base_dir = base_dir
        self.out_root = Path(out_dir or config.output_dir) / config.name
        self.resume = resume
        self.workers = workers or config.sweep.workers

    def _path(self, value: str) -> Path:
        return self.config.resolve(value, self.base_dir)

    def seeds(self, seed: Optional[int] = None) -> List[int]:
        return [seed] if seed is not None else list(self.config.seeds)

    def run_dir(self, seed: int, cell: Optional[Cell] = None) -> RunDirectory:
        root = self.out_root if cell is None else self.out_root / cell.label
        return RunDirectory(root / f"seed-{seed}")

    # Data

    def build_data(self, seed: int, dataset: Optional[str] = None, dimension: Optional[int] = None) -> DataBundle:
        """Generate or load the configured dataset for one seed, split and standardized"""
        ds = self.config.dataset
        name = dataset or ds.name
        if name == "csv":
            table = load_csv(self._path(ds.path), ds.x_columns, ds.y_columns, ds.split, seed)
            bundle = DataBundle(table)
        elif name in CONVEX_DATASETS:
            bundle = self._convex_data(name.split("-", 1)[1], seed)
        else:
            params = {}
            if name == "funnel":
                k, m = funnel_blocks(dimension) if dimension else ds.funnel_shape()
                params = {"k": k, "m": m, "sigma": ds.sigma}
            elif name == "glasses":
                params = {"two_dim": ds.two_dim}
            generator = get_generator(name, **params)
            table = generator.generate(ds.n, seed).with_splits(ds.split, seed)
            if ds.standardize and not ds.residual_predictions:
                table = table.standardized()
            bundle = DataBundle(table, _standardized_sampler(generator.sample_y_given_x, table))

        if ds.residual_predictions:
            transform = ResidualTransform.from_csv(self._path(ds.residual_predictions), ds.residual_columns)
            bundle = DataBundle(_residualized(bundle.table, transform, ds.standardize and name not in CONVEX_DATASETS))
            logger.info(f"residualized {name} against {ds.residual_predictions}")
        return bundle

    def _convex_data(self, base: str, seed: int) -> DataBundle:
        ds = self.config.dataset
        potential, base_state = None, None
        if ds.reference_potential:
            path = self._path(ds.reference_potential)
            potential = load_potential(path)
            # a potential trained by `neuralvqr train` on the base dataset comes with its standardization
            sidecar = path.parent / Path(TABLE_FILE).with_suffix(".json").name
            if sidecar.exists():
                meta = TableSidecar.model_validate(read_json(sidecar))
                if meta.generator == base:
                    base_state = meta.standardization
        table, truth = gen_convex_variant(base, self.config.dataset.n, seed, potential, base_state,
                                          train_if_missing=ds.train_reference_if_missing)
        table = table.with_splits(ds.split, seed)
        return DataBundle(table, truth.sample_y_given_x, truth, truth.potential)

    # Training

    def _timed_inference(self, model: QuantileModel, table: SampleTable, seed: int) -> float:
        """Median wall time of a batch rank-map solve over INFERENCE_POINTS rows"""
        rng = np.random.default_rng(seed)
        rows = rng.integers(0, len(table), size=INFERENCE_POINTS)
        X = table.X[rows] if table.d_x else None
        times = []
        for _ in range(INFERENCE_REPEATS):
            start = time.perf_counter()
            model.rank(table.Y[rows], X)
            times.append((time.perf_counter() - start) * 1000)
        return float(np.median(times))

    def train_run(self, seed: int, cell: Optional[Cell] = None, with_metrics: bool = True) -> RunManifest:
        """Train one seed (or sweep cell) into its run directory"""
        config = self.config
        run = self.run_dir(seed, cell)
        manifest = run.start(config.config_hash(), seed)
        timings: Dict[str, float] = {}
        artifacts: Dict[str, str] = {}

        resolved = config if cell is None else self._cell_config(cell)
        atomic_write_text(run.file(CONFIG_FILE), yaml.safe_dump(resolved.model_dump(mode="json"), sort_keys=False))
        artifacts["config"] = CONFIG_FILE

        start = time.perf_counter()
        bundle = self.build_data(seed, cell.dataset if cell else None, cell.dimension if cell else None)
        save_table(run.file(TABLE_FILE), bundle.table)
        artifacts["data"] = TABLE_FILE
        if bundle.reference is not None:
            write_json(run.file(REFERENCE_FILE), bundle.reference.to_record())
            artifacts["reference_potential"] = REFERENCE_FILE
        timings["data"] = time.perf_counter() - start

        train_config = resolved.train.model_copy(update={"seed": seed})
        train_table = bundle.table.split("train")
        logger.info(f"training {train_config.method.value} on {bundle.table.generator} "
                    f"({len(train_table)} rows, seed {seed}) into {run.path}")
        start = time.perf_counter()
        try:
            result = train(train_table, train_config, picnn_config_for(resolved, bundle.table), resolved.solver)
        except TrainingDivergedError as e:
            save_epoch_log(run.file(EPOCHS_FILE), e.partial_log)
            write_metrics_file(run.file(PROM_FILE))
            manifest = manifest.model_copy(update={
                "stage_timings": timings, "artifacts": {**artifacts, "epochs": EPOCHS_FILE},
                "error": {"code": e.code, "message": str(e)},
            })
            run.finish(manifest, RunStatus.FAILED)
            raise
        timings["train"] = time.perf_counter() - start

        model = result.model(resolved.solver)
        save_model(run.file(MODEL_FILE), model, seed)
        save_epoch_log(run.file(EPOCHS_FILE), result.log)
        artifacts.update(model=MODEL_FILE, epochs=EPOCHS_FILE)

        start = time.perf_counter()
        inference_ms = self._timed_inference(model, bundle.table, seed)
        timings["inference"] = time.perf_counter() - start

        if with_metrics and resolved.metrics.names:
            start = time.perf_counter()
            reports = self.compute_metrics(model, bundle, seed, resolved)
            save_frame(run.file(METRICS_FILE), pd.DataFrame([r.row() for r in reports]))
            artifacts["metrics"] = METRICS_FILE
            timings["metrics"] = time.perf_counter() - start

        write_metrics_file(run.file(PROM_FILE))
        artifacts["prometheus"] = PROM_FILE
        manifest = manifest.model_copy(update={
            "stage_timings": timings, "artifacts": artifacts,
            "median_epoch_ms": result.median_epoch_ms(), "median_inference_ms": inference_ms,
        })
        return run.finish(manifest)

    def _cell_config(self, cell: Cell) -> ExperimentConfig:
        dataset = self.config.dataset.model_copy(update={"name": cell.dataset})
        if cell.dimension is not None:
            k, m = funnel_blocks(cell.dimension)
            dataset = dataset.model_copy(update={"k": k, "m": m})
        return self.config.model_copy(update={
            "dataset": dataset,
            "train": self.config.train.model_copy(update={"method": cell.method}),
            "seeds": [cell.seed],
        })

    # Metrics

    def compute_metrics(self, model: QuantileModel, bundle: DataBundle, seed: int,
                        config: Optional[ExperimentConfig] = None) -> List[MetricReport]:
        """Compare model and truth conditionals at test conditions; values are means over conditions"""
        spec = (config or self.config).metrics
        test = bundle.table.split("test") if bundle.table.splits and bundle.table.splits.test else bundle.table
        rng = np.random.default_rng(seed)
        picks = rng.choice(len(test), size=min(spec.conditions, len(test)), replace=False)
        conditions = test.X[picks]
        reports: List[MetricReport] = []

        distribution = [m for m in spec.names if m != "l2_uv"]
        if distribution:
            if bundle.truth is None:
                raise ValueError("distribution metrics need a synthetic truth sampler")
            values: Dict[str, List[float]] = {m: [] for m in distribution}
            for x in conditions:
                truth = bundle.truth(x, spec.samples, rng)
                fitted = model.sample(x if model.d_x else None, spec.samples, rng)
                ok = np.all(np.isfinite(fitted), axis=1)
                fitted = fitted[ok]
                if "w2" in values:
                    n = min(len(truth), len(fitted), W2_EXACT_MAX_N)
                    values["w2"].append(wasserstein2_exact(truth[:n], fitted[:n]))
                if "sliced_w2" in values:
                    values["sliced_w2"].append(sliced_w2(truth, fitted, spec.projections, seed))
                if "kde_l1" in values:
                    values["kde_l1"].append(kde_l1(truth, fitted, rule=spec.bandwidth))
                if "kde_kl" in values:
                    values["kde_kl"].append(kde_kl(truth, fitted, rule=spec.bandwidth))
            common = {"conditions": len(conditions), "samples": spec.samples}
            for name, vals in values.items():
                value = float(np.mean(vals))
                config_ = dict(common)
                if name == "sliced_w2":
                    config_["projections"] = spec.projections
                if name.startswith("kde"):
                    config_["rule"] = spec.bandwidth
                clipped = max(value, 0.0) if name == "kde_kl" else None
                reports.append(MetricReport(metric=name, value=value, clipped_value=clipped,
                                            config=config_, seed=seed))

        if "l2_uv" in spec.names:
            if bundle.truth_map is None:
                raise ValueError("l2_uv needs a convex dataset with a ground-truth map")
            for direction in ("quantile", "rank"):
                reports.append(l2_uv_report(bundle.truth_map, model, conditions, spec.n_u, seed, direction))

        for report in reports:
            logger.info(f"{report.metric} = {report.value:.5g} (seed {seed})")
        return reports

    # Commands

    def cmd_train(self, seed: Optional[int] = None) -> List[RunManifest]:
        return [self.train_run(s) for s in self.seeds(seed)]

    def _load_run(self, model_dir: Optional[str], seed: int) -> Tuple[RunDirectory, QuantileModel, SampleTable]:
        run = RunDirectory(model_dir) if model_dir else self.run_dir(seed)
        if not run.file(MODEL_FILE).exists():
            raise FileNotFoundError(f"no model artifact at {run.file(MODEL_FILE)}; run `neuralvqr train` first")
        return run, load_model(run.file(MODEL_FILE)), load_table(run.file(TABLE_FILE))

    def cmd_conformal(self, model_dir: Optional[str] = None, seed: Optional[int] = None,
                      out: Optional[str] = None) -> pd.DataFrame:
        """Calibrate every (method, alpha) pair on each seed's calibration split and evaluate on its test split"""
        spec = self.config.conformal
        rows: List[EvaluationRow] = []
        for s in self.seeds(seed):
            source, model, table = self._load_run(model_dir, s)
            target = RunDirectory(out) if out else RunDirectory(source.path.parent / f"{source.path.name}-conformal")
            manifest = target.start(self.config.config_hash(), s)
            cal, test = table.split("cal"), table.split("test")
            X_cal = cal.X if table.d_x else None
            X_test = test.X if table.d_x else None
            box = bounding_box(test.Y)
            artifacts: Dict[str, str] = {}
            start = time.perf_counter()
            for method, alpha in product(spec.methods, spec.alphas):
                artifact = calibrate(method, model, cal.Y, X_cal, alpha, spec.split_fraction, s)
                name = f"calibration-{method.value}-{alpha}.json"
                save_calibration(target.file(name), artifact)
                artifacts[f"{method.value}@{alpha}"] = name
                evaluation = evaluate_sets(
                    model, artifact, test.Y, X_test, box=box, volume_points=spec.volume_points,
                    volume_conditions=spec.volume_conditions, wsc_directions=spec.wsc_directions,
                    delta=spec.wsc_delta, seed=s,
                )
                rows.append(EvaluationRow(
                    dataset=table.generator, method=method, alpha=alpha, seed=s,
                    coverage=evaluation.coverage, wsc=evaluation.wsc,
                    log_volume_per_dim=evaluation.log_volume_per_dim,
                    n_test=evaluation.n_test, unknown=evaluation.unknown,
                ))
            frame = pd.DataFrame([r.model_dump(mode="json") for r in rows if r.seed == s],
                                 columns=list(EvaluationRow.model_fields))
            save_frame(target.file(EVALUATION_FILE), frame)
            write_metrics_file(target.file(PROM_FILE))
            artifacts.update(evaluation=EVALUATION_FILE, prometheus=PROM_FILE)
            target.finish(manifest.model_copy(update={
                "artifacts": artifacts, "stage_timings": {"conformal": time.perf_counter() - start},
            }))
        return pd.DataFrame([r.model_dump(mode="json") for r in rows], columns=list(EvaluationRow.model_fields))

    def cmd_metrics(self, model_dir: Optional[str] = None, seed: Optional[int] = None,
                    out: Optional[str] = None) -> pd.DataFrame:
        """Recompute the configured metrics for trained runs"""
        frames = []
        for s in self.seeds(seed):
            source, model, table = self._load_run(model_dir, s)
            reference = source.file(REFERENCE_FILE)
            if reference.exists():
                # the stored table already carries the convex X; only the map is needed
                truth = GroundTruthMap(load_potential(reference), table.params.get("base", table.generator))
                bundle = DataBundle(table, truth.sample_y_given_x, truth, truth.potential)
            else:
                bundle = replace(self.build_data(s), table=table)
            reports = self.compute_metrics(model, bundle, s)
            frame = pd.DataFrame([r.row() for r in reports])
            if out:
                target = Path(out) / f"seed-{s}-{METRICS_FILE}"
            else:
                target = source.path.parent / f"{source.path.name}-{METRICS_FILE}"
            save_frame(target, frame)
            logger.info(f"metrics for seed {s} written to {target}")
            frames.append(frame)
        return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()

    def cmd_gen_data(self, seed: Optional[int] = None, out: Optional[str] = None) -> List[Path]:
        """Write each seed's sample table (and a convex variant's truth potential) to CSV + JSON"""
        paths = []
        for s in self.seeds(seed):
            bundle = self.build_data(s)
            path = Path(out or self.out_root) / f"data-seed-{s}.csv"
            save_table(path, bundle.table)
            if bundle.reference is not None:
                write_json(path.with_name(f"{path.stem}-{REFERENCE_FILE}"), bundle.reference.to_record())
            logger.info(f"wrote {len(bundle.table)} rows of {bundle.table.generator} to {path}")
            paths.append(path)
        return paths

    # Sweeps

    def cells(self) -> List[Cell]:
        sweep = self.config.sweep
        datasets = sweep.datasets or [self.config.dataset.name]
        methods = sweep.methods or [self.config.train.method]
        dimensions = sweep.dimensions or [None]
        return [Cell(d, m, dim, s) for d, m, dim, s in product(datasets, methods, dimensions, self.config.seeds)]

    def _run_cell(self, cell: Cell) -> dict:
        run = self.run_dir(cell.seed, cell)
        row = {"dataset": cell.dataset, "method": cell.method.value, "dimension": cell.dimension,
               "seed": cell.seed, "status": "complete", "skipped": False, "error": None}
        if self.resume and run.is_complete():
            logger.info(f"skipping complete cell {cell.label} seed {cell.seed}")
            manifest = run.manifest()
            row["skipped"] = True
        else:
            try:
                manifest = self.train_run(cell.seed, cell)
            except (NeuralVqrError, ValueError, RuntimeError, OSError) as e:
                code = getattr(e, "code", type(e).__name__)
                logger.error(f"cell {cell.label} seed {cell.seed} failed: {e}")
                row.update(status="failed", error=code)
                return row
        row["median_epoch_ms"] = manifest.median_epoch_ms
        row["median_inference_ms"] = manifest.median_inference_ms
        if run.file(METRICS_FILE).exists():
            for _, metric in pd.read_csv(run.file(METRICS_FILE)).iterrows():
                row[metric["metric"]] = metric["value"]
        return row

    def cmd_sweep(self) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """Train every grid cell on a worker pool; one collector writes the per-cell and summary CSVs"""
        cells = self.cells()
        logger.info(f"sweep {self.config.name}: {len(cells)} cell(s) on {self.workers} worker(s)")
        rows = []
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            futures = [pool.submit(self._run_cell, cell) for cell in cells]
            for future in as_completed(futures):
                rows.append(future.result())

        keys = ["dataset", "method", "dimension", "seed"]
        frame = pd.DataFrame(rows).sort_values(keys, na_position="first").reset_index(drop=True)
        summary = summarize_sweep(frame)
        save_frame(self.out_root / SWEEP_FILE, frame)
        save_frame(self.out_root / SUMMARY_FILE, summary)
        return frame, summary


SUMMARY_EXCLUDE = {"dataset", "method", "dimension", "seed", "status", "skipped", "error"}


def summarize_sweep(frame: pd.DataFrame) -> pd.DataFrame:
    """Long-format medians and interquartile ranges per (dataset, method, dimension, value)"""
    columns = ["dataset", "method", "dimension", "value", "median", "q25", "q75", "iqr", "n"]
    done = frame[frame["status"] == "complete"]
    values = [c for c in done.columns if c not in SUMMARY_EXCLUDE]
    if done.empty or not values:
        return pd.DataFrame(columns=columns)
    long = done.melt(id_vars=["dataset", "method", "dimension"], value_vars=values,
                     var_name="value", value_name="x").dropna(subset=["x"])
    grouped = long.groupby(["dataset", "method", "dimension", "value"], dropna=False)["x"]
    summary = pd.DataFrame({
        "median": grouped.median(),
        "q25": grouped.quantile(0.25),
        "q75": grouped.quantile(0.75),
        "n": grouped.count(),
    }).reset_index()
    summary["iqr"] = summary["q75"] - summary["q25"]
    return summary[columns]
