"""
Unit tests for experiment configuration loading and validation
"""

from pathlib import Path

import pytest

from neuralvqr.types.errors import ConfigInvalidError
from neuralvqr.types.experiment import ExperimentConfig
from neuralvqr.types.models import SolverSettings, TrainMethod

EXPERIMENTS = Path(__file__).resolve().parents[2] / "experiments"


def write(tmp_path, text, name="config.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoad:
    """Test YAML parsing and schema validation"""

    def test_defaults(self, tmp_path):
        config = ExperimentConfig.load(write(tmp_path, "name: demo\n"))
        assert config.name == "demo"
        assert config.dataset.name == "banana"
        assert config.train.method == TrainMethod.AC_NQR
        assert config.seeds == [0]

    def test_empty_file(self, tmp_path):
        assert ExperimentConfig.load(write(tmp_path, "")).name == "experiment"

    def test_nested_values(self, tmp_path):
        text = (
            "dataset:\n  name: funnel\n  k: 2\n  m: 2\n"
            "train:\n  method: C-NQR\n  epochs: 3\n"
            "solver:\n  max_iter: 40\n"
            "seeds: [1, 2]\n"
        )
        config = ExperimentConfig.load(write(tmp_path, text))
        assert config.dataset.funnel_shape() == (2, 2)
        assert config.train.method == TrainMethod.C_NQR
        assert config.solver.max_iter == 40
        assert config.seeds == [1, 2]

    def test_unknown_key_lists_its_path(self, tmp_path):
        with pytest.raises(ConfigInvalidError) as excinfo:
            ExperimentConfig.load(write(tmp_path, "train:\n  learning_rate: 0.1\n"))
        assert any(p.startswith("train.learning_rate") for p in excinfo.value.problems)

    def test_every_problem_reported(self, tmp_path):
        text = "train:\n  epochs: 0\n  batch_size: 0\nconformal:\n  alphas: [1.5]\n"
        with pytest.raises(ConfigInvalidError) as excinfo:
            ExperimentConfig.load(write(tmp_path, text))
        assert len(excinfo.value.problems) >= 3

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigInvalidError):
            ExperimentConfig.load(tmp_path / "absent.yaml")

    def test_not_a_mapping(self, tmp_path):
        with pytest.raises(ConfigInvalidError):
            ExperimentConfig.load(write(tmp_path, "- 1\n- 2\n"))

    def test_bad_yaml(self, tmp_path):
        with pytest.raises(ConfigInvalidError):
            ExperimentConfig.load(write(tmp_path, "train: [unclosed\n"))


class TestSemantics:
    """Test cross-field checks"""

    def test_unknown_dataset(self):
        assert any("unknown dataset" in p for p in ExperimentConfig(dataset={"name": "spiral"}).problems())

    def test_csv_needs_path_and_columns(self):
        problems = ExperimentConfig(dataset={"name": "csv"}, metrics={"names": []}).problems()
        assert any(p.startswith("dataset.path") for p in problems)
        assert any(p.startswith("dataset.y_columns") for p in problems)

    def test_csv_path_resolved_against_config(self, tmp_path):
        (tmp_path / "rows.csv").write_text("x,y\n1,2\n")
        text = "dataset:\n  name: csv\n  path: rows.csv\n  x_columns: [x]\n  y_columns: [y]\nmetrics:\n  names: []\n"
        config = ExperimentConfig.load(write(tmp_path, text))
        assert config.resolve(config.dataset.path, tmp_path).exists()

    def test_csv_rejects_distribution_metrics(self):
        config = ExperimentConfig(dataset={"name": "csv", "path": "x.csv", "y_columns": ["y"]})
        assert any("distribution metrics" in p for p in config.problems(check_files=False))

    def test_convex_needs_reference_potential(self):
        problems = ExperimentConfig(dataset={"name": "convex-banana"}).problems()
        assert any(p.startswith("dataset.reference_potential") for p in problems)
        trained = ExperimentConfig(dataset={"name": "convex-banana", "train_reference_if_missing": True})
        assert trained.problems() == []

    def test_l2_uv_needs_convex_data(self):
        problems = ExperimentConfig(metrics={"names": ["l2_uv"]}).problems()
        assert any("l2_uv" in p for p in problems)

    def test_dimensions_only_for_funnel(self):
        config = ExperimentConfig(sweep={"dimensions": [2, 4]})
        assert any(p.startswith("sweep.dimensions") for p in config.problems())

    def test_hpd_dimension_limit(self):
        config = ExperimentConfig(dataset={"name": "funnel"}, sweep={"dimensions": [4, 32]})
        assert any("HPD" in p for p in config.problems())

    def test_quantile_needs_gaussian(self):
        config = ExperimentConfig(train={"reference": "uniform-ball"})
        assert any("Quantile" in p for p in config.problems())

    def test_entropic_sweep_needs_u_variant(self):
        config = ExperimentConfig(train={"variant": "Y", "method": "C-NQR"}, sweep={"methods": ["EC-NQR"]})
        assert any("EC-NQR" in p for p in config.problems())

    def test_no_seeds(self):
        assert "seeds: at least one seed is required" in ExperimentConfig(seeds=[]).problems()

    def test_solver_line_search_constants(self):
        with pytest.raises(ValueError):
            SolverSettings(c1=0.9, c2=0.5)


class TestHash:
    """Test configuration hashing"""

    def test_stable_and_sensitive(self):
        a, b = ExperimentConfig(name="x"), ExperimentConfig(name="x")
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != ExperimentConfig(name="y").config_hash()
        assert len(a.config_hash()) == 64


class TestShippedExperiments:
    """The example experiment files stay valid"""

    @pytest.mark.parametrize("name", ["banana.yaml", "funnel.yaml", "convex-star.yaml"])
    def test_loads_cleanly(self, name):
        config = ExperimentConfig.load(EXPERIMENTS / name)
        assert config.problems() == []
