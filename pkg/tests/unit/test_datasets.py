"""
Unit tests for synthetic generators, sample tables and CSV ingestion
"""

import math

import numpy as np
import pytest

from neuralvqr.datasets.convex import GroundTruthMap, gen_convex_variant
from neuralvqr.datasets.synthetic import (
    FunnelGenerator,
    funnel_blocks,
    gen_banana,
    gen_funnel,
    gen_glasses,
    gen_star,
    get_generator,
    star_point,
)
from neuralvqr.datasets.table import SampleTable, make_splits
from neuralvqr.datasets.tabular import load_csv
from neuralvqr.datasets.transforms import ResidualTransform, ServingUnits
from neuralvqr.types.datasets import TableSidecar
from neuralvqr.types.errors import (
    CsvParseError,
    DegenerateInputError,
    MissingReferencePotentialError,
    ShapeMismatchError,
)


class TestGenerators:
    """Test the synthetic benchmark laws"""

    def test_banana_shapes_and_support(self):
        table = gen_banana(500, seed=0)
        assert (table.d_x, table.d_y) == (1, 2)
        assert table.X.min() >= 0.8 and table.X.max() <= 3.2

    def test_banana_curve(self):
        table = gen_banana(2000, seed=1)
        x, y0 = table.X[:, 0], table.Y[:, 0]
        # y0 - sin(x) = (1 - cos z) / 2 + r sin(phi) lies in [-0.1, 1.1]
        residual = y0 - np.sin(x)
        assert residual.min() >= -0.1 - 1e-12
        assert residual.max() <= 1.1 + 1e-12

    def test_star_support(self):
        table = gen_star(500, seed=0)
        assert table.X.min() >= 0.0 and table.X.max() <= 2.0 / 3.0

    def test_star_rotation_period(self, rng):
        u = rng.standard_normal((5, 2))
        np.testing.assert_allclose(star_point(u, 0.0), star_point(u, 2.0 * math.pi), atol=1e-12)

    def test_glasses_one_dimensional(self):
        table = gen_glasses(1000, seed=0)
        assert (table.d_x, table.d_y) == (1, 1)
        assert table.Y.min() >= -3.5 - 1e-12
        assert table.Y.max() <= 8.5 + 1e-12

    def test_glasses_two_dimensional_branches(self):
        table = gen_glasses(300, seed=2, two_dim=True)
        x = table.X[:, 0]
        # y1 + y2 does not depend on the noise
        total = table.Y[:, 0] + table.Y[:, 1]
        expected = 5 * np.sin(3 * math.pi * x) + 5 * np.sin(math.pi * (1 + 3 * x)) + 5.0
        np.testing.assert_allclose(total, expected, atol=1e-10)

    def test_funnel_without_spread(self):
        table = gen_funnel(k=2, m=3, sigma=0.0, n=2000, seed=0)
        assert (table.d_x, table.d_y) == (2, 6)
        np.testing.assert_array_equal(table.X, 0.0)
        assert table.Y.std(axis=0) == pytest.approx(np.ones(6), abs=0.08)

    def test_funnel_scale_follows_x(self, rng):
        generator = FunnelGenerator(k=1, m=2, sigma=3.0)
        draws = generator.sample_y_given_x([2.0], 4000, rng)
        assert draws.std(axis=0) == pytest.approx(np.full(2, math.e), rel=0.05)

    def test_funnel_blocks(self):
        assert funnel_blocks(8) == (4, 2)
        assert funnel_blocks(2) == (1, 2)
        assert funnel_blocks(5) == (1, 5)
        with pytest.raises(ValueError):
            funnel_blocks(0)

    def test_funnel_arguments(self):
        with pytest.raises(ValueError):
            FunnelGenerator(k=0)
        with pytest.raises(ValueError):
            FunnelGenerator(sigma=-1.0)

    @pytest.mark.parametrize("name", ["banana", "star", "glasses", "funnel"])
    def test_seeded_determinism(self, name):
        a = get_generator(name).generate(50, seed=9)
        b = get_generator(name).generate(50, seed=9)
        c = get_generator(name).generate(50, seed=10)
        np.testing.assert_array_equal(a.Y, b.Y)
        assert not np.array_equal(a.Y, c.Y)

    def test_unknown_generator(self):
        with pytest.raises(ValueError):
            get_generator("spiral")

    def test_n_must_be_positive(self):
        with pytest.raises(ValueError):
            gen_banana(0, seed=0)


class TestSampleTable:
    """Test splits and standardization"""

    def test_split_sizes(self):
        splits = make_splits(1000, (0.6, 0.2, 0.2), seed=0)
        assert (len(splits.train), len(splits.cal), len(splits.test)) == (600, 200, 200)
        assert sorted(splits.train + splits.cal + splits.test) == list(range(1000))

    def test_split_remainder_goes_last(self):
        splits = make_splits(11, (0.5, 0.5), seed=0)
        assert (len(splits.train), len(splits.cal), len(splits.test)) == (6, 5, 0)

    def test_bad_ratios(self):
        with pytest.raises(ValueError):
            make_splits(10, (0.5, 0.6), seed=0)

    def test_standardize_uses_train_rows(self):
        table = gen_banana(1000, seed=3).with_splits((0.6, 0.2, 0.2)).standardized()
        train = table.split("train")
        np.testing.assert_allclose(train.Y.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(train.Y.std(axis=0), 1.0, atol=1e-10)

    def test_raw_round_trip(self):
        original = gen_star(200, seed=4)
        X, Y = original.standardized().raw()
        np.testing.assert_allclose(X, original.X, atol=1e-12)
        np.testing.assert_allclose(Y, original.Y, atol=1e-12)

    def test_constant_column_rejected(self):
        table = SampleTable(X=np.ones((10, 1)), Y=np.arange(10.0), generator="t", seed=0)
        with pytest.raises(DegenerateInputError):
            table.standardized()

    def test_split_without_splits(self):
        with pytest.raises(ValueError):
            gen_banana(10, seed=0).split("train")


class TestCsv:
    """Test CSV ingestion"""

    def write(self, tmp_path, text):
        path = tmp_path / "data.csv"
        path.write_text(text)
        return path

    def test_load(self, tmp_path, rng):
        rows = "\n".join(f"{a},{b},{c}" for a, b, c in rng.standard_normal((50, 3)))
        table = load_csv(self.write(tmp_path, "x,y1,y2\n" + rows), ["x"], ["y1", "y2"], seed=1)
        assert (len(table), table.d_x, table.d_y) == (50, 1, 2)
        assert table.standardization is not None
        assert len(table.splits.train) == 30

    def test_bad_rows_report_line_numbers(self, tmp_path):
        text = "x,y\n1,2\n2,oops\n3,4\n4,\n5,6\n"
        with pytest.raises(CsvParseError) as excinfo:
            load_csv(self.write(tmp_path, text), ["x"], ["y"])
        assert excinfo.value.line_numbers == [3, 5]
        assert "3, 5" in str(excinfo.value)

    def test_line_numbers_count_skipped_blank_lines(self, tmp_path):
        text = "x,y\n1,2\n\n\n2,oops\n3,4\n"
        with pytest.raises(CsvParseError) as excinfo:
            load_csv(self.write(tmp_path, text), ["x"], ["y"])
        assert excinfo.value.line_numbers == [5]

    def test_missing_column(self, tmp_path):
        with pytest.raises(CsvParseError):
            load_csv(self.write(tmp_path, "x,y\n1,2\n2,3\n"), ["x"], ["z"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(CsvParseError):
            load_csv(tmp_path / "absent.csv", ["x"], ["y"])

    def test_constant_column(self, tmp_path):
        text = "x,y\n" + "\n".join(f"1,{i}" for i in range(20))
        with pytest.raises(DegenerateInputError):
            load_csv(self.write(tmp_path, text), ["x"], ["y"])

    def test_no_x_columns(self, tmp_path):
        text = "y\n" + "\n".join(str(i) for i in range(10))
        table = load_csv(self.write(tmp_path, text), [], ["y"])
        assert table.d_x == 0


class TestResidualTransform:
    """Test residualization against external predictions"""

    def test_round_trip(self, rng):
        Y, P = rng.standard_normal((6, 2)), rng.standard_normal((6, 2))
        transform = ResidualTransform(P)
        np.testing.assert_allclose(transform.restore(transform.residualize(Y)), Y)

    def test_row_selection(self, rng):
        P = rng.standard_normal((6, 1))
        rows = np.array([4, 1])
        out = ResidualTransform(P).residualize(np.zeros((2, 1)), rows)
        np.testing.assert_array_equal(out, -P[rows])

    def test_row_count_mismatch(self):
        with pytest.raises(ValueError):
            ResidualTransform(np.zeros((3, 1))).residualize(np.zeros((4, 1)))


class TestServingUnits:
    """Test the mapping between original units and model units"""

    def test_matches_training_pipeline(self, rng):
        Y, X, P = rng.standard_normal((40, 2)) * 3 + 1, rng.standard_normal((40, 1)) + 5, rng.standard_normal((40, 2))
        table = SampleTable(X=X, Y=Y, generator="csv", seed=0)
        fitted = ResidualTransform(P).apply(table).standardized()
        units = ServingUnits.from_sidecar(TableSidecar(generator=fitted.generator, seed=0, x_columns=["x0"],
                                                       y_columns=["y0", "y1"],
                                                       standardization=fitted.standardization))
        assert units.residual
        np.testing.assert_allclose(units.to_model_y(Y, P), fitted.Y)
        np.testing.assert_allclose(units.to_model_x(X), fitted.X)
        np.testing.assert_allclose(units.from_model_y(fitted.Y, P), Y)

    def test_identity_without_state(self, rng):
        Y = rng.standard_normal((3, 2))
        units = ServingUnits()
        assert units.identity
        np.testing.assert_array_equal(units.to_model_y(Y), Y)

    def test_prediction_shape_checked(self):
        units = ServingUnits(residual=True)
        with pytest.raises(ShapeMismatchError):
            units.to_model_y(np.zeros((2, 2)), np.zeros((3, 2)))


class TestConvexVariants:
    """Test convex-potential benchmark variants"""

    def test_missing_potential(self):
        with pytest.raises(MissingReferencePotentialError):
            gen_convex_variant("banana", 10, seed=0)

    def test_unknown_base(self, small_potential):
        with pytest.raises(ValueError):
            gen_convex_variant("funnel", 10, seed=0, potential=small_potential)

    def test_draws_follow_the_potential(self, small_potential):
        table, truth = gen_convex_variant("banana", 30, seed=1, potential=small_potential)
        assert table.generator == "convex-banana"
        assert isinstance(truth, GroundTruthMap)
        ranks = truth.rank(table.Y, table.X)
        ok = ranks.converged
        assert ok.mean() > 0.9
        np.testing.assert_allclose(truth.quantile(ranks.values[ok], table.X[ok]).values, table.Y[ok], atol=1e-6)

    def test_seeded(self, small_potential):
        a, _ = gen_convex_variant("star", 10, seed=2, potential=small_potential)
        b, _ = gen_convex_variant("star", 10, seed=2, potential=small_potential)
        np.testing.assert_array_equal(a.Y, b.Y)

    def test_requires_strong_convexity(self, make_potential):
        with pytest.raises(ValueError):
            GroundTruthMap(make_potential(strong_convexity=False), "banana")
