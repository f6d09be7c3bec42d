"""Metrics, spatial-filter extraction, topography, ERP maps, slope analysis,
filter ranking, and the differential-sample report."""

import numpy as np
import pytest

from eegspat import analysis, synthgen
from eegspat.data import EpochedDataset
from eegspat.engine import Network
from eegspat.errors import DimensionError, MissingClassError, StructuralError
from eegspat.models import TrainedModel, build_attloc, build_mtm, build_relloc
from eegspat.montage import get_montage

from oracles import auc_pairwise


class TestRocAuc:
    def test_perfect_separation(self):
        assert analysis.roc_auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0

    def test_hand_counted_three_quarters(self):
        assert analysis.roc_auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]) == 0.75

    def test_all_ties_half(self):
        assert analysis.roc_auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_matches_pairwise_on_random_sets(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 100))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = np.round(rng.normal(size=n), int(rng.integers(0, 3)))
            assert analysis.roc_auc(scores, labels) == pytest.approx(
                auc_pairwise(scores, labels), abs=1e-12
            )

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=50)
        labels = rng.integers(0, 2, size=50)
        labels[:2] = [0, 1]
        base = analysis.roc_auc(scores, labels)
        assert analysis.roc_auc(np.exp(scores), labels) == pytest.approx(base)
        assert analysis.roc_auc(3 * scores + 7, labels) == pytest.approx(base)

    def test_label_flip_complement(self):
        rng = np.random.default_rng(2)
        scores = rng.normal(size=40)
        labels = rng.integers(0, 2, size=40)
        labels[:2] = [0, 1]
        total = analysis.roc_auc(scores, labels) + analysis.roc_auc(scores, 1 - labels)
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_single_class_undefined(self):
        with pytest.raises(MissingClassError):
            analysis.roc_auc([0.1, 0.2], [1, 1])


class TestMacroOvr:
    def test_macro_is_unweighted_mean(self):
        scores = np.array([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6]])
        labels = np.array([0, 1, 2])
        res = analysis.macro_ovr(scores, labels)
        assert res.per_class == [1.0, 1.0, 1.0]
        assert res.macro == 1.0

    def test_missing_class_excluded(self):
        scores = np.array([[0.8, 0.2, 0.0], [0.1, 0.9, 0.0], [0.7, 0.3, 0.0]])
        labels = np.array([0, 1, 0])  # class 2 absent
        res = analysis.macro_ovr(scores, labels)
        assert res.per_class[2] is None
        assert res.macro == pytest.approx(np.mean([res.per_class[0], res.per_class[1]]))

    def test_random_scores_near_half(self):
        rng = np.random.default_rng(3)
        n = 4000
        scores = rng.random((n, 5))
        labels = rng.integers(0, 5, size=n)
        res = analysis.macro_ovr(scores, labels)
        assert abs(res.macro - 0.5) < 0.05


class TestSpatialFilters:
    def test_row_counts_match_architecture(self):
        assert analysis.extract_spatial_filters(
            Network(build_relloc(), seed=0)
        ).weights.shape == (10, 64)
        assert analysis.extract_spatial_filters(
            Network(build_mtm(), seed=0)
        ).weights.shape == (15, 64)

    def test_extraction_reads_seeded_weights(self):
        net = Network(build_attloc(), seed=0)
        kernel = net.layers["block1_spatial"].params["kernel"]
        planted = np.arange(64.0)
        kernel[:, 0, 0, 2] = planted
        got = analysis.extract_spatial_filters(net)
        np.testing.assert_array_equal(got.weights[2], planted)

    def test_model_without_spatial_layer(self):
        from eegspat.engine import LayerSpec, NetworkSpec, NodeSpec

        spec = NetworkSpec(
            inputs={"x": {"shape": [4], "dtype": "float"}},
            nodes=[NodeSpec("d", LayerSpec("dense", {"units": 2}), ["x"])],
            outputs={"y": "d"},
        )
        with pytest.raises(StructuralError):
            analysis.extract_spatial_filters(Network(spec, seed=0))


class TestTopography:
    def test_constant_weights_give_flat_map(self):
        montage = get_montage()
        topo = analysis.topography_export(np.full(64, 2.5), montage)
        inside = np.isfinite(topo.grid)
        assert topo.grid[inside].max() - topo.grid[inside].min() < 1e-9

    def test_point_source_peaks_at_electrode(self):
        montage = get_montage()
        weights = np.zeros(64)
        cz = montage.index("Cz")
        weights[cz] = 1.0
        topo = analysis.topography_export(weights, montage, grid_n=67)
        grid = np.where(np.isfinite(topo.grid), topo.grid, -np.inf)
        iy, ix = np.unravel_index(np.argmax(grid), grid.shape)
        axis = np.linspace(-topo.extent, topo.extent, 67)
        peak_xy = np.array([axis[ix], axis[iy]])
        cell = 2 * topo.extent / 66
        assert np.abs(peak_xy - topo.electrodes_2d[cz]).max() <= cell + 1e-12

    def test_weight_length_checked(self):
        with pytest.raises(DimensionError):
            analysis.topography_export(np.zeros(63), get_montage())


def oracle_model(truth, n_filters=10, builder=build_attloc, seed=0):
    """Model whose first spatial filter projects the attention component
    with unit gain, for analytic checks on synthetic data."""
    net = Network(builder(), seed=seed)
    topo = 0.5 * (truth.attention_topo["left"] + truth.attention_topo["right"])
    kernel = net.layers["block1_spatial"].params["kernel"]
    kernel[:, 0, 0, 0] = topo / (topo @ topo)
    net.layers["block1_spatial"].params["bias"][:] = 0.0
    return net


class TestErpFeatureMap:
    def test_zero_noise_matches_planted_curves(self):
        config = synthgen.SynthConfig(
            n_subjects=1, trials_per_condition=2, noise_sd=0.0, seed=5
        )
        ds, truth = synthgen.generate(config)
        net = oracle_model(truth)
        fmap = analysis.erp_feature_map(net, ds, 0, task="relative")
        assert fmap.values.shape == (5, 350)
        topo = 0.5 * (truth.attention_topo["left"] + truth.attention_topo["right"])
        w = topo / (topo @ topo)
        for k in range(5):
            amp = config.attention_base - config.gradient_slope * k
            sens = (w @ truth.sensory_topo) * truth.sensory_curve
            # left and right trials average to the symmetric topography
            expected = sens + amp * truth.attention_envelope
            np.testing.assert_allclose(fmap.values[k], expected, atol=1e-5)

    def test_duplicating_samples_leaves_map_unchanged(self):
        config = synthgen.SynthConfig(
            n_subjects=1, trials_per_condition=2, noise_sd=1.0, seed=6
        )
        ds, truth = synthgen.generate(config)
        net = oracle_model(truth)
        base = analysis.erp_feature_map(net, ds, 0, task="relative")
        doubled = EpochedDataset(
            eeg=np.concatenate([ds.eeg, ds.eeg]),
            speaker=np.concatenate([ds.speaker, ds.speaker]),
            side=np.concatenate([ds.side, ds.side]),
            subject=np.concatenate([ds.subject, ds.subject]),
            split=np.concatenate([ds.split, ds.split]),
            rate=ds.rate,
            t0=ds.t0,
        )
        again = analysis.erp_feature_map(net, doubled, 0, task="relative")
        np.testing.assert_allclose(again.values, base.values, atol=1e-10)

    def test_attended_task_has_two_classes(self):
        config = synthgen.SynthConfig(n_subjects=1, trials_per_condition=2, seed=7)
        ds, truth = synthgen.generate(config)
        fmap = analysis.erp_feature_map(oracle_model(truth), ds, 0, task="attended")
        assert fmap.values.shape == (2, 350)

    def test_empty_class_named_in_error(self):
        config = synthgen.SynthConfig(n_subjects=1, trials_per_condition=2, seed=8)
        ds, truth = synthgen.generate(config)
        keep = ds.relative != 3
        subset = EpochedDataset(
            eeg=ds.eeg[keep],
            speaker=ds.speaker[keep],
            side=ds.side[keep],
            subject=ds.subject[keep],
            split=ds.split[keep],
        )
        with pytest.raises(MissingClassError, match="3"):
            analysis.erp_feature_map(oracle_model(truth), subset, 0, task="relative")


class TestSlopeAnalysis:
    def fmap(self, values):
        return analysis.ErpFeatureMap(
            values=np.asarray(values, dtype=np.float64),
            times=np.arange(values.shape[1]) / 500.0,
            task="relative",
            filter_index=0,
        )

    def test_equal_amplitudes_zero_slope(self):
        values = np.ones((5, 20)) * 3.3
        series = analysis.slope_analysis(self.fmap(values))
        np.testing.assert_allclose(series.slopes, 0.0, atol=1e-12)
        np.testing.assert_allclose(series.residuals, 0.0, atol=1e-12)

    def test_collinear_amplitudes_exact(self):
        values = np.zeros((5, 4))
        values[1:, :] = np.array([4.0, 3.0, 2.0, 1.0])[:, None]
        series = analysis.slope_analysis(self.fmap(values))
        np.testing.assert_allclose(series.slopes, -1.0, atol=1e-12)
        np.testing.assert_allclose(series.residuals, 0.0, atol=1e-14)

    def test_target_class_not_used(self):
        values = np.zeros((5, 3))
        values[0, :] = 99.0  # class 0 must not influence the fit
        series = analysis.slope_analysis(self.fmap(values))
        np.testing.assert_allclose(series.slopes, 0.0, atol=1e-12)

    def test_planted_slope_recovered_exactly(self):
        config = synthgen.SynthConfig(
            n_subjects=1, trials_per_condition=2, noise_sd=0.0,
            gradient_slope=1.0, seed=9,
        )
        ds, truth = synthgen.generate(config)
        fmap = analysis.erp_feature_map(oracle_model(truth), ds, 0, task="relative")
        series = analysis.slope_analysis(fmap)
        center = np.argmin(np.abs(series.times - np.mean(config.attention_window)))
        assert truth.attention_envelope[center] == 1.0
        np.testing.assert_allclose(series.slopes[center], -1.0, atol=1e-9)


class TestFilterRankingByClassification:
    def test_null_features_score_near_chance(self):
        rng = np.random.default_rng(10)
        x_tr = rng.normal(size=(600, 40))
        y_tr = rng.integers(0, 5, size=600)
        x_te = rng.normal(size=(600, 40))
        y_te = rng.integers(0, 5, size=600)
        w, b = analysis.softmax_regression(x_tr, y_tr, n_classes=5)
        acc = (np.argmax(x_te @ w + b, axis=1) == y_te).mean()
        assert abs(acc - 0.2) < 0.05

    def test_table_shape_and_order(self):
        config = synthgen.SynthConfig(
            n_subjects=1, trials_per_condition=4, noise_sd=2.0, seed=11
        )
        ds, truth = synthgen.generate(config)
        rows = analysis.rank_filters_by_classification(oracle_model(truth), ds)
        assert len(rows) == 10
        pcts = [r["accuracy_pct"] for r in rows]
        assert pcts == sorted(pcts, reverse=True)
        assert {r["filter"] for r in rows} == set(range(1, 11))


class TestDifferentialAnalysis:
    def trained_pair(self, seq_rate=0.4):
        config = synthgen.SynthConfig(
            n_subjects=1, trials_per_condition=6, noise_sd=1.0,
            sequence_effect_rate=seq_rate, seed=12,
        )
        ds, truth = synthgen.generate(config)
        mtm = TrainedModel("mtm", oracle_mtm(truth), [], {}, "")
        att = TrainedModel("attloc", oracle_model(truth, seed=3), [], {}, "")
        return ds, truth, mtm, att

    def test_identical_models_empty_disagreement(self):
        config = synthgen.SynthConfig(n_subjects=1, trials_per_condition=3, seed=13)
        ds, truth = synthgen.generate(config)
        model = TrainedModel("attloc", oracle_model(truth), [], {}, "")
        report = analysis.differential_sample_analysis(model, model, ds)
        assert report.total == 0
        assert sum(report.by_location.values()) == 0
        np.testing.assert_array_equal(report.diff_map, 0.0)

    def test_counts_sum_to_total(self):
        ds, truth, mtm, att = self.trained_pair()
        report = analysis.differential_sample_analysis(mtm, att, ds, split=None)
        assert sum(report.by_location.values()) == report.total
        fields = report.count_fields()
        assert fields["total"] == report.total
        assert set(fields) == {
            "total", "location_-90", "location_-45", "location_+0",
            "location_+45", "location_+90",
        }


def oracle_mtm(truth, seed=1):
    return oracle_model(truth, builder=build_mtm, seed=seed)
