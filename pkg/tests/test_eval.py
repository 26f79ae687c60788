"""Tests for histoad.evaluation: metrics, annotations, folds and reports."""

import json

import numpy as np
import pytest

from histoad.errors import InvalidInputError
from histoad.evaluation.annotations import (
    AnnotationKind,
    PatchTruth,
    Region,
    is_simple,
    patch_labels_from_annotations,
    point_in_polygon,
    read_annotations,
    write_annotations,
)
from histoad.evaluation.crossval import (
    CrossvalData,
    CrossvalSettings,
    EvalConfig,
    evaluate_split,
    make_folds,
    run_crossval,
)
from histoad.evaluation.metrics import (
    LabeledScores,
    artifact_auroc,
    auroc,
    auroc_arrays,
    group_report,
    pairwise_auroc,
    sensitivity_threshold,
)
from histoad.evaluation.report import EvalReport, FoldResult, mean_std
from histoad.features.io import Label
from histoad.models.trainer import TrainConfig
from histoad.preprocessing.tiler import PatchCoord
from histoad.synth.generator import SynthSpec, gen_features


def _data(scores, labels, groups=None):
    return LabeledScores(scores, labels, groups)


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc(_data([1, 1, 0, 0], ["anomalous", "anomalous", "normal", "normal"])) == 1.0

    def test_total_ties_give_one_half(self):
        assert auroc(_data([0.3] * 6, [0, 1, 0, 1, 1, 0])) == 0.5

    def test_hand_counted_example(self):
        data = _data([0.1, 0.4, 0.4, 0.8], [Label.NORMAL, Label.NORMAL, Label.ANOMALOUS, Label.ANOMALOUS])
        assert auroc(data) == pytest.approx(0.875)

    def test_negated_scores_complement(self, rng):
        scores = rng.random(60)
        labels = rng.random(60) < 0.4
        assert auroc_arrays(scores, labels) + auroc_arrays(-scores, labels) == pytest.approx(1.0)

    def test_monotone_transform_invariance(self, rng):
        scores = rng.standard_normal(80)
        labels = rng.random(80) < 0.5
        assert auroc_arrays(np.exp(3 * scores) + 2, labels) == pytest.approx(auroc_arrays(scores, labels))

    def test_matches_pairwise_oracle(self, rng):
        checked = 0
        while checked < 1000:
            n = int(rng.integers(2, 501))
            if checked % 2:
                scores = rng.integers(0, int(rng.integers(1, 20)), size=n).astype(float)
            else:
                scores = rng.standard_normal(n)
            labels = rng.random(n) < rng.uniform(0.05, 0.95)
            if labels.all() or not labels.any():
                continue
            checked += 1
            assert auroc_arrays(scores, labels) == pytest.approx(pairwise_auroc(scores, labels), abs=1e-12)

    def test_single_class_is_an_error(self):
        with pytest.raises(InvalidInputError, match="single-class"):
            auroc(_data([0.1, 0.2], ["normal", "normal"]))

    def test_unknown_label_rejected(self):
        with pytest.raises(InvalidInputError):
            _data([0.1], ["unknown"])

    def test_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            _data([0.1, 0.2], [0])


class TestSensitivityThreshold:
    def test_full_sensitivity_example(self):
        data = _data([0.9, 0.8, 0.1, 0.5, 0.85], [1, 1, 0, 0, 0])

        result = sensitivity_threshold(data, 1.0)

        assert result.threshold == 0.8
        assert result.sensitivity == 1.0
        assert result.automatable_fraction == pytest.approx(2 / 3)

    def test_half_sensitivity_example(self):
        result = sensitivity_threshold(_data([0.9, 0.2, 0.1], [1, 1, 0]), 0.5)
        assert result.threshold == 0.9
        assert result.automatable_fraction == 1.0

    def test_perfect_separation_automates_everything(self):
        result = sensitivity_threshold(_data([5, 6, 1, 2, 3], [1, 1, 0, 0, 0]), 1.0)
        assert result.automatable_fraction == 1.0

    def test_automatable_fraction_monotone_in_target(self, rng):
        data = _data(rng.standard_normal(200) + np.r_[np.zeros(120), np.ones(80)], [0] * 120 + [1] * 80)
        fractions = [sensitivity_threshold(data, t).automatable_fraction for t in (0.5, 0.8, 0.95, 0.99, 1.0)]

        assert fractions == sorted(fractions, reverse=True)
        assert sensitivity_threshold(data, 1.0).sensitivity == 1.0

    def test_errors(self):
        with pytest.raises(InvalidInputError):
            sensitivity_threshold(_data([0.1, 0.2], [0, 0]), 1.0)
        with pytest.raises(InvalidInputError):
            sensitivity_threshold(_data([0.1, 0.2], [0, 1]), 0.0)


class TestGroupReport:
    def test_single_group_equals_overall(self):
        data = _data([0.1, 0.5, 0.4, 0.9], [0, 0, 1, 1], [None, None, "gastritis", "gastritis"])
        assert group_report(data) == {"gastritis": auroc(data)}

    def test_two_groups_against_pairwise_oracle(self):
        scores = [0.1, 0.3, 0.5, 0.6, 0.2, 0.9]
        labels = [0, 0, 0, 1, 1, 1]
        groups = [None, None, None, "x", "x", "y"]

        report = group_report(_data(scores, labels, groups))

        assert report["x"] == pytest.approx(pairwise_auroc([0.1, 0.3, 0.5, 0.6, 0.2], [0, 0, 0, 1, 1]))
        assert report["x"] == pytest.approx(4 / 6)
        assert report["y"] == 1.0

    def test_group_without_anomalies_is_skipped(self, caplog):
        data = _data([0.1, 0.9], [0, 1], [None, "x"])
        assert group_report(data, ["x", "missing"]) == {"x": 1.0}
        assert "missing" in caplog.text

    def test_needs_groups(self):
        with pytest.raises(InvalidInputError):
            group_report(_data([0.1, 0.9], [0, 1]))


def test_artifact_auroc_below_half_when_artifacts_score_low():
    scores = [0.1, 0.2, 0.6, 0.7, 0.9]
    artifact = [True, True, False, False, False]
    normal = [False, False, True, True, False]
    assert artifact_auroc(scores, artifact, normal) == 0.0


class TestAnnotations:
    SQUARE = ((0, 0), (10, 0), (10, 10), (0, 10))

    def test_edge_and_vertex_count_as_inside(self):
        assert point_in_polygon(10, 5, self.SQUARE)
        assert point_in_polygon(0, 0, self.SQUARE)
        assert point_in_polygon(5, 5, self.SQUARE)
        assert not point_in_polygon(11, 5, self.SQUARE)

    def test_concave_polygon(self):
        notch = ((0, 0), (10, 0), (10, 10), (5, 4), (0, 10))
        assert point_in_polygon(2, 2, notch)
        assert not point_in_polygon(5, 8, notch)

    def test_patch_labels_from_rectangles(self):
        regions = [
            Region.rectangle(AnnotationKind.DIAGNOSIS_DEFINING, 340, 0, 340, 340),
            Region.rectangle(AnnotationKind.OTHER_ANOMALOUS, 680, 0, 340, 340),
            Region.rectangle(AnnotationKind.ARTIFACT, 0, 0, 200, 200),
        ]
        coords = [PatchCoord("s", x, 0) for x in (0, 340, 680, 1020)]

        labels = patch_labels_from_annotations(coords, regions, 340)

        assert labels.truth == [PatchTruth.NORMAL, PatchTruth.ANOMALOUS, PatchTruth.EXCLUDED, PatchTruth.NORMAL]
        assert labels.labels() == [Label.NORMAL, Label.ANOMALOUS, Label.UNKNOWN, Label.NORMAL]
        assert labels.artifact.tolist() == [True, False, False, False]
        assert labels.counts() == {"normal": 2, "anomalous": 1, "excluded": 1}

    def test_center_on_region_edge_is_anomalous(self):
        region = Region.rectangle(AnnotationKind.DIAGNOSIS_DEFINING, 170, 170, 100, 100)
        labels = patch_labels_from_annotations([PatchCoord("s", 0, 0)], [region], 340)
        assert labels.truth == [PatchTruth.ANOMALOUS]

    def test_file_round_trip(self, tmp_path):
        regions = [
            Region(AnnotationKind.DIAGNOSIS_DEFINING, ((0, 0), (5, 0), (5, 5), (0, 0))),
            Region.rectangle(AnnotationKind.ARTIFACT, 1.5, 2, 3, 4),
        ]
        path = tmp_path / "s.json"
        write_annotations(regions, path)

        loaded = read_annotations(path)

        assert loaded == regions
        assert len(loaded[0].polygon) == 3
        assert json.loads(path.read_text())[0]["kind"] == "diagnosis_defining"

    def test_malformed_annotations(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('[{"kind": "tumour", "polygon": [[0, 0], [1, 0], [1, 1]]}]')
        with pytest.raises(InvalidInputError):
            read_annotations(path)
        with pytest.raises(InvalidInputError):
            Region(AnnotationKind.ARTIFACT, ((0, 0), (1, 1), (2, 2)))
        with pytest.raises(FileNotFoundError):
            read_annotations(tmp_path / "absent.json")

    def test_is_simple(self):
        assert is_simple(self.SQUARE)
        assert not is_simple(((0, 0), (10, 10), (10, 0), (0, 10)))


class TestFolds:
    def test_ten_slides_five_folds(self):
        plan = make_folds([f"n{i}" for i in range(10)], k=5, seed=3)
        assert plan.sizes() == [2, 2, 2, 2, 2]

    def test_eleven_slides_balanced(self):
        plan = make_folds([f"n{i}" for i in range(11)], k=5, seed=3)
        assert sorted(plan.sizes(), reverse=True) == [3, 2, 2, 2, 2]

    def test_partition_and_determinism(self):
        ids = [f"slide-{i:02d}" for i in range(23)]
        plan = make_folds(ids, k=5, seed=9)

        tested = [sid for fold in range(5) for sid in plan.test_ids(fold)]
        assert sorted(tested) == ids
        assert len(set(tested)) == len(ids)
        assert set(plan.train_ids(0)).isdisjoint(plan.test_ids(0))
        assert make_folds(list(reversed(ids)), k=5, seed=9) == plan
        assert make_folds(ids, k=5, seed=10) != plan

    def test_too_few_slides(self):
        with pytest.raises(InvalidInputError):
            make_folds(["a", "b", "c"], k=5)


class TestReport:
    def _fold(self, fold, value):
        return FoldResult(fold=fold, n_train_slides=4, n_test_normal=2, n_test_anomalous=2, slide_auroc=value)

    def test_population_std(self):
        report = EvalReport(method="knn", folds=[self._fold(0, 1.0), self._fold(1, 0.5)])
        assert report.auroc == {"mean": 0.75, "std": 0.25, "n": 2}
        assert report.patch_auroc is None

    def test_mean_std_of_nothing(self):
        assert mean_std([])["n"] == 0

    def test_json_is_stable_and_rounded(self):
        report = EvalReport(method="knn", folds=[self._fold(0, 1 / 3)], seed=1)

        text = report.to_json()

        assert text == report.to_json()
        data = json.loads(text)
        assert data["fold_aurocs"] == [0.333333333333]
        assert data["n_folds"] == 1
        assert "Slide AUROC" in report.format_table()

    def test_evaluate_split(self):
        scores = {"n1": 0.1, "n2": 0.3, "a1": 0.8, "a2": 0.2}
        result = evaluate_split(scores, ["a1", "a2"], {"a1": "x", "a2": "y"}, (1.0,))

        assert result.slide_auroc == pytest.approx(0.75)
        assert result.group_aurocs == {"x": 1.0, "y": 0.5}
        assert result.thresholds[0].threshold == 0.2


class TestCrossval:
    def _data(self, pools):
        return CrossvalData(normal=pools.normal, anomalous=pools.anomalous, groups=pools.groups)

    def test_knn_on_separable_pools(self, separable_pools):
        report = run_crossval(self._data(separable_pools))

        assert len(report.folds) == 5
        assert report.auroc["mean"] > 0.95
        assert set(report.group_summary()) == {"gastritis", "carcinoma"}
        assert [t["target"] for t in report.threshold_summary()] == [1.0, 0.99, 0.95]
        for fold in report.folds:
            assert fold.n_test_anomalous == 10
            assert fold.n_test_normal == 5
            assert fold.patch_auroc is not None
        assert report.patch_auroc["mean"] > 0.99

    def test_parallel_folds_give_the_same_report(self, separable_pools):
        data = self._data(separable_pools)
        settings = CrossvalSettings(eval=EvalConfig(seed=4))
        assert run_crossval(data, settings, jobs=3).to_json() == run_crossval(data, settings).to_json()

    def test_null_shift_is_near_chance(self):
        pools = gen_features(SynthSpec(dim=8, n_normal=2000, n_anomalous=2000, n_near_oe=1, n_far_oe=1,
                                       shift_norm=0.0, patches_per_slide=20, seed=21))
        report = run_crossval(CrossvalData(normal=pools.normal, anomalous=pools.anomalous))
        assert abs(report.patch_auroc["mean"] - 0.5) < 0.05

    @pytest.mark.slow
    def test_trained_classifier(self, separable_pools):
        pools = separable_pools
        data = CrossvalData(pools.normal, pools.anomalous, pools.near, pools.far, pools.groups)
        settings = CrossvalSettings(eval=EvalConfig(method="bce"),
                                    train=TrainConfig(steps=300, learning_rate=0.05))

        report = run_crossval(data, settings)

        assert report.method == "bce"
        assert report.auroc["mean"] > 0.9

    def test_requires_anomalous_slides(self, separable_pools):
        data = CrossvalData(normal=separable_pools.normal, anomalous=separable_pools.anomalous.subset([]))
        with pytest.raises(InvalidInputError):
            run_crossval(data)

    def test_unknown_method(self):
        with pytest.raises(Exception, match="Unknown method"):
            EvalConfig(method="svm")


SEPARABILITY_STEPS = 2000


def _patch_auroc(pools, method):
    data = CrossvalData(pools.normal, pools.anomalous, pools.near, pools.far, pools.groups)
    settings = CrossvalSettings(eval=EvalConfig(method=method), train=TrainConfig(steps=SEPARABILITY_STEPS))
    return run_crossval(data, settings).patch_auroc["mean"]


@pytest.fixture(scope="module")
def shifted_auroc():
    """Cross-validated patch AUROC per method on D=16, 2000/200 patches, shift 4 sigma."""
    pools = gen_features(SynthSpec(dim=16, n_normal=2000, n_anomalous=200, shift_norm=4.0, seed=0))
    cache = {}

    def get(method):
        if method not in cache:
            cache[method] = _patch_auroc(pools, method)
        return cache[method]

    return get


@pytest.fixture(scope="module")
def null_pools():
    return gen_features(SynthSpec(dim=16, n_normal=2000, n_anomalous=2000, shift_norm=0.0, seed=5))


class TestSyntheticSeparability:
    def test_knn_reaches_the_distance_bound(self, shifted_auroc):
        """kNN distances behave like |x - mu|^2: chi-square(16) for normals against
        noncentral chi-square(16, 16) for anomalies, which caps patch AUROC near 0.92."""
        assert shifted_auroc("knn") >= 0.90

    @pytest.mark.slow
    def test_outlier_exposure_classifier(self, shifted_auroc):
        assert shifted_auroc("bce") >= 0.97

    @pytest.mark.slow
    def test_compactness_head(self, shifted_auroc):
        assert shifted_auroc("compactness") >= 0.90

    @pytest.mark.slow
    def test_autoencoder_below_classifier(self, shifted_auroc):
        assert shifted_auroc("autoencoder") < shifted_auroc("bce")

    @pytest.mark.slow
    def test_outlier_exposure_losses_agree(self, shifted_auroc):
        values = [shifted_auroc(m) for m in ("bce", "hsc", "deepsad")]
        assert max(values) - min(values) <= 0.05

    @pytest.mark.slow
    @pytest.mark.parametrize("method", ["bce", "hsc", "deepsad", "compactness", "autoencoder"])
    def test_null_shift_is_near_chance(self, null_pools, method):
        assert abs(_patch_auroc(null_pools, method) - 0.5) < 0.05
