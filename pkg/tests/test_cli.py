"""Tests for the histoad command-line interface."""

import json
import logging

import numpy as np
import pytest

from histoad.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, main
from histoad.features.io import (
    FeatureMatrix,
    Label,
    ManifestEntry,
    PatchMeta,
    TissueClass,
    read_features,
    write_features,
    write_manifest,
)
from histoad.preprocessing.raster import load_raster, raster_from_array, save_raster

pytestmark = pytest.mark.integration

SMALL_SPEC = {
    "dim": 8,
    "n_normal": 400,
    "n_anomalous": 100,
    "n_near_oe": 100,
    "n_far_oe": 100,
    "shift_norm": 6.0,
    "patches_per_slide": 20,
    "groups": ["gastritis", "carcinoma"],
}

STRIP_LAYOUT = {
    "width": 1020,
    "height": 340,
    "slide_id": "strip",
    "regions": [
        {"kind": "tissue", "x": 0, "y": 0, "width": 1020, "height": 340},
        {"kind": "anomaly", "x": 340, "y": 0, "width": 340, "height": 340},
    ],
}


@pytest.fixture(autouse=True)
def restore_logging():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def synth(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(SMALL_SPEC))
    out = tmp_path / "data"
    assert main(["synth", "--spec", str(spec), "--seed", "1", "--out-dir", str(out), "-q"]) == EXIT_OK
    return out


@pytest.fixture
def strip_dir(tmp_path):
    layout = tmp_path / "layout.json"
    layout.write_text(json.dumps(STRIP_LAYOUT))
    out = tmp_path / "strip"
    assert main(["synth", "--raster-layout", str(layout), "--out-dir", str(out), "-q"]) == EXIT_OK
    return out


class TestSynthAndCrossval:
    def test_crossval_report(self, synth, tmp_path, capsys):
        report_path = tmp_path / "report.json"

        code = main(["crossval", "--manifest", str(synth / "manifest.csv"), "--seed", "1",
                     "--method", "knn", "--output", str(report_path), "-q"])

        assert code == EXIT_OK
        report = json.loads(report_path.read_text())
        assert report["n_folds"] == 5
        assert len(report["fold_aurocs"]) == 5
        assert report["auroc"]["mean"] > 0.9
        assert "Slide AUROC" in capsys.readouterr().out

    def test_outputs_are_deterministic(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps(SMALL_SPEC))
        reports = []
        for name in ("a", "b"):
            out = tmp_path / name
            main(["synth", "--spec", str(spec), "--seed", "2", "--out-dir", str(out), "-q"])
            report = tmp_path / f"{name}.json"
            main(["crossval", "-m", str(out / "manifest.csv"), "--seed", "2", "-o", str(report), "-q", "-j", "2"])
            reports.append(report.read_bytes())

        for path in sorted((tmp_path / "a" / "features").iterdir()):
            assert path.read_bytes() == (tmp_path / "b" / "features" / path.name).read_bytes()
        assert reports[0] == reports[1]

    def test_synth_writes_spec(self, synth):
        written = json.loads((synth / "synth_spec.json").read_text())
        assert written["seed"] == 1
        assert written["dim"] == 8


class TestTrainScoreAggregate:
    def test_knn_chain(self, synth, tmp_path):
        scores = tmp_path / "scores.csv"
        slides = tmp_path / "slides.csv"
        heatmap = tmp_path / "heat.png"
        features = synth / "features"

        assert main(["score", str(features / "anomalous-0000.hadf"), str(features / "normal-0019.hadf"),
                     "--reference", str(features / "normal-0000.hadf"), str(features / "normal-0001.hadf"),
                     "-o", str(scores), "-q"]) == EXIT_INPUT

        assert main(["score", str(features / "anomalous-0000.hadf"),
                     "--reference", str(features / "normal-0000.hadf"), str(features / "normal-0001.hadf"),
                     "-o", str(scores), "-q"]) == EXIT_OK
        assert main(["aggregate", str(scores), "-o", str(slides), "-q"]) == EXIT_OK
        assert main(["heatmap", str(scores), "--size", "6800", "340", "-o", str(heatmap), "-q"]) == EXIT_OK

        assert len(scores.read_text().splitlines()) == 21
        assert slides.read_text().splitlines()[1].startswith("anomalous-0000,")
        assert load_raster(heatmap).width == 6800

    def test_train_then_score(self, synth, tmp_path):
        model = tmp_path / "model.hadm"
        scores = tmp_path / "scores.csv"

        code = main(["train", "-m", str(synth / "manifest.csv"), "--seed", "3", "--objective", "bce",
                     "--steps", "50", "--learning-rate", "0.05", "-o", str(model), "-q"])

        assert code == EXIT_OK
        trace = (tmp_path / "model.hadm.loss.csv").read_text().splitlines()
        assert trace[0] == "step,loss"
        assert len(trace) == 51
        assert main(["score", str(synth / "features" / "anomalous-0000.hadf"), "--checkpoint", str(model),
                     "-o", str(scores), "-q"]) == EXIT_OK
        values = [float(line.split(",")[-1]) for line in scores.read_text().splitlines()[1:]]
        assert all(0.0 <= v <= 1.0 for v in values)

    def test_same_seed_same_checkpoint(self, synth, tmp_path):
        outputs = []
        for name in ("a.hadm", "b.hadm"):
            main(["train", "-m", str(synth / "manifest.csv"), "--seed", "5", "--objective", "deepsad",
                  "--steps", "20", "-o", str(tmp_path / name), "-q"])
            outputs.append((tmp_path / name).read_bytes())
        assert outputs[0] == outputs[1]


class TestRasterStages:
    def test_synth_tile_embed_heatmap(self, strip_dir, tmp_path):
        slide = strip_dir / "strip.png"
        tiles, features = tmp_path / "tiles", tmp_path / "features"
        scores = tmp_path / "scores.csv"

        assert (strip_dir / "strip.json").exists() and (strip_dir / "strip_truth.png").exists()
        assert main(["tile", str(slide), "-o", str(tiles), "-q"]) == EXIT_OK
        assert (tiles / "strip_patches.csv").read_text().splitlines() == [
            "slide_id,x,y", "strip,0,0", "strip,340,0", "strip,680,0"]
        assert (tiles / "strip_mask.png").exists()

        assert main(["embed", str(slide), "--patches-dir", str(tiles), "-o", str(features),
                     "--views", "2", "--seed", "4", "-q"]) == EXIT_OK
        views = [features / "strip_view00.hadf", features / "strip_view01.hadf"]
        assert len(read_features(views[0])) == 3

        assert main(["score", *map(str, views), "--reference", str(views[0]), "--k", "1",
                     "-o", str(scores), "-q"]) == EXIT_OK
        assert main(["heatmap", str(scores), "--slide", str(slide), "-o", str(tmp_path / "heat.png"),
                     "--overlay", str(tmp_path / "overlay.png"), "--grid", str(tmp_path / "grid.hadf"),
                     "-q"]) == EXIT_OK
        assert load_raster(tmp_path / "overlay.png").width == 1020
        assert read_features(tmp_path / "grid.hadf").dim == 1

    def test_stain_target(self, strip_dir, tmp_path):
        target = tmp_path / "target.json"
        assert main(["stain-target", str(strip_dir / "strip.png"), "-o", str(target), "-q"]) == EXIT_OK
        assert set(json.loads(target.read_text())) == {"mean", "std"}

    def test_stain_target_from_training_manifest(self, strip_dir, tmp_path):
        blank = raster_from_array("blank", np.full((400, 400, 3), 255, dtype=np.uint8))
        save_raster(blank, strip_dir / "blank.png")
        manifest = tmp_path / "train.csv"
        write_manifest([
            ManifestEntry("strip", strip_dir / "strip.png", TissueClass.NORMAL_TARGET, Label.NORMAL),
            ManifestEntry("blank", strip_dir / "blank.png", TissueClass.EVAL, Label.UNKNOWN),
        ], manifest)
        direct, pooled = tmp_path / "direct.json", tmp_path / "pooled.json"

        assert main(["stain-target", str(strip_dir / "strip.png"), "-o", str(direct), "-q"]) == EXIT_OK
        assert main(["stain-target", "--manifest", str(manifest), "-o", str(pooled), "-q"]) == EXIT_OK
        assert pooled.read_text() == direct.read_text()

    def test_stain_target_needs_slides(self, tmp_path):
        assert main(["stain-target", "-o", str(tmp_path / "t.json"), "-q"]) == EXIT_INPUT

    def test_empty_tissue_slide(self, tmp_path):
        blank = raster_from_array("blank", np.full((400, 400, 3), 255, dtype=np.uint8))
        save_raster(blank, tmp_path / "blank.png")

        assert main(["tile", str(tmp_path / "blank.png"), "-o", str(tmp_path / "tiles"), "-q"]) == EXIT_OK
        assert (tmp_path / "tiles" / "blank_patches.csv").read_text().splitlines() == ["slide_id,x,y"]


class TestErrors:
    def test_missing_file_names_path(self, tmp_path, capsys):
        missing = tmp_path / "nope.csv"
        assert main(["aggregate", str(missing), "-o", str(tmp_path / "out.csv")]) == EXIT_INPUT
        assert "nope.csv" in capsys.readouterr().err

    def test_invalid_objective(self, synth, tmp_path):
        code = main(["train", "-m", str(synth / "manifest.csv"), "--seed", "1", "--objective", "svm",
                     "-o", str(tmp_path / "m.hadm"), "-q"])
        assert code == EXIT_INPUT

    def test_train_requires_seed(self, synth, tmp_path):
        code = main(["train", "-m", str(synth / "manifest.csv"), "-o", str(tmp_path / "m.hadm")])
        assert code == EXIT_INPUT

    def test_single_class_eval(self, tmp_path, capsys):
        (tmp_path / "slides.csv").write_text("slide_id,score\nn1,0.1\nn2,0.2\n")
        entries = [ManifestEntry(s, tmp_path / f"{s}.hadf", TissueClass.NORMAL_TARGET, Label.NORMAL)
                   for s in ("n1", "n2")]
        write_manifest(entries, tmp_path / "manifest.csv")

        code = main(["eval", "--slide-scores", str(tmp_path / "slides.csv"),
                     "--manifest", str(tmp_path / "manifest.csv")])

        assert code == EXIT_INPUT
        assert "single-class" in capsys.readouterr().err

    def test_divergence_exit_code(self, tmp_path):
        rows = np.full((10, 2), np.nan, dtype=np.float32)
        write_features(FeatureMatrix(rows=rows, meta=[PatchMeta("bad", 340 * i, 0) for i in range(10)]),
                       tmp_path / "bad.hadf")
        write_manifest([ManifestEntry("bad", tmp_path / "bad.hadf", TissueClass.NORMAL_TARGET, Label.NORMAL)],
                       tmp_path / "manifest.csv")

        code = main(["train", "-m", str(tmp_path / "manifest.csv"), "--seed", "0",
                     "--objective", "compactness", "--steps", "3", "-o", str(tmp_path / "m.hadm"), "-q"])

        assert code == EXIT_NUMERIC
        assert not (tmp_path / "m.hadm").exists()

    def test_invalid_config(self, tmp_path, synth):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"oe_sampler": {"batch_size": 16}}))
        code = main(["crossval", "-m", str(synth / "manifest.csv"), "--seed", "0", "--config", str(cfg), "-q"])
        assert code == EXIT_INPUT

    def test_heatmap_needs_size(self, tmp_path):
        (tmp_path / "s.csv").write_text("slide_id,x,y,score\ns,0,0,0.5\n")
        assert main(["heatmap", str(tmp_path / "s.csv"), "-o", str(tmp_path / "h.png"), "-q"]) == EXIT_INPUT
