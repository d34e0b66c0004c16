import csv
import json
import logging

import jsonschema
import numpy as np
import pytest
from PIL import Image

import berrycount
from berrycount.annotation import render_color_annotation
from berrycount.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_VALIDATION, main
from berrycount.labelgen import generate_labels
from berrycount.masks import read_class_png, write_class_png, write_instance_png
from berrycount.synth import SceneConfig, generate_scene


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", str(out), "--count", "4", "--seed", "100", "--min-core-px", "25",
                 "--image-w", "1024", "--image-h", "768", "--n-clusters", "5"]) == EXIT_OK
    return out


def _files(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file()}


# --------------------------------------------------------------------------- #
# synth
# --------------------------------------------------------------------------- #
def test_synth_layout_and_sidecar(synth_dir):
    ids = sorted(p.stem for p in (synth_dir / "instances").glob("*.png"))
    assert ids == ["scene_00100", "scene_00101", "scene_00102", "scene_00103"]
    for image_id in ids:
        meta = json.loads((synth_dir / "meta" / f"{image_id}.json").read_text())
        n_dots = len((synth_dir / "dots" / f"{image_id}.csv").read_text().splitlines())
        assert meta["true_berry_count"] == n_dots
    assert (synth_dir / "resolved_config.txt").is_file()


def test_synth_is_reproducible(synth_dir, tmp_path):
    main(["synth", str(tmp_path), "--count", "4", "--seed", "100", "--min-core-px", "25",
          "--image-w", "1024", "--image-h", "768", "--n-clusters", "5"])
    assert _files(tmp_path) == _files(synth_dir)


def test_synth_generation_failure_exit_code(tmp_path):
    code = main(["synth", str(tmp_path), "--count", "1", "--image-w", "30", "--image-h", "30"])
    assert code == 5


# --------------------------------------------------------------------------- #
# labelgen
# --------------------------------------------------------------------------- #
def test_labelgen_matches_library_byte_for_byte(tmp_path):
    scene = generate_scene(SceneConfig(seed=7))
    src = tmp_path / "ann"
    src.mkdir()
    Image.fromarray(render_color_annotation(scene.instances).rgb).save(src / "img.png")
    write_instance_png(scene.instances, src / "img16.png")
    out = tmp_path / "out"
    assert main(["labelgen", str(src), str(out), "--edge-thickness", "3"]) == EXIT_OK
    lib = tmp_path / "lib.png"
    write_class_png(generate_labels(scene.instances, berrycount.LabelGenConfig(3)), lib)
    assert (out / "img.png").read_bytes() == lib.read_bytes()
    assert (out / "img16.png").read_bytes() == lib.read_bytes()
    assert (out / "img_color.png").is_file()
    assert "edge_thickness_px = 3" in (out / "resolved_config.txt").read_text()


def test_labelgen_output_feeds_detect(synth_dir, tmp_path):
    masks = tmp_path / "masks"
    assert main(["labelgen", str(synth_dir / "instances"), str(masks)]) == EXIT_OK
    # the color previews next to the masks are not taken as images
    assert main(["detect", str(masks), str(tmp_path / "det")]) == EXIT_OK
    assert sorted(p.name for p in (tmp_path / "det").glob("*_stitched.png")) == [
        f"scene_0010{i}_stitched.png" for i in range(4)]


def test_labelgen_empty_dir_warns(tmp_path, caplog):
    (tmp_path / "empty").mkdir()
    with caplog.at_level(logging.WARNING):
        assert main(["labelgen", str(tmp_path / "empty"), str(tmp_path / "out")]) == EXIT_OK
    assert "no PNG" in caplog.text


def test_labelgen_malformed_png_names_file(tmp_path, caplog):
    src = tmp_path / "ann"
    src.mkdir()
    (src / "broken.png").write_bytes(b"not a png at all")
    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    rgb[1, 1] = (1, 2, 3)
    Image.fromarray(rgb).save(src / "offpalette.png")
    ok = np.zeros((8, 8, 3), dtype=np.uint8)
    Image.fromarray(ok).save(src / "ok.png")
    code = main(["labelgen", str(src), str(tmp_path / "out")])
    assert code != EXIT_OK
    assert "broken.png" in caplog.text and "offpalette.png" in caplog.text
    # the good file is still processed
    assert (tmp_path / "out" / "ok.png").is_file()


def test_labelgen_missing_dir(tmp_path):
    assert main(["labelgen", str(tmp_path / "nope"), str(tmp_path / "out")]) == EXIT_IO


# --------------------------------------------------------------------------- #
# detect / eval / plot-data
# --------------------------------------------------------------------------- #
def test_detect_oracle_reproduces_reference(synth_dir, tmp_path):
    assert main(["detect", str(synth_dir / "labels"), str(tmp_path), "--dots-dir",
                 str(synth_dir / "dots"), "--image-dir", str(synth_dir / "images")]) == EXIT_OK
    for ref in (synth_dir / "labels").glob("*.png"):
        assert read_class_png(tmp_path / f"{ref.stem}_stitched.png") == read_class_png(ref)
        rows = list(csv.DictReader(open(tmp_path / f"{ref.stem}_components.csv")))
        assert rows and all(r["kept"] == "1" for r in rows)
        with Image.open(tmp_path / f"{ref.stem}_overlay.png") as im:
            assert im.mode == "RGB"


def test_detect_deterministic_across_workers(synth_dir, tmp_path):
    common = ["--backend", "noisy_oracle", "--flip-probability", "0.02", "--false-blob-rate", "2", "--seed", "9"]
    main(["detect", str(synth_dir / "labels"), str(tmp_path / "a"), "--workers", "1"] + common)
    main(["detect", str(synth_dir / "labels"), str(tmp_path / "b"), "--workers", "4"] + common)
    main(["detect", str(synth_dir / "labels"), str(tmp_path / "c"), "--workers", "3",
          "--images", "scene_00101"] + common)
    a, b = _files(tmp_path / "a"), _files(tmp_path / "b")
    assert a == b
    c = _files(tmp_path / "c")
    assert c["scene_00101_stitched.png"] == a["scene_00101_stitched.png"]


def test_detect_mask_file_missing(synth_dir, tmp_path):
    code = main(["detect", str(synth_dir / "labels"), str(tmp_path), "--backend", "mask_file",
                 "--images", "does_not_exist"])
    assert code == EXIT_IO


def test_detect_bad_config(synth_dir, tmp_path):
    assert main(["detect", str(synth_dir / "labels"), str(tmp_path), "--overlap", "1.5"]) == EXIT_CONFIG
    assert main(["detect", str(synth_dir / "labels"), str(tmp_path), "--set", "nonsense=1"]) == EXIT_CONFIG
    assert main(["detect", str(synth_dir / "labels"), str(tmp_path), "--filters", "axis,colour"]) == EXIT_CONFIG
    assert main(["detect", str(synth_dir / "labels"), str(tmp_path), "--config",
                 str(tmp_path / "missing.cfg")]) == EXIT_IO


def test_eval_perfect_run_and_schema(synth_dir, tmp_path):
    det = tmp_path / "det"
    main(["detect", str(synth_dir / "labels"), str(det)])
    groups = tmp_path / "groups.csv"
    groups.write_text("scene_00100,VSP\nscene_00101,VSP\nscene_00102,SMPH\n")
    out = tmp_path / "eval"
    assert main(["eval", str(det), str(synth_dir / "dots"), str(out), "--truth-dir",
                 str(synth_dir / "labels"), "--groups-file", str(groups), "--group", "OTHER"]) == EXIT_OK
    report = json.loads((out / "eval_report.json").read_text())
    jsonschema.validate(report, berrycount.eval_report_schema())
    assert [g["group"] for g in report["groups"]] == ["OTHER", "SMPH", "VSP"]
    overall = report["overall"]
    assert overall["post_filter"]["correct_detection_pct"] == 100.0
    assert overall["post_filter"]["misclassified_pct"] == 0.0
    # a berry near a patch border can be binned by marker and by core centroid
    # into different patches, so the fit is close to but not always exactly 1
    assert overall["count_regression"]["r_squared"] > 0.99
    assert overall["iou"]["iou_average"] == 1.0
    rows = list(csv.DictReader(open(out / "eval_report.csv")))
    post = [r for r in rows if r["stage"] == "post_filter"]
    assert [r["group"] for r in post] == ["OTHER", "SMPH", "VSP", "ALL"]

    plots = tmp_path / "plots"
    assert main(["plot-data", str(out / "eval_report.json"), str(plots)]) == EXIT_OK
    pairs = list(csv.DictReader(open(plots / "count_pairs.csv")))
    # 1024x768 -> 2x2 whole patches per image
    assert len(pairs) == 16
    fits = {r["group"]: r for r in csv.DictReader(open(plots / "count_fit.csv"))}
    assert float(fits["ALL"]["slope"]) == pytest.approx(1.0, abs=0.05)
    assert set(fits) == {"OTHER", "SMPH", "VSP", "ALL"}


def test_eval_dot_outside_image(synth_dir, tmp_path):
    det = tmp_path / "det"
    main(["detect", str(synth_dir / "labels"), str(det), "--images", "scene_00100"])
    dots = tmp_path / "dots"
    dots.mkdir()
    (dots / "scene_00100.csv").write_text("5000,5\n")
    assert main(["eval", str(det), str(dots), str(tmp_path / "e")]) == EXIT_VALIDATION


def test_plot_data_rejects_garbage(tmp_path):
    bad = tmp_path / "r.json"
    bad.write_text("[1, 2]")
    assert main(["plot-data", str(bad), str(tmp_path / "o")]) == EXIT_VALIDATION
    assert main(["plot-data", str(tmp_path / "none.json"), str(tmp_path / "o")]) == EXIT_IO


def test_usage_error_is_config_code():
    with pytest.raises(SystemExit) as info:
        main(["detect"])
    assert info.value.code == EXIT_CONFIG
