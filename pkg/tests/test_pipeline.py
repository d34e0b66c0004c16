import numpy as np

from berrycount.annotation import DotAnnotations
from berrycount.classify import NoisyOracleBackend, OracleBackend
from berrycount.config import PipelineConfig
from berrycount.labelgen import generate_labels
from berrycount.masks import ClassMask
from berrycount.pipeline import (CANVAS_LEVEL, KEPT_COLOR, MARKER_COLOR, REJECTED_COLOR, detect_image,
                                 evaluate_detection, render_overlay)
from berrycount.synth import SceneConfig, generate_scene


def _scene(seed=0, **kw):
    scene = generate_scene(SceneConfig(seed=seed, **kw))
    return scene, generate_labels(scene.instances)


def test_oracle_on_multi_patch_scene_reproduces_reference():
    scene, ref = _scene(1, image_w=1100, image_h=800, n_clusters=6, min_core_px=25)
    det = detect_image(OracleBackend({"s": ref}), "s", PipelineConfig())
    assert det.stitched == ref
    ev = evaluate_detection(det, scene.dots, PipelineConfig(), truth=ref)
    assert ev.post_filter.correct_detection_pct == 100.0
    assert ev.post_filter.misclassified_pct == 0.0
    assert ev.iou_intersections == ev.iou_unions


def test_worker_count_does_not_change_result():
    _, ref = _scene(2, image_w=1024, image_h=768)
    be = NoisyOracleBackend({"s": ref}, 0.02, 2.0, seed=3)
    a = detect_image(be, "s", PipelineConfig(), workers=1)
    b = detect_image(be, "s", PipelineConfig(), workers=4)
    assert a.stitched == b.stitched
    assert [c.pixels for c in a.kept] == [c.pixels for c in b.kept]


def test_overlay_colors():
    scene, ref = _scene(3, min_core_px=25)
    labels = ref.labels.copy()
    labels[0:3, 0:40] = 1  # a sliver the filters reject
    det = detect_image(OracleBackend({"s": ClassMask(labels)}), "s")
    assert det.rejected
    dots = DotAnnotations(scene.dots.markers + ((500, 380),))
    rgb = render_overlay(det, dots=dots)
    k = det.kept[0]
    assert tuple(rgb[k.ys[0], k.xs[0]]) in (KEPT_COLOR, MARKER_COLOR)
    r = det.rejected[0].component
    assert tuple(rgb[r.ys[-1], r.xs[-1]]) == REJECTED_COLOR
    assert tuple(rgb[380, 500]) == MARKER_COLOR
    # missed marker gets a box
    assert tuple(rgb[376, 500]) == MARKER_COLOR
    ys, xs = np.nonzero(labels == 0)
    assert tuple(rgb[ys[len(ys) // 2], xs[len(xs) // 2]]) == (CANVAS_LEVEL,) * 3


def test_overlay_on_grayscale_base():
    scene, ref = _scene(4)
    det = detect_image(OracleBackend({"s": ref}), "s")
    rgb = render_overlay(det, base=scene.image)
    bg = ref.labels == 0
    np.testing.assert_array_equal(rgb[bg][:, 0], scene.image[bg])
