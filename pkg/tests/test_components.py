import csv

import numpy as np
import pytest

from berrycount.components import (CSV_COLUMNS, BerryComponent, ComponentConfig, component_label_image,
                                   components_to_csv, edge_surround, ellipse_semi_axes, label_components)
from berrycount.errors import ConfigError
from berrycount.masks import ClassMask, Label

from oracles import edge_surround_oracle, flood_fill_components, place_exact_region, random_class_labels


def _mask(labels):
    return ClassMask(np.asarray(labels, dtype=np.uint8))


def test_threshold_boundary_24_vs_25():
    labels = np.zeros((20, 30), dtype=np.uint8)
    labels[1:5, 1:7] = Label.BERRY      # 24 px
    labels[10:15, 10:15] = Label.BERRY  # 25 px
    comps = label_components(_mask(labels))
    assert [c.area_px for c in comps] == [25]
    assert label_components(_mask(labels), ComponentConfig(24))[0].area_px == 24


def test_four_connectivity_splits_diagonals():
    labels = np.zeros((12, 12), dtype=np.uint8)
    labels[0:5, 0:5] = Label.BERRY
    labels[5:10, 5:10] = Label.BERRY
    assert len(label_components(_mask(labels))) == 2


def test_raster_order_of_first_pixel():
    labels = np.zeros((20, 20), dtype=np.uint8)
    # the right-hand blob starts on an earlier row
    labels[5:10, 0:5] = Label.BERRY
    labels[2:7, 12:17] = Label.BERRY
    comps = label_components(_mask(labels))
    assert [c.id for c in comps] == [1, 2]
    assert comps[0].bbox() == (12, 2, 16, 6)


def test_matches_flood_fill_oracle():
    rng = np.random.default_rng(21)
    for _ in range(40):
        labels = random_class_labels(rng, 48)
        if rng.random() < 0.5:
            place_exact_region(labels, rng, int(rng.choice([24, 25])))
        comps = label_components(_mask(labels))
        assert [c.pixels for c in comps] == flood_fill_components(labels)


def test_disc_axes_nearly_equal():
    yy, xx = np.mgrid[-12:13, -12:13]
    disc = xx ** 2 + yy ** 2 <= 100
    major, minor = ellipse_semi_axes(xx[disc], yy[disc])
    assert minor / major >= 0.95
    assert major == pytest.approx(10, abs=0.3)


def test_line_has_zero_minor_axis():
    xs = np.arange(30)
    major, minor = ellipse_semi_axes(xs, np.zeros(30))
    assert minor == 0.0
    # population std of 0..29 times two
    assert major == pytest.approx(2 * np.std(xs))


def test_square_axes_equal():
    yy, xx = np.mgrid[0:7, 0:7]
    major, minor = ellipse_semi_axes(xx.ravel(), yy.ravel())
    assert major == pytest.approx(minor)


def test_axes_degenerate_inputs():
    assert ellipse_semi_axes([3], [4]) == (0.0, 0.0)
    assert ellipse_semi_axes([0, 1], [0, 0]) == pytest.approx((1.0, 0.0))


def test_axes_rotation_invariant():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(200, 2)) * [5, 1]
    theta = 0.7
    rot = pts @ np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    assert ellipse_semi_axes(*pts.T) == pytest.approx(ellipse_semi_axes(*rot.T))


def test_edge_surround_fully_ringed():
    labels = np.full((9, 9), Label.EDGE, dtype=np.uint8)
    labels[2:7, 2:7] = Label.BERRY
    comp = label_components(_mask(labels))[0]
    assert comp.edge_surround_fraction == 1.0


def test_edge_surround_clipped_and_empty():
    labels = np.full((5, 5), Label.BERRY, dtype=np.uint8)
    comp = label_components(_mask(labels))[0]
    assert comp.edge_surround_fraction == 0.0
    # touching the border: ring is clipped to the image
    labels = np.zeros((8, 8), dtype=np.uint8)
    labels[0:5, 0:5] = Label.BERRY
    labels[5, 0:6] = Label.EDGE
    comp = label_components(_mask(labels))[0]
    # ring: row 5 cols 0..5 and col 5 rows 0..4 -> 11 px, 6 of them EDGE
    assert comp.edge_surround_fraction == pytest.approx(6 / 11)


def test_edge_surround_matches_enumeration():
    rng = np.random.default_rng(5)
    for _ in range(30):
        labels = random_class_labels(rng, 40)
        mask = _mask(labels)
        for c in label_components(mask, ComponentConfig(1)):
            expected = edge_surround_oracle(c.pixels, labels)
            assert c.edge_surround_fraction == pytest.approx(expected, abs=1e-12)
            assert edge_surround(c, mask) == pytest.approx(expected, abs=1e-12)


def test_label_image_and_csv(tmp_path):
    labels = np.zeros((20, 20), dtype=np.uint8)
    labels[1:7, 1:7] = Label.BERRY
    labels[10:16, 10:18] = Label.BERRY
    comps = label_components(_mask(labels))
    img = component_label_image(comps, labels.shape)
    assert set(np.unique(img)) == {0, 1, 2}
    assert (img > 0).sum() == 36 + 48
    path = tmp_path / "c.csv"
    components_to_csv(comps, path, extra={2: {"kept": 0}})
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == list(CSV_COLUMNS) + ["kept"]
    assert rows[0]["kept"] == "" and rows[1]["kept"] == "0"
    assert float(rows[1]["centroid_x"]) == pytest.approx(13.5)


def test_component_config_validation():
    with pytest.raises(ConfigError):
        ComponentConfig(0)


def test_axis_ratio_zero_major():
    c = BerryComponent(1, np.array([0]), np.array([0]))
    assert c.axis_ratio == 0.0
