import csv
import math

import numpy as np
import pytest

from berrycount.components import BerryComponent, label_components
from berrycount.errors import ConfigError
from berrycount.masks import ClassMask, Label
from berrycount.postfilter import (ABLATION_STEPS, FilterConfig, ablation, apply_filters, area_filter,
                                   axis_filter, circle_radius, edge_filter, write_ablation_csv)


def _comp(area=100, major=6.0, minor=6.0, edge=1.0, cid=1):
    xs = np.arange(area) % 10
    ys = np.arange(area) // 10
    return BerryComponent(cid, xs, ys, (0.0, 0.0), major, minor, edge)


def test_axis_boundary_is_inclusive():
    cfg = FilterConfig()
    assert axis_filter(_comp(major=10.0, minor=3.0), cfg)
    assert not axis_filter(_comp(major=10.0, minor=2.999), cfg)
    # 0.1 / (1/3) is not exactly 0.3 in floating point; still accepted
    assert axis_filter(_comp(major=1 / 3, minor=0.1), cfg)


def test_axis_rejects_degenerate():
    assert not axis_filter(_comp(major=0.0, minor=0.0), FilterConfig(axis_ratio_min=0.0))


def test_area_boundary_is_inclusive():
    r = 5.0
    threshold = 50 / (math.pi * r * r)
    cfg = FilterConfig(area_ratio_min=threshold)
    assert area_filter(_comp(area=50, major=r, minor=r), cfg)
    assert not area_filter(_comp(area=49, major=r, minor=r), cfg)


def test_area_uses_mean_semi_axis():
    c = _comp(area=30, major=8.0, minor=2.0)
    assert circle_radius(c) == 5.0
    assert circle_radius(c, "full") == 10.0
    # 0.3 * pi * 25 = 23.56 <= 30, but 0.3 * pi * 100 = 94.2 > 30
    assert area_filter(c, FilterConfig(axis_ratio_min=0.0))
    assert not area_filter(c, FilterConfig(radius_mode="full"))


def test_edge_boundary_is_inclusive():
    cfg = FilterConfig()
    assert edge_filter(_comp(edge=0.4), cfg)
    assert edge_filter(_comp(edge=2 / 5), cfg)
    assert not edge_filter(_comp(edge=0.39), cfg)


def test_apply_records_every_failing_filter():
    good = _comp(cid=1)
    bad = _comp(area=5, major=10.0, minor=1.0, edge=0.0, cid=2)
    kept, rejected = apply_filters([good, bad])
    assert kept == [good]
    assert rejected[0].component is bad
    assert rejected[0].reasons == {"axis", "area", "edge"}


def test_disabled_filters_are_not_applied():
    bad = _comp(area=5, major=10.0, minor=1.0, edge=0.0)
    kept, rejected = apply_filters([bad], FilterConfig().with_filters([]))
    assert kept == [bad] and rejected == []
    _, rejected = apply_filters([bad], FilterConfig().with_filters(["edge"]))
    assert rejected[0].reasons == {"edge"}


def test_real_disc_passes_and_sliver_fails():
    labels = np.full((40, 60), Label.EDGE, dtype=np.uint8)
    yy, xx = np.mgrid[0:40, 0:60]
    labels[(xx - 15) ** 2 + (yy - 20) ** 2 <= 81] = Label.BERRY
    labels[5:8, 35:58] = Label.BERRY  # 3 x 23 sliver
    kept, rejected = apply_filters(label_components(ClassMask(labels)))
    assert len(kept) == 1 and kept[0].centroid == pytest.approx((15, 20))
    assert len(rejected) == 1 and "axis" in rejected[0].reasons


def test_partial_edge_ring_is_rejected():
    labels = np.zeros((30, 30), dtype=np.uint8)
    yy, xx = np.mgrid[0:30, 0:30]
    disc = (xx - 15) ** 2 + (yy - 15) ** 2 <= 49
    labels[((xx - 15) ** 2 + (yy - 15) ** 2 <= 81) & (xx < 15) & (yy < 15)] = Label.EDGE
    labels[disc] = Label.BERRY
    (comp,) = label_components(ClassMask(labels))
    assert comp.edge_surround_fraction < 0.4
    _, rejected = apply_filters([comp])
    assert rejected[0].reasons == {"edge"}


def test_config_validation():
    with pytest.raises(ConfigError):
        FilterConfig(axis_ratio_min=1.5)
    with pytest.raises(ConfigError):
        FilterConfig(radius_mode="diameter")
    with pytest.raises(ConfigError):
        FilterConfig().with_filters(["colour"])


def test_ablation_is_monotone(tmp_path):
    rng = np.random.default_rng(0)
    comps = [_comp(area=int(rng.integers(5, 100)), major=float(rng.uniform(1, 8)),
                   minor=float(rng.uniform(0.5, 1)) * 4, edge=float(rng.random()), cid=i)
             for i in range(1, 50)]
    rows = ablation(comps)
    assert [r["filters"] for r in rows] == ["none", "axis", "axis+area", "axis+area+edge"]
    kept = [r["kept"] for r in rows]
    assert kept == sorted(kept, reverse=True)
    assert all(r["kept"] + r["rejected"] == len(comps) for r in rows)
    assert len(ABLATION_STEPS) == 4
    path = tmp_path / "a.csv"
    write_ablation_csv(rows, path)
    assert list(csv.DictReader(open(path)))[0] == {"filters": "none", "kept": "49", "rejected": "0"}
