import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from berrycount.errors import ConfigError
from berrycount.labelgen import LabelGenConfig, berry_core_exists, generate_labels
from berrycount.masks import InstanceMask, Label

from oracles import labels_oracle, random_instance_ids


def test_square_10x10_thickness_2():
    ids = np.zeros((14, 14), dtype=np.int32)
    ids[2:12, 2:12] = 1
    labels = generate_labels(InstanceMask(ids), LabelGenConfig(2)).labels
    assert (labels == Label.BERRY).sum() == 36
    assert (labels == Label.EDGE).sum() == 64
    assert (labels[ids == 0] == Label.BACKGROUND).all()


def test_small_instance_has_no_core():
    ids = np.zeros((9, 9), dtype=np.int32)
    ids[3:6, 3:6] = 1
    inst = InstanceMask(ids)
    labels = generate_labels(inst, LabelGenConfig(2)).labels
    assert not (labels == Label.BERRY).any()
    assert not berry_core_exists(inst, LabelGenConfig(2), 1)
    assert berry_core_exists(inst, LabelGenConfig(1), 1)


def test_image_border_counts_as_outside():
    ids = np.ones((5, 5), dtype=np.int32)
    labels = generate_labels(InstanceMask(ids), LabelGenConfig(1)).labels
    assert (labels[1:4, 1:4] == Label.BERRY).all()
    assert (labels[0] == Label.EDGE).all() and (labels[:, -1] == Label.EDGE).all()


def test_touching_instances_get_edges_on_both_sides():
    ids = np.zeros((12, 20), dtype=np.int32)
    ids[1:11, 1:10] = 1
    ids[1:11, 10:19] = 2
    labels = generate_labels(InstanceMask(ids), LabelGenConfig(2)).labels
    assert (labels[:, 8:12] == Label.EDGE)[1:11].all()
    # cores never touch, not even diagonally
    core = labels == Label.BERRY
    from scipy import ndimage
    _, n = ndimage.label(core, structure=np.ones((3, 3)))
    assert n == 2


@pytest.mark.parametrize("t", [1, 2, 3])
def test_matches_oracle_on_random_masks(t):
    rng = np.random.default_rng(t)
    for _ in range(30):
        ids = random_instance_ids(rng, 40)
        got = generate_labels(InstanceMask(ids), LabelGenConfig(t)).labels
        np.testing.assert_array_equal(got, labels_oracle(ids, t))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_thicker_band_never_adds_berry(t, seed):
    ids = random_instance_ids(np.random.default_rng(seed), 32)
    thin = generate_labels(InstanceMask(ids), LabelGenConfig(t)).labels
    thick = generate_labels(InstanceMask(ids), LabelGenConfig(t + 1)).labels
    assert not ((thick == Label.BERRY) & (thin != Label.BERRY)).any()
    # class support never changes, only the berry/edge split
    np.testing.assert_array_equal(thin == Label.BACKGROUND, ids == 0)


def test_core_exists_agrees_with_full_labels():
    rng = np.random.default_rng(7)
    for _ in range(20):
        ids = random_instance_ids(rng, 48)
        inst = InstanceMask(ids)
        labels = generate_labels(inst).labels
        for k in inst.instance_ids:
            assert berry_core_exists(inst, None, int(k)) == bool((labels[ids == k] == Label.BERRY).any())


def test_core_exists_unknown_id():
    inst = InstanceMask(np.ones((4, 4), dtype=np.int32))
    with pytest.raises(KeyError):
        berry_core_exists(inst, None, 2)


@pytest.mark.parametrize("bad", [0, -1, 1.5])
def test_invalid_thickness(bad):
    with pytest.raises(ConfigError):
        LabelGenConfig(bad)


def test_empty_mask():
    labels = generate_labels(InstanceMask(np.zeros((0, 0), dtype=np.int32))).labels
    assert labels.shape == (0, 0)
