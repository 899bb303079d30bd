import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dail.numerics import Prng
from dail.registry import ClassTable, build_class_table, crossing_dropout_mask, dataset_mask


@st.composite
def class_tables(draw):
    k = draw(st.integers(1, 5))
    counts = draw(st.lists(st.integers(1, 6), min_size=k, max_size=k))
    owners = np.repeat(np.arange(k), counts)
    perm = draw(st.permutations(list(range(len(owners)))))
    return build_class_table([(c, int(owners[p])) for c, p in enumerate(perm)])


def test_build_class_table_examples():
    t = build_class_table([(0, 0), (1, 0), (2, 1), (3, 1)])
    assert (t.num_classes, t.num_datasets) == (4, 2)
    assert t.per_dataset_class_count.tolist() == [2, 2]
    t1 = build_class_table([(c, 0) for c in range(5)])
    assert t1.per_dataset_class_count.tolist() == [5]
    with pytest.raises(ValueError, match="inconsistent class map"):
        build_class_table([(0, 0), (0, 1)])


def test_build_class_table_rejects_gaps():
    with pytest.raises(ValueError):
        build_class_table([(0, 0), (2, 0)])
    with pytest.raises(ValueError):
        ClassTable(np.array([0, 0, 2]), 3)  # dataset 1 owns nothing


def test_dataset_mask_examples():
    t = ClassTable(np.array([0, 0, 1, 1]), 2)
    assert dataset_mask(t, 0).astype(int).tolist() == [1, 1, 0, 0]
    assert dataset_mask(t, 1).astype(int).tolist() == [0, 0, 1, 1]
    assert dataset_mask(ClassTable(np.zeros(3, int), 1), 0).all()
    with pytest.raises(ValueError):
        dataset_mask(t, 2)


def test_dataset_mask_per_sample_rows():
    t = ClassTable(np.array([0, 1, 1, 2]), 3)
    m = dataset_mask(t, np.array([2, 0, 1]))
    assert m.astype(int).tolist() == [[0, 0, 0, 1], [1, 0, 0, 0], [0, 1, 1, 0]]


@settings(max_examples=100, deadline=None)
@given(class_tables())
def test_masks_partition_class_space(t):
    masks = [dataset_mask(t, k) for k in range(t.num_datasets)]
    assert [int(m.sum()) for m in masks] == t.per_dataset_class_count.tolist()
    np.testing.assert_array_equal(np.sum(masks, axis=0), np.ones(t.num_classes))


def test_crossing_dropout_endpoints():
    t = ClassTable(np.array([0, 0, 1, 1, 2]), 3)
    prng = Prng(0)
    for k in range(3):
        np.testing.assert_array_equal(crossing_dropout_mask(t, k, 0.0, prng), dataset_mask(t, k))
        assert crossing_dropout_mask(t, k, 1.0, prng).all()
    with pytest.raises(ValueError):
        crossing_dropout_mask(t, 0, 1.5, prng)
    with pytest.raises(ValueError):
        crossing_dropout_mask(t, 0, -0.1, prng)


def test_crossing_dropout_rate():
    # 10^5 foreign entries at p = 0.5: 3 sigma of Binomial(1e5, .5)/1e5 is 0.0047
    t = ClassTable(np.array([0] + [1] * 100_000), 2)
    m = crossing_dropout_mask(t, 0, 0.5, Prng(11))
    assert abs(m[1:].mean() - 0.5) <= 0.005


@settings(max_examples=50, deadline=None)
@given(class_tables(), st.floats(0, 1), st.integers(0, 2**32))
def test_crossing_dropout_dominates_and_reproducible(t, p, seed):
    k = np.arange(6) % t.num_datasets
    a = crossing_dropout_mask(t, k, p, Prng(seed))
    b = crossing_dropout_mask(t, k, p, Prng(seed))
    np.testing.assert_array_equal(a, b)
    assert np.all(a >= dataset_mask(t, k))


def test_crossing_dropout_redraws_each_call():
    t = ClassTable(np.array([0] + [1] * 200), 2)
    prng = Prng(3)
    assert not np.array_equal(crossing_dropout_mask(t, 0, 0.5, prng), crossing_dropout_mask(t, 0, 0.5, prng))
