import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patefair.dataset import (
    Dataset,
    DatasetError,
    SplitSpec,
    SynthConfig,
    group_subset,
    load_csv,
    partition_teachers,
    save_csv,
    split,
    standardize,
    synthesize,
)
from patefair.models import TrainConfig, predict, train


def make(x, labels=None, groups=None, C=2, A=2):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    return Dataset(
        features=x,
        labels=np.zeros(n, int) if labels is None else labels,
        groups=np.zeros(n, int) if groups is None else groups,
        names=tuple(f"f{j}" for j in range(x.shape[1])),
        class_count=C,
        group_count=A,
    )


def test_load_csv_dense_codes(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,y,g\n1,2,yes,f\n3,4,no,m\n5,6,yes,f\n")
    ds = load_csv(p, "y", "g")
    assert ds.labels.tolist() == [0, 1, 0]
    assert ds.class_count == 2
    assert ds.label_names == ("yes", "no")
    assert ds.d == 2
    assert ds.names == ("a", "b")
    np.testing.assert_array_equal(ds.features, [[1, 2], [3, 4], [5, 6]])


def test_load_csv_group_feature_flag(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,y,g\n1,2,yes,f\n3,4,no,m\n")
    ds = load_csv(p, "y", "g", include_group_feature=True)
    assert ds.d == 3
    assert ds.features[:, -1].tolist() == [0.0, 1.0]


def test_load_csv_missing_group_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,y\n1,0\n")
    with pytest.raises(DatasetError, match="'g'"):
        load_csv(p, "y", "g")


def test_load_csv_non_numeric_names_row_and_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,y,g\n1,0,0\nxx,1,0\n")
    with pytest.raises(DatasetError, match=r"row 3, column 'a'"):
        load_csv(p, "y", "g")


def test_load_csv_empty(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("")
    with pytest.raises(DatasetError, match="empty"):
        load_csv(p, "y", "g")


def test_csv_round_trip(tmp_path):
    ds = synthesize(SynthConfig(n=30, d=3, seed=4))
    save_csv(ds, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv", "label", "group")
    np.testing.assert_array_equal(back.features, ds.features)
    # codes are re-densified by first appearance, so compare the partition they induce
    assert (back.labels[:, None] == back.labels[None]).tolist() == (ds.labels[:, None] == ds.labels[None]).tolist()


def test_standardize_two_points():
    # sample std of [1, 3] is sqrt(2), so the two points land at -+1/sqrt(2)
    out = standardize(make([1.0, 3.0]))
    np.testing.assert_allclose(out.features[:, 0], [-1 / np.sqrt(2), 1 / np.sqrt(2)])
    # the symmetric shape is what matters: same magnitude, opposite sign
    assert out.features[0, 0] == -out.features[1, 0]


def test_standardize_constant_column():
    out = standardize(make([5.0, 5.0, 5.0]))
    assert out.features[:, 0].tolist() == [0.0, 0.0, 0.0]


def test_standardize_needs_two_rows():
    with pytest.raises(DatasetError):
        standardize(make([1.0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=40), st.integers(0, 2**31))
def test_standardize_properties(col, seed):
    rng = np.random.default_rng(seed)
    x = np.column_stack([col, rng.normal(size=len(col)), np.full(len(col), 7.0)])
    once = standardize(make(x))
    f = once.features
    for j in range(3):
        if np.ptp(x[:, j]) > 1e-6 * max(1.0, np.abs(x[:, j]).max()):
            assert abs(f[:, j].mean()) < 1e-9
            assert abs(f[:, j].std(ddof=1) - 1) < 1e-6
    assert np.all(f[:, 2] == 0)
    twice = standardize(once)
    nonconst = np.ptp(x, axis=0) > 1e-6 * np.maximum(1.0, np.abs(x).max(axis=0))
    np.testing.assert_allclose(twice.features[:, nonconst], f[:, nonconst], atol=1e-9)


def test_split_reference_sizes():
    ds = make(np.arange(1000.0))
    priv, pub, test = split(ds, SplitSpec(0.75, 200, seed=3))
    assert (priv.n, pub.n, test.n) == (750, 200, 50)


def test_split_partition_and_determinism():
    ds = make(np.arange(101.0))
    a = split(ds, SplitSpec(0.6, 20, seed=9))
    b = split(ds, SplitSpec(0.6, 20, seed=9))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.rows, y.rows)
    rows = np.concatenate([s.rows for s in a])
    assert sorted(rows.tolist()) == list(range(101))


def test_split_infeasible():
    with pytest.raises(DatasetError):
        split(make(np.arange(10.0)), SplitSpec(0.75, 5))


@pytest.mark.parametrize("n,k,sizes", [(10, 3, [4, 3, 3]), (7, 1, [7]), (750, 150, [5] * 150)])
def test_partition_sizes(n, k, sizes):
    shards = partition_teachers(make(np.arange(float(n))), k, seed=1)
    assert sorted((s.n for s in shards), reverse=True) == sizes
    rows = np.concatenate([s.rows for s in shards])
    assert sorted(rows.tolist()) == list(range(n))


def test_partition_single_shard_is_whole_set():
    ds = make(np.arange(12.0))
    (only,) = partition_teachers(ds, 1, seed=0)
    assert sorted(only.rows.tolist()) == list(range(12))


def test_partition_too_many():
    with pytest.raises(DatasetError):
        partition_teachers(make(np.arange(3.0)), 4, seed=0)


def test_synth_group_counts():
    ds = synthesize(SynthConfig(n=100, group_fractions=(0.5, 0.5), seed=2))
    counts = np.bincount(ds.groups)
    assert abs(counts[0] - 50) <= 1 and abs(counts[1] - 50) <= 1


def test_synth_norm_scaling():
    ds = synthesize(SynthConfig(n=4000, d=10, norm_scale_per_group=(1.0, 3.0), seed=5))
    norms = np.linalg.norm(ds.features, axis=1)
    ratio = norms[ds.groups == 1].mean() / norms[ds.groups == 0].mean()
    assert ratio == pytest.approx(3.0, rel=0.05)


def test_synth_deterministic():
    a = synthesize(SynthConfig(seed=11))
    b = synthesize(SynthConfig(seed=11))
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)


def test_synth_separable_clusters_are_learnable():
    ds = standardize(synthesize(SynthConfig(n=600, d=5, class_sep=6.0, label_noise=0.0, norm_scale_per_group=(1.0, 1.0), seed=1)))
    p = train(ds.features, ds.labels, TrainConfig(lam=0.0, learning_rate=0.1, epochs=30, batch_size=32))
    assert np.mean(predict(p, ds.features) == ds.labels) > 0.95


def test_synth_config_validation():
    with pytest.raises(DatasetError):
        SynthConfig(group_fractions=(0.5, 0.4), norm_scale_per_group=(1.0, 1.0))
    with pytest.raises(DatasetError):
        SynthConfig(label_noise=0.5)


def test_group_subset():
    ds = make([1.0, 2.0, 3.0], groups=np.array([0, 1, 0]), A=3)
    sub = group_subset(ds, 0)
    assert sub.rows.tolist() == [0, 2]
    assert group_subset(ds, 2).n == 0
    union = sorted(np.concatenate([group_subset(ds, a).rows for a in range(3)]).tolist())
    assert union == [0, 1, 2]
    with pytest.raises(DatasetError):
        group_subset(ds, 3)
