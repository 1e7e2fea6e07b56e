import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sthd.correlation import pearson_values, top_k_neighbors
from sthd.data import (
    DataError,
    MtsDataset,
    SyntheticSpec,
    WindowSpec,
    assemble_sample,
    fit_normalizer,
    generate_synthetic,
    load_csv,
    make_windows,
    save_csv,
    synthetic_groups,
)


def write_csv(path, header, rows):
    path.write_text("\n".join([",".join(header)] + [",".join(str(c) for c in r) for r in rows]) + "\n")
    return path


def test_load_csv_splits(tmp_path):
    rows = [[i, 2 * i, 3 * i + 0.5] for i in range(10)]
    ds = load_csv(write_csv(tmp_path / "a.csv", ["a", "b", "c"], rows), (0.6, 0.2))
    assert (ds.M, ds.T) == (3, 10)
    assert ds.split == (6, 8)
    assert ds.channel_ids == ("a", "b", "c")
    np.testing.assert_array_equal(ds.values[1], [2 * i for i in range(10)])


def test_load_csv_non_numeric_names_cell(tmp_path):
    rows = [[1, 2, 3]] * 10
    rows[3] = [1, "oops", 3]
    with pytest.raises(DataError, match="row 4, column 2"):
        load_csv(write_csv(tmp_path / "a.csv", ["a", "b", "c"], rows), (0.6, 0.2))


@pytest.mark.parametrize("bad", ["nan", "inf"])
def test_load_csv_rejects_non_finite(tmp_path, bad):
    rows = [[1, 2]] * 5
    rows[2] = [1, bad]
    with pytest.raises(DataError, match="row 3, column 2"):
        load_csv(write_csv(tmp_path / "a.csv", ["a", "b"], rows), (0.6, 0.2))


def test_load_csv_duplicate_header(tmp_path):
    with pytest.raises(DataError, match="duplicate channel id 's1'"):
        load_csv(write_csv(tmp_path / "a.csv", ["s1", "s2", "s1"], [[1, 2, 3]] * 5), (0.6, 0.2))


def test_load_csv_ragged_row(tmp_path):
    rows = [[1, 2, 3]] * 5
    rows[1] = [1, 2]
    with pytest.raises(DataError, match="row 2 has 2 cells"):
        load_csv(write_csv(tmp_path / "a.csv", ["a", "b", "c"], rows), (0.6, 0.2))


@pytest.mark.parametrize("fractions", [(0.0, 0.2), (0.6, 0.4), (0.9, 0.2)])
def test_load_csv_bad_fractions(tmp_path, fractions):
    with pytest.raises(DataError):
        load_csv(write_csv(tmp_path / "a.csv", ["a"], [[1]] * 10), fractions)


def test_csv_round_trip(tmp_path):
    ds = generate_synthetic(SyntheticSpec(M=5, T=40, num_groups=2, intra_group_coupling=0.7, noise_std=0.3, seed=3))
    save_csv(ds, tmp_path / "s.csv")
    back = load_csv(tmp_path / "s.csv", (0.6, 0.2))
    np.testing.assert_array_equal(back.values, ds.values)
    assert back.channel_ids == ds.channel_ids


def test_dataset_invariants():
    with pytest.raises(DataError):
        MtsDataset(np.zeros((2, 5)), ("a", "a"), (2, 4))
    with pytest.raises(DataError):
        MtsDataset(np.zeros((2, 5)), ("a", "b"), (4, 4))
    with pytest.raises(DataError):
        MtsDataset(np.array([[0.0, np.nan]]), ("a",), (1, 2))


def test_normalizer_constant_channel():
    ds = MtsDataset(np.array([[1.0, 1, 1, 1, 5, 6]]), ("a",), (4, 5))
    norm = fit_normalizer(ds)
    assert norm.mean[0] == 1.0 and norm.std[0] == 0.0
    np.testing.assert_array_equal(norm.normalize(ds.values)[0, :4], 0.0)


def test_normalizer_two_points():
    ds = MtsDataset(np.array([[0.0, 2.0, 9.0]]), ("a",), (2, 3))
    norm = fit_normalizer(ds)
    assert norm.mean[0] == 1.0 and norm.std[0] == 1.0
    np.testing.assert_array_equal(norm.normalize(ds.values)[0, :2], [-1.0, 1.0])


def test_normalizer_uses_train_only_and_round_trips():
    rng = np.random.default_rng(0)
    values = rng.normal(3.0, 2.0, (5, 20))
    values[:, 12:] += 100.0  # leakage would show up in the statistics
    ds = MtsDataset(values, tuple("abcde"), (12, 16))
    norm = fit_normalizer(ds)
    z = norm.normalize(ds.values)
    # recompute statistics directly on the transformed training block
    train = z[:, :12]
    assert np.all(np.abs(train.sum(axis=1) / 12) < 1e-9)
    assert np.allclose(np.sqrt(((train - train.mean(axis=1, keepdims=True)) ** 2).mean(axis=1)), 1.0)
    np.testing.assert_allclose(norm.denormalize(z), values, atol=1e-12, rtol=0)


@pytest.mark.parametrize(
    "length, L, tau, expected",
    [(10, 4, 2, 5), (6, 4, 2, 1)],
)
def test_make_windows_counts(length, L, tau, expected):
    ds = MtsDataset(np.arange(3 * (length + 2), dtype=float).reshape(3, length + 2), ("a", "b", "c"), (length, length + 1))
    pairs = make_windows(ds, WindowSpec(L, tau), "train")
    assert len(pairs) == 3 * expected
    assert pairs[:expected, 1].tolist() == list(range(expected))
    # ascending (channel, start)
    assert [tuple(p) for p in pairs] == sorted(tuple(p) for p in pairs)


def test_make_windows_too_short():
    ds = MtsDataset(np.zeros((3, 7)), ("a", "b", "c"), (5, 6))
    with pytest.raises(DataError, match="at least"):
        make_windows(ds, WindowSpec(4, 2), "train")


@settings(max_examples=60, deadline=None)
@given(
    T=st.integers(20, 80),
    L=st.integers(1, 8),
    tau=st.integers(1, 5),
    stride=st.integers(1, 3),
    f=st.floats(0.3, 0.5),
)
def test_windows_stay_inside_their_range(T, L, tau, stride, f):
    ds = MtsDataset(np.zeros((2, T)), ("a", "b"), (int(f * T), int((f + 0.25) * T)))
    spec = WindowSpec(L, tau, stride)
    for name in ("train", "val", "test"):
        lo, hi = ds.range_bounds(name)
        if hi - lo < L + tau:
            continue
        pairs = make_windows(ds, spec, name)
        assert pairs[:, 1].min() >= lo
        assert pairs[:, 1].max() + L + tau <= hi
        if stride == 1:
            assert len(pairs) == 2 * (hi - lo - L - tau + 1)


def test_assemble_sample_k0():
    ds = generate_synthetic(SyntheticSpec(M=3, T=30, seed=1, noise_std=0.1))
    norm = fit_normalizer(ds)
    s = assemble_sample(ds, np.zeros((3, 0), dtype=int), norm, 1, 2, WindowSpec(5, 2))
    assert s.inputs.shape == (5, 1)
    np.testing.assert_allclose(s.inputs[:, 0], norm.normalize(ds.values)[1, 2:7])


def test_assemble_sample_column_order():
    ds = generate_synthetic(SyntheticSpec(M=10, T=30, seed=1, noise_std=0.1))
    norm = fit_normalizer(ds)
    table = np.zeros((10, 2), dtype=int)
    table[3] = [5, 9]
    s = assemble_sample(ds, table, norm, 3, 0, WindowSpec(4, 2))
    z = norm.normalize(ds.values)
    np.testing.assert_allclose(s.inputs.T, z[[3, 5, 9], 0:4])


def test_assemble_sample_matches_hand_slicing():
    spec = SyntheticSpec(M=4, T=30, num_groups=2, intra_group_coupling=0.8, noise_std=0.2, seed=7)
    ds = generate_synthetic(spec)
    norm = fit_normalizer(ds)
    gamma = pearson_values(ds.values[:, : ds.split[0]])
    nbrs = top_k_neighbors(gamma, 2)
    w = WindowSpec(6, 3)
    # independent slicing: statistics recomputed here from raw values
    train = ds.values[:, : ds.split[0]]
    mu, sd = train.mean(axis=1), train.std(axis=1)
    for c in range(4):
        for t0 in (0, 5, 21):
            s = assemble_sample(ds, nbrs, norm, c, t0, w)
            for col, ch in enumerate([c] + list(nbrs.indices[c])):
                expected = [(ds.values[ch, t] - mu[ch]) / sd[ch] for t in range(t0, t0 + 6)]
                np.testing.assert_allclose(s.inputs[:, col], expected, rtol=0, atol=1e-12)
            horizon = [(ds.values[c, t] - mu[c]) / sd[c] for t in range(t0 + 6, t0 + 9)]
            np.testing.assert_allclose(s.target_horizon, horizon, rtol=0, atol=1e-12)


def test_assemble_sample_missing_neighbor_row():
    ds = generate_synthetic(SyntheticSpec(M=4, T=30, seed=1))
    with pytest.raises(DataError):
        assemble_sample(ds, np.zeros((3, 1), dtype=int), fit_normalizer(ds), 0, 0, WindowSpec(4, 2))


def test_synthetic_noiseless_groups_identical():
    ds = generate_synthetic(SyntheticSpec(M=6, T=50, num_groups=2, intra_group_coupling=1.0, noise_std=0.0, lag=0))
    groups = synthetic_groups(SyntheticSpec(M=6, T=50, num_groups=2))
    for g in (0, 1):
        members = np.flatnonzero(groups == g)
        for m in members[1:]:
            np.testing.assert_array_equal(ds.values[m], ds.values[members[0]])
    gamma = pearson_values(ds.values)
    assert gamma[0, 1] == pytest.approx(1.0, abs=1e-12)


def naive_corr(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    sab = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    saa = sum((x - ma) ** 2 for x in a)
    sbb = sum((y - mb) ** 2 for y in b)
    return sab / (saa * sbb) ** 0.5


def test_synthetic_within_group_more_correlated():
    spec = SyntheticSpec(M=20, T=400, num_groups=2, intra_group_coupling=0.9, noise_std=0.5, seed=11)
    ds = generate_synthetic(spec)
    groups = synthetic_groups(spec)
    within, cross = [], []
    for i in range(20):
        for j in range(i + 1, 20):
            r = naive_corr(list(ds.values[i]), list(ds.values[j]))
            (within if groups[i] == groups[j] else cross).append(r)
    assert np.mean(within) > np.mean(cross) + 0.3


def test_synthetic_deterministic():
    spec = SyntheticSpec(M=7, T=60, num_groups=3, intra_group_coupling=0.6, noise_std=0.4, lag=2, seed=5, innovation_std=0.5)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a.values.tobytes() == b.values.tobytes()
    c = generate_synthetic(SyntheticSpec(M=7, T=60, num_groups=3, intra_group_coupling=0.6, noise_std=0.4, lag=2, seed=6))
    assert not np.array_equal(a.values, c.values)


def test_synthetic_lag_shifts_group_members():
    spec = SyntheticSpec(M=3, T=40, num_groups=1, intra_group_coupling=1.0, noise_std=0.0, lag=3)
    ds = generate_synthetic(spec)
    # member q is the leader delayed by q * lag steps
    np.testing.assert_array_equal(ds.values[1, 3:], ds.values[0, :-3])
    np.testing.assert_array_equal(ds.values[2, 6:], ds.values[0, :-6])


def test_synthetic_leaders_run_ahead_of_followers():
    spec = SyntheticSpec(M=8, T=50, num_groups=2, intra_group_coupling=1.0, noise_std=0.0, lag=4, leaders=1)
    v = generate_synthetic(spec).values
    for leader, followers in ((0, (1, 2, 3)), (4, (5, 6, 7))):
        for f in followers:
            np.testing.assert_array_equal(v[f, 4:], v[leader, :-4])
            np.testing.assert_array_equal(v[f], v[followers[0]])


@pytest.mark.parametrize("phi, innovation, waves", [(0.9, 1.0, 3), (0.5, 2.0, 0), (0.95, 0.0, 2)])
def test_synthetic_components_have_unit_variance(phi, innovation, waves):
    spec = SyntheticSpec(M=40, T=4000, intra_group_coupling=0.6, n_waves=waves, innovation_std=innovation, ar_phi=phi)
    v = generate_synthetic(spec).values
    assert abs(float(np.mean(np.var(v, axis=1))) - 1.0) < 0.15


def test_synthetic_rejects_too_many_groups():
    with pytest.raises(DataError):
        SyntheticSpec(M=3, T=10, num_groups=4)
    with pytest.raises(DataError, match="ar_phi"):
        SyntheticSpec(M=3, T=10, ar_phi=1.0)
