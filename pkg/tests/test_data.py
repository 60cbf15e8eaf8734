import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from upllrs import data
from upllrs.errors import AuditUnavailableError, ConfigError, DataFormatError


def test_synth_balanced_and_deterministic():
    a = data.synth_gaussians(1000, 10, 16, 8.0, 3)
    assert np.bincount(a.labels).tolist() == [100] * 10
    b = data.synth_gaussians(1000, 10, 16, 8.0, 3)
    assert a.features.tobytes() == b.features.tobytes() and a.labels.tobytes() == b.labels.tobytes()


def test_synth_mean_spacing():
    ds = data.synth_gaussians(20000, 4, 8, 6.0, 0)
    means = np.array([ds.features[ds.labels == k].mean(axis=0) for k in range(4)])
    dist = np.linalg.norm(means[:, None] - means[None], axis=-1)
    off = dist[~np.eye(4, dtype=bool)]
    assert np.all(np.abs(off - 6.0) < 0.15)


def test_synth_nearest_centroid_oracle():
    # centroids estimated on one draw, scored on a held-out draw from the same frame
    ds = data.synth_gaussians(12000, 10, 16, 8.0, 1)
    fit, held = np.arange(6000), np.arange(6000, 12000)
    cent = np.array([ds.features[fit][ds.labels[fit] == k].mean(axis=0) for k in range(10)])
    d2 = ((ds.features[held][:, None] - cent[None]) ** 2).sum(-1)
    assert np.mean(d2.argmin(1) == ds.labels[held]) >= 0.99


def test_synth_zero_separation_is_chance():
    ds = data.synth_gaussians(20000, 10, 16, 0.0, 1)
    cent = np.array([ds.features[ds.labels == k].mean(axis=0) for k in range(10)])
    d2 = ((ds.features[:, None] - cent[None]) ** 2).sum(-1)
    assert abs(np.mean(d2.argmin(1) == ds.labels) - 0.1) < 0.03


@pytest.mark.parametrize("args", [(5, 10, 16, 1.0), (100, 10, 1, 1.0), (100, 1, 4, 1.0)])
def test_synth_rejects_bad_sizes(args):
    with pytest.raises(ConfigError):
        data.synth_gaussians(*args, seed=0)


def test_load_csv_dense_relabel(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,label\n1,2,5\n3,2,9\n5,2,5\n")
    ds = data.load_csv(p, "label")
    assert ds.class_count == 2 and ds.labels.tolist() == [0, 1, 0]
    assert np.all(ds.features[:, 1] == 0)
    np.testing.assert_allclose(ds.features[:, 0].mean(), 0, atol=1e-15)
    np.testing.assert_allclose(ds.features[:, 0].std(), 1)


@pytest.mark.parametrize("body,where", [
    ("a,label\nx,1\n", "row 2, column 'a'"),
    ("a,label\n1,1\n,0\n", "row 3, column 'a': missing"),
    ("a,label\n1,q\n", "row 2, column 'label'"),
    ("a,label\n1,1,2\n", "row 2 has 3 fields"),
    ("a,b\n1,2\n", "no column named"),
    ("", "empty file"),
])
def test_load_csv_errors_carry_location(tmp_path, body, where):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(DataFormatError, match=where):
        data.load_csv(p, "label")


def test_load_csv_missing_file(tmp_path):
    with pytest.raises(DataFormatError):
        data.load_csv(tmp_path / "nope.csv", "label")


def test_csv_round_trip(tmp_path):
    ds = data.synth_gaussians(300, 3, 5, 4.0, 2)
    data.write_csv(ds, tmp_path / "s.csv")
    back = data.load_csv(tmp_path / "s.csv", "label")
    assert back.labels.tolist() == ds.labels.tolist()
    mean, std = ds.features.mean(0), ds.features.std(0)
    np.testing.assert_allclose(back.features * std + mean, ds.features, rtol=1e-12, atol=1e-12)


def test_split_examples():
    tr, va, te = data.split_4_1_1(60000, 0)
    assert (len(tr), len(va), len(te)) == (40000, 10000, 10000)
    assert tuple(map(len, data.split_4_1_1(6, 0))) == (4, 1, 1)
    with pytest.raises(ConfigError):
        data.split_4_1_1(5, 0)


@given(st.integers(6, 5000), st.integers(0, 2**31))
@settings(max_examples=50)
def test_split_partitions(n, seed):
    parts = data.split_4_1_1(n, seed)
    allidx = np.concatenate(parts)
    assert np.array_equal(np.sort(allidx), np.arange(n))
    assert len(parts[0]) == 4 * n // 6 and len(parts[1]) == n // 6


def test_corrupt_labels_zero_mu_identity():
    y = np.arange(1000) % 10
    assert np.array_equal(data.corrupt_labels(y, 10, 0.0, 0), y)


def test_corrupt_labels_wrong_class_uniform():
    n = 200000
    y = np.zeros(n, dtype=np.int64)
    noisy = data.corrupt_labels(y, 10, 0.5, 4)
    freq = np.bincount(noisy, minlength=10) / n
    assert abs(freq[0] - 0.5) < 0.005
    # each wrong class gets kappa = mu/(C-1)
    np.testing.assert_allclose(freq[1:], 0.5 / 9, atol=0.003)


@pytest.mark.parametrize("mu", [-0.1, 1.0])
def test_corrupt_labels_rejects_mu(mu):
    with pytest.raises(ConfigError):
        data.corrupt_labels([0, 1], 2, mu, 0)


def test_candidates_contain_noisy_label():
    noisy = np.random.default_rng(0).integers(0, 10, 5000)
    m = data.generate_candidates(noisy, 10, 0.3, 1)
    assert m[np.arange(5000), noisy].all()
    singles = data.generate_candidates(noisy, 10, 0.0, 1)
    assert (singles.sum(1) == 1).all()
    with pytest.raises(ConfigError):
        data.generate_candidates(noisy, 10, 1.0, 1)


def test_monte_carlo_corruption_rates():
    y = np.arange(100000) % 10
    up = data.make_upll(data.LabeledDataset(np.zeros((100000, 2)), y, 10), 0.3, 0.1, 7)
    rep = data.audit(up)
    assert abs(rep.flip_rate - 0.3) <= 0.005
    assert abs(rep.membership_rate - 0.73) <= 0.005
    assert abs(rep.empirical_unreliable_rate - 0.27) <= 0.005
    assert abs(rep.mean_candidate_size - 1.9) <= 0.01


def test_audit_clean_and_counts():
    ds = data.synth_gaussians(600, 6, 4, 3.0, 0)
    rep = data.audit(data.make_upll(ds, 0.0, 0.0, 0))
    assert rep.empirical_unreliable_rate == 0 and rep.mean_candidate_size == 1
    assert sum(rep.per_class_counts) == 600 and sum(rep.size_histogram.values()) == 600
    json.dumps(rep.to_dict())


def test_audit_requires_truth():
    up = data.UpllDataset(np.zeros((2, 2)), np.array([[True, False], [False, True]]), 2)
    with pytest.raises(AuditUnavailableError):
        data.audit(up)


def test_synthesize_keeps_val_test_clean():
    ds = data.synth_gaussians(600, 4, 4, 3.0, 0)
    split = data.synthesize(ds, 0.4, 0.2, 0)
    tr, va, te = split.indices
    assert np.array_equal(split.val.labels, ds.labels[va])
    assert np.array_equal(split.test.labels, ds.labels[te])
    assert np.array_equal(split.train.hidden_truth, ds.labels[tr])


def test_synthesize_bit_identical():
    ds = data.synth_gaussians(600, 4, 4, 3.0, 0)
    a, b = data.synthesize(ds, 0.3, 0.1, 5), data.synthesize(ds, 0.3, 0.1, 5)
    assert a.train.candidates.tobytes() == b.train.candidates.tobytes()
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.indices, b.indices))


def test_upll_file_round_trip(tmp_path):
    ds = data.synth_gaussians(120, 4, 3, 3.0, 0)
    up = data.make_upll(ds, 0.3, 0.2, 0)
    data.write_upll(up, tmp_path / "f.npy", tmp_path / "c.jsonl")
    first = json.loads((tmp_path / "c.jsonl").read_text().splitlines()[0])
    assert first["index"] == 0 and first["candidates"] == sorted(first["candidates"])
    back = data.read_upll(tmp_path / "f.npy", tmp_path / "c.jsonl", 4)
    assert np.array_equal(back.candidates, up.candidates)
    assert np.array_equal(back.hidden_truth, up.hidden_truth)
    assert back.features.tobytes() == up.features.tobytes()


def test_upll_file_bad_line(tmp_path):
    ds = data.synth_gaussians(12, 4, 3, 3.0, 0)
    up = data.make_upll(ds, 0.3, 0.2, 0)
    data.write_upll(up, tmp_path / "f.npy", tmp_path / "c.jsonl")
    lines = (tmp_path / "c.jsonl").read_text().splitlines()
    lines[3] = "{broken"
    (tmp_path / "c.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataFormatError, match="line 4"):
        data.read_upll(tmp_path / "f.npy", tmp_path / "c.jsonl", 4)


def test_labeled_round_trip(tmp_path):
    ds = data.synth_gaussians(60, 3, 3, 3.0, 0)
    data.write_labeled(ds, tmp_path, "val")
    back = data.read_labeled(tmp_path, "val", 3)
    assert back.features.tobytes() == ds.features.tobytes()
    assert np.array_equal(back.labels, ds.labels)


def test_dataset_validation():
    with pytest.raises(DataFormatError):
        data.LabeledDataset(np.zeros((3, 2)), np.array([0, 1, 3]), 3)
    with pytest.raises(DataFormatError):
        data.UpllDataset(np.zeros((2, 2)), np.array([[True, False], [False, False]]), 2)
