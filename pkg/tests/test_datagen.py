import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambifair.datagen import SPARSE_CLUSTERS, SynthConfig, count, flip_labels, generate_synthetic, save_synthetic
from ambifair.errors import ConfigError, ContractError
from ambifair.ingest import IngestConfig, load_csv


@pytest.fixture(scope="module")
def default_data():
    return generate_synthetic(SynthConfig())


def test_default_size_and_label_balance(default_data):
    d = default_data
    assert (d.n, d.d) == (10000, 2)
    # 4275 + 225 + 500 positives, the mirror image for negatives
    assert int(np.sum(d.labels == 1)) == 5000
    assert int(np.sum(d.labels == -1)) == 5000


def test_per_cluster_tallies(default_data):
    d = default_data
    c, y, z = d.cluster, d.labels, d.sensitive
    assert np.sum((c == 1) & (y == 1)) == 4275
    assert np.sum((c == 2) & (y == -1)) == 4275
    assert np.sum((c == 1) & (z == 0)) == 2925
    assert np.sum((c == 2) & (z == 0)) == 2925
    for k, lab in zip(SPARSE_CLUSTERS, (-1, 1, -1, 1)):
        assert np.sum(c == k) == 250
        assert np.all(y[c == k] == lab)
    assert np.sum(np.isin(c, (3, 4)) & (z == 1)) == 400
    assert np.sum(np.isin(c, (5, 6)) & (z == 1)) == 100


def test_standardized_columns(default_data):
    X = default_data.features
    assert np.all(np.abs(X.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(X.std(axis=0) - 1) < 1e-9)


def test_tiny_replica():
    d = generate_synthetic(SynthConfig(n_core=20, n_sparse=2))
    assert d.n == 2 * 20 + 4 * 2
    assert np.sum((d.cluster == 1) & (d.labels == 1)) == count(0.95, 20) == 19
    assert np.sum((d.cluster == 1) & (d.sensitive == 0)) == count(0.65, 20) == 13
    assert np.sum(np.isin(d.cluster, (3, 4)) & (d.sensitive == 1)) == count(0.8, 4)
    assert np.sum(np.isin(d.cluster, (5, 6)) & (d.sensitive == 1)) == count(0.2, 4)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_proportions_hold_for_any_seed(seed):
    d = generate_synthetic(SynthConfig(seed=seed, n_core=200, n_sparse=30))
    assert np.sum((d.cluster == 2) & (d.labels == -1)) == count(0.95, 200)
    assert np.sum((d.cluster == 2) & (d.sensitive == 0)) == count(0.65, 200)
    assert np.sum(np.isin(d.cluster, (5, 6)) & (d.sensitive == 1)) == count(0.2, 60)


def test_noise_free_labels_match_clean():
    clean = generate_synthetic(SynthConfig(n_core=100, n_sparse=10))
    again = generate_synthetic(SynthConfig(n_core=100, n_sparse=10, noise_rate=0.0))
    assert np.array_equal(clean.labels, again.labels)
    assert np.array_equal(clean.features, again.features)


def test_noise_keeps_features():
    clean = generate_synthetic(SynthConfig(n_core=100, n_sparse=10))
    noisy = generate_synthetic(SynthConfig(n_core=100, n_sparse=10, noise_rate=0.1))
    assert np.array_equal(clean.features, noisy.features)
    assert np.sum(clean.labels != noisy.labels) == count(0.1, clean.n)


def test_non_pd_covariance_rejected():
    covs = list(SynthConfig().covariances)
    covs[0] = ((1.0, 2.0), (2.0, 1.0))
    with pytest.raises(ConfigError):
        generate_synthetic(SynthConfig(covariances=tuple(covs)))


def test_noise_rate_out_of_range():
    with pytest.raises(ConfigError):
        generate_synthetic(SynthConfig(noise_rate=0.6))


class TestFlipLabels:
    def test_rate_zero_is_identity(self, default_data):
        assert np.array_equal(flip_labels(default_data, 0.0, 1).labels, default_data.labels)

    def test_exact_count(self, default_data):
        out = flip_labels(default_data, 0.2, 5)
        assert np.sum(out.labels != default_data.labels) == 2000
        assert np.array_equal(out.sensitive, default_data.sensitive)
        assert np.array_equal(out.features, default_data.features)

    def test_deterministic(self, default_data):
        a = flip_labels(default_data, 0.05, 9)
        b = flip_labels(default_data, 0.05, 9)
        assert np.array_equal(a.labels, b.labels)

    def test_two_applications_bounded(self, default_data):
        twice = flip_labels(flip_labels(default_data, 0.1, 1), 0.1, 2)
        assert np.sum(twice.labels != default_data.labels) <= 2 * 1000

    def test_rate_out_of_range(self, default_data):
        with pytest.raises(ContractError):
            flip_labels(default_data, 0.7, 0)


def test_save_roundtrip(tmp_path):
    cfg = SynthConfig(n_core=30, n_sparse=5)
    d = generate_synthetic(cfg)
    csv_path, meta = save_synthetic(d, cfg, tmp_path / "s.csv")
    back = load_csv(IngestConfig(str(csv_path), protected_value="0", cluster_column="cluster"))
    assert np.array_equal(back.features, d.features)
    assert np.array_equal(back.labels, d.labels)
    assert np.array_equal(back.sensitive, d.sensitive)
    assert np.array_equal(back.cluster, d.cluster)
    assert json.loads(meta.read_text())["config"]["n_core"] == 30
