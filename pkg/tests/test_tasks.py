import numpy as np
import pytest

from fedsim.errors import ConfigurationError
from fedsim.tasks import (
    SINE_AMPLITUDE_RANGE,
    SINE_PHASE_RANGE,
    allocate_counts,
    export_suite,
    gen_glyph_image_tasks,
    gen_rotated_cluster_tasks,
    gen_sine_tasks,
    import_suite,
    reserve_server_partitions,
    split_all_clients,
    split_support_query,
)

from tests.conftest import quadratic_partition


def assert_same_suite(left, right):
    assert left.model_spec == right.model_spec
    assert len(left.clients) == len(right.clients)
    for a, b in zip(left.clients, right.clients):
        assert a.client_id == b.client_id
        assert a.descriptor == b.descriptor
        for name in ('train', 'eval', 'support', 'query'):
            batch_a, batch_b = getattr(a, name), getattr(b, name)
            if batch_a is None:
                assert batch_b is None
                continue
            np.testing.assert_array_equal(batch_a.inputs, batch_b.inputs)
            np.testing.assert_array_equal(batch_a.targets, batch_b.targets)
    np.testing.assert_array_equal(left.server.pooled.inputs, right.server.pooled.inputs)


def test_sine_tasks_are_seeded():
    assert_same_suite(gen_sine_tasks(5, 10, 1), gen_sine_tasks(5, 10, 1))


def test_sine_descriptors_in_range():
    suite = gen_sine_tasks(100, 10, 2)
    descriptors = {(c.descriptor['amplitude'], c.descriptor['phase']) for c in suite.clients}
    assert len(descriptors) == 100
    for amplitude, phase in descriptors:
        assert SINE_AMPLITUDE_RANGE[0] <= amplitude <= SINE_AMPLITUDE_RANGE[1]
        assert SINE_PHASE_RANGE[0] <= phase <= SINE_PHASE_RANGE[1]


def test_sine_targets_follow_descriptor(sine_suite):
    client = sine_suite.clients[0]
    amplitude, phase = client.descriptor['amplitude'], client.descriptor['phase']
    expected = amplitude * np.sin(client.train.inputs + phase)
    np.testing.assert_allclose(client.train.targets, expected)
    assert client.train.size == 20
    assert client.eval.size == 5


def test_population_checks():
    with pytest.raises(ConfigurationError):
        gen_sine_tasks(5, 3, 0)
    with pytest.raises(ConfigurationError):
        gen_sine_tasks(1, 10, 0)


def test_rotated_clusters():
    suite = gen_rotated_cluster_tasks(4, 12, 0, n_classes=3)
    assert suite.is_classification
    assert suite.model_spec.layer_sizes == (2, 16, 3)
    assert all(0 <= client.descriptor['rotation'] < 2 * np.pi for client in suite.clients)
    np.testing.assert_array_equal(suite.clients[0].train.targets.sum(axis=1), np.ones(12))


def test_allocate_counts_sums_to_total():
    counts = allocate_counts(np.array([0.5, 0.3, 0.2]), 7)
    assert counts.sum() == 7
    assert list(counts) == [4, 2, 1]


def test_glyph_histograms_near_uniform_for_large_alpha():
    suite = gen_glyph_image_tasks(10, 4, 1e6, 0.1, 0, samples_per_client=500)
    for client in suite.clients:
        shares = np.array(client.descriptor['label_histogram']) / 500
        assert np.max(np.abs(shares - 0.25)) < 0.05


def test_glyph_histograms_skewed_for_small_alpha():
    suite = gen_glyph_image_tasks(50, 4, 0.1, 0.1, 0)
    top_shares = [max(client.descriptor['label_histogram']) / 50 for client in suite.clients]
    assert max(top_shares) > 0.6


def test_glyph_labels_match_histogram():
    suite = gen_glyph_image_tasks(3, 5, 0.5, 0.0, 4, samples_per_client=30)
    client = suite.clients[0]
    counts = client.train.targets.sum(axis=0)
    np.testing.assert_array_equal(counts, client.descriptor['label_histogram'])
    assert client.train.inputs.shape == (30, 64)
    assert client.train.inputs.min() >= 0.0
    assert client.train.inputs.max() <= 1.0


def test_glyph_alpha_must_be_positive():
    with pytest.raises(ConfigurationError):
        gen_glyph_image_tasks(3, 4, 0.0, 0.1, 0)


def test_reserve_five_percent():
    suite = reserve_server_partitions(gen_sine_tasks(100, 10, 0), 0.05, 0)
    assert suite.n_clients == 95
    assert len(suite.server.partitions) == 5
    assert suite.server.pooled.size == 5 * (10 + 20)
    remaining = {client.client_id for client in suite.clients}
    assert remaining.isdisjoint(suite.server.reserved_ids)


def test_reserve_nothing():
    suite = reserve_server_partitions(gen_sine_tasks(10, 10, 0), 0.0, 0)
    assert suite.server.is_empty
    assert suite.n_clients == 10


def test_reserve_rejects_bad_fractions():
    with pytest.raises(ConfigurationError):
        reserve_server_partitions(gen_sine_tasks(10, 10, 0), 1.0, 0)
    with pytest.raises(ConfigurationError):
        reserve_server_partitions(gen_sine_tasks(4, 10, 0), 0.75, 0)


def test_split_support_query():
    partition = gen_sine_tasks(2, 10, 0).clients[0]
    split = split_support_query(partition, 0.8, 5)
    assert split.support.size == 8
    assert split.query.size == 2
    rows = np.concatenate([split.support.inputs, split.query.inputs]).ravel()
    np.testing.assert_array_equal(np.sort(rows), np.sort(partition.train.inputs.ravel()))
    again = split_support_query(partition, 0.8, 5)
    np.testing.assert_array_equal(again.support.inputs, split.support.inputs)


def test_split_needs_two_samples():
    partition = quadratic_partition()
    partition = partition._replace(train=partition.train.take(np.array([0])))
    with pytest.raises(ConfigurationError):
        split_support_query(partition, 0.5, 0)


def test_export_then_import(tmp_path):
    suite = split_all_clients(
        reserve_server_partitions(gen_glyph_image_tasks(6, 3, 0.3, 0.1, 2, 12, 4), 0.2, 2), 0.75, 2,
    )
    path = str(tmp_path / 'suite.npz')
    export_suite(suite, path)
    loaded = import_suite(path)
    assert_same_suite(suite, loaded)
    assert loaded.server.reserved_ids == suite.server.reserved_ids
    assert loaded.server_fraction == suite.server_fraction
    assert loaded.suite_kind == suite.suite_kind


def test_import_rejects_foreign_archives(tmp_path):
    path = str(tmp_path / 'other.npz')
    np.savez(path, header=np.array('{"magic": "SOMETHING-ELSE", "version": 1}'))
    with pytest.raises(ConfigurationError):
        import_suite(path)
