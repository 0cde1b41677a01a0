import numpy as np
import pytest

from fedsim.analysis import (
    DEFAULT_C2,
    SimilarityReport,
    correlate_variance_accuracy,
    mean_image,
    report_to_dict,
    server_client_similarity,
    ssim,
    variance_trend,
)
from fedsim.errors import ConfigurationError
from fedsim.harness import analyze, show_suite
from fedsim.model import Batch
from fedsim.tasks import (
    ClientPartition,
    ServerDataset,
    export_suite,
    gen_glyph_image_tasks,
    reserve_server_partitions,
)


def image_batch(seed, samples=4):
    rng = np.random.default_rng(seed)
    return Batch(rng.uniform(0.0, 1.0, size=(samples, 64)), np.eye(4)[np.arange(samples) % 4])


def partition(client_id, batch):
    return ClientPartition(client_id, batch, batch, None, None, {})


def report(variance, accuracy, fraction=0.1):
    return SimilarityReport([(0, 0.5)], variance, fraction, accuracy, None)


@pytest.fixture
def glyph_suite():
    suite = gen_glyph_image_tasks(10, 4, 0.5, 0.1, rng_seed=2, samples_per_client=6,
                                  eval_samples=2)
    return reserve_server_partitions(suite, 0.2, 2)


def test_ssim_of_an_image_with_itself_is_one():
    image = np.random.default_rng(0).uniform(size=(8, 8))
    assert ssim(image, image) == pytest.approx(1.0)


def test_ssim_is_symmetric_and_bounded():
    rng = np.random.default_rng(1)
    for _ in range(20):
        img_a, img_b = rng.uniform(size=(8, 8)), rng.uniform(size=(8, 8))
        score = ssim(img_a, img_b)
        assert score == pytest.approx(ssim(img_b, img_a))
        assert -1.0 <= score <= 1.0


def test_ssim_uncorrelated_structure():
    img_a = np.array([[0.0, 0.0], [1.0, 1.0]])
    img_b = np.array([[0.0, 1.0], [0.0, 1.0]])
    # equal means, zero covariance
    assert ssim(img_a, img_b) == pytest.approx(DEFAULT_C2 / (0.5 + DEFAULT_C2))


def test_ssim_inverted_image_is_negative():
    image = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert ssim(image, 1.0 - image) < 0.0


def test_ssim_shape_mismatch():
    with pytest.raises(ConfigurationError):
        ssim(np.zeros((8, 8)), np.zeros((4, 4)))


def test_mean_image():
    images = np.stack([np.zeros(64), np.ones(64)])
    np.testing.assert_array_equal(mean_image(images), np.full((8, 8), 0.5))


def test_identical_server_and_clients():
    batch = image_batch(3)
    server = ServerDataset((batch,), batch, (99,))
    result = server_client_similarity(server, [partition(0, batch), partition(1, batch)], 0.1)
    assert [client_id for client_id, _ in result.per_client_ssim] == [0, 1]
    assert all(score == pytest.approx(1.0) for _, score in result.per_client_ssim)
    assert result.ssim_variance == pytest.approx(0.0)
    assert result.server_fraction == 0.1
    assert result.pairs is None


def test_single_client_has_zero_variance():
    server_batch = image_batch(4)
    server = ServerDataset((server_batch,), server_batch, (99,))
    result = server_client_similarity(server, [partition(0, image_batch(5))])
    assert result.ssim_variance == 0.0


def test_similarity_requires_server_data_and_images(sine_suite, glyph_suite):
    with pytest.raises(ConfigurationError):
        server_client_similarity(sine_suite.server, sine_suite.clients)
    empty = ServerDataset((), Batch.empty(64, 4), ())
    with pytest.raises(ConfigurationError):
        server_client_similarity(empty, glyph_suite.clients)
    with pytest.raises(ConfigurationError):
        server_client_similarity(glyph_suite.server, [])


def test_pairwise_scores(glyph_suite):
    result = server_client_similarity(glyph_suite.server, glyph_suite.clients, pairwise=True)
    assert len(result.per_client_ssim) == 8
    for client in glyph_suite.clients:
        scores = result.pairs[client.client_id]
        assert len(scores) == glyph_suite.server.pooled.size * client.train.size
    assert dict(result.per_client_ssim)[0] == pytest.approx(np.mean(result.pairs[0]))


def test_correlation():
    reports = [report(0.1, 0.9), report(0.2, 0.8), report(0.4, 0.5)]
    assert correlate_variance_accuracy(reports) < -0.9
    assert correlate_variance_accuracy(
        [report(0.1, 0.3), report(0.2, 0.4), report(0.3, 0.5)]) == pytest.approx(1.0)


def test_correlation_of_constant_series_is_undefined():
    assert correlate_variance_accuracy([report(0.1, 0.9)] * 3) is None


def test_correlation_needs_three_joined_reports():
    with pytest.raises(ConfigurationError):
        correlate_variance_accuracy([report(0.1, 0.9), report(0.2, 0.8), report(0.3, None)])


def test_variance_trend():
    reports = [report(0.3, None, 0.05), report(0.2, None, 0.1), report(0.1, None, 0.2)]
    assert variance_trend(reports) == pytest.approx(-1.0)
    assert variance_trend(reports[:1]) is None


def test_report_to_dict():
    document = report_to_dict(SimilarityReport([(3, 0.5)], 0.0, 0.2, None, {3: [0.5]}))
    assert document == {
        'per_client_ssim': [[3, 0.5]],
        'ssim_variance': 0.0,
        'server_fraction': 0.2,
        'accuracy_mean': None,
        'pairs': {'3': [0.5]},
    }


def test_analyze_exported_suite(glyph_suite, tmp_path):
    path = str(tmp_path / 'tasks.npz')
    export_suite(glyph_suite, path)
    document = analyze([path])
    assert len(document['reports']) == 1
    assert document['reports'][0]['server_fraction'] == glyph_suite.server_fraction
    assert document['variance_trend'] is None

    preview = show_suite(path, n_clients=2)
    assert isinstance(preview, str) and preview


def test_analyze_needs_one_run_per_suite(glyph_suite, tmp_path):
    path = str(tmp_path / 'tasks.npz')
    export_suite(glyph_suite, path)
    with pytest.raises(ConfigurationError):
        analyze([path], ['a.csv', 'b.csv'])
