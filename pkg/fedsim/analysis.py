"""Server/client data dissimilarity on the glyph task, measured with SSIM."""
from logging import getLogger
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from fedsim.errors import ConfigurationError
from fedsim.tasks import ClientPartition, ServerDataset
from fedsim.utilities.glyphs import GLYPH_SIDE_PX

log = getLogger(__name__)

DYNAMIC_RANGE = 1.0
DEFAULT_C1 = (0.01 * DYNAMIC_RANGE) ** 2
DEFAULT_C2 = (0.03 * DYNAMIC_RANGE) ** 2
MIN_CORRELATION_POINTS = 3


SimilarityReport = NamedTuple(
    'SimilarityReport',
    [
        ('per_client_ssim', List[Tuple[int, float]]),  # (client_id, mean SSIM)
        ('ssim_variance', float),
        ('server_fraction', float),
        ('accuracy_mean', Optional[float]),  # joined from run results when correlating
        ('pairs', Optional[Dict[int, List[float]]]),  # raw pairwise SSIMs per client, if requested
    ],
)


def ssim(img_a, img_b, c1=DEFAULT_C1, c2=DEFAULT_C2):  # type: (np.ndarray, np.ndarray, float, float) -> float  # noqa: E501
    """Global (single-window) structural similarity of two equally shaped images."""
    img_a = np.asarray(img_a, dtype=np.float64)
    img_b = np.asarray(img_b, dtype=np.float64)
    if img_a.shape != img_b.shape:
        raise ConfigurationError('SSIM needs equal shapes, got {} and {}'.format(
            img_a.shape, img_b.shape))
    mu_a = float(np.mean(img_a))
    mu_b = float(np.mean(img_b))
    centered_a = img_a - mu_a
    centered_b = img_b - mu_b
    var_a = float(np.mean(centered_a * centered_a))
    var_b = float(np.mean(centered_b * centered_b))
    covariance = float(np.mean(centered_a * centered_b))

    luminance = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    structure = (2.0 * covariance + c2) / (var_a + var_b + c2)
    return luminance * structure


def mean_image(images):  # type: (np.ndarray) -> np.ndarray
    """Pixelwise mean of flattened 8x8 images, returned as an 8x8 matrix."""
    return np.mean(images, axis=0).reshape(GLYPH_SIDE_PX, GLYPH_SIDE_PX)


def server_client_similarity(
    server,  # type: ServerDataset
    clients,  # type: Sequence[ClientPartition]
    server_fraction=0.0,  # type: float
    pairwise=False,  # type: bool
):  # type: (...) -> SimilarityReport
    """Compare the server's mean image with each client's mean image.

    With pairwise=True each client's score is instead the mean SSIM over every
    (server sample, client sample) pair, and the raw pairs are kept on the report.
    """
    image_pixels = GLYPH_SIDE_PX * GLYPH_SIDE_PX
    if server.pooled.inputs.shape[1] != image_pixels:
        raise ConfigurationError('similarity analysis needs an 8x8 image suite')
    if server.is_empty:
        raise ConfigurationError('similarity analysis needs server data')
    if not clients:
        raise ConfigurationError('similarity analysis needs at least one client')

    server_mean = mean_image(server.pooled.inputs)
    per_client = []  # type: List[Tuple[int, float]]
    pairs = {} if pairwise else None  # type: Optional[Dict[int, List[float]]]
    for client in clients:
        if pairwise and pairs is not None:
            scores = [
                ssim(server_image.reshape(GLYPH_SIDE_PX, GLYPH_SIDE_PX),
                     client_image.reshape(GLYPH_SIDE_PX, GLYPH_SIDE_PX))
                for server_image in server.pooled.inputs
                for client_image in client.train.inputs
            ]
            pairs[client.client_id] = scores
            per_client.append((client.client_id, float(np.mean(scores))))
        else:
            score = ssim(server_mean, mean_image(client.train.inputs))
            per_client.append((client.client_id, score))

    variance = float(np.var([score for _, score in per_client]))
    return SimilarityReport(per_client, variance, float(server_fraction), None, pairs)


def correlate_variance_accuracy(reports):  # type: (Sequence[SimilarityReport]) -> Optional[float]
    """Pearson correlation between SSIM variance and mean accuracy across reports.

    Returns None when either series is constant (the correlation is undefined).
    """
    joined = [report for report in reports if report.accuracy_mean is not None]
    if len(joined) < MIN_CORRELATION_POINTS:
        raise ConfigurationError('need at least {} reports with accuracy, got {}'.format(
            MIN_CORRELATION_POINTS, len(joined)))
    variances = np.array([report.ssim_variance for report in joined])
    accuracies = np.array([report.accuracy_mean for report in joined], dtype=np.float64)
    if np.ptp(variances) == 0 or np.ptp(accuracies) == 0:
        log.warning('correlation undefined: a series is constant')
        return None
    correlation, _ = stats.pearsonr(variances, accuracies)
    return float(correlation)


def variance_trend(reports):  # type: (Sequence[SimilarityReport]) -> Optional[float]
    """Spearman rank correlation between server fraction and SSIM variance."""
    fractions = np.array([report.server_fraction for report in reports])
    variances = np.array([report.ssim_variance for report in reports])
    if len(reports) < 2 or np.ptp(fractions) == 0 or np.ptp(variances) == 0:
        return None
    rho, _ = stats.spearmanr(fractions, variances)
    return float(rho)


def report_to_dict(report):  # type: (SimilarityReport) -> Dict[str, Any]
    document = {
        'per_client_ssim': [[client_id, score] for client_id, score in report.per_client_ssim],
        'ssim_variance': report.ssim_variance,
        'server_fraction': report.server_fraction,
        'accuracy_mean': report.accuracy_mean,
    }  # type: Dict[str, Any]
    if report.pairs is not None:
        document['pairs'] = {str(client_id): scores for client_id, scores in report.pairs.items()}
    return document
