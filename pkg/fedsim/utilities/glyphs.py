"""Module for rasterising the fixed 8x8 glyph prototypes used by the image task."""
from typing import Callable, List

import numpy as np
from PIL import Image, ImageDraw

from fedsim.errors import ConfigurationError

GLYPH_SIDE_PX = 8
PIL_IMAGE_MODE_8BIT = 'L'  # https://pillow.readthedocs.io/en/stable/handbook/concepts.html#modes
PIL_COLOR_MODE_8BIT = 255
PIL_COLOR_BLACK = 0

_LAST = GLYPH_SIDE_PX - 1
_MID = GLYPH_SIDE_PX // 2

DrawFn = Callable[[ImageDraw.ImageDraw], None]


def _horizontal_bar(draw):  # type: (ImageDraw.ImageDraw) -> None
    draw.rectangle([0, _MID - 1, _LAST, _MID], fill=PIL_COLOR_MODE_8BIT)


def _vertical_bar(draw):  # type: (ImageDraw.ImageDraw) -> None
    draw.rectangle([_MID - 1, 0, _MID, _LAST], fill=PIL_COLOR_MODE_8BIT)


def _cross(draw):  # type: (ImageDraw.ImageDraw) -> None
    _horizontal_bar(draw)
    _vertical_bar(draw)


def _diagonal(draw):  # type: (ImageDraw.ImageDraw) -> None
    draw.line([(0, 0), (_LAST, _LAST)], fill=PIL_COLOR_MODE_8BIT, width=1)


def _anti_diagonal(draw):  # type: (ImageDraw.ImageDraw) -> None
    draw.line([(0, _LAST), (_LAST, 0)], fill=PIL_COLOR_MODE_8BIT, width=1)


def _saltire(draw):  # type: (ImageDraw.ImageDraw) -> None
    _diagonal(draw)
    _anti_diagonal(draw)


def _frame(draw):  # type: (ImageDraw.ImageDraw) -> None
    draw.rectangle([0, 0, _LAST, _LAST], outline=PIL_COLOR_MODE_8BIT)


def _block(draw):  # type: (ImageDraw.ImageDraw) -> None
    draw.rectangle([2, 2, _LAST - 2, _LAST - 2], fill=PIL_COLOR_MODE_8BIT)


def _top_half(draw):  # type: (ImageDraw.ImageDraw) -> None
    draw.rectangle([0, 0, _LAST, _MID - 1], fill=PIL_COLOR_MODE_8BIT)


def _left_half(draw):  # type: (ImageDraw.ImageDraw) -> None
    draw.rectangle([0, 0, _MID - 1, _LAST], fill=PIL_COLOR_MODE_8BIT)


def _corners(draw):  # type: (ImageDraw.ImageDraw) -> None
    for x0, y0 in ((0, 0), (_LAST - 1, 0), (0, _LAST - 1), (_LAST - 1, _LAST - 1)):
        draw.rectangle([x0, y0, x0 + 1, y0 + 1], fill=PIL_COLOR_MODE_8BIT)


def _stripes(draw):  # type: (ImageDraw.ImageDraw) -> None
    for row in range(0, GLYPH_SIDE_PX, 2):
        draw.line([(0, row), (_LAST, row)], fill=PIL_COLOR_MODE_8BIT, width=1)


"""Prototype order is part of the task definition: label k is GLYPH_SHAPES[k]."""
GLYPH_SHAPES = [
    ('horizontal_bar', _horizontal_bar),
    ('vertical_bar', _vertical_bar),
    ('cross', _cross),
    ('diagonal', _diagonal),
    ('anti_diagonal', _anti_diagonal),
    ('saltire', _saltire),
    ('frame', _frame),
    ('block', _block),
    ('top_half', _top_half),
    ('left_half', _left_half),
    ('corners', _corners),
    ('stripes', _stripes),
]  # type: List[tuple]

MAX_GLYPH_CLASSES = len(GLYPH_SHAPES)


class GlyphSet:
    """The first n_classes glyph prototypes as [0, 1] grayscale matrices."""

    def __init__(self, n_classes):  # type: (int) -> None
        if not 2 <= n_classes <= MAX_GLYPH_CLASSES:
            raise ConfigurationError('glyph task supports 2 to {} classes, got {}'.format(
                MAX_GLYPH_CLASSES, n_classes))
        self.n_classes = n_classes
        self.names = [name for name, _ in GLYPH_SHAPES[:n_classes]]
        self._prototypes = np.stack(
            [self._shape_to_matrix(draw_fn) for _, draw_fn in GLYPH_SHAPES[:n_classes]]
        )

    @property
    def prototypes(self):  # type: () -> np.ndarray
        """Array of shape (n_classes, 8, 8)."""
        return self._prototypes.copy()

    def sample(self, labels, noise_sigma, rng):  # type: (np.ndarray, float, np.random.Generator) -> np.ndarray  # noqa: E501
        """Return flattened noisy glyphs for each label, clamped to [0, 1]."""
        clean = self._prototypes[np.asarray(labels, dtype=int)].reshape(len(labels), -1)
        noisy = clean + rng.normal(0.0, noise_sigma, size=clean.shape)
        return np.clip(noisy, 0.0, 1.0)

    @staticmethod
    def _shape_to_matrix(draw_fn):  # type: (DrawFn) -> np.ndarray
        """Rasterise a single shape to an 8x8 matrix.

        Pixel value is 0-255 in the 8-bit bitmap, scaled to [0, 1].
        """
        size = (GLYPH_SIDE_PX, GLYPH_SIDE_PX)
        image = Image.new(mode=PIL_IMAGE_MODE_8BIT, size=size, color=PIL_COLOR_BLACK)
        draw = ImageDraw.Draw(im=image)
        draw_fn(draw)
        return np.asarray(image, dtype=np.float64) / PIL_COLOR_MODE_8BIT


if __name__ == '__main__':
    import argparse
    from fedsim.utilities.shading import render_side_by_side
    parser = argparse.ArgumentParser(description='Print the glyph prototypes to the terminal.')
    parser.add_argument('--classes', '-k', type=int, default=MAX_GLYPH_CLASSES)
    parser.add_argument('--noise', '-n', type=float, default=0.0)
    parser.add_argument('--seed', '-s', type=int, default=0)
    args = parser.parse_args()

    glyphs = GlyphSet(args.classes)
    labels = np.arange(args.classes)
    images = glyphs.sample(labels, args.noise, np.random.default_rng(args.seed))
    print(', '.join(glyphs.names))
    print(render_side_by_side([image.reshape(GLYPH_SIDE_PX, GLYPH_SIDE_PX) for image in images]))
