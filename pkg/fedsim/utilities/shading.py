"""Render grayscale images to the terminal.

https://pypi.org/project/ansicolors/
"""
from typing import List, Sequence

import numpy as np
from colors import color as ansicolor

PIXEL_GLYPH = '██'
EIGHT_BIT_MAX = 255


def pixel_to_block(value):  # type: (float) -> str
    """Format a [0, 1] intensity as a gray terminal block."""
    level = int(round(min(max(float(value), 0.0), 1.0) * EIGHT_BIT_MAX))
    return ansicolor(PIXEL_GLYPH, fg=(level, level, level))  # type: ignore


def render_image(image):  # type: (np.ndarray) -> str
    """Format a 2-D [0, 1] image as rows of terminal blocks."""
    rows = []  # type: List[str]
    for row in np.asarray(image):
        rows.append(''.join(pixel_to_block(value) for value in row))
    return '\n'.join(rows)


def render_side_by_side(images, gap=2):  # type: (Sequence[np.ndarray], int) -> str
    """Format equally tall images next to each other."""
    rendered = [render_image(image).split('\n') for image in images]
    spacer = ' ' * gap
    return '\n'.join(spacer.join(parts) for parts in zip(*rendered))
