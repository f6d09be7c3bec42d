"""Minimal deterministic SVG rendering for heatmaps and scalp maps.

Hand-rolled so outputs contain no timestamps or library-dependent ids; the
CSV exports remain the bit-exact ground truth, the SVG is for eyes.
"""

import numpy as np

from .fileio import atomic_write_text


def _diverging_color(v):
    """Map v in [-1, 1] to a blue-white-red hex color."""
    v = float(np.clip(v, -1.0, 1.0))
    if v >= 0:
        r, g, b = 255, round(255 * (1 - v)), round(255 * (1 - v))
    else:
        r, g, b = round(255 * (1 + v)), round(255 * (1 + v)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def _normalize(matrix):
    finite = np.isfinite(matrix)
    if not finite.any():
        return np.zeros_like(matrix)
    scale = np.abs(matrix[finite]).max()
    if scale == 0:
        return np.zeros_like(matrix)
    return matrix / scale


def svg_heatmap(path, matrix, row_labels=None, x_ticks=None, cell=4, title=""):
    """Render a (rows, cols) matrix as colored cells.

    x_ticks is an optional list of (column index, text) annotations.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    norm = _normalize(matrix)
    n_rows, n_cols = matrix.shape
    left, top, bottom = 60, 24, 28
    width = left + n_cols * cell + 10
    height = top + n_rows * cell + bottom
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{left}" y="16" font-size="12" font-family="sans-serif">{title}</text>',
    ]
    for i in range(n_rows):
        for j in range(n_cols):
            color = _diverging_color(norm[i, j])
            parts.append(
                f'<rect x="{left + j * cell}" y="{top + i * cell}" '
                f'width="{cell}" height="{cell}" fill="{color}"/>'
            )
        if row_labels is not None:
            parts.append(
                f'<text x="4" y="{top + i * cell + cell}" font-size="9" '
                f'font-family="sans-serif">{row_labels[i]}</text>'
            )
    for col, text in x_ticks or []:
        x = left + col * cell
        y0 = top + n_rows * cell
        parts.append(f'<line x1="{x}" y1="{y0}" x2="{x}" y2="{y0 + 4}" stroke="#000"/>')
        parts.append(
            f'<text x="{x}" y="{y0 + 16}" font-size="9" font-family="sans-serif" '
            f'text-anchor="middle">{text}</text>'
        )
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts) + "\n")


def svg_topomap(path, grid, extent, electrodes_2d=None, labels=None, title=""):
    """Render an interpolated scalp grid (NaN outside the head) with the
    head outline and electrode markers."""
    grid = np.asarray(grid, dtype=np.float64)
    norm = _normalize(grid)
    n = grid.shape[0]
    size = 320
    margin = 30
    cell = (size - 2 * margin) / n
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size + 20}">',
        f'<text x="{margin}" y="14" font-size="12" font-family="sans-serif">{title}</text>',
    ]

    def to_px(x, y):
        # +y (nose) up in the rendered image
        px = margin + (x + extent) / (2 * extent) * (size - 2 * margin)
        py = 20 + margin + (extent - y) / (2 * extent) * (size - 2 * margin)
        return px, py

    for i in range(n):
        for j in range(n):
            if not np.isfinite(grid[i, j]):
                continue
            # grid[i, j] holds the value at x index j, y index i
            x0 = margin + j * cell
            y0 = 20 + margin + (n - 1 - i) * cell
            parts.append(
                f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{cell:.2f}" '
                f'height="{cell:.2f}" fill="{_diverging_color(norm[i, j])}"/>'
            )
    cx, cy = to_px(0.0, 0.0)
    rr = 1.0 / extent * (size - 2 * margin) / 2
    parts.append(
        f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{rr:.2f}" fill="none" stroke="#000"/>'
    )
    nose_lx, nose_ly = to_px(-0.08, 0.995)
    nose_tx, nose_ty = to_px(0.0, 1.1)
    nose_rx, nose_ry = to_px(0.08, 0.995)
    parts.append(
        f'<path d="M {nose_lx:.2f} {nose_ly:.2f} L {nose_tx:.2f} {nose_ty:.2f} '
        f'L {nose_rx:.2f} {nose_ry:.2f}" fill="none" stroke="#000"/>'
    )
    if electrodes_2d is not None:
        for k, (x, y) in enumerate(electrodes_2d):
            px, py = to_px(x, y)
            parts.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="1.5" fill="#000"/>')
            if labels is not None:
                parts.append(
                    f'<text x="{px + 2:.2f}" y="{py - 2:.2f}" font-size="6" '
                    f'font-family="sans-serif">{labels[k]}</text>'
                )
    parts.append("</svg>")
    atomic_write_text(path, "\n".join(parts) + "\n")
