"""Rasterized figures without a plotting dependency.

Two renderers cover the report command: grid heatmaps (rows of panels with a
shared color scale per row, darker cells meaning higher probability) and 1D
density overlays (several curves on one pair of axes). Output is binary PPM
(P6), which any image viewer or converter understands. Panel and curve names
go into a JSON legend next to the image since PPM carries no text.
"""

from __future__ import annotations

import numpy as np

from .tables import _atomic_write_bytes

# dark-is-high ramp endpoints: white down to a deep ink blue
_INK = np.array([18.0, 28.0, 86.0])
_WHITE = np.array([255.0, 255.0, 255.0])

# curve palette (RGB), cycled when there are more curves than entries
PALETTE = (
    (31, 119, 180),
    (214, 39, 40),
    (44, 160, 44),
    (255, 127, 14),
    (148, 103, 189),
    (23, 190, 207),
    (127, 127, 127),
)


def save_ppm(path: str, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as binary PPM."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8, got {rgb.shape} {rgb.dtype}")
    header = f"P6\n{rgb.shape[1]} {rgb.shape[0]}\n255\n".encode()
    _atomic_write_bytes(path, header + rgb.tobytes())


def heatmap_rgb(values: np.ndarray, vmax: float, cell_scale: int = 8) -> np.ndarray:
    """One heatmap panel: 0 maps to white, vmax to the ink color."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("heatmap expects a 2D table")
    if vmax <= 0.0:
        vmax = 1.0
    t = np.clip(values / vmax, 0.0, 1.0)
    rgb = _WHITE[None, None, :] + t[:, :, None] * (_INK - _WHITE)[None, None, :]
    rgb = rgb.astype(np.uint8)
    return np.repeat(np.repeat(rgb, cell_scale, axis=0), cell_scale, axis=1)


def render_heatmap_rows(
    rows: list[list[tuple[str, np.ndarray]]],
    cell_scale: int | None = None,
    pad: int = 12,
) -> tuple[np.ndarray, list[dict]]:
    """Stack rows of heatmap panels; each row shares one color scale.

    Returns the image and a legend: one entry per panel with its name, row,
    column, and the row's shared vmax.
    """
    if not rows or any(not row for row in rows):
        raise ValueError("need at least one panel per row")
    side = max(np.asarray(tbl).shape[0] for row in rows for _, tbl in row)
    if cell_scale is None:
        cell_scale = max(4, -(-256 // side))  # panels come out at least ~256 px wide
    panel_px = [max(np.asarray(tbl).shape[0] for _, tbl in row) * cell_scale for row in rows]
    width = max(len(row) for row in rows) * (max(panel_px) + pad) + pad
    height = sum(px + pad for px in panel_px) + pad
    canvas = np.full((height, width, 3), 255, dtype=np.uint8)
    legend: list[dict] = []
    y = pad
    for r, row in enumerate(rows):
        vmax = max(float(np.asarray(tbl).max()) for _, tbl in row)
        x = pad
        for c, (name, tbl) in enumerate(row):
            panel = heatmap_rgb(np.asarray(tbl), vmax, cell_scale)
            canvas[y : y + panel.shape[0], x : x + panel.shape[1]] = panel
            legend.append({"name": name, "row": r, "col": c, "vmax": vmax})
            x += max(panel_px) + pad
        y += panel_px[r] + pad
    return canvas, legend


def _draw_line(canvas: np.ndarray, x0: float, y0: float, x1: float, y1: float, color) -> None:
    """Plot a line segment by dense sampling; fine for figure-scale rasters."""
    steps = int(max(abs(x1 - x0), abs(y1 - y0)) * 2) + 1
    ts = np.linspace(0.0, 1.0, steps)
    xs = np.clip(np.round(x0 + ts * (x1 - x0)).astype(int), 0, canvas.shape[1] - 1)
    ys = np.clip(np.round(y0 + ts * (y1 - y0)).astype(int), 0, canvas.shape[0] - 1)
    canvas[ys, xs] = color
    # thicken vertically so steep segments stay visible
    canvas[np.clip(ys + 1, 0, canvas.shape[0] - 1), xs] = color


def render_curves(
    curves: list[tuple[str, np.ndarray, np.ndarray]],
    width: int = 900,
    height: int = 540,
    margin: int = 40,
) -> tuple[np.ndarray, list[dict]]:
    """Overlay (name, xs, ys) curves on shared axes; returns image + legend."""
    if not curves:
        raise ValueError("need at least one curve")
    canvas = np.full((height, width, 3), 255, dtype=np.uint8)
    x_lo = min(float(np.min(xs)) for _, xs, _ in curves)
    x_hi = max(float(np.max(xs)) for _, xs, _ in curves)
    y_hi = max(float(np.max(ys)) for _, _, ys in curves)
    if y_hi <= 0.0:
        y_hi = 1.0
    x_span = x_hi - x_lo if x_hi > x_lo else 1.0

    def to_px(x: float, y: float) -> tuple[float, float]:
        px = margin + (x - x_lo) / x_span * (width - 2 * margin)
        py = (height - margin) - y / (1.05 * y_hi) * (height - 2 * margin)
        return px, py

    axis = np.array([120, 120, 120], dtype=np.uint8)
    canvas[height - margin, margin : width - margin] = axis
    canvas[margin : height - margin, margin] = axis
    legend: list[dict] = []
    for k, (name, xs, ys) in enumerate(curves):
        color = np.array(PALETTE[k % len(PALETTE)], dtype=np.uint8)
        xs = np.asarray(xs, dtype=np.float64).ravel()
        ys = np.asarray(ys, dtype=np.float64).ravel()
        pts = [to_px(x, y) for x, y in zip(xs, ys)]
        for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
            _draw_line(canvas, ax, ay, bx, by, color)
        legend.append({"name": name, "color": "#%02x%02x%02x" % PALETTE[k % len(PALETTE)],
                       "x_range": [x_lo, x_hi], "y_max": y_hi})
    return canvas, legend
