"""Distributed image-gradient keypoint/anchor selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


class ImageTooSmall(Exception):
    pass


class InvalidGridSpec(Exception):
    pass


@dataclass(frozen=True)
class GradientMap:
    """Per-pixel gradient magnitude, possibly downscaled by `scale`."""

    values: np.ndarray  # (H, W), non-negative
    scale: int = 1

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class QuerySet:
    """Query points (frame index, pixel coordinates)."""

    frame: int
    xy: np.ndarray  # (N, 2) in full-resolution pixel coordinates

    def __len__(self):
        return len(self.xy)


def to_grayscale(image):
    """Luminance conversion for (H, W, 3) input; (H, W) passes through."""
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] == 3:
        return image @ np.array([0.299, 0.587, 0.114])
    raise ValueError(f"unsupported image shape {image.shape}")


def sobel_gradient_map(image) -> GradientMap:
    """3x3 Sobel magnitude (cross-correlation); borders forced to zero."""
    img = to_grayscale(image)
    h, w = img.shape
    if h < 3 or w < 3:
        raise ImageTooSmall(f"need at least 3x3, got {h}x{w}")
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            kx = SOBEL_X[dy + 1, dx + 1]
            ky = SOBEL_X.T[dy + 1, dx + 1]
            shifted = img[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx]
            if kx != 0.0:
                gx[1:-1, 1:-1] += kx * shifted
            if ky != 0.0:
                gy[1:-1, 1:-1] += ky * shifted
    mag = np.sqrt(gx**2 + gy**2)
    mag[0, :] = mag[-1, :] = 0.0
    mag[:, 0] = mag[:, -1] = 0.0
    return GradientMap(mag, scale=1)


def pool_gradient(gmap: GradientMap, pool: int) -> GradientMap:
    """Non-overlapping pool x pool averaging; trailing partial cells kept."""
    if pool < 1:
        raise ValueError("pool must be >= 1")
    if pool == 1:
        return gmap
    v = gmap.values
    h_out = -(-v.shape[0] // pool)
    w_out = -(-v.shape[1] // pool)
    out = np.empty((h_out, w_out))
    for i in range(h_out):
        for j in range(w_out):
            out[i, j] = v[i * pool : (i + 1) * pool, j * pool : (j + 1) * pool].mean()
    return GradientMap(out, scale=gmap.scale * pool)


def grid_max_sample(gmap: GradientMap, k: int, n_points: int, frame: int = 0) -> QuerySet:
    """Top n_points/k^2 gradient pixels from each of k x k equal sub-regions.

    Coordinates are reported at full resolution (cell centers when the map
    was pooled). Ties break in row-major pixel order.
    """
    if k < 1 or n_points < 1 or n_points % (k * k) != 0:
        raise InvalidGridSpec(f"k^2={k*k} must divide n_points={n_points}")
    h, w = gmap.values.shape
    if k > h or k > w:
        raise InvalidGridSpec(f"grid {k}x{k} exceeds map {h}x{w}")
    per_cell = n_points // (k * k)
    row_edges = np.linspace(0, h, k + 1).round().astype(int)
    col_edges = np.linspace(0, w, k + 1).round().astype(int)
    coords = []
    for gi in range(k):
        for gj in range(k):
            r0, r1 = row_edges[gi], row_edges[gi + 1]
            c0, c1 = col_edges[gj], col_edges[gj + 1]
            cell = gmap.values[r0:r1, c0:c1]
            if cell.size < per_cell:
                raise InvalidGridSpec("cell smaller than requested points per cell")
            flat = cell.ravel()
            # stable top-m: sort by (-value, row-major index)
            order = np.lexsort((np.arange(flat.size), -flat))[:per_cell]
            rows, cols = np.unravel_index(order, cell.shape)
            for r, c in zip(rows + r0, cols + c0):
                x = c * gmap.scale + (gmap.scale - 1) / 2.0
                y = r * gmap.scale + (gmap.scale - 1) / 2.0
                coords.append((x, y))
    return QuerySet(frame=frame, xy=np.array(coords, dtype=float))


def sample_keypoints(image, k: int, n_points: int, pool: int = 2, frame: int = 0) -> QuerySet:
    """Full selection chain: Sobel magnitude -> average pool -> grid max."""
    gmap = pool_gradient(sobel_gradient_map(image), pool)
    return grid_max_sample(gmap, k, n_points, frame=frame)
