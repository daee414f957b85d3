"""Gaussian target heatmaps and argmax landmark decoding.

Landmark sets are ``(N, 2)`` float arrays of ``(x, y)`` pixel coordinates,
``x`` along the width and ``y`` along the height, origin at the centre of
the top-left pixel. Heatmap stacks are ``(N, H, W)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidInputError


@dataclass(frozen=True)
class HeatmapConfig:
    sigma: float = 3.0
    peak: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not self.peak > 0:
            raise ConfigError(f"peak must be positive, got {self.peak}")


def as_landmarks(coords) -> np.ndarray:
    """Validate and convert to an ``(N, 2)`` float64 array."""
    arr = np.asarray(coords, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidInputError(f"landmarks must have shape (N, 2), got {arr.shape}")
    return arr


def in_bounds(coords, height: int, width: int) -> np.ndarray:
    pts = as_landmarks(coords)
    return ((pts[:, 0] >= 0) & (pts[:, 0] <= width - 1)
            & (pts[:, 1] >= 0) & (pts[:, 1] <= height - 1))


def gaussian_heatmap(center, height: int, width: int,
                     config: HeatmapConfig = HeatmapConfig()) -> np.ndarray:
    """Sample ``peak * exp(-|p - center|^2 / (2 sigma^2))`` on the pixel grid.

    The Gaussian is cut off by the image border and not renormalised.
    Computed in float64 so that tails stay strictly positive at the default
    image sizes.
    """
    cx, cy = (float(v) for v in np.asarray(center, dtype=np.float64).reshape(2))
    if not (0 <= cx <= width - 1 and 0 <= cy <= height - 1):
        raise InvalidInputError(
            f"center ({cx}, {cy}) outside image bounds {width}x{height}")
    xs = np.arange(width, dtype=np.float64) - cx
    ys = np.arange(height, dtype=np.float64) - cy
    d2 = ys[:, None] ** 2 + xs[None, :] ** 2
    return config.peak * np.exp(-d2 / (2.0 * config.sigma ** 2))


def target_stack(landmarks, height: int, width: int,
                 config: HeatmapConfig = HeatmapConfig()) -> np.ndarray:
    """One Gaussian target map per landmark, in landmark order."""
    pts = as_landmarks(landmarks)
    out = np.empty((len(pts), height, width), dtype=np.float64)
    for i, p in enumerate(pts):
        out[i] = gaussian_heatmap(p, height, width, config)
    return out


def argmax_coord(heatmap) -> tuple:
    """Grid coordinate ``(x, y)`` of the largest value, and that value.

    Ties go to the smallest row-major index.
    """
    m = np.asarray(heatmap)
    if m.ndim != 2 or m.size == 0:
        raise InvalidInputError(f"heatmap must be a non-empty 2-D grid, got shape {m.shape}")
    flat = int(np.argmax(m))
    y, x = divmod(flat, m.shape[1])
    return (x, y), m.reshape(-1)[flat]


def extract_landmarks(stack) -> np.ndarray:
    """Per-map argmax coordinates as an ``(N, 2)`` landmark array."""
    s = np.asarray(stack)
    if s.ndim != 3:
        raise InvalidInputError(f"heatmap stack must be (N, H, W), got shape {s.shape}")
    if s.shape[0] == 0 or s.shape[1] * s.shape[2] == 0:
        raise InvalidInputError("heatmap stack is empty")
    flat = s.reshape(s.shape[0], -1).argmax(axis=1)
    ys, xs = np.divmod(flat, s.shape[2])
    return np.stack([xs, ys], axis=1).astype(np.float64)
