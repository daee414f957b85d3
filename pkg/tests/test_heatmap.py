import math

import numpy as np
import pytest

from scnlab.errors import InvalidInputError
from scnlab.heatmap import HeatmapConfig, argmax_coord, extract_landmarks, gaussian_heatmap, target_stack


def test_peak_at_on_grid_center():
    m = gaussian_heatmap((10, 7), 20, 16)
    assert m.shape == (20, 16)
    assert m[7, 10] == 1.0
    assert argmax_coord(m)[0] == (10, 7)


def test_value_at_one_sigma():
    cfg = HeatmapConfig(sigma=2.5, peak=1.0)
    # pixel (8, 8) sits exactly sigma away from a half-pixel centre
    m = gaussian_heatmap((5.5, 8.0), 20, 20, cfg)
    assert m[8, 8] == pytest.approx(math.exp(-0.5), rel=1e-12)


def test_radial_symmetry():
    m = gaussian_heatmap((10, 10), 21, 21)
    for dx, dy in [(3, 4), (4, 3), (-5, 0), (0, 5), (-3, -4)]:
        assert m[10 + dy, 10 + dx] == pytest.approx(m[10, 15], rel=1e-14)


def test_values_positive_and_bounded():
    cfg = HeatmapConfig(sigma=3.0, peak=2.0)
    m = gaussian_heatmap((0, 63), 64, 64, cfg)
    assert m.min() > 0 and m.max() == 2.0


def test_monotone_decay_along_axes():
    m = gaussian_heatmap((12, 20), 40, 40)
    row, col = m[20], m[:, 12]
    assert np.all(np.diff(row[12:]) < 0) and np.all(np.diff(row[:13]) > 0)
    assert np.all(np.diff(col[20:]) < 0) and np.all(np.diff(col[:21]) > 0)


def test_out_of_bounds_center_rejected():
    with pytest.raises(InvalidInputError):
        gaussian_heatmap((16, 2), 16, 16)
    with pytest.raises(InvalidInputError):
        gaussian_heatmap((-0.5, 2), 16, 16)
    with pytest.raises(InvalidInputError):
        HeatmapConfig(sigma=0)


def test_stack_shapes_and_order():
    one = target_stack([[3, 4]], 16, 16)
    np.testing.assert_array_equal(one[0], gaussian_heatmap((3, 4), 16, 16))
    twin = target_stack([[5, 5], [5, 5]], 16, 16)
    np.testing.assert_array_equal(twin[0], twin[1])
    rng = np.random.default_rng(0)
    big = target_stack(rng.integers(0, 32, size=(37, 2)), 32, 32)
    assert big.shape == (37, 32, 32)


def test_argmax_tie_break_and_delta():
    assert argmax_coord(np.full((4, 5), 0.25)) == ((0, 0), 0.25)
    m = np.zeros((6, 6))
    m[4, 1] = 3.0
    assert argmax_coord(m) == ((1, 4), 3.0)
    m[2, 3] = 3.0           # earlier in row-major order
    assert argmax_coord(m)[0] == (3, 2)
    with pytest.raises(InvalidInputError):
        argmax_coord(np.zeros((0, 4)))


def test_argmax_matches_exhaustive_scan():
    rng = np.random.default_rng(5)
    for _ in range(50):
        m = rng.integers(0, 6, size=(16, 16)).astype(float)
        best, where = -np.inf, None
        for y in range(16):
            for x in range(16):
                if m[y, x] > best:
                    best, where = m[y, x], (x, y)
        assert argmax_coord(m) == (where, best)


def test_extract_roundtrip_and_permutation():
    lm = np.array([[3, 4], [20, 9], [11, 25]], dtype=float)
    stack = target_stack(lm, 32, 32)
    np.testing.assert_array_equal(extract_landmarks(stack), lm)
    perm = [2, 0, 1]
    np.testing.assert_array_equal(extract_landmarks(stack[perm]), lm[perm])


def test_extract_tolerates_noise_below_margin():
    cfg = HeatmapConfig()
    margin = cfg.peak * (1 - math.exp(-1 / (2 * cfg.sigma ** 2)))
    rng = np.random.default_rng(9)
    lm = np.array([[10, 10], [40, 30]], dtype=float)
    for _ in range(20):
        stack = target_stack(lm, 48, 48, cfg)
        stack += rng.uniform(-0.49 * margin, 0.49 * margin, size=stack.shape)
        np.testing.assert_array_equal(extract_landmarks(stack), lm)
