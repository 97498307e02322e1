"""Heatmap codec tests: Gaussian encoding, argmax decoding, round trips."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relpose.heatmaps import (DataError, JointHeatmaps, JointSet, decode,
                              decode_maps, encode, encode_maps)


def cell_center(u, v, stride):
    return (u * stride + stride / 2.0, v * stride + stride / 2.0)


class TestEncode:
    def test_peak_is_one_at_cell_center(self):
        x, y = cell_center(3, 5, 4)
        maps = encode_maps(np.array([[[x, y]]]), np.array([[True]]),
                           sigma=2.0, stride=4, height=32, width=32)
        assert maps[0, 0, 5, 3] == pytest.approx(1.0)
        assert maps.max() == pytest.approx(1.0)

    def test_invisible_joint_is_all_zero(self):
        maps = encode_maps(np.array([[[10.0, 10.0]]]), np.array([[False]]),
                           sigma=2.0, stride=4, height=32, width=32)
        np.testing.assert_array_equal(maps, np.zeros_like(maps))

    def test_closed_form_two_cells_from_peak(self):
        # sigma=1, joint at cell (4,4) of a 9x9 stride-1 map: cell (4,6) holds exp(-2)
        x, y = cell_center(4, 4, 1)
        maps = encode_maps(np.array([[[x, y]]]), np.array([[True]]),
                           sigma=1.0, stride=1, height=9, width=9)
        assert maps[0, 0, 6, 4] == pytest.approx(math.exp(-2.0), rel=1e-6)
        assert maps[0, 0, 4, 6] == pytest.approx(math.exp(-2.0), rel=1e-6)

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(0)
        coords = rng.uniform(0, 31, (4, 13, 2))
        vis = rng.random((4, 13)) < 0.8
        maps = encode_maps(coords, vis, sigma=2.0, stride=4, height=32, width=32)
        assert maps.min() >= 0.0 and maps.max() <= 1.0

    def test_out_of_bounds_visible_joint_raises(self):
        with pytest.raises(DataError):
            encode_maps(np.array([[[40.0, 10.0]]]), np.array([[True]]),
                        sigma=2.0, stride=4, height=32, width=32)

    def test_out_of_bounds_invisible_joint_allowed(self):
        maps = encode_maps(np.array([[[-5.0, 99.0]]]), np.array([[False]]),
                           sigma=2.0, stride=4, height=32, width=32)
        np.testing.assert_array_equal(maps, np.zeros_like(maps))


class TestDecode:
    def test_round_trip_cell_centered_joint_is_exact(self):
        for stride in (1, 2, 4):
            x, y = cell_center(2, 3, stride)
            js = JointSet(coords=np.array([[x, y]]), visibility=np.array([True]))
            hm = encode(js, sigma=2.0, stride=stride, height=16, width=16)
            decoded = decode(hm)[0]
            np.testing.assert_allclose(decoded.coords, [[x, y]], atol=0)
            assert decoded.visibility[0]

    def test_all_zero_map_is_invisible(self):
        coords, vis = decode_maps(np.zeros((1, 2, 4, 4), np.float32), stride=4)
        assert not vis[0, 0] and not vis[0, 1]

    def test_tie_breaks_row_major(self):
        maps = np.zeros((1, 1, 4, 4), np.float32)
        maps[0, 0, 1, 2] = 0.9
        maps[0, 0, 2, 1] = 0.9
        coords, vis = decode_maps(maps, stride=4)
        # row 1 comes before row 2 in row-major order
        np.testing.assert_allclose(coords[0, 0], [2 * 4 + 2, 1 * 4 + 2])
        assert vis[0, 0]

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 31.999), st.floats(0.0, 31.999),
           st.sampled_from([1, 2, 4]))
    def test_round_trip_within_half_stride(self, x, y, stride):
        js = JointSet(coords=np.array([[x, y]]), visibility=np.array([True]))
        decoded = decode(encode(js, sigma=2.0, stride=stride, height=32, width=32))[0]
        dx, dy = abs(decoded.coords[0, 0] - x), abs(decoded.coords[0, 1] - y)
        assert dx <= stride / 2 + 1e-4 and dy <= stride / 2 + 1e-4


class TestTypes:
    def test_jointset_validates_extents(self):
        with pytest.raises(DataError):
            JointSet(coords=np.zeros((3, 2)), visibility=np.zeros(4, bool))

    def test_heatmaps_require_rank4(self):
        with pytest.raises(DataError):
            JointHeatmaps(maps=np.zeros((2, 4, 4)))
