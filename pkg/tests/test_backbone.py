"""Feature-extractor / pose-initializer trunk tests."""

import numpy as np
import pytest

from relpose.autodiff import DimensionError, Tensor
from relpose.backbone import BackboneInit


def make_backbone(seed=0, stride=4, feat_channels=32, joints=13):
    return BackboneInit(np.random.default_rng(seed), joints, feat_channels, stride)


class TestExtractFeatures:
    def test_zero_image_zero_biases_give_zero_features(self):
        bb = make_backbone()
        out = bb.extract_features(Tensor(np.zeros((2, 3, 32, 32))))
        np.testing.assert_array_equal(out.data, np.zeros_like(out.data))

    @pytest.mark.parametrize("stride", [1, 2, 4])
    def test_spatial_extents_follow_stride(self, stride):
        bb = make_backbone(stride=stride)
        out = bb.extract_features(Tensor(np.random.default_rng(1).uniform(size=(1, 3, 32, 32))))
        assert out.shape == (1, 32, 32 // stride, 32 // stride)

    def test_deterministic_given_seed(self):
        x = np.random.default_rng(2).uniform(size=(1, 3, 32, 32)).astype(np.float32)
        a = make_backbone(seed=5).extract_features(Tensor(x)).data
        b = make_backbone(seed=5).extract_features(Tensor(x)).data
        np.testing.assert_array_equal(a, b)

    def test_unsupported_stride_raises(self):
        with pytest.raises(DimensionError):
            make_backbone(stride=3)

    def test_wrong_channel_count_raises(self):
        bb = make_backbone()
        with pytest.raises(DimensionError):
            bb.extract_features(Tensor(np.zeros((1, 1, 32, 32))))


class TestInitialPose:
    def test_output_shape_contract(self):
        bb = make_backbone(joints=7)
        out = bb.initial_pose(Tensor(np.random.default_rng(3).uniform(size=(2, 3, 32, 32))))
        assert out.shape == (2, 7, 8, 8)

    def test_head_and_features_share_trunk(self):
        bb = make_backbone()
        x = Tensor(np.random.default_rng(4).uniform(size=(1, 3, 32, 32)).astype(np.float32))
        feats = bb.extract_features(x)
        via_head = bb.pose_head(feats)
        direct = bb.initial_pose(x)
        np.testing.assert_array_equal(via_head.data, direct.data)

    def test_spatial_alignment_of_features_and_heatmaps(self):
        bb = make_backbone()
        x = Tensor(np.random.default_rng(5).uniform(size=(2, 3, 64, 64)))
        feats = bb.extract_features(x)
        maps = bb.initial_pose(x)
        assert feats.shape[2:] == maps.shape[2:]

    def test_untrained_initializer_decodes_unreliably(self):
        # fresh random head yields near-uniform maps: decoded joints cluster far
        # from any structured prediction, the no-pretraining ablation baseline
        from relpose.heatmaps import decode_maps
        bb = make_backbone(seed=6)
        x = np.random.default_rng(7).uniform(size=(4, 3, 64, 64)).astype(np.float32)
        maps = bb.initial_pose(Tensor(x)).data
        spread = maps.max(axis=(2, 3)) - maps.min(axis=(2, 3))
        assert spread.max() < 0.5  # no confident peaks anywhere
        coords, _ = decode_maps(maps, stride=4)
        assert coords.shape == (4, 13, 2)
