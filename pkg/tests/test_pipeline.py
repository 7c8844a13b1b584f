import numpy as np
import pytest
import torch

from bsvd.network import NetConfig, build_network
from bsvd.pipeline import denoise_video, pad_to_multiple, sliding_windows
from bsvd.training import NoiseModel


def make_video(T=7, C=3, H=16, W=16, seed=0):
    return np.random.default_rng(seed).random((T, C, H, W)) * 255


class TestPadToMultiple:
    def test_already_aligned(self):
        v = make_video(H=16, W=16)
        padded, (ph, pw) = pad_to_multiple(v)
        assert padded.shape == v.shape
        assert (ph, pw) == (0, 0)

    def test_pads_up(self):
        v = make_video(H=18, W=21)
        padded, (ph, pw) = pad_to_multiple(v)
        assert padded.shape[-2:] == (20, 24)
        assert (ph, pw) == (2, 3)
        assert np.array_equal(padded[:, :, :18, :21], v)


class TestSlidingWindows:
    def test_interior_and_edges(self):
        idx = sliding_windows(6, 5)
        assert idx[0] == [0, 0, 0, 1, 2]
        assert idx[2] == [0, 1, 2, 3, 4]
        assert idx[5] == [3, 4, 5, 5, 5]

    def test_single_frame_window(self):
        assert sliding_windows(3, 1) == [[0], [1], [2]]


class TestDenoiseVideo:
    def test_output_shape_matches_input(self):
        net = build_network(NetConfig(frame_count=5, channels=3), seed=0)
        v = make_video(H=18, W=21)
        out = denoise_video(net, v)
        assert out.shape == v.shape

    def test_fusion_only_with_gaussian_noise(self):
        net = build_network(NetConfig(frame_count=3, channels=3), seed=1)
        v = make_video(T=5)
        raw = denoise_video(net, v)  # no noise model -> no fusion
        fused = denoise_video(net, v, noise=NoiseModel("gaussian_known_sigma", 25.0))
        assert not np.allclose(raw, fused)
        explicit_off = denoise_video(
            net, v, noise=NoiseModel("gaussian_known_sigma", 25.0), fusion=False
        )
        assert np.array_equal(raw, explicit_off)

    def test_estimate_mode_needs_sigma_net(self):
        net = build_network(NetConfig(frame_count=3, channels=3), seed=2)
        with pytest.raises(ValueError, match="sigma network"):
            denoise_video(net, make_video(T=5),
                          noise=NoiseModel("gaussian_unknown_sigma"))

    def test_tiled_equals_manual_tiling(self):
        net = build_network(NetConfig(frame_count=3, channels=3), seed=3)
        v = make_video(T=5, H=16, W=16)
        tiled = denoise_video(net, v, tile=8)
        manual = np.empty_like(v)
        for r in (0, 8):
            for c in (0, 8):
                manual[:, :, r : r + 8, c : c + 8] = denoise_video(
                    net, v[:, :, r : r + 8, c : c + 8]
                )
        assert np.array_equal(tiled, manual)

    def test_tile_must_be_divisible_by_4(self):
        net = build_network(NetConfig(frame_count=3, channels=3), seed=4)
        with pytest.raises(ValueError, match="divisible by 4"):
            denoise_video(net, make_video(T=5), tile=6)

    def test_grayscale_never_fuses(self):
        net = build_network(NetConfig(frame_count=3, channels=1), seed=5)
        v = make_video(C=1, T=5)
        a = denoise_video(net, v, noise=NoiseModel("gaussian_known_sigma", 25.0))
        b = denoise_video(net, v, fusion=False)
        assert np.array_equal(a, b)
