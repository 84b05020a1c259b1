import numpy as np
import pytest
import torch

from riskseg.maps import (
    FeaturePyramid,
    LogitMap,
    ProbMap,
    TextTokens,
    TokenGrid,
    blur,
    flatten_map,
    logits_to_mask,
    require_binary,
    reshape_tokens,
    resize_logits,
    to_prob,
)


def lm(values, stride=None):
    return LogitMap(torch.as_tensor(values, dtype=torch.float64).reshape(1, 1, *np.shape(values)), stride)


def brute_force_bilinear(src: np.ndarray, th: int, tw: int) -> np.ndarray:
    """Scalar half-pixel-center bilinear resampler with edge clamping."""
    sh, sw = src.shape
    out = np.zeros((th, tw))
    for ty in range(th):
        for tx in range(tw):
            sy = (ty + 0.5) * sh / th - 0.5
            sx = (tx + 0.5) * sw / tw - 0.5
            y0 = int(np.floor(sy))
            x0 = int(np.floor(sx))
            wy = sy - y0
            wx = sx - x0
            total = 0.0
            for dy, fy in ((0, 1 - wy), (1, wy)):
                for dx, fx in ((0, 1 - wx), (1, wx)):
                    yy = min(max(y0 + dy, 0), sh - 1)
                    xx = min(max(x0 + dx, 0), sw - 1)
                    total += fy * fx * src[yy, xx]
            out[ty, tx] = total
    return out


class TestResizeLogits:
    def test_constant_preserved(self):
        out = resize_logits(lm(np.full((3, 5), 2.75)), 7, 11)
        torch.testing.assert_close(out.values, torch.full((1, 1, 7, 11), 2.75, dtype=torch.float64))

    def test_single_source_broadcast(self):
        out = resize_logits(lm([[4.5]]), 6, 9)
        torch.testing.assert_close(out.values, torch.full((1, 1, 6, 9), 4.5, dtype=torch.float64))

    def test_hand_computed_half_pixel(self):
        # 2x2 [[0,2],[0,2]] -> 2x3: the middle target column samples x=0.5,
        # the midpoint between the two source columns, so it must be 1.
        out = resize_logits(lm([[0.0, 2.0], [0.0, 2.0]]), 2, 3)
        expected = torch.tensor([[[[0.0, 1.0, 2.0], [0.0, 1.0, 2.0]]]], dtype=torch.float64)
        torch.testing.assert_close(out.values, expected)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_scalar_oracle(self, seed):
        rng = np.random.default_rng(seed)
        sh, sw = rng.integers(1, 7, size=2)
        th, tw = rng.integers(1, 9, size=2)
        src = rng.normal(size=(sh, sw))
        out = resize_logits(lm(src), int(th), int(tw))
        expected = brute_force_bilinear(src, int(th), int(tw))
        np.testing.assert_allclose(out.values[0, 0].numpy(), expected, atol=1e-12)

    def test_same_shape_is_exact_identity(self):
        src = lm(np.random.default_rng(0).normal(size=(4, 4)))
        out = resize_logits(src, 4, 4)
        assert out is src

    def test_rejects_prob_map(self):
        probs = ProbMap(torch.full((1, 1, 2, 2), 0.5))
        with pytest.raises(TypeError, match="LogitMap"):
            resize_logits(probs, 4, 4)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite"):
            lm([[np.inf, 0.0], [0.0, 0.0]])

    def test_rejects_bad_target(self):
        with pytest.raises(ValueError, match=">= 1"):
            resize_logits(lm([[1.0]]), 0, 3)


class TestBlur:
    def test_disabled_is_identity(self):
        src = lm(np.random.default_rng(1).normal(size=(5, 4)))
        assert blur(src, enabled=False) is src

    def test_constant_preserved(self):
        out = blur(lm(np.full((4, 4), -1.25)))
        torch.testing.assert_close(
            out.values, torch.full((1, 1, 4, 4), -1.25, dtype=torch.float64)
        )

    def test_center_impulse(self):
        src = np.zeros((3, 3))
        src[1, 1] = 1.0
        out = blur(lm(src))
        torch.testing.assert_close(out.values, torch.full((1, 1, 3, 3), 1 / 9, dtype=torch.float64))

    def test_mirror_padding_corner(self):
        # corner impulse: the mirrored edges replicate the 1 across both
        # borders, so the corner average is 4/9
        src = np.zeros((3, 3))
        src[0, 0] = 1.0
        out = blur(lm(src))
        assert out.values[0, 0, 0, 0].item() == pytest.approx(4 / 9, abs=1e-12)

    @pytest.mark.parametrize("shape", [(1, 1), (1, 5), (4, 1), (6, 7)])
    def test_range_bounds(self, shape):
        rng = np.random.default_rng(hash(shape) % 2**32)
        src = rng.normal(size=shape)
        out = blur(lm(src)).values.numpy()
        assert out.min() >= src.min() - 1e-9
        assert out.max() <= src.max() + 1e-9

    def test_prob_map_type_preserved(self):
        p = ProbMap(torch.rand(2, 1, 4, 4))
        out = blur(p)
        assert isinstance(out, ProbMap)


class TestToProb:
    def test_zero_is_half(self):
        assert to_prob(lm([[0.0]])).values.item() == 0.5

    def test_saturation(self):
        assert to_prob(lm([[50.0]])).values.item() == pytest.approx(1.0, abs=1e-15)

    def test_scalar_value(self):
        assert to_prob(lm([[1.0]])).values.item() == pytest.approx(0.7310585786300049, abs=1e-12)

    def test_threshold_matches_sigmoid_half(self):
        values = lm([[0.0, -1e-6], [1e-6, 3.0]])
        mask = logits_to_mask(values)
        assert mask.flatten().tolist() == [False, False, True, True]


class TestFlattenReshape:
    def test_row_major_flatten(self):
        col = flatten_map(lm([[1.0, 2.0], [3.0, 4.0]]))
        assert col.flatten().tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_row_major_reshape(self):
        col = torch.arange(6, dtype=torch.float32).reshape(1, 6, 1)
        out = reshape_tokens(col, 2, 3)
        assert out.values[0, 0].tolist() == [[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]

    @pytest.mark.parametrize("shape", [(1, 1), (2, 3), (5, 4), (7, 1)])
    def test_round_trip_exact(self, shape):
        rng = np.random.default_rng(0)
        src = lm(rng.normal(size=shape))
        back = reshape_tokens(flatten_map(src), *shape)
        assert torch.equal(back.values, src.values)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="does not match"):
            reshape_tokens(torch.zeros(1, 6, 1), 2, 2)


class TestValueTypes:
    def test_prob_map_range_enforced(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            ProbMap(torch.tensor([[[[1.5]]]]))

    def test_text_tokens_need_real_token(self):
        emb = torch.zeros(2, 3, 4)
        mask = torch.tensor([[False, True, True], [True, True, True]])
        with pytest.raises(ValueError, match="non-ignored"):
            TextTokens(emb, mask)

    def test_pyramid_needs_all_strides(self):
        grids = [
            TokenGrid(torch.zeros(1, (16 // s) ** 2, 8), (16 // s, 16 // s), s)
            for s in (4, 8, 16)
        ]
        with pytest.raises(ValueError, match="strides"):
            FeaturePyramid(tuple(grids))

    def test_pyramid_shared_width(self):
        grids = [
            TokenGrid(torch.zeros(1, (64 // s) ** 2, 8 if s < 32 else 16), (64 // s, 64 // s), s)
            for s in (4, 8, 16, 32)
        ]
        with pytest.raises(ValueError, match="width"):
            FeaturePyramid(tuple(grids))

    def test_token_grid_count_checked(self):
        with pytest.raises(ValueError, match="does not match"):
            TokenGrid(torch.zeros(1, 5, 8), (2, 2), 4)

    def test_require_binary(self):
        require_binary(torch.tensor([0.0, 1.0]))
        with pytest.raises(ValueError, match="binary"):
            require_binary(torch.tensor([0.0, 0.5]))

    def test_sigmoid_resize_order_matters(self):
        # resizing probabilities is NOT the same as resizing logits: the
        # pipeline therefore resizes logits only (enforced by the type
        # check above and the call audit in test_pipeline).
        src = lm([[4.0, 0.0]])
        via_logits = to_prob(resize_logits(src, 1, 3)).values
        via_probs = torch.nn.functional.interpolate(
            to_prob(src).values, size=(1, 3), mode="bilinear", align_corners=False
        )
        assert not torch.allclose(via_logits, via_probs)
