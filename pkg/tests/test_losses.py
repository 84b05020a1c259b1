import math

import numpy as np
import pytest
import torch

from riskseg.errors import TrainingDiverged
from riskseg.losses import LossWeights, seg_loss, total_loss
from riskseg.maps import LogitMap, ProbMap


def lp(values):
    arr = torch.as_tensor(values, dtype=torch.float64)
    return LogitMap(arr.reshape(1, 1, *arr.shape[-2:]) if arr.ndim == 2 else arr)


def pm(values):
    arr = torch.as_tensor(values, dtype=torch.float64)
    return ProbMap(arr.reshape(1, 1, *arr.shape[-2:]) if arr.ndim == 2 else arr)


class TestSegLoss:
    def test_closed_form_all_zero(self):
        # logits 0 on an all-background target: BCE = ln 2 and the Dice
        # term is 1 - 1/(n/2 + 1) with n pixels at probability 0.5
        n = 12
        pred = lp(np.zeros((3, 4)))
        target = pm(np.zeros((3, 4)))
        expected = math.log(2.0) + (1.0 - 1.0 / (n / 2 + 1))
        assert seg_loss(pred, target).item() == pytest.approx(expected, abs=1e-12)

    def test_saturated_match_is_tiny(self):
        rng = np.random.default_rng(3)
        gt = (rng.random((6, 6)) < 0.4).astype(np.float64)
        pred = lp(np.where(gt > 0.5, 40.0, -40.0))
        assert seg_loss(pred, pm(gt)).item() < 1e-5

    def test_batch_permutation_symmetric(self):
        rng = np.random.default_rng(5)
        logits = torch.tensor(rng.normal(size=(4, 1, 5, 5)))
        gt = torch.tensor((rng.random((4, 1, 5, 5)) < 0.3).astype(np.float64))
        perm = torch.tensor([2, 0, 3, 1])
        a = seg_loss(LogitMap(logits), ProbMap(gt))
        b = seg_loss(LogitMap(logits[perm]), ProbMap(gt[perm]))
        assert a.item() == pytest.approx(b.item(), rel=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        pred = lp(rng.normal(scale=3, size=(4, 4)))
        target = pm((rng.random((4, 4)) < 0.5).astype(np.float64))
        assert seg_loss(pred, target).item() >= 0.0

    def test_minimum_iff_probabilities_match(self):
        gt = np.array([[1.0, 0.0], [0.0, 1.0]])
        matched = seg_loss(lp(np.where(gt > 0.5, 20.0, -20.0)), pm(gt))
        off = seg_loss(lp(np.where(gt > 0.5, 20.0, -18.0) * -1), pm(gt))
        assert matched.item() < 1e-6 < off.item()

    def test_rejects_non_binary_target(self):
        with pytest.raises(ValueError, match="binary"):
            seg_loss(lp(np.zeros((2, 2))), pm(np.full((2, 2), 0.5)))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError, match="disagree"):
            seg_loss(lp(np.zeros((2, 2))), pm(np.zeros((2, 3))))


class TestTotalLoss:
    def test_weighted_sum(self):
        w = LossWeights(lambda_unc=0.5, lambda_ref=1.0)
        total = total_loss(torch.tensor(1.0), torch.tensor(0.2), torch.tensor(0.4), w)
        assert total.item() == pytest.approx(1.5, abs=1e-12)

    def test_zero_weights_reduce_to_seg(self):
        w = LossWeights(lambda_unc=0.0, lambda_ref=0.0)
        total = total_loss(
            torch.tensor(0.7, dtype=torch.float64), torch.tensor(9.0), torch.tensor(9.0), w
        )
        assert total.item() == pytest.approx(0.7, abs=1e-12)

    def test_gradient_linearity(self):
        seg = torch.tensor(1.0, requires_grad=True)
        unc = torch.tensor(2.0, requires_grad=True)
        ref = torch.tensor(3.0, requires_grad=True)
        total_loss(seg, unc, ref, LossWeights(0.5, 2.0)).backward()
        assert seg.grad.item() == 1.0
        assert unc.grad.item() == 0.5
        assert ref.grad.item() == 2.0

    def test_non_finite_component_aborts(self):
        w = LossWeights()
        with pytest.raises(TrainingDiverged, match="unc"):
            total_loss(torch.tensor(1.0), torch.tensor(float("nan")), torch.tensor(0.0), w)

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError, match=">= 0"):
            LossWeights(lambda_unc=-0.1)
