import numpy as np
import pytest
import torch

from riskseg.maps import LogitMap
from riskseg.metrics import (
    EvalReport,
    PRECISION_THRESHOLDS,
    auroc,
    binarize,
    mask_counts,
    read_keyvalues,
    sample_iou,
)


def bmask(values):
    return torch.as_tensor(np.asarray(values), dtype=torch.bool)


def brute_force_counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int]:
    inter = union = 0
    for p, g in zip(pred.ravel(), gt.ravel()):
        if p and g:
            inter += 1
        if p or g:
            union += 1
    return inter, union


class TestSampleIoU:
    def test_identical_nonempty(self):
        m = bmask([[1, 0], [1, 1]])
        assert sample_iou(m, m) == 1.0

    def test_disjoint(self):
        assert sample_iou(bmask([[1, 0]]), bmask([[0, 1]])) == 0.0

    def test_partial_overlap_blocks(self):
        pred = np.zeros((4, 4), dtype=bool)
        gt = np.zeros((4, 4), dtype=bool)
        pred[0:2, 0:2] = True
        gt[1:3, 0:2] = True  # overlap of 2 px, union of 6
        assert sample_iou(bmask(pred), bmask(gt)) == pytest.approx(1 / 3)

    def test_empty_union_is_perfect(self):
        z = bmask(np.zeros((3, 3)))
        assert sample_iou(z, z) == 1.0

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError, match="binary"):
            sample_iou(torch.tensor([[0.3]]), torch.tensor([[1.0]]))


class TestReport:
    def test_oiou_arithmetic(self):
        report = EvalReport()
        report.add_counts(2, 4)
        report.add_counts(3, 6)
        assert report.oiou() == pytest.approx(0.5)

    def test_all_perfect(self):
        report = EvalReport()
        for _ in range(5):
            report.add_counts(7, 7)
        assert report.oiou() == 1.0
        assert report.miou() == 1.0

    def test_oiou_weights_large_samples(self):
        # one giant perfect sample dominates oIoU but not mIoU
        report = EvalReport()
        report.add_counts(10_000, 10_000)
        report.add_counts(0, 20)
        assert report.oiou() == pytest.approx(10_000 / 10_020)
        assert report.miou() == pytest.approx(0.5)
        assert report.oiou() > report.miou() + 0.4

    def test_miou_mean(self):
        report = EvalReport()
        report.add_counts(1, 2)
        report.add_counts(2, 4)
        assert report.miou() == 0.5

    def test_precision_strict(self):
        report = EvalReport()
        for iou in (0.6, 0.4, 0.5):
            report.add_counts(int(iou * 10), 10)
        assert report.precision_at(0.5) == pytest.approx(1 / 3)

    @pytest.mark.parametrize("seed", range(6))
    def test_precision_monotone(self, seed):
        rng = np.random.default_rng(seed)
        report = EvalReport()
        for _ in range(30):
            union = int(rng.integers(0, 20))
            inter = int(rng.integers(0, union + 1))
            report.add_counts(inter, union)
        values = [report.precision_at(t) for t in PRECISION_THRESHOLDS]
        assert all(a >= b for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("seed", range(6))
    def test_mediant_bounds(self, seed):
        rng = np.random.default_rng(100 + seed)
        report = EvalReport()
        for _ in range(10):
            union = int(rng.integers(1, 30))
            report.add_counts(int(rng.integers(0, union + 1)), union)
        ious = report.ious
        assert min(ious) <= report.oiou() <= max(ious)

    def test_empty_union_conventions(self):
        report = EvalReport()
        report.add_counts(0, 0)
        assert report.oiou() == 1.0
        assert report.miou() == 1.0

    def test_merge_order_independent(self):
        a, b = EvalReport(), EvalReport()
        a.add_counts(1, 2)
        b.add_counts(3, 4)
        merged = EvalReport()
        merged.merge(b)
        merged.merge(a)
        assert merged.oiou() == pytest.approx((1 + 3) / (2 + 4))

    def test_serialization_round_trip(self, tmp_path):
        report = EvalReport()
        report.add_counts(3, 9)
        report.add_counts(5, 5)
        kv_path = tmp_path / "report.kv"
        report.write_keyvalues(kv_path)
        report.write_table(tmp_path / "report.txt")
        parsed = read_keyvalues(kv_path)
        assert parsed["mIoU"] == pytest.approx(report.miou(), abs=5e-7)
        assert parsed["oIoU"] == pytest.approx(report.oiou(), abs=5e-7)
        assert parsed["samples"] == 2
        table = (tmp_path / "report.txt").read_text()
        assert "mIoU" in table and "Pr@0.9" in table


class TestVectorizedAgainstBruteForce:
    def test_random_masks_exact(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            pred = rng.random((8, 8)) < rng.uniform(0.1, 0.9)
            gt = rng.random((8, 8)) < rng.uniform(0.1, 0.9)
            inter, union = mask_counts(bmask(pred), bmask(gt))
            assert (inter, union) == brute_force_counts(pred, gt)

    def test_binarize_matches_probability_threshold(self):
        logits = torch.tensor([[[[-0.2, 0.0], [1e-7, 5.0]]]])
        out = binarize(LogitMap(logits))
        expected = torch.sigmoid(logits) > 0.5
        assert torch.equal(out, expected)


class TestAuroc:
    def test_perfect_separation(self):
        assert auroc(np.array([0.1, 0.2, 0.8, 0.9]), np.array([0, 0, 1, 1])) == 1.0

    def test_inverted(self):
        assert auroc(np.array([0.9, 0.8, 0.1]), np.array([0, 0, 1])) == 0.0

    def test_random_is_half(self):
        rng = np.random.default_rng(0)
        scores = rng.random(4000)
        labels = rng.random(4000) < 0.3
        assert auroc(scores, labels) == pytest.approx(0.5, abs=0.03)

    def test_ties_average(self):
        # all scores equal: every ordering is as likely, AUROC must be 0.5
        assert auroc(np.ones(10), np.array([1, 0] * 5)) == pytest.approx(0.5)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="both classes"):
            auroc(np.array([0.1, 0.2]), np.array([1, 1]))
