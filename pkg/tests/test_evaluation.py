import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from regionprompt.evaluation import (
    GAP_BATCH_SIZE, EvalReport, LocalizationCase, iou, localization_accuracy,
    modality_gap_losses, retrieval_metrics, SimilarityMatrix, similarity_matrix)
from regionprompt.imaging import RegionBox
from conftest import random_unit_rows


def rank_oracle(m):
    """Sort-based reference: 1-based ranks both directions, ties favor GT."""
    k = m.shape[0]
    r_im = np.array([1 + np.sum(m[i] > m[i, i]) for i in range(k)])
    r_tx = np.array([1 + np.sum(m[:, j] > m[j, j]) for j in range(k)])
    return r_im, r_tx


class TestRetrieval:
    def test_identity_matrix_perfect(self):
        res = retrieval_metrics(SimilarityMatrix(np.eye(5)))
        assert res["mean_rank_im2txt"] == 1.0
        assert res["mean_rank_txt2im"] == 1.0
        assert res["p_at_1_im2txt"] == 1.0

    def test_reversed_diagonal(self):
        m = np.fliplr(np.eye(3)).astype(float)
        res = retrieval_metrics(SimilarityMatrix(m))
        # GT scores 0 except the centre row; one strictly-greater competitor each
        assert res["mean_rank_im2txt"] == pytest.approx((2 + 1 + 2) / 3)

    def test_matches_sort_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            k = int(rng.integers(1, 12))
            m = rng.standard_normal((k, k))
            res = retrieval_metrics(SimilarityMatrix(m))
            r_im, r_tx = rank_oracle(m)
            assert np.array_equal(res["ranks_im2txt"], r_im)
            assert np.array_equal(res["ranks_txt2im"], r_tx)
            assert res["p_at_1_im2txt"] == np.mean(r_im == 1)

    def test_tie_favors_ground_truth(self):
        res = retrieval_metrics(SimilarityMatrix(np.ones((4, 4))))
        assert res["p_at_1_im2txt"] == 1.0 and res["mean_rank_im2txt"] == 1.0

    def test_scale_and_shift_invariant(self):
        rng = np.random.default_rng(9)
        m = rng.standard_normal((6, 6))
        a = retrieval_metrics(SimilarityMatrix(m))
        b = retrieval_metrics(SimilarityMatrix(3.0 * m + 7.0))
        assert np.array_equal(a["ranks_im2txt"], b["ranks_im2txt"])

    @given(st.integers(1, 10))
    @settings(max_examples=20, deadline=None)
    def test_rank_bounds(self, k):
        m = np.random.default_rng(k).standard_normal((k, k))
        res = retrieval_metrics(SimilarityMatrix(m))
        assert np.all((1 <= res["ranks_im2txt"]) & (res["ranks_im2txt"] <= k))
        assert 1.0 <= res["mean_rank_txt2im"] <= k

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            retrieval_metrics(SimilarityMatrix(np.zeros((0, 0))))

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            SimilarityMatrix(np.zeros((2, 3)))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            SimilarityMatrix(np.array([[1.0, np.nan], [0.0, 1.0]]))


class TestSimilarityMatrix:
    def test_unit_rows_give_cosines(self, rng):
        vis = random_unit_rows(rng, 4, 8)
        txt = random_unit_rows(rng, 4, 8)
        m = similarity_matrix(vis, txt)
        np.testing.assert_allclose(m.scores, (vis @ txt.T).numpy(), atol=1e-12)

    def test_count_mismatch_rejected(self, rng):
        with pytest.raises(ValueError):
            similarity_matrix(random_unit_rows(rng, 3, 8), random_unit_rows(rng, 4, 8))


class TestIoU:
    def test_identical_boxes(self):
        b = RegionBox(2, 3, 10, 8)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(RegionBox(0, 0, 4, 4), RegionBox(10, 10, 4, 4)) == 0.0

    def test_half_overlap(self):
        a = RegionBox(0, 0, 4, 4)
        b = RegionBox(2, 0, 4, 4)
        assert iou(a, b) == pytest.approx(8 / 24)

    @given(st.integers(0, 20), st.integers(0, 20), st.integers(1, 10),
           st.integers(1, 10), st.integers(0, 20), st.integers(0, 20),
           st.integers(1, 10), st.integers(1, 10))
    @settings(max_examples=50, deadline=None)
    def test_symmetric_and_bounded(self, x1, y1, w1, h1, x2, y2, w2, h2):
        a = RegionBox(x1, y1, w1, h1)
        b = RegionBox(x2, y2, w2, h2)
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou(b, a)


def scorer_prefers(target):
    def scorer(image, box, inference):
        return 1.0 if box == target else 0.0
    return scorer


class TestLocalization:
    def make_case(self, mode, target, candidates):
        return LocalizationCase(
            image=np.zeros((16, 16, 3)), inference="t",
            candidates=candidates, target=target, mode=mode)

    def test_gt_mode_exact_match(self):
        t = RegionBox(0, 0, 4, 4)
        d = RegionBox(8, 8, 4, 4)
        case = self.make_case("gt", t, [t, d])
        assert localization_accuracy([case], scorer_prefers(t)) == (1.0, None)
        assert localization_accuracy([case], scorer_prefers(d)) == (0.0, None)

    def test_auto_mode_iou_threshold(self):
        t = RegionBox(0, 0, 8, 8)
        near = RegionBox(1, 0, 8, 8)   # IoU 7/9 >= 0.5
        far = RegionBox(6, 6, 8, 8)    # IoU 4/124 < 0.5
        case = self.make_case("auto", t, [near, far])
        assert localization_accuracy([case], scorer_prefers(near)) == (None, 1.0)
        assert localization_accuracy([case], scorer_prefers(far)) == (None, 0.0)

    def test_mixed_modes_split_out(self):
        t = RegionBox(0, 0, 4, 4)
        gt_case = self.make_case("gt", t, [t, RegionBox(8, 8, 4, 4)])
        auto_case = self.make_case("auto", t, [RegionBox(0, 0, 4, 4), RegionBox(8, 8, 4, 4)])
        gt_acc, auto_acc = localization_accuracy([gt_case, auto_case], scorer_prefers(t))
        assert gt_acc == 1.0 and auto_acc == 1.0

    def test_planted_winner_exhaustive(self):
        # 20 cases with a planted winning box each; accuracy must equal the
        # fraction counted by an independent pass over the plants
        rng = np.random.default_rng(3)
        boxes = [RegionBox(4 * j, 0, 4, 4) for j in range(4)]
        expected_hits, got_hits = 0, 0
        for i in range(20):
            target = boxes[int(rng.integers(4))]
            winner = boxes[i % 4]
            expected_hits += winner == target
            case = self.make_case("gt", target, list(boxes))
            acc, _ = localization_accuracy([case], scorer_prefers(winner))
            got_hits += acc == 1.0
        assert got_hits == expected_hits
        assert 0 < expected_hits < 20  # plant actually mixes hits and misses

    def test_target_must_be_candidate_in_gt_mode(self):
        with pytest.raises(ValueError):
            self.make_case("gt", RegionBox(0, 0, 4, 4), [RegionBox(8, 8, 4, 4)])

    def test_empty_candidates_rejected(self):
        with pytest.raises(ValueError):
            self.make_case("auto", RegionBox(0, 0, 4, 4), [])

    def test_no_cases_gives_none(self):
        assert localization_accuracy([], scorer_prefers(None)) == (None, None)


class TestModalityGap:
    def test_batch_size_is_64(self):
        assert GAP_BATCH_SIZE == 64

    def test_deterministic(self, rng):
        vis = random_unit_rows(rng, 130, 8)
        clue = random_unit_rows(rng, 130, 8)
        inf = random_unit_rows(rng, 130, 8)
        a = modality_gap_losses(vis, clue, inf, logit_scale=5.0)
        b = modality_gap_losses(vis, clue, inf, logit_scale=5.0)
        assert a == b
        assert set(a) == {"vis_clue", "vis_inf", "inf_clue"}

    def test_identical_texts_equal_gaps(self, rng):
        vis = random_unit_rows(rng, 64, 8)
        txt = random_unit_rows(rng, 64, 8)
        gaps = modality_gap_losses(vis, txt, txt.clone(), logit_scale=5.0)
        assert gaps["vis_clue"] == pytest.approx(gaps["vis_inf"])

    def test_uniform_scores_hit_log_batch_ceiling(self):
        # all pairwise scores tie, so each chunk loss is exactly ln(64)
        vis = torch.ones((64, 8), dtype=torch.float64) / np.sqrt(8)
        gaps = modality_gap_losses(vis, vis.clone(), vis.clone(), logit_scale=1.0)
        assert gaps["vis_clue"] == pytest.approx(np.log(64), abs=1e-6)

    def test_trailing_singleton_chunk_skipped(self, rng):
        vis = random_unit_rows(rng, 65, 8)
        txt = random_unit_rows(rng, 65, 8)
        full = modality_gap_losses(vis, txt, txt.clone(), logit_scale=5.0)
        head = modality_gap_losses(vis[:64], txt[:64], txt[:64].clone(), logit_scale=5.0)
        assert full["vis_clue"] == pytest.approx(head["vis_clue"])


class TestEvalReport:
    def make(self):
        return EvalReport(
            mean_rank_im2txt=1.5, mean_rank_txt2im=1.25, p_at_1_im2txt=0.75,
            loc_acc_gt=0.5, loc_acc_auto=0.25,
            gap_losses={"vis_clue": 1.0, "vis_inf": 2.0, "inf_clue": 3.0},
            metadata={"split": "val"})

    def test_json_round_trip(self, tmp_path):
        rep = self.make()
        p = tmp_path / "report.json"
        p.write_text(rep.to_json())
        back = EvalReport.from_json(p.read_text())
        assert back == rep
        assert json.loads(rep.to_json())["p_at_1_im2txt"] == 0.75

    def test_table_mentions_all_metrics(self):
        table = self.make().format_table()
        for key in ("im->txt", "P@1", "GT/Auto"):
            assert key in table

    def test_table_handles_missing_localization(self):
        rep = EvalReport(mean_rank_im2txt=1.0, mean_rank_txt2im=1.0, p_at_1_im2txt=1.0)
        assert "-" in rep.format_table()
