from __future__ import annotations

import math

import numpy as np
import pytest

from vista_eval.attributes import (
    AttributeTable,
    AttributeThresholds,
    AttributeUnavailable,
    Detection,
    ExternalDetections,
    attribute_filtered_scores,
    box_attributes,
    center_distance_tables,
    compute_pair_attributes,
    distractor_attr,
    hoi_attr,
    laplacian_variance,
    motion_state,
    pixel_attributes,
)
from vista_eval.geometry import Box
from vista_eval.metrics import OverlapSeries
from vista_eval.model import FPV, TPV, ViewSequence

from conftest import box_seq, make_pair, make_track


def table_for(track, thresholds=AttributeThresholds()):
    return box_attributes(track, AttributeTable("fpv"), thresholds)


def hoi_detections(evidence: dict[int, list[tuple[tuple, bool]]]) -> ExternalDetections:
    return ExternalDetections(
        candidates={},
        hoi={
            t: tuple(Detection(box=Box(*b), interaction=s) for b, s in dets)
            for t, dets in evidence.items()
        },
        target_embedding=None,
    )


class TestBoxAttributes:
    def test_constant_box_nothing_set(self):
        track = make_track(box_seq(*[(10, 10, 50, 50)] * 4))
        table = table_for(track)
        for t in track.timestamps:
            assert not table.has(t, "SV")
            assert not table.has(t, "ARC")
            assert not table.has(t, "FM")
            assert table.has(t, "MR")  # 2500 between 1024 and 9216

    def test_scale_variation_threshold(self):
        # area x2.5 at the second annotation
        track = make_track(box_seq((0, 0, 20, 20), (0, 0, 50, 20)))
        table = table_for(track)
        assert not table.has(0, "SV")
        assert table.has(5, "SV")

    def test_scale_variation_boundary_inclusive(self):
        # exactly x2 stays inside [0.5, 2]
        track = make_track(box_seq((0, 0, 20, 20), (0, 0, 40, 20)))
        assert not table_for(track).has(5, "SV")

    def test_aspect_ratio_change(self):
        track = make_track(box_seq((0, 0, 20, 20), (0, 0, 45, 20)))
        table = table_for(track)
        assert table.has(5, "ARC")  # ratio 2.25
        assert table.has(5, "SV")

    def test_resolution_bins(self):
        track = make_track(
            box_seq((0, 0, 31, 31), (0, 0, 33, 33), (0, 0, 97, 97))
        )
        table = table_for(track)
        assert table.has(0, "LR") and not table.has(0, "MR")
        assert table.has(5, "MR")
        assert table.has(10, "HR")

    def test_resolution_bin_edges(self):
        track = make_track(box_seq((0, 0, 32, 32), (0, 0, 96, 96)))
        table = table_for(track)
        assert table.has(0, "MR")  # exactly 32^2 is not "smaller than"
        assert table.has(5, "MR")  # exactly 96^2 is not "larger than"

    def test_resolution_partition_property(self):
        rng = np.random.default_rng(40)
        sizes = rng.integers(1, 200, (30, 2))
        track = make_track(
            box_seq(*[(0, 0, int(w), int(h)) for w, h in sizes])
        )
        table = table_for(track)
        for t in track.non_absent_timestamps():
            bins = [b for b in ("LR", "MR", "HR") if table.has(t, b)]
            assert len(bins) == 1

    def test_fast_motion(self):
        track = make_track(
            box_seq((10, 10, 20, 20), (40, 10, 20, 20), (45, 10, 20, 20))
        )
        table = table_for(track)
        assert not table.has(0, "FM")
        assert table.has(5, "FM")      # moved 30 > 20
        assert not table.has(10, "FM")  # moved 5

    def test_fast_motion_not_across_gaps(self):
        b = (10, 10, 20, 20)
        far = (90, 90, 20, 20)
        track = make_track(box_seq(b, None, far))
        table = table_for(track)
        # new run starts at t=10; no previous frame inside the run
        assert not table.has(10, "FM")

    def test_degenerate_first_box(self):
        track = make_track(box_seq((0, 0, 0, 0), (0, 0, 10, 10)))
        table = table_for(track)
        assert {"SV", "ARC"} <= table.unavailable


class TestPixelAttributes:
    @staticmethod
    def _view(tmp_path, frames) -> ViewSequence:
        """Write numpy RGB frames as PNGs and build a matching sequence."""
        from PIL import Image

        directory = tmp_path / "frames"
        directory.mkdir(exist_ok=True)
        for t, frame in frames.items():
            Image.fromarray(frame.astype(np.uint8)).save(
                directory / f"{t:06d}.png"
            )
        h, w = next(iter(frames.values())).shape[:2]
        states = []
        n = max(frames) // 5 + 1
        for i in range(n):
            states.append(Box(8, 8, 16, 16))
        return ViewSequence(
            view="fpv",
            frames_locator=str(directory / "%06d.png"),
            width=w,
            height=h,
            annotations=make_track(states),
        )

    def test_identical_crops_no_iv(self, tmp_path):
        frame = np.full((32, 32, 3), 120)
        vs = self._view(tmp_path, {0: frame, 5: frame.copy()})
        table = pixel_attributes(vs.annotations, vs, AttributeTable("fpv"))
        assert not table.has(5, "IV")

    def test_color_shift_sets_iv(self, tmp_path):
        f0 = np.full((32, 32, 3), 120)
        f5 = np.full((32, 32, 3), 120)
        f5[:, :, 0] = 240  # large red shift: |d| = 120/255 > 0.15
        vs = self._view(tmp_path, {0: f0, 5: f5})
        table = pixel_attributes(vs.annotations, vs, AttributeTable("fpv"))
        assert table.has(5, "IV")

    def test_uniform_crop_sets_mb(self, tmp_path):
        frame = np.full((32, 32, 3), 99)
        vs = self._view(tmp_path, {0: frame, 5: frame.copy()})
        table = pixel_attributes(vs.annotations, vs, AttributeTable("fpv"))
        assert table.has(0, "MB") and table.has(5, "MB")

    def test_checkerboard_unsets_mb(self, tmp_path):
        rr, cc = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
        checker = ((rr + cc) % 2 * 255).astype(np.uint8)
        frame = np.stack([checker] * 3, axis=-1)
        vs = self._view(tmp_path, {0: frame, 5: frame.copy()})
        table = pixel_attributes(vs.annotations, vs, AttributeTable("fpv"))
        assert not table.has(5, "MB")

    def test_laplacian_variance_matches_convolution_oracle(self):
        rng = np.random.default_rng(41)
        gray = rng.integers(0, 256, (12, 15)).astype(np.float64)
        kernel = [(-1, 0, 1.0), (1, 0, 1.0), (0, -1, 1.0), (0, 1, 1.0),
                  (0, 0, -4.0)]
        responses = []
        for r in range(1, 11):
            for c in range(1, 14):
                responses.append(
                    sum(wt * gray[r + dr, c + dc] for dr, dc, wt in kernel)
                )
        assert laplacian_variance(gray) == pytest.approx(
            float(np.var(responses)), rel=1e-12
        )

    def test_tiny_crop_skips_mb(self):
        with pytest.raises(ValueError):
            laplacian_variance(np.zeros((2, 5)))


class TestMotionState:
    def test_stationary_all_static(self):
        pair = make_pair(box_seq(*[(10, 10, 20, 20)] * 4))
        tables = {FPV: AttributeTable(FPV), TPV: AttributeTable(TPV)}
        motion_state(pair, tables)
        for t in (5, 10, 15):
            assert tables[TPV].has(t, "STA")
            assert tables[FPV].has(t, "STA")
        assert not tables[TPV].has(0, "STA")  # run start unlabeled

    def test_jumping_all_moving(self):
        states = box_seq((0, 0, 10, 10), (50, 0, 10, 10), (0, 50, 10, 10))
        pair = make_pair(states, states)
        tables = {FPV: AttributeTable(FPV), TPV: AttributeTable(TPV)}
        motion_state(pair, tables)
        for t in (5, 10):
            assert tables[TPV].has(t, "MOV")

    def test_straddling_threshold(self):
        # IoU(b0,b1)=80/120=0.667 -> STA; IoU(b1,b2)=40/160=0.25 -> MOV
        states = box_seq((0, 0, 10, 10), (2, 0, 10, 10), (8, 0, 10, 10))
        pair = make_pair(states, states)
        tables = {FPV: AttributeTable(FPV), TPV: AttributeTable(TPV)}
        motion_state(pair, tables)
        assert tables[FPV].has(5, "STA")
        assert tables[FPV].has(10, "MOV")

    def test_labels_identical_across_views(self):
        # FPV boxes differ wildly; labels still follow TPV only
        fpv = box_seq((0, 0, 5, 5), (90, 90, 5, 5), (0, 0, 5, 5))
        tpv = box_seq(*[(10, 10, 20, 20)] * 3)
        pair = make_pair(fpv, tpv)
        tables = compute_pair_attributes(pair)
        for t in (5, 10):
            assert tables[FPV].has(t, "STA") == tables[TPV].has(t, "STA")
            assert tables[FPV].has(t, "MOV") == tables[TPV].has(t, "MOV")
            assert tables[FPV].has(t, "STA")


class TestDistractor:
    TARGET = np.array([1.0, 0.0])

    def _detections(self, by_t):
        return ExternalDetections(
            candidates={
                t: tuple(
                    Detection(box=Box(*b), embedding=np.asarray(e))
                    for b, e in dets
                )
                for t, dets in by_t.items()
            },
            hoi={},
            target_embedding=self.TARGET,
        )

    def test_no_candidates(self):
        track = make_track(box_seq((10, 10, 20, 20)))
        table = distractor_attr(track, self._detections({}), AttributeTable(FPV))
        assert not table.timestamps_with("DIS")

    def test_similar_but_overlapping_not_distractor(self):
        track = make_track(box_seq((10, 10, 20, 20)))
        dets = self._detections({0: [((11, 10, 20, 20), [1.0, 0.0])]})
        table = distractor_attr(track, dets, AttributeTable(FPV))
        assert not table.has(0, "DIS")

    def test_similar_and_distinct_is_distractor(self):
        track = make_track(box_seq((10, 10, 20, 20)))
        dets = self._detections({0: [((70, 70, 20, 20), [0.6, 0.8])]})
        table = distractor_attr(track, dets, AttributeTable(FPV))
        assert table.has(0, "DIS")

    def test_low_cosine_not_distractor(self):
        track = make_track(box_seq((10, 10, 20, 20)))
        dets = self._detections({0: [((70, 70, 20, 20), [0.3, math.sqrt(1 - 0.09)])]})
        table = distractor_attr(track, dets, AttributeTable(FPV))
        assert not table.has(0, "DIS")

    def test_missing_detections_unavailable(self):
        track = make_track(box_seq((10, 10, 20, 20)))
        table = distractor_attr(track, None, AttributeTable(FPV))
        assert "DIS" in table.unavailable


class TestHoi:
    B = (10, 10, 20, 20)  # ground truth everywhere
    ON = ((10, 10, 20, 20), True)    # IoU 1 with interaction
    OFF = ((70, 70, 20, 20), False)  # IoU 0, no interaction

    def _run(self, evidence, n_frames=8):
        pair = make_pair(box_seq(*[self.B] * n_frames))
        tables = {FPV: AttributeTable(FPV), TPV: AttributeTable(TPV)}
        hoi_attr(pair, hoi_detections(evidence), tables)
        return tables[FPV]

    def test_single_frame_interaction_never_on(self):
        table = self._run({5: [self.ON]})
        assert not table.timestamps_with("HOI")

    def test_two_consecutive_turn_on_then_stays(self):
        # evidence at t=5,10 then nothing ever: no off-evidence, stays on
        table = self._run({5: [self.ON], 10: [self.ON]})
        assert table.timestamps_with("HOI") == [10, 15, 20, 25, 30, 35]

    def test_off_after_two_low_overlap_no_state(self):
        table = self._run(
            {0: [self.ON], 5: [self.ON], 10: [self.ON], 15: [self.ON],
             20: [self.OFF], 25: [self.OFF]}
        )
        # on from 5 through 20 (first off-evidence frame keeps the label),
        # off from 25 (the second of the two off frames)
        assert table.timestamps_with("HOI") == [5, 10, 15, 20]

    def test_single_off_frame_does_not_turn_off(self):
        table = self._run(
            {0: [self.ON], 5: [self.ON], 10: [self.OFF], 15: [self.ON],
             20: [self.ON]}
        )
        assert table.timestamps_with("HOI") == [5, 10, 15, 20, 25, 30, 35]

    def test_interaction_across_visibility_gap_not_consecutive(self):
        states = box_seq(self.B, self.B, None, self.B, self.B)
        pair = make_pair(states)
        tables = {FPV: AttributeTable(FPV), TPV: AttributeTable(TPV)}
        # evidence on the two frames around the gap: not grid-adjacent
        hoi_attr(pair, hoi_detections({5: [self.ON], 15: [self.ON]}), tables)
        assert not tables[FPV].timestamps_with("HOI")

    def test_copied_to_tpv(self):
        pair = make_pair(box_seq(*[self.B] * 4))
        tables = {FPV: AttributeTable(FPV), TPV: AttributeTable(TPV)}
        hoi_attr(pair, hoi_detections({0: [self.ON], 5: [self.ON]}), tables)
        assert tables[TPV].timestamps_with("HOI") == tables[FPV].timestamps_with("HOI")

    def test_missing_detections_unavailable(self):
        pair = make_pair(box_seq(*[self.B] * 3))
        tables = {FPV: AttributeTable(FPV), TPV: AttributeTable(TPV)}
        hoi_attr(pair, None, tables)
        assert "HOI" in tables[FPV].unavailable

    def test_determinism(self):
        evidence = {0: [self.ON], 5: [self.ON], 10: [self.OFF],
                    15: [self.OFF], 20: [self.ON]}
        assert (
            self._run(evidence).timestamps_with("HOI")
            == self._run(evidence).timestamps_with("HOI")
        )


class TestThresholdIsolation:
    def test_changing_one_threshold_touches_one_attribute(self):
        states = box_seq((0, 0, 30, 30), (0, 0, 45, 30), (40, 0, 30, 30))
        track = make_track(states)
        base = table_for(track)
        tweaked = table_for(
            track,
            AttributeThresholds(low_resolution_area=50.0 ** 2),
        )
        for t in track.timestamps:
            for attr in ("SV", "ARC", "FM"):
                assert base.has(t, attr) == tweaked.has(t, attr)
        # resolution labels did change
        assert any(
            base.has(t, "LR") != tweaked.has(t, "LR")
            for t in track.timestamps
        )


class TestFilteredScores:
    def _entry(self, pair_id, overlaps_fpv, overlaps_tpv, flagged):
        ts = tuple(5 * (i + 1) for i in range(len(overlaps_fpv)))
        return (
            pair_id,
            {
                FPV: OverlapSeries(ts, tuple(overlaps_fpv)),
                TPV: OverlapSeries(ts, tuple(overlaps_tpv)),
            },
            {FPV: set(flagged), TPV: set(flagged)},
        )

    def test_all_frames_flagged_equals_unrestricted(self):
        entry = self._entry("p", [0.4, 0.8], [0.2, 0.6], {5, 10})
        out = attribute_filtered_scores([entry], "SV")
        assert out.view_means[FPV] == pytest.approx(100 * 0.6)
        assert out.view_means[TPV] == pytest.approx(100 * 0.4)

    def test_no_frames_flagged_raises(self):
        entry = self._entry("p", [0.4], [0.2], set())
        with pytest.raises(AttributeUnavailable):
            attribute_filtered_scores([entry], "SV")

    def test_weighted_subset_arithmetic(self):
        # pair A: 2 flagged frames at overlaps (1.0, 0.5); pair B: 1 at 0.2
        a = self._entry("a", [1.0, 0.5, 0.0], [0.0, 0.0, 0.0], {5, 10})
        b = self._entry("b", [0.2], [1.0], {5})
        out = attribute_filtered_scores([a, b], "SV")
        expected = (75.0 * 2 + 20.0 * 1) / 3
        assert out.view_means[FPV] == pytest.approx(expected, abs=1e-9)
        assert out.view_weights[FPV] == 3

    def test_sequences_without_flags_excluded(self):
        a = self._entry("a", [1.0], [1.0], {5})
        b = self._entry("b", [0.0], [0.0], set())
        out = attribute_filtered_scores([a, b], "SV")
        assert out.sequences_used[FPV] == 1
        assert out.view_means[FPV] == 100.0


class TestCenterDistanceTables:
    def test_box_centers_binned(self):
        pair = make_pair(
            box_seq((38, 38, 20, 20), (0, 0, 10, 10)),
            width=96, height=96,
        )
        bins = center_distance_tables(pair)
        assert bins[FPV][0] == 0  # centered box
        assert bins[FPV][5] == 2  # corner box center (5,5): dist ~60.8

    def test_mask_uses_barycenter(self):
        from vista_eval.geometry import box_fill_mask

        mask = box_fill_mask(Box(40, 40, 16, 16), 96, 96)
        pair = make_pair([mask], width=96, height=96)
        bins = center_distance_tables(pair)
        assert bins[FPV][0] == 0

    def test_bin_restricted_auc_matches_hand_computation(self):
        """Per-bin weighted AUC from constructed overlaps, by hand."""
        from vista_eval.model import Track
        from vista_eval.runner import run_series

        center = (38.0, 38.0, 20.0, 20.0)   # bin 0
        offset = (2.0, 38.0, 20.0, 20.0)    # center (12,48): dist 36 -> bin 1
        gt_states = box_seq(center, offset, center, offset, center)
        pair = make_pair(gt_states, gt_states, width=96, height=96)
        # predictions: perfect on bin-0 frames, half-width on bin-1 frames
        pred_states = []
        for state in gt_states:
            if state.x == 38.0:
                pred_states.append(state)
            else:
                pred_states.append(Box(state.x, state.y, 10.0, 20.0))
        track = pair.fpv.annotations
        preds = Track(track.timestamps[1:], tuple(pred_states[1:]),
                      track.frame_count, track.fps, track.annotation_rate)
        series = {FPV: run_series(pair, FPV, preds)}
        bins = center_distance_tables(pair)
        for bin_value, expected, count in ((0, 100.0, 2), (1, 50.0, 2)):
            flagged = {
                FPV: {t for t, b in bins[FPV].items() if b == bin_value}
            }
            out = attribute_filtered_scores(
                [("p0", series, flagged)], f"bin{bin_value}"
            )
            assert out.view_means[FPV] == pytest.approx(expected, abs=1e-9)
            assert out.view_weights[FPV] == count

    def test_outermost_bin_unreachable_in_square_frames(self):
        # Euclidean distance from the center of a WxW frame tops out at
        # ~0.707W, short of the 0.75W threshold; only portrait frames can
        # populate bin 3
        from vista_eval.geometry import center_distance_bin

        assert center_distance_bin((0, 0), 96, 96) == 2
        assert center_distance_bin((0, 0), 96, 240) == 3
