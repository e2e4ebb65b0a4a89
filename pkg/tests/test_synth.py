from __future__ import annotations

import numpy as np
import pytest

from vista_eval.geometry import BinaryMask, mask_to_box
from vista_eval.model import FPV, TPV, load_manifest, validate_pair, visibility_runs
from vista_eval.synth import (
    ECHO_INIT,
    FIXED_OFFSET,
    LOSE_AFTER,
    PERFECT,
    VIEW_BIASED,
    ScriptedTracker,
    SynthError,
    SynthSpec,
    SynthViewSpec,
    Trajectory,
    expected_scores,
    generate_manifest,
    generate_pair,
    random_suite,
)


def simple_spec(**kwargs) -> SynthSpec:
    defaults = dict(
        pair_id="s0",
        frame_count=60,
        fpv=SynthViewSpec(96, 96, Trajectory((10, 10, 30, 20))),
        tpv=SynthViewSpec(96, 96, Trajectory((20, 20, 24, 24))),
    )
    defaults.update(kwargs)
    return SynthSpec(**defaults)


class TestGenerator:
    def test_static_no_gaps_single_run(self):
        pair = generate_pair(simple_spec())
        assert validate_pair(pair) == []
        assert len(visibility_runs(pair.fpv.annotations)) == 1
        assert pair.fpv.annotations.weight == 12

    def test_gap_schedule_splits_runs(self):
        pair = generate_pair(simple_spec(gaps=((3, 4),)))
        assert len(visibility_runs(pair.fpv.annotations)) == 2

    def test_gap_on_init_rejected(self):
        with pytest.raises(SynthError):
            generate_pair(simple_spec(gaps=((0, 1),)))

    def test_exit_without_clamp_errors(self):
        spec = simple_spec(
            fpv=SynthViewSpec(96, 96, Trajectory((80, 10, 30, 20), vx=1.0)),
            clamp=False,
        )
        with pytest.raises(SynthError, match="exits"):
            generate_pair(spec)

    def test_determinism(self, tmp_path):
        import json

        specs = random_suite(3, seed=5)
        p1 = generate_manifest(specs, tmp_path / "a")
        p2 = generate_manifest(specs, tmp_path / "b")
        d1, d2 = json.loads(p1.read_text()), json.loads(p2.read_text())
        for d in (d1, d2):  # frame locators embed the output directory
            for entry in d["pairs"]:
                for view in (FPV, TPV):
                    entry[view].pop("frames")
        assert d1 == d2
        for spec in specs:
            a = (tmp_path / "a" / "annotations" / f"{spec.pair_id}.fpv.jsonl")
            b = (tmp_path / "b" / "annotations" / f"{spec.pair_id}.fpv.jsonl")
            assert a.read_text() == b.read_text()

    def test_rendered_target_matches_annotation(self, tmp_path):
        from PIL import Image

        spec = simple_spec(render=True)
        pair = generate_pair(spec, out_dir=tmp_path)
        vs = pair.fpv
        for t in (0, 5, 25):
            frame = np.asarray(Image.open(vs.frame_path(t)).convert("RGB"))
            target = BinaryMask(frame[:, :, 0] > 128)  # red rectangle
            gt_box = vs.annotations.state_at(t)
            assert mask_to_box(target).as_list() == gt_box.as_list()

    def test_manifest_loads_and_validates(self, tmp_path):
        specs = random_suite(4, seed=6)
        path = generate_manifest(specs, tmp_path)
        manifest = load_manifest(path)
        assert len(manifest) == 4


class TestExpectedScores:
    def test_perfect_all_100(self):
        spec = simple_spec()
        for view in (FPV, TPV):
            exp = expected_scores(spec, ScriptedTracker(kind=PERFECT), view)
            assert exp.auc == 100.0 and exp.nps == 100.0 and exp.gsr == 100.0

    def test_lose_after_prefix_arithmetic(self):
        spec = simple_spec()  # 12 annotations -> 11 scored
        tracker = ScriptedTracker(kind=LOSE_AFTER, lose_after=4)
        exp = expected_scores(spec, tracker, FPV)
        assert exp.auc == pytest.approx(100 * 4 / 11, abs=1e-12)
        assert exp.gsr == pytest.approx(100 * 4 / 11, abs=1e-12)

    def test_view_biased_constant_series(self):
        tracker = ScriptedTracker(
            kind=VIEW_BIASED, overlaps={FPV: 0.8, TPV: 0.6}
        )
        spec = simple_spec()
        f = expected_scores(spec, tracker, FPV)
        t = expected_scores(spec, tracker, TPV)
        assert f.auc == pytest.approx(80.0, abs=1e-12)
        assert t.auc == pytest.approx(60.0, abs=1e-12)
        assert f.auc - t.auc == pytest.approx(20.0, abs=1e-12)

    def test_echo_has_no_closed_form(self):
        with pytest.raises(SynthError, match="no closed form"):
            expected_scores(simple_spec(), ScriptedTracker(kind=ECHO_INIT), FPV)

    def test_offset_closed_form(self):
        spec = simple_spec(
            fpv=SynthViewSpec(96, 96, Trajectory((10, 10, 20, 10))),
            tpv=SynthViewSpec(96, 96, Trajectory((10, 10, 20, 10))),
        )
        tracker = ScriptedTracker(kind=FIXED_OFFSET, dx=5, dy=0)
        exp = expected_scores(spec, tracker, FPV)
        # inter = 15*10; union = 2*200-150
        assert exp.auc == pytest.approx(100 * 150 / 250, abs=1e-12)


class TestParse:
    def test_parse_kinds(self):
        assert ScriptedTracker.parse("perfect").kind == PERFECT
        assert ScriptedTracker.parse("echo_init").kind == ECHO_INIT
        offs = ScriptedTracker.parse("offset:3,-4.5")
        assert (offs.dx, offs.dy) == (3.0, -4.5)
        assert ScriptedTracker.parse("lose_after:7").lose_after == 7
        vb = ScriptedTracker.parse("view_biased:0.8,0.6")
        assert vb.overlaps == {FPV: 0.8, TPV: 0.6}

    def test_parse_unknown(self):
        with pytest.raises(SynthError):
            ScriptedTracker.parse("telepathic")
