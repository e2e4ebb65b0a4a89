from __future__ import annotations

import io
import json

import numpy as np
import pytest

from vista_adapter.mock import EchoMock, GroundTruthMock, MockError, build_mock_session
from vista_adapter.protocol import state_from_message, state_to_reply
from vista_adapter.serve import AdapterSession, serve


def run_session(session, *messages):
    stdin = io.StringIO("".join(json.dumps(m) + "\n" for m in messages))
    stdout = io.StringIO()
    stderr = io.StringIO()
    code = serve(session, stdin=stdin, stdout=stdout, stderr=stderr)
    replies = [json.loads(line) for line in stdout.getvalue().splitlines()]
    return code, replies, stderr.getvalue()


def echo_session(**kwargs) -> AdapterSession:
    mock = EchoMock()
    return AdapterSession(init=mock.init, track=mock.track,
                          load_frames=False, **kwargs)


INIT = {"cmd": "init", "seq": "s", "frame": "/d/fpv/000000.png",
        "repr": "box", "box": [1, 2, 3, 4]}


class TestProtocolStates:
    def test_box_state(self):
        assert state_from_message({"box": [1, 2, 3, 4]}) == (1.0, 2.0, 3.0, 4.0)

    def test_absent_state(self):
        assert state_from_message({"t": 3}) is None

    def test_mask_state_round_trip(self):
        rng = np.random.default_rng(1)
        mask = rng.random((9, 7)) < 0.5
        reply = state_to_reply(4, mask)
        assert np.array_equal(state_from_message(reply), mask)

    def test_absent_reply(self):
        assert state_to_reply(2, None) == {"t": 2, "absent": True}


class TestServeLoop:
    def test_init_track_end(self):
        code, replies, _ = run_session(
            echo_session(),
            INIT,
            {"cmd": "track", "t": 1, "frame": "f"},
            {"cmd": "track", "t": 2, "frame": "f"},
            {"cmd": "end"},
        )
        assert code == 0
        assert replies == [
            {"status": "ok"},
            {"t": 1, "box": [1.0, 2.0, 3.0, 4.0]},
            {"t": 2, "box": [1.0, 2.0, 3.0, 4.0]},
        ]

    def test_exactly_one_reply_per_request(self):
        code, replies, _ = run_session(
            echo_session(),
            INIT,
            *({"cmd": "track", "t": t, "frame": "f"} for t in range(1, 20)),
            {"cmd": "end"},
        )
        assert len(replies) == 20  # init ack plus one per track

    def test_malformed_json_errors_and_exits_nonzero(self):
        stdin = io.StringIO(json.dumps(INIT) + "\n{broken\n")
        stdout = io.StringIO()
        code = serve(echo_session(), stdin=stdin, stdout=stdout,
                     stderr=io.StringIO())
        assert code == 1
        last = json.loads(stdout.getvalue().splitlines()[-1])
        assert "error" in last

    def test_unknown_command_errors(self):
        code, replies, _ = run_session(echo_session(), {"cmd": "dance"})
        assert code == 1 and "error" in replies[-1]

    def test_track_before_init_errors(self):
        code, replies, _ = run_session(
            echo_session(), {"cmd": "track", "t": 1, "frame": "f"}
        )
        assert code == 1 and "error" in replies[-1]

    def test_model_exception_becomes_absent(self):
        def boom(image):
            raise RuntimeError("flaky model")

        session = AdapterSession(init=lambda i, s: None, track=boom,
                                 load_frames=False)
        code, replies, logged = run_session(
            session, INIT, {"cmd": "track", "t": 1, "frame": "f"},
            {"cmd": "end"},
        )
        assert code == 0
        assert replies[1] == {"t": 1, "absent": True}
        assert "flaky model" in logged

    def test_strict_mode_aborts_on_model_exception(self):
        def boom(image):
            raise RuntimeError("flaky model")

        session = AdapterSession(init=lambda i, s: None, track=boom,
                                 load_frames=False, strict=True)
        code, replies, _ = run_session(
            session, INIT, {"cmd": "track", "t": 1, "frame": "f"}
        )
        assert code == 1 and "error" in replies[-1]

    def test_mask_init_round_trips(self):
        mock = EchoMock()
        session = AdapterSession(init=mock.init, track=mock.track,
                                 load_frames=False)
        rle = {"size": [4, 5], "counts": "3 2 10 4 1"}
        code, replies, _ = run_session(
            session,
            {"cmd": "init", "seq": "s", "frame": "f", "repr": "mask",
             "rle": rle},
            {"cmd": "track", "t": 1, "frame": "f"},
            {"cmd": "end"},
        )
        assert code == 0
        assert replies[1]["rle"] == rle


class TestMocks:
    def test_ground_truth_mock_replays(self, tmp_path):
        lines = [
            {"t": 0, "box": [1, 1, 4, 4]},
            {"t": 5, "box": [2, 1, 4, 4]},
        ]
        with open(tmp_path / "seq1.fpv.jsonl", "w") as fh:
            for line in lines:
                fh.write(json.dumps(line) + "\n")
        mock = GroundTruthMock(tmp_path)
        mock.on_init({"seq": "seq1", "frame": "/d/fpv/000000.png"})
        for _ in range(4):  # t = 1..4 are unlisted -> absent
            assert mock.track(None) is None
        assert mock.track(None) == (2.0, 1.0, 4.0, 4.0)  # t = 5

    def test_offset_mock_shifts_boxes(self, tmp_path):
        with open(tmp_path / "s.tpv.jsonl", "w") as fh:
            fh.write(json.dumps({"t": 1, "box": [10, 10, 4, 4]}) + "\n")
        mock = GroundTruthMock(tmp_path, dx=3, dy=-2)
        mock.on_init({"seq": "s", "frame": "/d/tpv/000000.png"})
        assert mock.track(None) == (13.0, 8.0, 4.0, 4.0)

    def test_missing_gt_file_raises(self, tmp_path):
        mock = GroundTruthMock(tmp_path)
        with pytest.raises(MockError, match="no ground truth"):
            mock.on_init({"seq": "ghost", "frame": "/d/fpv/0.png"})

    def test_unknown_view_raises(self, tmp_path):
        mock = GroundTruthMock(tmp_path)
        with pytest.raises(MockError, match="cannot infer view"):
            mock.on_init({"seq": "s", "frame": "/d/sideways/0.png"})

    def test_build_mock_session_validation(self):
        with pytest.raises(MockError, match="requires --gt-dir"):
            build_mock_session("perfect")
        with pytest.raises(MockError, match="unknown mock"):
            build_mock_session("psychic")
