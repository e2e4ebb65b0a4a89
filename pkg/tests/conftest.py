from __future__ import annotations

import numpy as np
import pytest

from vista_eval.geometry import BinaryMask, Box
from vista_eval.model import (
    ABSENT,
    FPV,
    SequencePair,
    TPV,
    Track,
    ViewSequence,
)

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def record_acceptance(name: str, outcome: str) -> None:
    _ACCEPTANCE_RESULTS.append((name, outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    out = yield
    report = out.get_result()
    fn = getattr(item, "function", None)
    criterion = getattr(fn, "_acceptance_criterion", None)
    if criterion and report.when == "call":
        record_acceptance(criterion, "PASS" if report.passed else "FAIL")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{outcome}  {name}")


def make_track(
    states,
    step: int = 5,
    fps: float = 5.0,
    rate: float = 1.0,
    frame_count: int | None = None,
) -> Track:
    """Track from a list of states laid on the annotation grid."""
    timestamps = tuple(i * step for i in range(len(states)))
    if frame_count is None:
        frame_count = timestamps[-1] + 1 if timestamps else 1
    return Track(timestamps, tuple(states), frame_count, fps, rate)


def make_pair(
    fpv_states,
    tpv_states=None,
    pair_id: str = "p0",
    width: int = 96,
    height: int = 96,
    step: int = 5,
) -> SequencePair:
    tpv_states = fpv_states if tpv_states is None else tpv_states
    views = {}
    for name, states in ((FPV, fpv_states), (TPV, tpv_states)):
        views[name] = ViewSequence(
            view=name,
            frames_locator=f"/nonexistent/{pair_id}/{name}",
            width=width,
            height=height,
            annotations=make_track(states, step=step),
        )
    return SequencePair(id=pair_id, fpv=views[FPV], tpv=views[TPV])


def random_mask(rng: np.random.Generator, h: int, w: int, density=0.4) -> BinaryMask:
    return BinaryMask(rng.random((h, w)) < density)


def box_seq(*boxes) -> list:
    return [Box(*b) if b is not None else ABSENT for b in boxes]
