import sys
from pathlib import Path

import pytest
import synth

HERE = Path(__file__).resolve().parent
SYNTH_CMD = f"{sys.executable} {HERE / 'synth.py'} {{midi}} {{wav}}"


@pytest.fixture(scope="session")
def short_piece(tmp_path_factory):
    """A ~3 s melody as score WAV/MIDI plus a tempo-warped performance."""
    d = tmp_path_factory.mktemp("short")
    score = synth._doc((k * 250.0, p) for k, p in enumerate([60, 64, 67, 72, 71, 67, 64, 62, 60, 65]))
    perf = synth.warp_piece(score, synth.tempo_warp(600.0))
    synth.write_piece(score, d / "score.wav", d / "score.mid")
    synth.write_piece(perf, d / "perf.wav", d / "perf.mid")
    return {"dir": d, "score": score, "perf": perf}


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
