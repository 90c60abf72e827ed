"""Audio-to-audio score following, symbolic MIDI alignment and follower evaluation."""

from .asm_align import AlignmentTuple, ASMConfig, align
from .cqt_features import CQTParams, build_filterbank, extract_features
from .dtw_core import OLTWConfig, OnlineFollower, classical_dtw, oltw_run
from .eval_metrics import compute_metrics, evaluate
from .midi_io import NoteEvent, ScoreDocument, read_midi

__all__ = [
    "ASMConfig",
    "AlignmentTuple",
    "CQTParams",
    "NoteEvent",
    "OLTWConfig",
    "OnlineFollower",
    "ScoreDocument",
    "align",
    "build_filterbank",
    "classical_dtw",
    "compute_metrics",
    "evaluate",
    "extract_features",
    "oltw_run",
    "read_midi",
]
__version__ = "0.1.0"
