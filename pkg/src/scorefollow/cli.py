"""Command line entry point: ``scorefollow {align,bench,follow}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import asm_align, eval_metrics
from .cqt_features import CQTParams, InvalidParamsError
from .dtw_core import OLTWConfig
from .midi_io import read_midi


def _add_cqt_flags(p: argparse.ArgumentParser):
    d = CQTParams()
    p.add_argument("--cqt-method", choices=["nsgt", "pseudo"], default="nsgt")
    p.add_argument("--fmin", type=float, default=d.f_min)
    p.add_argument("--fmax", type=float, default=d.f_max)
    p.add_argument("--slice-len", type=int, default=d.slice_len)
    p.add_argument("--transition-len", type=int, default=d.transition_len)
    p.add_argument("--hop-len", type=int, default=d.hop_len)
    p.add_argument("--sample-rate", type=int, default=d.sample_rate)


def _udp(value: str):
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError("expected host:port")
    return host, int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scorefollow")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("align", help="align performance MIDI to score MIDI, write a reference file")
    a.add_argument("--perf", required=True)
    a.add_argument("--score", required=True)
    a.add_argument("--post-align-threshold", type=float, default=None, metavar="MS")
    a.add_argument("--match-score", type=float, default=1.0)
    a.add_argument("--mismatch-floor", type=float, default=-12.0)
    a.add_argument("--gap-penalty", type=float, default=-1.0)

    b = sub.add_parser("bench", help="evaluate follower output against a reference")
    b.add_argument("--ref", required=True, help="reference file, or directory for suite mode")
    b.add_argument("--output", required=True, help="follower output file, or directory")
    b.add_argument("--misalign-threshold-ms", type=float, default=eval_metrics.DEFAULT_THETA_MS)
    b.add_argument("--search-bound-ms", type=float, default=eval_metrics.DEFAULT_SEARCH_BOUND_MS)
    b.add_argument("--json", default=None, metavar="PATH",
                   help="write the structured report here instead of after the table")

    f = sub.add_parser("follow", help="follow a performance WAV against a score")
    f.add_argument("--mode", choices=["online", "offline"], default="online")
    f.add_argument("--score", required=True, help="score MIDI (synthesized) or WAV")
    f.add_argument("--perf", required=True, help="performance WAV")
    f.add_argument("--backend", choices=["timestamp", "alignment"], default="alignment")
    f.add_argument("--udp", type=_udp, default=None, metavar="HOST:PORT")
    f.add_argument("--output", default=None, help="alignment output file (default stdout)")
    f.add_argument("--score-notes", default=None, help="MIDI or score text with onsets for a WAV score")
    f.add_argument("--synth-cmd", default=None, help="synthesizer command template with {midi} and {wav}")
    f.add_argument("--simulate-performance", action="store_true")
    f.add_argument("--sleep-compensation", type=float, default=0.0005)
    f.add_argument("--backtrack", action="store_true")
    f.add_argument("--no-backend-compensation", action="store_true")
    f.add_argument("--c", type=int, default=500)
    f.add_argument("--max-run-count", type=int, default=3)
    f.add_argument("--wa", type=float, default=None)
    f.add_argument("--wb", type=float, default=1.0)
    f.add_argument("--wc", type=float, default=1.0)
    _add_cqt_flags(f)
    return parser


def cmd_align(args) -> int:
    cfg = asm_align.ASMConfig(args.match_score, args.mismatch_floor, args.gap_penalty,
                              args.post_align_threshold)
    tuples = asm_align.align(read_midi(args.perf), read_midi(args.score), cfg)
    sys.stdout.write(asm_align.emit_reference(tuples))
    sys.stderr.write(asm_align.format_report(asm_align.report(tuples), args.post_align_threshold))
    return 0


def cmd_bench(args) -> int:
    ref, out = Path(args.ref), Path(args.output)
    theta, bound = args.misalign_threshold_ms, args.search_bound_ms
    if ref.is_dir():
        suite = eval_metrics.bench_suite(ref, out, theta, bound)
        reports = suite.pieces
        totals = (suite.piecewise_precision, suite.total_precision)
    else:
        reports = {ref.name: eval_metrics.bench_pair(ref, out, theta, bound)}
        totals = eval_metrics.suite_metrics(list(reports.values()))
    payload = {
        "pieces": {k: r.as_dict() for k, r in reports.items()},
        "r_pp": totals[0],
        "r_pt": totals[1],
        "misalign_threshold_ms": theta,
        "search_bound_ms": bound,
    }
    sys.stdout.write(eval_metrics.format_table(reports, totals))
    text = json.dumps(payload, indent=2)
    if args.json:
        Path(args.json).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")
    return 0


def cmd_follow(args) -> int:
    from .follower_pipeline import PipelineConfig, run

    cqt = CQTParams(sample_rate=args.sample_rate, f_min=args.fmin, f_max=args.fmax,
                    slice_len=args.slice_len, transition_len=args.transition_len,
                    hop_len=args.hop_len)
    wa = args.wa if args.wa is not None else (0.5 if args.mode == "online" else 1.0)
    oltw = OLTWConfig(args.c, args.max_run_count, wa, args.wb, args.wc)
    cfg = PipelineConfig(
        score_input=args.score, performance_input=args.perf, mode=args.mode,
        cqt_method=args.cqt_method, backend=args.backend,
        simulate_performance=args.simulate_performance,
        sleep_compensation=args.sleep_compensation, backtrack=args.backtrack,
        backend_compensation=not args.no_backend_compensation, udp_target=args.udp,
        output=args.output, score_notes=args.score_notes, cqt=cqt, oltw=oltw,
        offline_weights=(wa, args.wb, args.wc), synth_cmd=args.synth_cmd,
    )
    result = run(cfg)
    if cfg.backend == "alignment" and not cfg.output:
        sys.stdout.write(eval_metrics.format_follower_text(result.records))
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"align": cmd_align, "bench": cmd_bench, "follow": cmd_follow}
    try:
        return handlers[args.command](args)
    except (OSError, ValueError, RuntimeError, InvalidParamsError) as exc:
        print(f"scorefollow {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
