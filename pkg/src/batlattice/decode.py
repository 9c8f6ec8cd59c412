"""Streaming greedy decoding and emission-latency metrics."""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimMismatch, EmptySet
from .rnnt import BLANK


@dataclass
class EmissionTrace:
    """Non-blank emission events: (token id, 1-based frame, time ms)."""

    events: list = field(default_factory=list)
    frame_ms: float = 10.0

    def last_time_ms(self) -> float:
        return self.events[-1][2] if self.events else math.nan


@dataclass
class LatencyReport:
    avg_et_ms: float
    pr50_ms: float
    pr90_ms: float
    per_utt: list
    n_empty: int = 0


def greedy_decode(model, x, max_symbols_per_frame: int = 10, frame_ms: float = 10.0):
    """Frame-synchronous greedy decoding.

    At each frame the joint argmax is taken repeatedly; non-blank emits
    the token and advances the prediction state, blank advances the
    frame. Ties break toward blank (argmax prefers the lower index, and
    blank is index 0). Vertical emissions per frame are capped.
    """
    from .model import encode, joint_logits

    if max_symbols_per_frame < 1:
        raise DimMismatch("max_symbols_per_frame must be >= 1")
    h = encode(model, x)
    jp = model.joint_params()
    emb = model.params["emb"]
    g = emb[BLANK]
    hyp = []
    trace = EmissionTrace(frame_ms=frame_ms)
    for t in range(h.shape[0]):
        for _ in range(max_symbols_per_frame):
            sym = int(np.argmax(joint_logits(h[t], g, jp)))
            if sym == BLANK:
                break
            hyp.append(sym)
            trace.events.append((sym, t + 1, (t + 1) * frame_ms))
            g = emb[sym]
    return hyp, trace


def token_error_rate(hyp, ref) -> float:
    """Levenshtein distance over reference length (1.0 for empty ref)."""
    if not ref:
        return 0.0 if not hyp else 1.0
    prev = list(range(len(ref) + 1))
    for i, hy in enumerate(hyp, start=1):
        cur = [i] + [0] * len(ref)
        for j, rf in enumerate(ref, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (hy != rf))
        prev = cur
    return prev[-1] / len(ref)


def _nearest_rank(sorted_vals, pct: float) -> float:
    rank = max(1, math.ceil(pct / 100.0 * len(sorted_vals)))
    return sorted_vals[rank - 1]


def latency_metrics(traces, ref_end_ms) -> LatencyReport:
    """avg ET and PR50/PR90 (nearest-rank) over non-empty traces.

    PR is signed: emitting before the reference end gives a negative
    value. Empty traces are excluded and counted in ``n_empty``.

    Raises:
        EmptySet: if every trace is empty.
    """
    if len(traces) != len(ref_end_ms):
        raise DimMismatch("traces and reference end times differ in length")
    per_utt = []
    n_empty = 0
    for trace, ref_end in zip(traces, ref_end_ms):
        if not trace.events:
            n_empty += 1
            continue
        last = trace.last_time_ms()
        per_utt.append((last, float(ref_end), last - float(ref_end)))
    if not per_utt:
        raise EmptySet("no utterance produced any emission")
    prs = sorted(p[2] for p in per_utt)
    return LatencyReport(
        avg_et_ms=float(np.mean([p[0] for p in per_utt])),
        pr50_ms=float(_nearest_rank(prs, 50)),
        pr90_ms=float(_nearest_rank(prs, 90)),
        per_utt=per_utt,
        n_empty=n_empty,
    )


def dump_alignment_csv(trace: EmissionTrace, path) -> None:
    """CSV rows (frame, token_index, token_id) for alignment plots."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "token_index", "token_id"])
        for idx, (tok, frame, _ms) in enumerate(trace.events, start=1):
            writer.writerow([frame, idx, tok])


def read_alignment_csv(path, frame_ms: float = 10.0) -> EmissionTrace:
    trace = EmissionTrace(frame_ms=frame_ms)
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            frame = int(row["frame"])
            trace.events.append((int(row["token_id"]), frame, frame * frame_ms))
    return trace
