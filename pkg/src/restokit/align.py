"""Capture-sequence alignment by marker-interval similarity.

Each recorded sequence carries the timestamps at which a start marker
appears and disappears and an end marker appears.  GT and LQ sequences of
one scene are paired by comparing start-marker intervals: we search all
one-to-one assignments and pick the one that (1) accepts the most pairs
within tolerance, (2) has the smallest total error over accepted pairs,
and (3) breaks remaining ties by total assigned error.  Frames between
the start-marker disappearance and the end-marker appearance are then
paired index-by-index.
"""

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

EXHAUSTIVE_LIMIT = 10  # sequences per side; assignment search is exact up to this


@dataclass(frozen=True)
class SequenceRecord:
    id: str
    role: str  # "GT" | "LQ"
    start_marker_appear_s: float
    start_marker_disappear_s: float
    end_marker_appear_s: float
    fps: float
    frame_count: int

    def __post_init__(self):
        if self.role not in ("GT", "LQ"):
            raise ValueError(f"role must be GT or LQ, got {self.role!r}")
        if not (self.start_marker_appear_s < self.start_marker_disappear_s
                < self.end_marker_appear_s):
            raise ValueError(
                f"sequence {self.id!r}: need appear < disappear < end_appear, got "
                f"{self.start_marker_appear_s}, {self.start_marker_disappear_s}, "
                f"{self.end_marker_appear_s}"
            )
        if self.fps <= 0:
            raise ValueError(f"sequence {self.id!r}: fps must be > 0, got {self.fps}")
        if self.frame_count < 1:
            raise ValueError(f"sequence {self.id!r}: frame_count must be >= 1")


@dataclass
class MatchResult:
    pairs: list = field(default_factory=list)      # (gt_id, lq_id, abs interval error)
    rejected: list = field(default_factory=list)   # (sequence id, reason)

    def to_json(self) -> dict:
        return {
            "pairs": [
                {"gt_id": g, "lq_id": l, "interval_error_s": e} for g, l, e in self.pairs
            ],
            "rejected": [{"id": i, "reason": r} for i, r in self.rejected],
        }

    def summary(self) -> str:
        lines = [f"{'GT':<12} {'LQ':<12} {'|d interval| (s)':>18}"]
        for g, l, e in self.pairs:
            lines.append(f"{g:<12} {l:<12} {e:>18.3f}")
        lines.append(f"accepted: {len(self.pairs)}, rejected: {len(self.rejected)}")
        for seq_id, reason in self.rejected:
            lines.append(f"  rejected {seq_id}: {reason}")
        return "\n".join(lines) + "\n"


def interval(rec: SequenceRecord) -> float:
    """Start-marker visibility interval, the similarity key for matching."""
    return rec.start_marker_disappear_s - rec.start_marker_appear_s


def _best_assignment(a_intervals, b_intervals, tolerance):
    """Exact assignment of every element of `a` to a distinct element of
    `b` (len(a) <= len(b)), optimal for the lexicographic objective
    (-accepted, accepted_error, total_error).  DP over subsets of b."""
    n, m = len(a_intervals), len(b_intervals)
    layers = [{0: ((0, 0.0, 0.0), None)}]  # used-b mask -> (objective, (prev mask, j))
    for i in range(n):
        nxt = {}
        for mask, (obj, _) in layers[i].items():
            for j in range(m):
                bit = 1 << j
                if mask & bit:
                    continue
                err = abs(a_intervals[i] - b_intervals[j])
                accepted = err <= tolerance
                cand = (
                    obj[0] - (1 if accepted else 0),
                    obj[1] + (err if accepted else 0.0),
                    obj[2] + err,
                )
                key = mask | bit
                if key not in nxt or cand < nxt[key][0]:
                    nxt[key] = (cand, (mask, j))
        layers.append(nxt)
    mask = min(layers[n].items(), key=lambda kv: kv[1][0])[0]
    assignment = [None] * n
    for i in range(n - 1, -1, -1):
        mask, j = layers[i + 1][mask][1]
        assignment[i] = j
    return assignment


def match_sequences(gts, lqs, tolerance_s: float = 0.2) -> MatchResult:
    """Pair GT and LQ sequences of one scene by interval similarity.

    Exact search over one-to-one assignments (both list sizes capped at
    EXHAUSTIVE_LIMIT = 10).  Assigned pairs whose interval error exceeds
    the tolerance are rejected; surplus sequences are rejected as
    unmatched.
    """
    if not gts or not lqs:
        raise ValueError("both sequence lists must be nonempty")
    if len(gts) > EXHAUSTIVE_LIMIT or len(lqs) > EXHAUSTIVE_LIMIT:
        raise ValueError(
            f"at most {EXHAUSTIVE_LIMIT} sequences per side supported by the "
            f"exact assignment search, got {len(gts)} GT / {len(lqs)} LQ"
        )
    gts = sorted(gts, key=lambda r: r.id)
    lqs = sorted(lqs, key=lambda r: r.id)
    g_int = [interval(r) for r in gts]
    l_int = [interval(r) for r in lqs]

    swap = len(gts) > len(lqs)
    if swap:
        assignment = _best_assignment(l_int, g_int, tolerance_s)
        pairs_idx = [(assignment[j], j) for j in range(len(lqs))]
    else:
        assignment = _best_assignment(g_int, l_int, tolerance_s)
        pairs_idx = [(i, assignment[i]) for i in range(len(gts))]

    result = MatchResult()
    used_g, used_l = set(), set()
    for gi, lj in sorted(pairs_idx):
        err = abs(g_int[gi] - l_int[lj])
        used_g.add(gi)
        used_l.add(lj)
        if err <= tolerance_s:
            result.pairs.append((gts[gi].id, lqs[lj].id, err))
        else:
            reason = (
                f"interval error {err:.3f}s exceeds tolerance {tolerance_s:g}s "
                f"(paired {gts[gi].id} with {lqs[lj].id})"
            )
            result.rejected.append((gts[gi].id, reason))
            result.rejected.append((lqs[lj].id, reason))
    for gi, rec in enumerate(gts):
        if gi not in used_g:
            result.rejected.append((rec.id, "no counterpart sequence available"))
    for lj, rec in enumerate(lqs):
        if lj not in used_l:
            result.rejected.append((rec.id, "no counterpart sequence available"))
    return result


def pair_frames(gt: SequenceRecord, lq: SequenceRecord) -> list:
    """Index pairs of usable frames: from the start-marker disappearance
    to the end-marker appearance, clipped to each record's frame count."""

    def usable(rec):
        first = math.ceil(rec.start_marker_disappear_s * rec.fps)
        last = math.floor(rec.end_marker_appear_s * rec.fps)
        first = max(first, 0)
        last = min(last, rec.frame_count - 1)
        return list(range(first, last + 1))

    gt_frames = usable(gt)
    lq_frames = usable(lq)
    if not gt_frames or not lq_frames:
        raise ValueError(
            f"empty usable frame span (GT {gt.id!r}: {len(gt_frames)}, "
            f"LQ {lq.id!r}: {len(lq_frames)})"
        )
    n = min(len(gt_frames), len(lq_frames))
    if len(gt_frames) != len(lq_frames):
        log.warning(
            "usable spans differ for %s/%s: %d vs %d frames, pairing first %d",
            gt.id, lq.id, len(gt_frames), len(lq_frames), n,
        )
    return list(zip(gt_frames[:n], lq_frames[:n]))


def load_records(path) -> list:
    """Read SequenceRecords from CSV (with header) or JSON lines."""
    path = Path(path)
    rows = []
    if path.suffix.lower() == ".csv":
        with open(path, newline="", encoding="utf-8") as fh:
            for raw in csv.DictReader(fh):
                rows.append(raw)
    else:
        with open(path, encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
    records = []
    for raw in rows:
        records.append(
            SequenceRecord(
                id=str(raw["id"]),
                role=str(raw["role"]),
                start_marker_appear_s=float(raw["start_marker_appear_s"]),
                start_marker_disappear_s=float(raw["start_marker_disappear_s"]),
                end_marker_appear_s=float(raw["end_marker_appear_s"]),
                fps=float(raw["fps"]),
                frame_count=int(raw["frame_count"]),
            )
        )
    return records
