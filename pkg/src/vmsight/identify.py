"""Application-type identification from metric traces.

An unknown session is matched against a fingerprint database of labeled
reference traces.  Every (query, reference) pair of the same metric kind is
aligned with exact dynamic time warping, the Euclidean distance between the
warped traces scores the match, and per-metric nearest-fingerprint results
are combined by voting.  A distance threshold rejects sessions that resemble
no known application.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    InsufficientReferences,
    IoError,
    MetricMismatch,
    NoReferenceForMetric,
    NoUsableMetrics,
    ParseError,
    PeriodMismatch,
    TooShort,
)
from .tracemodel import MetricKind, MetricTrace, SessionRecord, fmt, metric_by_name

UNKNOWN = "unknown"

DEFAULT_DISTANCE_THRESHOLD = 800.0  # calibrated for CPU-load traces in percent units

# CPU load is the default fingerprint signal; other metrics can join the
# vote once their rejection thresholds are calibrated for the deployment.
DEFAULT_FINGERPRINT_METRICS = ("cpu_util_pct",)

# The single default threshold is meaningless for counters on other scales,
# so the bundled per-metric overrides are calibrated for the synthetic
# generator's units.  Override these for real deployments.
DEFAULT_METRIC_THRESHOLDS = {
    "cpu_util_pct": 800.0,
    "llc_misses": 300.0,
    "net_tx_bytes": 2.0e8,
}


# ---------------------------------------------------------------------------
# Dynamic time warping (exact dynamic program, no window, no slope weights)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WarpedPair:
    """Two traces expanded to a common length along an optimal warping path.

    ``path`` holds 0-based (m, n) index pairs from (0, 0) to (M-1, N-1) with
    steps in {(1,0), (0,1), (1,1)}; both warped sequences have the path's
    length M', with max(M, N) <= M' <= M + N - 1.
    """

    p_warped: np.ndarray
    q_warped: np.ndarray
    path: tuple[tuple[int, int], ...]
    cost: float

    def __post_init__(self):
        p = np.asarray(self.p_warped, dtype=float)
        q = np.asarray(self.q_warped, dtype=float)
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError("warped sequences must be 1-D and equally long")
        arr = np.asarray(self.path, dtype=int)
        if arr.shape != (p.shape[0], 2):
            raise ValueError("path length must match the warped length")
        if tuple(arr[0]) != (0, 0):
            raise ValueError("path must start at (0, 0)")
        steps = np.diff(arr, axis=0)
        if steps.size and not (
            np.all(steps >= 0) and np.all(steps <= 1) and np.all(steps.sum(axis=1) >= 1)
        ):
            raise ValueError("path steps must be (1,0), (0,1) or (1,1)")
        m_end, n_end = int(arr[-1, 0]) + 1, int(arr[-1, 1]) + 1
        if not (max(m_end, n_end) <= len(arr) <= m_end + n_end - 1):
            raise ValueError("warped length outside [max(M,N), M+N-1]")
        p = p.copy()
        q = q.copy()
        p.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "p_warped", p)
        object.__setattr__(self, "q_warped", q)
        object.__setattr__(self, "path", tuple((int(a), int(b)) for a, b in arr))


def _accumulate(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Fill the accumulated-cost matrix D for per-cell cost |p_m - q_n|.

    Vectorized over anti-diagonals: every cell on diagonal k depends only on
    diagonals k-1 and k-2, so each diagonal is one batched update.  Buffers
    are reused and diagonals are stored through a strided view to keep the
    inner loop allocation-free.
    """
    m, n = p.shape[0], q.shape[0]
    d = np.empty((m, n))
    flat = d.reshape(-1)
    prev1 = np.full(m, np.inf)  # diagonal k-1, indexed by row
    prev2 = np.full(m, np.inf)  # diagonal k-2, indexed by row
    curr = np.full(m, np.inf)
    best = np.empty(m)
    cbuf = np.empty(m)
    step = n - 1  # flat distance between adjacent cells of one anti-diagonal
    for k in range(m + n - 1):
        lo = 0 if k < n else k - n + 1
        hi = k if k < m else m - 1
        cnt = hi - lo + 1
        rows = slice(lo, hi + 1)
        np.subtract(p[rows], q[k - hi : k - lo + 1][::-1], out=cbuf[:cnt])
        np.abs(cbuf[:cnt], out=cbuf[:cnt])
        if k == 0:
            curr[0] = cbuf[0]
        else:
            if lo == 0:
                # top row: only the left neighbor exists
                best[0] = prev1[0]
                if hi >= 1:
                    np.minimum(prev1[0:hi], prev1[1 : hi + 1], out=best[1:cnt])
                    np.minimum(best[1:cnt], prev2[0:hi], out=best[1:cnt])
            else:
                np.minimum(prev1[lo - 1 : hi], prev1[rows], out=best[:cnt])
                np.minimum(best[:cnt], prev2[lo - 1 : hi], out=best[:cnt])
            np.add(cbuf[:cnt], best[:cnt], out=curr[rows])
            if lo > 0:
                curr[lo - 1] = np.inf
            if hi < m - 1:
                curr[hi + 1] = np.inf
        start = k + lo * step  # flat index of (i, j) is k + i*(n-1); n >= 2
        flat[start : start + (cnt - 1) * step + 1 : step] = curr[rows]
        prev2, prev1, curr = prev1, curr, prev2
    return d


def _traceback(d: np.ndarray) -> list[tuple[int, int]]:
    m, n = d.shape
    i, j = m - 1, n - 1
    path = [(i, j)]
    while i > 0 or j > 0:
        # preference on ties: diagonal, then advance p, then advance q
        cand = (
            d[i - 1, j - 1] if i > 0 and j > 0 else np.inf,
            d[i - 1, j] if i > 0 else np.inf,
            d[i, j - 1] if j > 0 else np.inf,
        )
        move = int(np.argmin(cand))
        if move == 0:
            i, j = i - 1, j - 1
        elif move == 1:
            i -= 1
        else:
            j -= 1
        path.append((i, j))
    path.reverse()
    return path


def _dtw_arrays(pa: np.ndarray, qa: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    d = _accumulate(pa, qa)
    return float(d[-1, -1]), _traceback(d)


def dtw_align(p: MetricTrace, q: MetricTrace) -> WarpedPair:
    """Align two traces of the same metric by exact DTW.

    The per-cell cost is the absolute sample difference; squaring happens
    only later, in warped_distance.  Returns the warped pair along a
    minimum-cost monotone path; ``cost`` is the dynamic-programming optimum.
    """
    if p.metric != q.metric:
        raise MetricMismatch(f"cannot align {p.metric.name} against {q.metric.name}")
    if fmt(p.period_s) != fmt(q.period_s):
        raise PeriodMismatch(
            f"period mismatch for {p.metric.name}: {p.period_s} vs {q.period_s}"
        )
    if len(p) < 2 or len(q) < 2:
        raise TooShort("traces must have at least 2 samples")
    pa = np.asarray(p.samples, dtype=float)
    qa = np.asarray(q.samples, dtype=float)
    cost, path = _dtw_arrays(pa, qa)
    idx = np.asarray(path)
    return WarpedPair(pa[idx[:, 0]], qa[idx[:, 1]], tuple(path), cost)


def warped_distance(pair: WarpedPair) -> float:
    """Euclidean distance between the two warped sequences."""
    return float(np.linalg.norm(pair.p_warped - pair.q_warped))


def _znorm(a: np.ndarray) -> np.ndarray:
    std = float(np.std(a))
    if std == 0.0:
        return a - np.mean(a)
    return (a - np.mean(a)) / std


def _match_distance(query: MetricTrace, ref: MetricTrace, align: str, znorm: bool) -> float:
    qa = np.asarray(query.samples, dtype=float)
    ra = np.asarray(ref.samples, dtype=float)
    if znorm:
        qa, ra = _znorm(qa), _znorm(ra)
    if align == "dtw":
        _, path = _dtw_arrays(qa, ra)
        idx = np.asarray(path)
        return float(np.linalg.norm(qa[idx[:, 0]] - ra[idx[:, 1]]))
    if align == "truncate":
        # ablation variant: chop both to the common length, no warping
        L = min(qa.shape[0], ra.shape[0])
        return float(np.linalg.norm(qa[:L] - ra[:L]))
    raise ValueError(f"unknown alignment {align!r}")


# ---------------------------------------------------------------------------
# Fingerprint database
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FingerprintEntry:
    app_label: str
    metric: MetricKind
    trace: MetricTrace


@dataclass(frozen=True)
class FingerprintDb:
    """Labeled reference traces plus the rejection thresholds."""

    entries: tuple[FingerprintEntry, ...]
    metrics_used: frozenset[MetricKind]
    distance_threshold: float = DEFAULT_DISTANCE_THRESHOLD
    metric_thresholds: Mapping[str, float] = field(default_factory=dict)
    source_session_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if not (self.distance_threshold > 0):
            raise ValueError("distance_threshold must be positive")
        for name, value in self.metric_thresholds.items():
            if not (value > 0):
                raise ValueError(f"threshold for {name} must be positive")
        entries = tuple(self.entries)
        if not entries:
            raise ValueError("fingerprint database needs at least one entry")
        labels = sorted({e.app_label for e in entries})
        if UNKNOWN in labels:
            raise ValueError(f"{UNKNOWN!r} is reserved and cannot label an entry")
        have = {(e.app_label, e.metric) for e in entries}
        for label in labels:
            for kind in self.metrics_used:
                if (label, kind) not in have:
                    raise ValueError(f"no entry for ({label}, {kind.name})")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "metrics_used", frozenset(self.metrics_used))
        object.__setattr__(self, "metric_thresholds", dict(self.metric_thresholds))

    def labels(self) -> list[str]:
        return sorted({e.app_label for e in self.entries})

    def threshold_for(self, kind: MetricKind) -> float:
        return float(self.metric_thresholds.get(kind.name, self.distance_threshold))


@dataclass(frozen=True)
class IdentificationResult:
    label: str
    per_metric: Mapping[MetricKind, tuple[str, float]]
    votes: Mapping[str, int]

    def to_obj(self) -> dict:
        return {
            "label": self.label,
            "votes": dict(sorted(self.votes.items())),
            "per_metric": {
                kind.name: {"label": lab, "distance": dist}
                for kind, (lab, dist) in sorted(
                    self.per_metric.items(), key=lambda kv: kv[0].name
                )
            },
        }


def build_fingerprint_db(
    labeled: Sequence[SessionRecord],
    metrics: Iterable[MetricKind],
    n_refs_per_app: int = 4,
    threshold: float = DEFAULT_DISTANCE_THRESHOLD,
    metric_thresholds: Optional[Mapping[str, float]] = None,
) -> FingerprintDb:
    """Select the first n_refs_per_app sessions per application as references.

    Selection is deterministic (ordered by session_id) so database builds
    are reproducible.  Raises InsufficientReferences when an application has
    fewer usable labeled sessions than requested.
    """
    if n_refs_per_app < 1:
        raise ValueError("n_refs_per_app must be >= 1")
    metrics = sorted(set(metrics), key=lambda k: k.name)
    if not metrics:
        raise ValueError("metrics must be non-empty")
    by_app: dict[str, list[SessionRecord]] = {}
    for record in labeled:
        if record.app_label is None:
            continue
        if all(kind in record.traces for kind in metrics):
            by_app.setdefault(record.app_label, []).append(record)
    if not by_app:
        raise InsufficientReferences("no labeled sessions carry all requested metrics")
    entries: list[FingerprintEntry] = []
    source_ids: list[str] = []
    for app in sorted(by_app):
        sessions = sorted(by_app[app], key=lambda r: r.session_id)
        if len(sessions) < n_refs_per_app:
            raise InsufficientReferences(
                f"app {app!r} has {len(sessions)} usable sessions, need {n_refs_per_app}"
            )
        for record in sessions[:n_refs_per_app]:
            source_ids.append(record.session_id)
            for kind in metrics:
                entries.append(FingerprintEntry(app, kind, record.traces[kind]))
    return FingerprintDb(
        entries=tuple(entries),
        metrics_used=frozenset(metrics),
        distance_threshold=threshold,
        metric_thresholds=dict(metric_thresholds or {}),
        source_session_ids=tuple(source_ids),
    )


def identify_single(
    trace: MetricTrace,
    db: FingerprintDb,
    align: str = "dtw",
    znorm: bool = False,
) -> tuple[str, float]:
    """Match one trace against every same-metric reference.

    Returns the label of the globally nearest reference and its distance,
    or (UNKNOWN, distance) when even the nearest exceeds the metric's
    rejection threshold.
    """
    refs = [e for e in db.entries if e.metric == trace.metric]
    if not refs:
        raise NoReferenceForMetric(f"database has no references for {trace.metric.name}")
    best_label = None
    best_dist = math.inf
    for entry in refs:
        if fmt(entry.trace.period_s) != fmt(trace.period_s):
            raise PeriodMismatch(
                f"query period {trace.period_s} != reference period "
                f"{entry.trace.period_s} for {trace.metric.name}"
            )
        dist = _match_distance(trace, entry.trace, align, znorm)
        if dist < best_dist:
            best_label, best_dist = entry.app_label, dist
    if best_dist > db.threshold_for(trace.metric):
        return UNKNOWN, best_dist
    return best_label, best_dist


def identify(
    traces: Mapping[MetricKind, MetricTrace],
    db: FingerprintDb,
    align: str = "dtw",
    znorm: bool = False,
    min_trace_len: Optional[int] = None,
) -> IdentificationResult:
    """Identify the application behind a session by cross-metric voting.

    Each metric's nearest-fingerprint result casts one vote unless it was
    rejected by the threshold.  The winner needs a strict plurality; tied
    labels fall back to the smallest per-metric distance, and a residual tie
    (or an all-rejected session) yields UNKNOWN.
    """
    usable = sorted(
        (kind for kind in traces if kind in db.metrics_used), key=lambda k: k.name
    )
    if not usable:
        raise NoUsableMetrics(
            f"session shares no metric with the database ({sorted(k.name for k in db.metrics_used)})"
        )
    if min_trace_len is not None:
        usable = [k for k in usable if len(traces[k]) >= min_trace_len]
        if not usable:
            raise TooShort(f"all usable traces are shorter than {min_trace_len} samples")
    per_metric: dict[MetricKind, tuple[str, float]] = {}
    votes: dict[str, int] = {}
    for kind in usable:
        label, dist = identify_single(traces[kind], db, align=align, znorm=znorm)
        per_metric[kind] = (label, dist)
        if label != UNKNOWN:
            votes[label] = votes.get(label, 0) + 1
    winner = _vote_winner(votes, per_metric)
    return IdentificationResult(label=winner, per_metric=per_metric, votes=votes)


def _vote_winner(
    votes: Mapping[str, int], per_metric: Mapping[MetricKind, tuple[str, float]]
) -> str:
    if not votes:
        return UNKNOWN
    top = max(votes.values())
    leaders = sorted(label for label, count in votes.items() if count == top)
    if len(leaders) == 1:
        return leaders[0]
    # tie: the label with the smallest best per-metric distance wins
    best: dict[str, float] = {}
    for label, dist in per_metric.values():
        if label in leaders and dist < best.get(label, math.inf):
            best[label] = dist
    floor = min(best.values())
    nearest = [label for label in leaders if best[label] == floor]
    return nearest[0] if len(nearest) == 1 else UNKNOWN


# ---------------------------------------------------------------------------
# On-disk layout: <dir>/db.json plus one CSV trace file per entry
# ---------------------------------------------------------------------------


def save_fingerprint_db(db: FingerprintDb, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    index = {
        "distance_threshold": db.distance_threshold,
        "metric_thresholds": dict(sorted(db.metric_thresholds.items())),
        "metrics_used": sorted(k.name for k in db.metrics_used),
        "source_session_ids": list(db.source_session_ids),
        "entries": [],
    }
    try:
        for i, entry in enumerate(db.entries):
            fname = f"entry{i:04d}.csv"
            with open(os.path.join(path, fname), "w", encoding="utf-8") as fh:
                fh.write(f"t,{entry.metric.name}\n")
                period = entry.trace.period_s
                for j, v in enumerate(entry.trace.samples):
                    fh.write(f"{fmt(j * period)},{fmt(v)}\n")
            index["entries"].append(
                {
                    "app_label": entry.app_label,
                    "metric": entry.metric.name,
                    "file": fname,
                    "period_s": entry.trace.period_s,
                }
            )
        with open(os.path.join(path, "db.json"), "w", encoding="utf-8") as fh:
            fh.write(json.dumps(index, sort_keys=True, indent=2))
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write fingerprint db to {path}: {exc}") from exc


def load_fingerprint_db(path: str) -> FingerprintDb:
    index_path = os.path.join(path, "db.json")
    if not os.path.exists(index_path):
        raise IoError(f"no fingerprint database at {path}")
    with open(index_path, encoding="utf-8") as fh:
        try:
            index = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"db.json: invalid JSON ({exc.msg})") from exc
    entries = []
    for item in index["entries"]:
        kind = metric_by_name(item["metric"])
        fpath = os.path.join(path, item["file"])
        samples = []
        with open(fpath, encoding="utf-8") as fh:
            header = fh.readline()
            if header.strip() != f"t,{kind.name}":
                raise ParseError(f"{item['file']}: unexpected header {header.strip()!r}")
            for lineno, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 2:
                    raise ParseError(f"{item['file']}:{lineno}: expected 2 fields")
                samples.append(float(parts[1]))
        trace = MetricTrace(kind, np.array(samples), period_s=float(item["period_s"]))
        entries.append(FingerprintEntry(item["app_label"], kind, trace))
    return FingerprintDb(
        entries=tuple(entries),
        metrics_used=frozenset(metric_by_name(n) for n in index["metrics_used"]),
        distance_threshold=float(index["distance_threshold"]),
        metric_thresholds={k: float(v) for k, v in index["metric_thresholds"].items()},
        source_session_ids=tuple(index.get("source_session_ids", ())),
    )
