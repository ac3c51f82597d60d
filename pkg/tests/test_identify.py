import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_dtw_cost, brute_force_min_warped_sq
from vmsight.errors import (
    InsufficientReferences,
    MetricMismatch,
    NoReferenceForMetric,
    NoUsableMetrics,
    PeriodMismatch,
    TooShort,
)
from vmsight.identify import (
    UNKNOWN,
    FingerprintDb,
    FingerprintEntry,
    build_fingerprint_db,
    dtw_align,
    identify,
    identify_single,
    load_fingerprint_db,
    save_fingerprint_db,
)
from vmsight.tracemodel import CPU_UTIL, LLC_MISSES, NET_TX, MetricTrace, SessionRecord


def trace(values, kind=CPU_UTIL, period=1.0):
    return MetricTrace(kind, np.asarray(values, dtype=float), period_s=period)


def toy_db(entries, threshold=800.0, metrics=(CPU_UTIL,), **kw):
    return FingerprintDb(
        entries=tuple(FingerprintEntry(label, t.metric, t) for label, t in entries),
        metrics_used=frozenset(metrics),
        distance_threshold=threshold,
        **kw,
    )


short_traces = st.lists(
    st.integers(min_value=0, max_value=4).map(float), min_size=2, max_size=6
)


class TestDtwAlign:
    def test_identity_alignment_is_diagonal(self):
        p = trace([5.0, 6.0, 7.0, 8.0])
        pair = dtw_align(p, p)
        assert pair.cost == 0.0
        assert pair.path == tuple((i, i) for i in range(4))

    def test_extra_zero_absorbed_at_no_cost(self):
        pair = dtw_align(trace([0, 0, 1, 0]), trace([0, 1, 0]))
        assert pair.cost == 0.0

    def test_constant_mismatch_costs_one_per_cell(self):
        # every cell costs 1; the shortest monotone path covers 3 cells
        pair = dtw_align(trace([1, 1, 1]), trace([2, 2]))
        assert pair.cost == pytest.approx(3.0)

    def test_warped_lengths_bounds(self):
        pair = dtw_align(trace([0, 3, 1, 4, 1]), trace([2, 0, 5]))
        assert max(5, 3) <= len(pair.path) <= 5 + 3 - 1
        assert len(pair.p_warped) == len(pair.q_warped) == len(pair.path)

    def test_path_expands_sources(self):
        p, q = trace([0, 2, 4, 2]), trace([0, 4, 2, 2, 1])
        pair = dtw_align(p, q)
        for (i, j), pv, qv in zip(pair.path, pair.p_warped, pair.q_warped):
            assert pv == p.samples[i] and qv == q.samples[j]

    def test_period_mismatch(self):
        with pytest.raises(PeriodMismatch):
            dtw_align(trace([1, 2]), trace([1, 2], period=2.0))

    def test_metric_mismatch(self):
        with pytest.raises(MetricMismatch):
            dtw_align(trace([1, 2]), trace([1, 2], kind=LLC_MISSES))

    def test_matches_brute_force_on_random_short_traces(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            p = rng.integers(0, 5, int(rng.integers(2, 7))).astype(float)
            q = rng.integers(0, 5, int(rng.integers(2, 7))).astype(float)
            pair = dtw_align(trace(p), trace(q))
            assert pair.cost == pytest.approx(brute_force_dtw_cost(p, q), abs=1e-12)

    @settings(max_examples=120, deadline=None)
    @given(short_traces, short_traces)
    def test_cost_symmetric(self, p, q):
        assert dtw_align(trace(p), trace(q)).cost == pytest.approx(
            dtw_align(trace(q), trace(p)).cost, abs=1e-12
        )

    @settings(max_examples=120, deadline=None)
    @given(short_traces)
    def test_stretch_equivalence_zero_cost(self, values):
        # repeating samples never adds cost: cost == 0 iff traces are equal
        # after collapsing consecutive duplicates
        rng = np.random.default_rng(len(values))
        stretched = [v for v in values for _ in range(int(rng.integers(1, 4)))]
        assert dtw_align(trace(values), trace(stretched)).cost == pytest.approx(0.0)

    @settings(max_examples=120, deadline=None)
    @given(short_traces, short_traces)
    def test_zero_cost_iff_dedup_equal(self, p, q):
        def dedup(xs):
            out = [xs[0]]
            for v in xs[1:]:
                if v != out[-1]:
                    out.append(v)
            return out

        cost = dtw_align(trace(p), trace(q)).cost
        assert (cost == 0.0) == (dedup(p) == dedup(q))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=12))
    def test_warping_never_hurts_equal_length(self, values):
        # the diagonal is an admissible path, so the optimum cannot exceed
        # the accumulated unwarped per-cell distance
        rng = np.random.default_rng(len(values))
        other = [v + float(rng.normal(0, 5)) for v in values]
        diagonal = sum(abs(a - b) for a, b in zip(values, other))
        assert dtw_align(trace(values), trace(other)).cost <= diagonal + 1e-9


class TestWarpedDistance:
    def test_identical_warped_zero(self):
        from vmsight.identify import warped_distance

        pair = dtw_align(trace([1, 2, 3]), trace([1, 2, 3]))
        assert warped_distance(pair) == 0.0

    def test_three_four_five(self):
        from vmsight.identify import WarpedPair, warped_distance

        pair = WarpedPair(
            np.array([3.0, 0.0]), np.array([0.0, 4.0]), ((0, 0), (1, 1)), cost=7.0
        )
        assert warped_distance(pair) == pytest.approx(5.0)

    def test_enumerated_optimal_warp(self):
        from vmsight.identify import warped_distance

        pair = dtw_align(trace([1, 1, 1]), trace([2, 2]))
        assert warped_distance(pair) == pytest.approx(math.sqrt(3))

    def test_distance_on_min_cost_path_matches_oracle(self):
        # the traceback picks one optimal path deterministically; its squared
        # distance must match some enumerated min-cost path
        from vmsight.identify import warped_distance

        rng = np.random.default_rng(3)
        for _ in range(60):
            p = rng.integers(0, 4, int(rng.integers(2, 6))).astype(float)
            q = rng.integers(0, 4, int(rng.integers(2, 6))).astype(float)
            pair = dtw_align(trace(p), trace(q))
            got = warped_distance(pair) ** 2
            candidates = brute_force_min_warped_sq(list(p), list(q))
            assert got >= candidates - 1e-9


class TestIdentifySingle:
    def test_byte_identical_trace_wins_with_zero_distance(self):
        ref = trace([10, 50, 10, 50])
        db = toy_db([("a", ref), ("b", trace([90, 90, 90, 90]))])
        label, dist = identify_single(trace([10, 50, 10, 50]), db)
        assert label == "a" and dist == 0.0

    def test_rejection_above_threshold(self):
        db = toy_db([("a", trace([0, 0, 0, 0]))], threshold=5.0)
        label, dist = identify_single(trace([100, 100, 100, 100]), db)
        assert label == UNKNOWN and dist > 5.0

    def test_no_reference_for_metric(self):
        db = toy_db([("a", trace([1, 2, 3]))])
        with pytest.raises(NoReferenceForMetric):
            identify_single(trace([1, 2, 3], kind=LLC_MISSES), db)

    def test_argmin_against_independent_oracle(self):
        rng = np.random.default_rng(7)
        refs = {label: rng.uniform(0, 100, 8) for label in ("a", "b", "c")}
        db = toy_db([(label, trace(v)) for label, v in refs.items()], threshold=1e9)
        for _ in range(20):
            query = rng.uniform(0, 100, 6)
            best = min(
                refs,
                key=lambda label: math.sqrt(
                    brute_force_min_warped_sq(list(query), list(refs[label]))
                ),
            )
            label, _ = identify_single(trace(query), db)
            assert label == best

    def test_per_metric_threshold_override(self):
        db = toy_db(
            [("a", trace([0, 0, 0], kind=LLC_MISSES))],
            metrics=(LLC_MISSES,),
            metric_thresholds={"llc_misses": 2.0},
        )
        label, _ = identify_single(trace([3, 3, 3], kind=LLC_MISSES), db)
        assert label == UNKNOWN

    def test_znorm_matching_ignores_amplitude(self):
        shape = [10.0, 50.0, 10.0, 50.0, 10.0]
        db = toy_db([("a", trace(shape)), ("b", trace([30.0, 31.0, 30.0, 29.0, 30.0]))])
        scaled = trace([v * 10.0 for v in shape])
        raw_label, raw_dist = identify_single(scaled, db)
        z_label, z_dist = identify_single(scaled, db, znorm=True)
        assert z_label == "a" and z_dist == pytest.approx(0.0, abs=1e-9)
        assert raw_dist > z_dist


class TestIdentifyVoting:
    def _multi_db(self):
        return FingerprintDb(
            entries=(
                FingerprintEntry("ds", CPU_UTIL, trace([10, 90, 10, 90])),
                FingerprintEntry("ds", LLC_MISSES, trace([20, 20, 20], kind=LLC_MISSES)),
                FingerprintEntry("ds", NET_TX, trace([5, 5, 5], kind=NET_TX)),
                FingerprintEntry("ws", CPU_UTIL, trace([50, 55, 50, 55])),
                FingerprintEntry("ws", LLC_MISSES, trace([8, 8, 8], kind=LLC_MISSES)),
                FingerprintEntry("ws", NET_TX, trace([15, 15, 15], kind=NET_TX)),
            ),
            metrics_used=frozenset({CPU_UTIL, LLC_MISSES, NET_TX}),
            distance_threshold=1000.0,
        )

    def test_unanimous_vote(self):
        db = self._multi_db()
        traces = {
            CPU_UTIL: trace([10, 90, 10, 90]),
            LLC_MISSES: trace([21, 20, 20], kind=LLC_MISSES),
            NET_TX: trace([5, 6, 5], kind=NET_TX),
        }
        result = identify(traces, db)
        assert result.label == "ds"
        assert result.votes == {"ds": 3}

    def test_tie_breaks_by_smallest_distance(self):
        db = self._multi_db()
        traces = {
            CPU_UTIL: trace([10, 90, 10, 90]),  # ds wins this metric, distance 0
            LLC_MISSES: trace([8, 8, 8], kind=LLC_MISSES),  # ws wins, distance 0...
        }
        # make distances distinct: ds cpu exact (0) vs ws llc slightly off
        traces[LLC_MISSES] = trace([9, 8, 8], kind=LLC_MISSES)
        result = identify(traces, db)
        assert result.votes == {"ds": 1, "ws": 1}
        assert result.label == "ds"

    def test_exact_tie_is_unknown(self):
        db = self._multi_db()
        traces = {
            CPU_UTIL: trace([10, 90, 10, 90]),
            LLC_MISSES: trace([8, 8, 8], kind=LLC_MISSES),
        }
        result = identify(traces, db)
        assert result.votes == {"ds": 1, "ws": 1}
        assert result.label == UNKNOWN

    def test_all_rejected_is_unknown(self):
        db = FingerprintDb(
            entries=(FingerprintEntry("ds", CPU_UTIL, trace([0, 0, 0])),),
            metrics_used=frozenset({CPU_UTIL}),
            distance_threshold=1.0,
        )
        result = identify({CPU_UTIL: trace([500, 500, 500])}, db)
        assert result.label == UNKNOWN and result.votes == {}

    def test_no_usable_metrics(self):
        db = self._multi_db()
        with pytest.raises(NoUsableMetrics):
            identify({}, db)

    def test_min_trace_len_guard(self):
        db = self._multi_db()
        with pytest.raises(TooShort):
            identify({CPU_UTIL: trace([10, 90, 10])}, db, min_trace_len=60)

    def test_duplicate_reference_is_noop(self, templates, small_corpus):
        db = build_fingerprint_db(small_corpus, [CPU_UTIL], 1)
        dup = FingerprintDb(
            entries=db.entries + (db.entries[0],),
            metrics_used=db.metrics_used,
            distance_threshold=db.distance_threshold,
        )
        for record in small_corpus[50:70]:
            assert identify(record.traces, db).label == identify(record.traces, dup).label


class TestBuildDb:
    def _sessions(self, apps, per_app, metrics=(CPU_UTIL,)):
        rng = np.random.default_rng(1)
        out = []
        for app in apps:
            for i in range(per_app):
                traces = {
                    k: MetricTrace(k, rng.uniform(0, 100, 12)) for k in metrics
                }
                out.append(
                    SessionRecord(
                        session_id=f"{app}-{i:02d}", traces=traces, app_label=app
                    )
                )
        return out

    def test_one_ref_five_apps_one_metric(self):
        db = build_fingerprint_db(self._sessions("abcde", 3), [CPU_UTIL], 1)
        assert len(db.entries) == 5

    def test_four_refs_five_apps_reaches_twenty_entries(self):
        # the accuracy-plateau point: 4 traces per app over 5 apps
        db = build_fingerprint_db(self._sessions("abcde", 6), [CPU_UTIL], 4)
        assert len(db.entries) == 20

    def test_insufficient_references(self):
        with pytest.raises(InsufficientReferences):
            build_fingerprint_db(self._sessions("ab", 2), [CPU_UTIL], 3)

    def test_selection_is_first_k_by_session_id(self):
        sessions = self._sessions("a", 5)
        db = build_fingerprint_db(sessions, [CPU_UTIL], 2)
        assert db.source_session_ids == ("a-00", "a-01")

    def test_db_round_trip(self, tmp_path):
        sessions = self._sessions("abc", 4, metrics=(CPU_UTIL, LLC_MISSES))
        db = build_fingerprint_db(
            sessions, [CPU_UTIL, LLC_MISSES], 2, metric_thresholds={"llc_misses": 42.0}
        )
        save_fingerprint_db(db, str(tmp_path / "db"))
        loaded = load_fingerprint_db(str(tmp_path / "db"))
        assert loaded.metrics_used == db.metrics_used
        assert loaded.distance_threshold == db.distance_threshold
        assert loaded.metric_thresholds == db.metric_thresholds
        assert len(loaded.entries) == len(db.entries)
        for a, b in zip(loaded.entries, db.entries):
            assert a.app_label == b.app_label and a.trace == b.trace

    def test_reserved_label_rejected(self):
        with pytest.raises(ValueError, match="reserved"):
            toy_db([(UNKNOWN, trace([1, 2, 3]))])
