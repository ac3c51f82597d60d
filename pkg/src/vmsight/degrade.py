"""Workload-aware performance degradation prediction.

For one black-box session: identify the application, predict its runtime
performance from correlated metrics, obtain the interference-free baseline
(a fixed value, or via predicted workload for variable-workload apps), and
report the orientation-corrected ratio.  A degradation index of 1 means the
session performs at its baseline; larger values mean interference.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    InsufficientData,
    IoError,
    MissingModel,
    MissingProfile,
    ParseError,
    UnknownApplication,
)
from .identify import UNKNOWN, FingerprintDb, identify
from .neural import (
    FitReport,
    MlpModel,
    Purpose,
    TrainConfig,
    features_from_traces,
    hyper_search,
    load_model,
    predict,
    save_model,
    train,
)
from .select import DEFAULT_CORR_THRESHOLD, CorrelationReport, Target, rank_metrics
from .tracemodel import MetricKind, MetricTrace, SessionRecord


class Orientation(enum.Enum):
    LOWER_IS_BETTER = "lower_is_better"  # e.g. execution time
    HIGHER_IS_BETTER = "higher_is_better"  # e.g. ops/s, requests/s


@dataclass(frozen=True)
class AppProfile:
    """Per-application knowledge the degradation stage relies on."""

    name: str
    perf_metric_name: str
    perf_orientation: Orientation
    variable_workload: bool
    fixed_baseline: Optional[float] = None
    baseline_range: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.variable_workload:
            if self.baseline_range is None:
                raise ValueError(f"{self.name}: variable workload requires baseline_range")
        else:
            if self.fixed_baseline is None:
                raise ValueError(f"{self.name}: fixed workload requires fixed_baseline")
        if self.baseline_range is not None:
            lo, hi = self.baseline_range
            if not (hi > lo > 0):
                raise ValueError(f"{self.name}: baseline_range must satisfy hi > lo > 0")


@dataclass(frozen=True)
class DegradationReport:
    session_id: str
    label: str
    perf_pred: float
    workload_pred: Optional[float]
    perf_base: float
    deg: float

    def to_obj(self) -> dict:
        return {
            "session_id": self.session_id,
            "label": self.label,
            "perf_pred": self.perf_pred,
            "workload_pred": self.workload_pred,
            "perf_base": self.perf_base,
            "deg": self.deg,
        }


def reports_to_csv(reports: Sequence["DegradationReport"]) -> str:
    """Batch CSV: one row per session, empty cell for absent workload."""
    lines = ["session_id,label,perf_pred,workload_pred,perf_base,deg"]
    for r in reports:
        workload = "" if r.workload_pred is None else f"{r.workload_pred:.9g}"
        lines.append(
            f"{r.session_id},{r.label},{r.perf_pred:.9g},{workload},"
            f"{r.perf_base:.9g},{r.deg:.9g}"
        )
    return "\n".join(lines) + "\n"


class ModelStore:
    """Per-application model sets, keyed by (app, purpose)."""

    def __init__(self):
        self._models: dict[tuple[str, Purpose], tuple[MlpModel, Optional[FitReport]]] = {}

    def add(self, app: str, model: MlpModel, report: Optional[FitReport] = None) -> None:
        self._models[(app, model.purpose)] = (model, report)

    def get(self, app: str, purpose: Purpose) -> MlpModel:
        try:
            return self._models[(app, purpose)][0]
        except KeyError:
            raise MissingModel(f"no {purpose.value} model for app {app!r}") from None

    def report(self, app: str, purpose: Purpose) -> Optional[FitReport]:
        entry = self._models.get((app, purpose))
        return entry[1] if entry else None

    def apps(self) -> list[str]:
        return sorted({app for app, _ in self._models})

    def __len__(self) -> int:
        return len(self._models)

    def save(self, path: str) -> None:
        for (app, purpose), (model, report) in sorted(
            self._models.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
        ):
            save_model(model, os.path.join(path, app, f"{purpose.value}.json"), report)

    @classmethod
    def load(cls, path: str) -> "ModelStore":
        if not os.path.isdir(path):
            raise IoError(f"no model directory at {path}")
        store = cls()
        for app in sorted(os.listdir(path)):
            app_dir = os.path.join(path, app)
            if not os.path.isdir(app_dir):
                continue
            for fname in sorted(os.listdir(app_dir)):
                if fname.endswith(".json"):
                    model, report = load_model(os.path.join(app_dir, fname))
                    store.add(app, model, report)
        if not len(store):
            raise IoError(f"no models found under {path}")
        return store


def _degradation_ratio(perf: float, base: float, orientation: Orientation) -> float:
    # one shared ratio so flipping the orientation inverts deg exactly
    ratio = perf / base
    return ratio if orientation is Orientation.LOWER_IS_BETTER else 1.0 / ratio


def predict_degradation(
    traces: Mapping[MetricKind, MetricTrace],
    db: Optional[FingerprintDb],
    profiles: Mapping[str, AppProfile],
    models: ModelStore,
    session_id: str = "",
    label: Optional[str] = None,
) -> DegradationReport:
    """Run the full degradation workflow on one session.

    Identification comes first unless ``label`` pre-identifies the session
    (timing benchmarks and oracle-label evaluations use that).  A session
    identified as unknown aborts with UnknownApplication: no prediction is
    made for unknown applications.
    """
    if label is None:
        if db is None:
            raise MissingModel("identification requires a fingerprint database")
        label = identify(traces, db).label
    if label == UNKNOWN:
        raise UnknownApplication(
            f"session {session_id or '<unnamed>'} matches no fingerprinted application"
        )
    profile = profiles.get(label)
    if profile is None:
        raise MissingProfile(f"no application profile for {label!r}")

    perf_model = models.get(label, Purpose.PERFORMANCE)
    perf = predict(perf_model, features_for_session(traces, perf_model))

    workload = None
    if profile.variable_workload:
        wl_model = models.get(label, Purpose.WORKLOAD)
        base_model = models.get(label, Purpose.BASELINE)
        workload = predict(wl_model, features_for_session(traces, wl_model))
        base = predict(base_model, [workload])
        lo, hi = profile.baseline_range
        base = min(hi, max(lo, base))  # clamp away net extrapolation artifacts
    else:
        base = float(profile.fixed_baseline)

    deg = _degradation_ratio(perf, base, profile.perf_orientation)
    return DegradationReport(
        session_id=session_id,
        label=label,
        perf_pred=float(perf),
        workload_pred=None if workload is None else float(workload),
        perf_base=float(base),
        deg=float(deg),
    )


def features_for_session(
    traces: Mapping[MetricKind, MetricTrace], model: MlpModel
) -> list[float]:
    return features_from_traces(traces, model.input_metrics, model.reduce)


# ---------------------------------------------------------------------------
# Pipeline assembly: per-application model fitting
# ---------------------------------------------------------------------------


def fit_models_for_corpus(
    records: Sequence[SessionRecord],
    profiles: Mapping[str, AppProfile],
    corr_threshold: float = DEFAULT_CORR_THRESHOLD,
    cfg: TrainConfig = TrainConfig(),
    hidden_grid: Optional[Sequence[tuple[int, ...]]] = None,
) -> ModelStore:
    """Train the per-application net sets from a labeled corpus.

    Each application trains only on its own sessions.  Variable-workload
    apps additionally get a workload net and a baseline net; the latter fits
    (workload -> performance) on the corpus's interference-free sessions.
    When ``hidden_grid`` is given, each net's width is chosen by validation
    error over that grid.
    """
    store = ModelStore()
    for app in sorted(profiles):
        profile = profiles[app]
        recs = [r for r in records if r.app_label == app]
        if not recs:
            raise InsufficientData(f"corpus has no sessions for app {app!r}")

        def fit(purpose: Purpose, selection: Optional[CorrelationReport], data):
            if hidden_grid:
                grid = [replace(cfg, hidden_sizes=h) for h in hidden_grid]
                return hyper_search(data, purpose, grid, selection)
            return train(data, purpose, selection, cfg)

        perf_sel = rank_metrics(recs, app, Target.PERFORMANCE, corr_threshold)
        model, report = fit(Purpose.PERFORMANCE, perf_sel, recs)
        store.add(app, model, report)

        if profile.variable_workload:
            wl_sel = rank_metrics(recs, app, Target.WORKLOAD, corr_threshold)
            model, report = fit(Purpose.WORKLOAD, wl_sel, recs)
            store.add(app, model, report)

            iso = [r for r in recs if r.interference_level == 0.0]
            if len(iso) < 20:
                raise InsufficientData(
                    f"app {app!r} has only {len(iso)} interference-free sessions; "
                    "the baseline net needs >= 20"
                )
            model, report = fit(Purpose.BASELINE, None, iso)
            store.add(app, model, report)
    return store


# ---------------------------------------------------------------------------
# Evaluation against ground truth
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DegradationTable:
    """Per-application error statistics, train and test splits."""

    rows: tuple[dict, ...]
    skipped: int  # sessions identification rejected (end-to-end mode only)

    def to_obj(self) -> dict:
        return {"rows": [dict(r) for r in self.rows], "skipped": self.skipped}

    def to_csv(self) -> str:
        header = "app,split,n,mean_pct,max_pct,std_pct"
        lines = [header]
        for r in self.rows:
            lines.append(
                f"{r['app']},{r['split']},{r['n']},{r['mean_pct']:.6g},"
                f"{r['max_pct']:.6g},{r['std_pct']:.6g}"
            )
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"{'App':<18} {'Split':<6} {'N':>5} {'mean%':>8} {'max%':>8} {'std%':>8}"]
        for r in self.rows:
            lines.append(
                f"{r['app']:<18} {r['split']:<6} {r['n']:>5} "
                f"{r['mean_pct']:>8.2f} {r['max_pct']:>8.2f} {r['std_pct']:>8.2f}"
            )
        return "\n".join(lines)


def evaluate_degradation(
    records: Sequence[SessionRecord],
    profiles: Mapping[str, AppProfile],
    models: ModelStore,
    truth: Mapping[str, float],
    db: Optional[FingerprintDb] = None,
    use_identification: bool = False,
    predictor: Optional[Callable[[SessionRecord], float]] = None,
) -> DegradationTable:
    """Score degradation predictions against ground-truth indices.

    By default sessions are evaluated under their true labels, measuring the
    prediction stage alone (identification accuracy is gated separately);
    ``use_identification=True`` runs the full workflow and counts rejected
    sessions as skipped.  ``predictor`` swaps in any session -> deg callable,
    the plug-in seam for comparison methods.  Split membership follows the
    performance net's training split; unseen sessions count as test.
    """
    labeled = [r for r in records if r.app_label is not None and r.session_id in truth]
    if not labeled:
        raise InsufficientData("no labeled sessions with ground truth to evaluate")

    split_of: dict[str, dict[str, str]] = {}
    for app in sorted({r.app_label for r in labeled}):
        report = models.report(app, Purpose.PERFORMANCE) if predictor is None else None
        mapping: dict[str, str] = {}
        if report is not None:
            for split, ids in report.split_ids.items():
                for sid in ids:
                    mapping[sid] = split
        split_of[app] = mapping

    errors: dict[tuple[str, str], list[float]] = {}
    skipped = 0
    for record in sorted(labeled, key=lambda r: r.session_id):
        app = record.app_label
        if predictor is not None:
            deg_pred = float(predictor(record))
        else:
            try:
                report = predict_degradation(
                    record.traces,
                    db,
                    profiles,
                    models,
                    session_id=record.session_id,
                    label=None if use_identification else app,
                )
            except UnknownApplication:
                skipped += 1
                continue
            deg_pred = report.deg
        deg_true = truth[record.session_id]
        rel = abs(deg_pred - deg_true) / max(abs(deg_true), 1e-9) * 100.0
        split = split_of[app].get(record.session_id, "test")
        if split == "val":
            continue  # the table mirrors train/test reporting only
        errors.setdefault((app, split), []).append(rel)

    if not any(split == "test" for _, split in errors):
        raise InsufficientData("evaluation produced an empty test split")

    rows = []
    for (app, split) in sorted(errors, key=lambda k: (k[0], k[1] != "train")):
        vals = np.asarray(errors[(app, split)])
        rows.append(
            {
                "app": app,
                "split": split,
                "n": int(vals.size),
                "mean_pct": float(np.mean(vals)),
                "max_pct": float(np.max(vals)),
                "std_pct": float(np.std(vals)),
            }
        )
    return DegradationTable(rows=tuple(rows), skipped=skipped)


# ---------------------------------------------------------------------------
# Profile persistence
# ---------------------------------------------------------------------------


def profiles_to_obj(profiles: Mapping[str, AppProfile]) -> dict:
    out = {}
    for name in sorted(profiles):
        p = profiles[name]
        out[name] = {
            "perf_metric_name": p.perf_metric_name,
            "perf_orientation": p.perf_orientation.value,
            "variable_workload": p.variable_workload,
            "fixed_baseline": p.fixed_baseline,
            "baseline_range": None if p.baseline_range is None else list(p.baseline_range),
        }
    return out


def profiles_from_obj(obj: dict) -> dict[str, AppProfile]:
    profiles = {}
    for name, entry in obj.items():
        profiles[name] = AppProfile(
            name=name,
            perf_metric_name=entry["perf_metric_name"],
            perf_orientation=Orientation(entry["perf_orientation"]),
            variable_workload=bool(entry["variable_workload"]),
            fixed_baseline=entry.get("fixed_baseline"),
            baseline_range=None
            if entry.get("baseline_range") is None
            else tuple(entry["baseline_range"]),
        )
    return profiles


def save_profiles(profiles: Mapping[str, AppProfile], path: str) -> None:
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(profiles_to_obj(profiles), sort_keys=True, indent=2))
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write profiles to {path}: {exc}") from exc


def load_profiles(path: str) -> dict[str, AppProfile]:
    if not os.path.exists(path):
        raise IoError(f"no profile file at {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{os.path.basename(path)}: invalid JSON ({exc.msg})") from exc
    try:
        return profiles_from_obj(obj)
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{os.path.basename(path)}: {exc}") from exc


def profiles_for_templates(templates) -> dict[str, AppProfile]:
    """Derive degradation profiles from generator templates."""
    profiles = {}
    for name in sorted(templates):
        t = templates[name]
        orientation = (
            Orientation.HIGHER_IS_BETTER if t.higher_is_better else Orientation.LOWER_IS_BETTER
        )
        if t.variable_workload:
            lo, hi = t.baseline
            profiles[name] = AppProfile(
                name=name,
                perf_metric_name=t.perf_metric_name,
                perf_orientation=orientation,
                variable_workload=True,
                baseline_range=(min(lo, hi), max(lo, hi)),
            )
        else:
            profiles[name] = AppProfile(
                name=name,
                perf_metric_name=t.perf_metric_name,
                perf_orientation=orientation,
                variable_workload=False,
                fixed_baseline=float(t.baseline),
            )
    return profiles
