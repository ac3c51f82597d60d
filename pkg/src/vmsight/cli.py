"""Command-line entry point wiring the library end to end.

Subcommands cover the whole workflow: generate synthetic corpora, build
fingerprint databases, identify black-box sessions, rank metrics, train the
per-application nets, predict degradation, and run the bundled experiments.
Machine-readable JSON goes to stdout (or --out), logs and human tables stay
on stderr, and every subcommand is deterministic for a fixed seed.

Exit codes: 0 on success, 1 on a typed domain error, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

from . import degrade, evaluate, neural, select, simgen, tracemodel
from .errors import ConfigInvalid, UnknownApplication, VmsightError
from .identify import (
    DEFAULT_DISTANCE_THRESHOLD,
    DEFAULT_FINGERPRINT_METRICS,
    build_fingerprint_db,
    identify as identify_session,
    load_fingerprint_db,
    save_fingerprint_db,
)

CONFIG_ENV = "CLOUDPROPHET_CONFIG"

_CONFIG_KEYS = {
    "corpus",
    "db",
    "models",
    "profiles",
    "out",
    "seed",
    "threshold_corr",
    "threshold_dtw",
    "jobs",
    "json",
    "format",
    "min_trace_len",
}

_DEFAULTS = {
    "seed": 0,
    "threshold_corr": select.DEFAULT_CORR_THRESHOLD,
    "jobs": 1,
    "json": False,
    "format": "jsonl",
    "min_trace_len": 60,
    "profiles": "builtin",
}


def _load_config(path: Optional[str]) -> dict:
    if path is None:
        path = os.environ.get(CONFIG_ENV)
    if not path:
        return {}
    if not os.path.exists(path):
        raise ConfigInvalid(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config is not valid JSON: {exc.msg}") from exc
    unknown = set(cfg) - _CONFIG_KEYS
    if unknown:
        raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _resolve(args: argparse.Namespace, config: dict, key: str, fallback=None):
    """Precedence: explicit flag > config file > built-in default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return _DEFAULTS.get(key, fallback)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _emit(args, config, payload: dict) -> None:
    text = _dump(payload)
    out = _resolve(args, config, "out")
    if out:
        os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {out}", file=sys.stderr)
    if _resolve(args, config, "json"):
        sys.stdout.write(text)


def _parse_threshold_dtw(pairs, config) -> dict[str, float]:
    thresholds = dict(config.get("threshold_dtw", {}))
    for item in pairs or []:
        if "=" not in item:
            raise ConfigInvalid(f"--threshold-dtw expects <metric>=<value>, got {item!r}")
        name, _, value = item.partition("=")
        thresholds[name] = float(value)
    return {k: float(v) for k, v in thresholds.items()}


def _load_sessions(args, config):
    corpus = _resolve(args, config, "corpus")
    if not corpus:
        raise ConfigInvalid("--corpus is required")
    return tracemodel.load_corpus(corpus, format=_resolve(args, config, "format"))


def _load_profiles(args, config):
    source = _resolve(args, config, "profiles")
    if source == "builtin":
        return degrade.profiles_for_templates(simgen.default_templates())
    return degrade.load_profiles(source)


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------


def _cmd_simulate(args, config) -> int:
    seed = int(_resolve(args, config, "seed"))
    templates = simgen.default_templates(amplitude_gain=args.amp_gain)
    cfg = simgen.ScenarioConfig(
        n_vms=args.n_vms,
        session_duration_s=args.duration_s,
        period_s=args.period_s,
        noise_std=args.noise,
        perf_noise_std=args.perf_noise,
        rng_seed=seed,
    )
    records = simgen.generate(cfg, templates, args.sessions)
    if args.isolated:
        records = records + simgen.generate_isolated(cfg, templates, args.isolated)
    if args.outsider:
        import numpy as np

        outsider = simgen.outsider_template(amplitude_gain=args.amp_gain)
        rng = np.random.default_rng(seed + 2)
        records = records + [
            simgen.render_session(
                outsider, cfg, f"out{i:06d}", None, float(rng.uniform(0.0, 0.9)), rng
            )
            for i in range(args.outsider)
        ]
    out = _resolve(args, config, "out")
    if not out:
        raise ConfigInvalid("--out is required")
    tracemodel.save_corpus(records, out, format=_resolve(args, config, "format"))
    if args.profiles_out:
        degrade.save_profiles(degrade.profiles_for_templates(templates), args.profiles_out)
        print(f"wrote {args.profiles_out}", file=sys.stderr)
    print(f"wrote {len(records)} sessions to {out}", file=sys.stderr)
    return 0


def _cmd_fingerprint(args, config) -> int:
    records = _load_sessions(args, config)
    metrics = [tracemodel.metric_by_name(n) for n in args.metrics.split(",")]
    db = build_fingerprint_db(
        records,
        metrics,
        n_refs_per_app=args.refs_per_app,
        threshold=args.threshold,
        metric_thresholds=_parse_threshold_dtw(args.threshold_dtw, config),
    )
    out = _resolve(args, config, "out")
    if not out:
        raise ConfigInvalid("--out is required")
    save_fingerprint_db(db, out)
    print(
        f"fingerprinted {len(db.labels())} apps, {len(db.entries)} entries -> {out}",
        file=sys.stderr,
    )
    return 0


def _identify_one(record, db, align, znorm, min_trace_len):
    result = identify_session(
        record.traces, db, align=align, znorm=znorm, min_trace_len=min_trace_len
    )
    return {"session_id": record.session_id, **result.to_obj()}


def _cmd_identify(args, config) -> int:
    records = _load_sessions(args, config)
    db_path = _resolve(args, config, "db")
    if not db_path:
        raise ConfigInvalid("--db is required")
    db = load_fingerprint_db(db_path)
    min_len = int(_resolve(args, config, "min_trace_len"))
    jobs = int(_resolve(args, config, "jobs"))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(
                pool.map(
                    _identify_worker,
                    [(r, db, args.align, args.znorm, min_len) for r in records],
                    chunksize=max(1, len(records) // (4 * jobs) or 1),
                )
            )
    else:
        rows = [_identify_one(r, db, args.align, args.znorm, min_len) for r in records]
    payload = {"results": rows}
    _emit(args, config, payload)
    if not _resolve(args, config, "json"):
        for row in rows:
            print(f"{row['session_id']}: {row['label']}")
    return 0


def _identify_worker(item):
    return _identify_one(*item)


def _cmd_select_metrics(args, config) -> int:
    records = _load_sessions(args, config)
    target = select.Target(args.target)
    report = select.rank_metrics(
        records,
        args.app,
        target,
        threshold=float(_resolve(args, config, "threshold_corr")),
        reduce=args.reduce,
    )
    _emit(args, config, report.to_obj())
    if not _resolve(args, config, "json"):
        print(select.render_report(report))
    return 0


def _cmd_train(args, config) -> int:
    records = _load_sessions(args, config)
    profiles = _load_profiles(args, config)
    if args.apps:
        wanted = set(args.apps.split(","))
        missing = wanted - set(profiles)
        if missing:
            raise ConfigInvalid(f"unknown apps: {sorted(missing)}")
        profiles = {k: v for k, v in profiles.items() if k in wanted}
    cfg = neural.TrainConfig(
        hidden_sizes=tuple(int(h) for h in args.hidden.split(",")),
        max_epochs=args.max_epochs,
        rng_seed=int(_resolve(args, config, "seed")),
    )
    grid = None
    if args.hidden_grid:
        grid = [tuple(int(h) for h in w.split("x")) for w in args.hidden_grid.split(",")]
    store = degrade.fit_models_for_corpus(
        records,
        profiles,
        corr_threshold=float(_resolve(args, config, "threshold_corr")),
        cfg=cfg,
        hidden_grid=grid,
    )
    models_dir = _resolve(args, config, "models")
    if not models_dir:
        raise ConfigInvalid("--models is required")
    store.save(models_dir)
    summary = {}
    for app in store.apps():
        for purpose in neural.Purpose:
            report = store.report(app, purpose)
            if report is not None:
                summary[f"{app}/{purpose.value}"] = report.errors["test"]["mean"]
    _emit(args, config, {"models": len(store), "test_mean_pct": summary})
    print(f"trained {len(store)} models -> {models_dir}", file=sys.stderr)
    return 0


def _predict_one(record, db, profiles, store):
    try:
        report = degrade.predict_degradation(
            record.traces, db, profiles, store, session_id=record.session_id
        )
        return report, None
    except UnknownApplication as exc:
        return None, str(exc)


def _predict_worker(item):
    return _predict_one(*item)


def _cmd_predict(args, config) -> int:
    records = _load_sessions(args, config)
    db_path = _resolve(args, config, "db")
    models_dir = _resolve(args, config, "models")
    if not db_path or not models_dir:
        raise ConfigInvalid("--db and --models are required")
    db = load_fingerprint_db(db_path)
    store = degrade.ModelStore.load(models_dir)
    profiles = _load_profiles(args, config)
    jobs = int(_resolve(args, config, "jobs"))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(
                pool.map(
                    _predict_worker,
                    [(r, db, profiles, store) for r in records],
                    chunksize=max(1, len(records) // (4 * jobs) or 1),
                )
            )
    else:
        outcomes = [_predict_one(r, db, profiles, store) for r in records]
    rows = []
    reports = []
    failures = []
    for record, (report, msg) in zip(records, outcomes):
        if report is not None:
            reports.append(report)
            rows.append(report.to_obj())
        else:
            rows.append({"session_id": record.session_id, "error": "UnknownApplication"})
            failures.append(msg)
    out = _resolve(args, config, "out")
    if out and out.endswith(".csv"):
        os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(degrade.reports_to_csv(reports))
        print(f"wrote {out}", file=sys.stderr)
        if _resolve(args, config, "json"):
            sys.stdout.write(_dump({"results": rows}))
    else:
        _emit(args, config, {"results": rows})
    if not _resolve(args, config, "json"):
        for row in rows:
            if "error" in row:
                print(f"{row['session_id']}: {row['error']}")
            else:
                print(f"{row['session_id']}: {row['label']} deg={row['deg']:.3f}")
    if failures:
        print(f"UnknownApplication: {failures[0]}", file=sys.stderr)
        return 1
    return 0


def _cmd_evaluate(args, config) -> int:
    seed = int(_resolve(args, config, "seed"))
    if args.experiment == "ablation":
        records = _load_sessions(args, config)
        result = evaluate.run_ablation_dtw(
            records,
            [int(c) for c in args.ref_counts.split(",")],
            thresholds=_parse_threshold_dtw(args.threshold_dtw, config),
            seed=seed,
            min_test_sessions=args.min_test_sessions,
        )
    elif args.experiment == "tradeoff":
        cfg = simgen.ScenarioConfig(rng_seed=seed, session_duration_s=args.duration_s)
        result = evaluate.run_sampling_tradeoff(
            cfg,
            simgen.default_templates(),
            [float(h) for h in args.hours.split(",")],
            app=args.app,
        )
    elif args.experiment == "timing":
        models_dir = _resolve(args, config, "models")
        if not models_dir:
            raise ConfigInvalid("--models is required")
        store = degrade.ModelStore.load(models_dir)
        profiles = _load_profiles(args, config)
        records = _load_sessions(args, config)
        labeled = [r for r in records if r.app_label == args.app]
        if not labeled:
            raise ConfigInvalid(f"corpus has no sessions for app {args.app!r}")
        result = evaluate.run_timing(store, profiles, labeled[0], n_queries=args.queries)
        summary = result.to_obj(include_volatile=True)["summary"]
        print(
            f"median predict {summary['median_predict_us']:.1f} us, "
            f"degradation chain {summary['median_degradation_us']:.1f} us",
            file=sys.stderr,
        )
    elif args.experiment == "error-table":
        records = _load_sessions(args, config)
        models_dir = _resolve(args, config, "models")
        if not models_dir:
            raise ConfigInvalid("--models is required")
        store = degrade.ModelStore.load(models_dir)
        profiles = _load_profiles(args, config)
        templates = simgen.default_templates(amplitude_gain=args.amp_gain)
        truth = {
            r.session_id: simgen.ground_truth_degradation(r, templates)
            for r in records
            if r.app_label in templates
        }
        table = degrade.evaluate_degradation(records, profiles, store, truth)
        _emit(args, config, table.to_obj())
        if not _resolve(args, config, "json"):
            print(table.to_text())
        return 0
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigInvalid(f"unknown experiment {args.experiment!r}")
    _emit(args, config, result.to_obj())
    if not _resolve(args, config, "json"):
        print(result.to_csv(), end="")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vmsight",
        description="Identify black-box VM applications and predict their "
        "workload-aware performance degradation from host-side metric traces.",
        epilog=f"Defaults may come from a JSON config file named by ${CONFIG_ENV} "
        "or --config; explicit flags always win.",
    )
    parser.add_argument("--config", help="JSON config file (overrides the env var)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, corpus=True):
        if corpus:
            p.add_argument("--corpus", help="corpus file or directory")
            p.add_argument("--format", choices=["jsonl", "csv"], default=None)
        p.add_argument("--out", help="write JSON output to this path")
        p.add_argument("--json", action="store_const", const=True, default=None,
                       help="print machine-readable JSON on stdout")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("simulate", help="generate a synthetic colocated-VM corpus")
    p.add_argument("--out", help="corpus file (jsonl) or directory (csv) to write")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--format", choices=["jsonl", "csv"], default=None)
    p.add_argument("--sessions", type=int, default=100)
    p.add_argument("--n-vms", type=int, default=5)
    p.add_argument("--duration-s", type=float, default=300.0)
    p.add_argument("--period-s", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--perf-noise", type=float, default=0.01)
    p.add_argument("--amp-gain", type=float, default=1.0,
                   help="rescale metric amplitudes (a 'new server' analogue)")
    p.add_argument("--isolated", type=int, default=0,
                   help="append N interference-free sessions per app")
    p.add_argument("--outsider", type=int, default=0,
                   help="append N sessions of an unfingerprinted application")
    p.add_argument("--profiles-out", help="also write matching app profiles JSON")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fingerprint", help="build a fingerprint database")
    common(p)
    p.add_argument("--metrics", default=",".join(DEFAULT_FINGERPRINT_METRICS))
    p.add_argument("--refs-per-app", type=int, default=4)
    p.add_argument("--threshold", type=float, default=DEFAULT_DISTANCE_THRESHOLD)
    p.add_argument("--threshold-dtw", action="append", metavar="METRIC=VALUE")
    p.set_defaults(func=_cmd_fingerprint)

    p = sub.add_parser("identify", help="identify applications in black-box sessions")
    common(p)
    p.add_argument("--db", help="fingerprint database directory")
    p.add_argument("--align", choices=["dtw", "truncate"], default="dtw")
    p.add_argument("--znorm", action="store_true",
                   help="z-normalize traces before matching")
    p.add_argument("--min-trace-len", type=int, default=None, dest="min_trace_len")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=_cmd_identify)

    p = sub.add_parser("select-metrics", help="rank metrics by target correlation")
    common(p)
    p.add_argument("--app", required=True)
    p.add_argument("--target", choices=["performance", "workload"], default="performance")
    p.add_argument("--threshold-corr", type=float, default=None, dest="threshold_corr")
    p.add_argument("--reduce", choices=["mean", "max", "p95"], default="mean")
    p.set_defaults(func=_cmd_select_metrics)

    p = sub.add_parser("train", help="train per-application prediction nets")
    common(p)
    p.add_argument("--profiles", default=None, help="profiles JSON or 'builtin'")
    p.add_argument("--models", help="output directory for model files")
    p.add_argument("--apps", help="comma-separated subset of apps")
    p.add_argument("--hidden", default="8", help="hidden widths, e.g. 8 or 16,8")
    p.add_argument("--hidden-grid",
                   help="width grid for validation search, e.g. 4,8,16 or 8x8,16")
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--threshold-corr", type=float, default=None, dest="threshold_corr")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="predict performance degradation per session")
    common(p)
    p.add_argument("--db")
    p.add_argument("--models")
    p.add_argument("--profiles", default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="run a reproducible experiment")
    common(p)
    p.add_argument("--experiment", required=True,
                   choices=["ablation", "tradeoff", "timing", "error-table"])
    p.add_argument("--db")
    p.add_argument("--models")
    p.add_argument("--profiles", default=None)
    p.add_argument("--ref-counts", default="1,4", dest="ref_counts")
    p.add_argument("--threshold-dtw", action="append", metavar="METRIC=VALUE")
    p.add_argument("--min-test-sessions", type=int, default=100)
    p.add_argument("--hours", default="10,20,40,80")
    p.add_argument("--duration-s", type=float, default=300.0)
    p.add_argument("--queries", type=int, default=2000)
    p.add_argument("--app", default="data_serving")
    p.add_argument("--amp-gain", type=float, default=1.0)
    p.set_defaults(func=_cmd_evaluate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except VmsightError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entry()
