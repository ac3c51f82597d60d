#!/usr/bin/env python3
"""Identify which application runs inside black-box sessions.

Builds a fingerprint database from a few labeled sessions per application,
then matches fresh unlabeled sessions against it with dynamic time warping.
Also shows threshold rejection on an application the database has never
seen, and what happens when warping is turned off.
"""

import numpy as np

from vmsight import (
    ScenarioConfig,
    UNKNOWN,
    build_fingerprint_db,
    default_templates,
    generate,
    identify,
    outsider_template,
    render_session,
)
from vmsight.tracemodel import CPU_UTIL

templates = default_templates()
cfg = ScenarioConfig(session_duration_s=180.0, rng_seed=3)

labeled = generate(cfg, templates, 120)
db = build_fingerprint_db(labeled, [CPU_UTIL], n_refs_per_app=4)
print(f"fingerprint database: {len(db.entries)} entries, apps {db.labels()}")
print(f"rejection threshold: {db.threshold_for(CPU_UTIL):g} on cpu_util_pct\n")

fresh = generate(ScenarioConfig(session_duration_s=180.0, rng_seed=99), templates, 40)
for align in ("dtw", "truncate"):
    correct = 0
    for record in fresh:
        result = identify(record.traces, db, align=align)
        correct += result.label == record.app_label
    tag = "with DTW" if align == "dtw" else "no DTW (truncate)"
    print(f"accuracy {tag:<18}: {correct}/{len(fresh)}")

# the sixth application: present in the datacenter, absent from the database
outsider = outsider_template()
rng = np.random.default_rng(1)
print("\nunfingerprinted application:")
for i in range(5):
    record = render_session(outsider, cfg, f"mystery{i}", None, float(rng.uniform(0, 0.8)), rng)
    result = identify(record.traces, db)
    label, distance = result.per_metric[CPU_UTIL]
    print(f"  {record.session_id}: {result.label:<8} (nearest distance {distance:.0f})")
assert result.label == UNKNOWN
