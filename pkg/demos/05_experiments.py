#!/usr/bin/env python3
"""Run the bundled experiment harness at desk scale.

Three studies: the warping ablation (identification accuracy with and
without DTW as references grow), the corpus-size/accuracy trade-off, and
the inference latency microbenchmark.
"""

from vmsight import (
    ScenarioConfig,
    default_templates,
    fit_models_for_corpus,
    generate,
    generate_isolated,
    profiles_for_templates,
    run_ablation_dtw,
    run_sampling_tradeoff,
    run_timing,
)
from vmsight.neural import TrainConfig

templates = default_templates()
profiles = profiles_for_templates(templates)

print("=== warping ablation ===")
corpus = generate(ScenarioConfig(session_duration_s=180.0, rng_seed=21), templates, 160)
result = run_ablation_dtw(corpus, [1, 2, 4], min_test_sessions=100)
for count, dtw, trunc in zip(
    result.series["ref_count"],
    result.series["accuracy_dtw"],
    result.series["accuracy_truncate"],
):
    print(f"  {count} refs/app: with DTW {dtw:.3f}   without {trunc:.3f}")

print("\n=== sampling-time trade-off (data_serving) ===")
result = run_sampling_tradeoff(
    ScenarioConfig(rng_seed=3),
    templates,
    [10, 20, 40, 80],
    train_cfg=TrainConfig(max_epochs=120),
)
for hours, n, err in zip(
    result.series["hours"], result.series["sessions"], result.series["test_mean_pct"]
):
    print(f"  {hours:>5.0f} VM-hours ({n:>4} sessions): test error {err:.2f}%")

print("\n=== inference latency ===")
cfg = ScenarioConfig(session_duration_s=120.0, rng_seed=9)
train_corpus = generate(cfg, templates, 400) + generate_isolated(cfg, templates, 30)
store = fit_models_for_corpus(train_corpus, profiles, cfg=TrainConfig(max_epochs=120))
sample = next(r for r in train_corpus if r.app_label == "data_serving")
result = run_timing(store, profiles, sample, n_queries=3000)
summary = result.to_obj(include_volatile=True)["summary"]
print(f"  performance net forward pass: {summary['median_predict_us']:.1f} us median")
print(f"  full degradation chain:       {summary['median_degradation_us']:.1f} us median")
print(f"  within 1 ms bound: {summary['bound_met']}")
