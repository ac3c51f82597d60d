"""Small feedforward regressors trained by Levenberg-Marquardt backprop.

Three model purposes exist: predicting an application's performance level,
predicting its workload level (both from selected hardware metrics), and
predicting the interference-free performance baseline from the workload
level alone.  Inputs and outputs are z-normalized from the training split;
hidden layers use tanh, the output is affine.
"""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigInvalid,
    DimensionMismatch,
    Diverged,
    InsufficientData,
    IoError,
    NonFiniteInput,
    ParseError,
)
from .select import CorrelationReport, Target, trace_summary
from .tracemodel import MetricKind, SessionRecord

LAMBDA_CAP = 1e12
REL_ERR_FLOOR = 1e-9
_GRAD_TOL = 1e-12


class Purpose(enum.Enum):
    PERFORMANCE = "performance"
    WORKLOAD = "workload"
    BASELINE = "baseline"


@dataclass(frozen=True)
class TrainConfig:
    hidden_sizes: tuple[int, ...] = (8,)
    max_epochs: int = 200
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 0.1
    early_stop_patience: int = 25
    split: tuple[float, float, float] = (0.70, 0.15, 0.15)
    rng_seed: int = 0

    def __post_init__(self):
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigInvalid("hidden sizes must be positive")
        if self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ConfigInvalid("max_epochs and early_stop_patience must be positive")
        if min(self.lambda0, self.lambda_up, self.lambda_down) <= 0:
            raise ConfigInvalid("damping parameters must be positive")
        if any(f <= 0 for f in self.split) or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigInvalid("split fractions must be positive and sum to 1")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))


@dataclass(frozen=True)
class FitReport:
    purpose: Purpose
    errors: dict[str, dict[str, float]]  # split -> {mean,max,std} of relative error (%)
    epochs_run: int
    final_lambda: float
    split_ids: dict[str, tuple[str, ...]]

    def to_obj(self) -> dict:
        return {
            "purpose": self.purpose.value,
            "errors": {s: dict(v) for s, v in sorted(self.errors.items())},
            "epochs_run": self.epochs_run,
            "final_lambda": self.final_lambda,
            "split_ids": {s: list(v) for s, v in sorted(self.split_ids.items())},
        }


@dataclass(frozen=True)
class MlpModel:
    """Feedforward regressor: tanh hidden layers, identity output."""

    purpose: Purpose
    input_metrics: tuple[MetricKind, ...]  # empty for BASELINE (input is the workload)
    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    input_norm: tuple[np.ndarray, np.ndarray]  # per-dimension (mean, std)
    output_norm: tuple[float, float]
    rng_seed: int = 0
    reduce: str = "mean"

    def __post_init__(self):
        layers = []
        width = self.input_dim
        for w, b in self.layers:
            w = np.asarray(w, dtype=float)
            b = np.asarray(b, dtype=float)
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0] or w.shape[1] != width:
                raise ValueError(f"layer shape {w.shape}/{b.shape} breaks the chain at {width}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("layer parameters must be finite")
            w = w.copy()
            b = b.copy()
            w.flags.writeable = False
            b.flags.writeable = False
            layers.append((w, b))
            width = w.shape[0]
        if width != 1:
            raise ValueError("output layer must produce one value")
        mean, std = (np.asarray(v, dtype=float) for v in self.input_norm)
        if mean.shape != (self.input_dim,) or std.shape != (self.input_dim,):
            raise ValueError("input_norm needs one (mean, std) pair per input dimension")
        if np.any(std <= 0):
            raise ValueError("input_norm std must be positive")
        if not (self.output_norm[1] > 0):
            raise ValueError("output_norm std must be positive")
        object.__setattr__(self, "layers", tuple(layers))
        object.__setattr__(self, "input_norm", (mean, std))
        object.__setattr__(
            self, "output_norm", (float(self.output_norm[0]), float(self.output_norm[1]))
        )
        object.__setattr__(self, "input_metrics", tuple(self.input_metrics))

    @property
    def input_dim(self) -> int:
        return max(1, len(self.input_metrics))

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)


def _forward_norm(layers, x_norm: np.ndarray) -> np.ndarray:
    """Forward pass on normalized inputs (n, d) -> normalized outputs (n,)."""
    a = x_norm.T
    for i, (w, b) in enumerate(layers):
        z = w @ a + b[:, None]
        a = z if i == len(layers) - 1 else np.tanh(z)
    return a[0]


def predict(model: MlpModel, x: Sequence[float]) -> float:
    """Normalize -> forward pass -> denormalize.  Pure and deterministic."""
    xv = np.asarray(x, dtype=float)
    if xv.ndim != 1 or xv.shape[0] != model.input_dim:
        raise DimensionMismatch(f"expected {model.input_dim} inputs, got shape {xv.shape}")
    if not np.all(np.isfinite(xv)):
        raise NonFiniteInput("input contains non-finite values")
    mean, std = model.input_norm
    y = _forward_norm(model.layers, ((xv - mean) / std)[None, :])[0]
    mu, sigma = model.output_norm
    return float(y * sigma + mu)


def predict_batch(model: MlpModel, x: np.ndarray) -> np.ndarray:
    xv = np.asarray(x, dtype=float)
    if xv.ndim != 2 or xv.shape[1] != model.input_dim:
        raise DimensionMismatch(f"expected (n, {model.input_dim}) inputs, got {xv.shape}")
    if not np.all(np.isfinite(xv)):
        raise NonFiniteInput("input contains non-finite values")
    mean, std = model.input_norm
    mu, sigma = model.output_norm
    return _forward_norm(model.layers, (xv - mean) / std) * sigma + mu


# ---------------------------------------------------------------------------
# Levenberg-Marquardt machinery
# ---------------------------------------------------------------------------


def _init_layers(rng: np.random.Generator, dims: Sequence[int]):
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        b = rng.uniform(-bound, bound, size=fan_out)
        layers.append((w, b))
    return layers


def _pack(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in layers])


def _unpack(theta: np.ndarray, dims: Sequence[int]):
    layers = []
    pos = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = theta[pos : pos + fan_out * fan_in].reshape(fan_out, fan_in)
        pos += fan_out * fan_in
        b = theta[pos : pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def _residuals_and_jacobian(theta, dims, x_norm, y_norm):
    """Residuals r = yhat - y and the Jacobian dr/dtheta, both on the
    normalized scale.  One backprop pass per layer, vectorized over samples."""
    layers = _unpack(theta, dims)
    n = x_norm.shape[0]
    acts = [x_norm.T]
    zs = []
    a = acts[0]
    for i, (w, b) in enumerate(layers):
        z = w @ a + b[:, None]
        zs.append(z)
        a = z if i == len(layers) - 1 else np.tanh(z)
        acts.append(a)
    residuals = acts[-1][0] - y_norm

    jac = np.empty((n, theta.shape[0]))
    delta = np.ones((1, n))
    pos = theta.shape[0]
    for i in range(len(layers) - 1, -1, -1):
        w, b = layers[i]
        fan_out, fan_in = w.shape
        pos -= fan_out
        jac[:, pos : pos + fan_out] = delta.T
        pos -= fan_out * fan_in
        # d yhat / d W[o, j] = delta[o] * a_prev[j]
        jac[:, pos : pos + fan_out * fan_in] = (
            delta.T[:, :, None] * acts[i].T[:, None, :]
        ).reshape(n, fan_out * fan_in)
        if i > 0:
            delta = (w.T @ delta) * (1.0 - acts[i] ** 2)
    return residuals, jac


def _sse(theta, dims, x_norm, y_norm) -> float:
    layers = _unpack(theta, dims)
    r = _forward_norm(layers, x_norm) - y_norm
    return float(r @ r)


def split_sessions(
    session_ids: Sequence[str], split: tuple[float, float, float], rng_seed: int
) -> dict[str, tuple[str, ...]]:
    """Seeded shuffle of session ids into disjoint train/val/test parts."""
    ids = sorted(session_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("session ids must be unique")
    rng = np.random.default_rng(rng_seed)
    perm = rng.permutation(len(ids))
    shuffled = [ids[i] for i in perm]
    n = len(ids)
    n_train = int(round(split[0] * n))
    n_val = int(round(split[1] * n))
    n_train = min(n_train, n - 2)
    n_val = max(1, min(n_val, n - n_train - 1))
    return {
        "train": tuple(shuffled[:n_train]),
        "val": tuple(shuffled[n_train : n_train + n_val]),
        "test": tuple(shuffled[n_train + n_val :]),
    }


def _rel_errors(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    return np.abs(pred - truth) / np.maximum(np.abs(truth), REL_ERR_FLOOR)


def _error_stats(pred: np.ndarray, truth: np.ndarray) -> dict[str, float]:
    errs = _rel_errors(pred, truth) * 100.0
    return {"mean": float(np.mean(errs)), "max": float(np.max(errs)), "std": float(np.std(errs))}


def features_from_traces(
    traces, metrics: Sequence[MetricKind], reduce: str = "mean", where: str = "<session>"
) -> list[float]:
    missing = [k.name for k in metrics if k not in traces]
    if missing:
        raise DimensionMismatch(f"{where} lacks metrics {missing}")
    return [trace_summary(traces[k], reduce) for k in metrics]


def features_for(
    record: SessionRecord, metrics: Sequence[MetricKind], reduce: str = "mean"
) -> list[float]:
    return features_from_traces(record.traces, metrics, reduce, f"session {record.session_id}")


def _design_matrix(records, purpose, input_metrics, reduce):
    xs, ys = [], []
    for r in records:
        if purpose is Purpose.BASELINE:
            if r.workload_level is None or r.performance is None:
                raise InsufficientData(
                    f"session {r.session_id} lacks workload/performance for baseline training"
                )
            xs.append([float(r.workload_level)])
            ys.append(float(r.performance))
        else:
            target = r.performance if purpose is Purpose.PERFORMANCE else r.workload_level
            if target is None:
                raise InsufficientData(
                    f"session {r.session_id} lacks a {purpose.value} target"
                )
            xs.append(features_for(r, input_metrics, reduce))
            ys.append(float(target))
    return np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)


def train(
    records: Sequence[SessionRecord],
    purpose: Purpose,
    selected_metrics: Optional[CorrelationReport] = None,
    cfg: TrainConfig = TrainConfig(),
) -> tuple[MlpModel, FitReport]:
    """Fit one regressor with Levenberg-Marquardt updates on the MSE.

    Updates solve (J'J + lambda*I) delta = J'r; lambda shrinks by
    lambda_down on accepted steps and grows by lambda_up on rejections.
    Training stops at max_epochs or after early_stop_patience epochs without
    validation improvement, and the best-validation weights are returned.
    Deterministic given cfg.rng_seed.
    """
    records = list(records)
    if len(records) < 20:
        raise InsufficientData(f"need >= 20 records, got {len(records)}")
    if purpose is Purpose.BASELINE:
        input_metrics: tuple[MetricKind, ...] = ()
        reduce = "mean"
    else:
        if selected_metrics is None or not selected_metrics.selected:
            raise InsufficientData("no selected metrics to use as regression inputs")
        expected = Target.PERFORMANCE if purpose is Purpose.PERFORMANCE else Target.WORKLOAD
        if selected_metrics.target is not expected:
            raise ConfigInvalid(
                f"selection targeted {selected_metrics.target.value}, training {purpose.value}"
            )
        input_metrics = tuple(selected_metrics.selected)
        reduce = selected_metrics.reduce

    splits = split_sessions([r.session_id for r in records], cfg.split, cfg.rng_seed)
    by_id = {r.session_id: r for r in records}
    parts = {
        name: _design_matrix([by_id[sid] for sid in ids], purpose, input_metrics, reduce)
        for name, ids in splits.items()
    }
    x_train, y_train = parts["train"]

    in_mean = np.mean(x_train, axis=0)
    in_std = np.std(x_train, axis=0)
    in_std[in_std == 0.0] = 1.0  # constant feature: carries no signal, maps to 0
    out_mean = float(np.mean(y_train))
    out_std = float(np.std(y_train))

    dims = [x_train.shape[1], *cfg.hidden_sizes, 1]

    if out_std == 0.0:
        # constant target: the normalized problem is y == 0, solved exactly
        # by a zero output layer; output_norm maps it back to the constant
        rng = np.random.default_rng(cfg.rng_seed)
        layers = _init_layers(rng, dims)
        w_last, b_last = layers[-1]
        layers[-1] = (np.zeros_like(w_last), np.zeros_like(b_last))
        model = MlpModel(
            purpose=purpose,
            input_metrics=input_metrics,
            layers=tuple((w, b) for w, b in layers),
            input_norm=(in_mean, in_std),
            output_norm=(out_mean, 1.0),
            rng_seed=cfg.rng_seed,
            reduce=reduce,
        )
        report = _build_report(model, parts, purpose, splits, 0, cfg.lambda0)
        return model, report

    def norm_x(x):
        return (x - in_mean) / in_std

    def norm_y(y):
        return (y - out_mean) / out_std

    xt, yt = norm_x(x_train), norm_y(y_train)
    x_val, y_val = parts["val"]
    xv = norm_x(x_val)

    rng = np.random.default_rng(cfg.rng_seed)
    theta = _pack(_init_layers(rng, dims))
    lam = cfg.lambda0
    sse = _sse(theta, dims, xt, yt)
    eye = np.eye(theta.shape[0])

    def val_error(th) -> float:
        pred = _forward_norm(_unpack(th, dims), xv) * out_std + out_mean
        return float(np.mean(_rel_errors(pred, y_val)))

    best_theta = theta.copy()
    best_val = val_error(theta)
    patience = cfg.early_stop_patience
    accepted_ever = False
    epochs_run = 0

    for _ in range(cfg.max_epochs):
        r, jac = _residuals_and_jacobian(theta, dims, xt, yt)
        grad = jac.T @ r
        if float(np.max(np.abs(grad))) < _GRAD_TOL:
            break
        hess = jac.T @ jac
        accepted = False
        while lam <= LAMBDA_CAP:
            try:
                delta = np.linalg.solve(hess + lam * eye, grad)
            except np.linalg.LinAlgError:
                lam *= cfg.lambda_up
                continue
            candidate = theta - delta
            sse_new = _sse(candidate, dims, xt, yt)
            if math.isfinite(sse_new) and sse_new < sse:
                theta = candidate
                sse = sse_new
                lam = max(lam * cfg.lambda_down, 1e-12)
                accepted = True
                accepted_ever = True
                break
            lam *= cfg.lambda_up
        if not accepted:
            if not accepted_ever:
                raise Diverged(f"damping exceeded {LAMBDA_CAP:g} without an accepted step")
            break
        epochs_run += 1
        v = val_error(theta)
        if v < best_val - 1e-12:
            best_val = v
            best_theta = theta.copy()
            patience = cfg.early_stop_patience
        else:
            patience -= 1
            if patience == 0:
                break

    model = MlpModel(
        purpose=purpose,
        input_metrics=input_metrics,
        layers=tuple((w.copy(), b.copy()) for w, b in _unpack(best_theta, dims)),
        input_norm=(in_mean, in_std),
        output_norm=(out_mean, out_std),
        rng_seed=cfg.rng_seed,
        reduce=reduce,
    )
    report = _build_report(model, parts, purpose, splits, epochs_run, lam)
    return model, report


def _build_report(model, parts, purpose, splits, epochs_run, final_lambda) -> FitReport:
    errors = {}
    for name in ("train", "val", "test"):
        x, y = parts[name]
        errors[name] = _error_stats(predict_batch(model, x), y)
    return FitReport(
        purpose=purpose,
        errors=errors,
        epochs_run=epochs_run,
        final_lambda=float(final_lambda),
        split_ids={k: tuple(v) for k, v in splits.items()},
    )


def hyper_search(
    records: Sequence[SessionRecord],
    purpose: Purpose,
    cfg_grid: Sequence[TrainConfig],
    selected_metrics: Optional[CorrelationReport] = None,
) -> tuple[MlpModel, FitReport]:
    """Train one model per config and keep the best validation error.

    Ties are broken toward the model with fewer parameters.
    """
    grid = list(cfg_grid)
    if not grid:
        raise ConfigInvalid("hyperparameter grid is empty")
    best = None
    for cfg in grid:
        model, report = train(records, purpose, selected_metrics, cfg)
        key = (report.errors["val"]["mean"], model.parameter_count())
        if best is None or key < best[0]:
            best = (key, model, report)
    return best[1], best[2]


# ---------------------------------------------------------------------------
# Model files: JSON, bit-stable across save/load
# ---------------------------------------------------------------------------


def model_to_obj(model: MlpModel, report: Optional[FitReport] = None) -> dict:
    return {
        "purpose": model.purpose.value,
        "input_metrics": [
            {"name": k.name, "category": k.category.value} for k in model.input_metrics
        ],
        "layers": [
            {"shape": list(w.shape), "weights": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in model.layers
        ],
        "activation": "tanh",
        "input_norm": {
            "mean": model.input_norm[0].tolist(),
            "std": model.input_norm[1].tolist(),
        },
        "output_norm": {"mean": model.output_norm[0], "std": model.output_norm[1]},
        "rng_seed": model.rng_seed,
        "reduce": model.reduce,
        "fit_report": None if report is None else report.to_obj(),
    }


def model_from_obj(obj: dict) -> tuple[MlpModel, Optional[FitReport]]:
    from .tracemodel import Category, MetricKind as MK

    metrics = tuple(
        MK(m["name"], Category(m["category"])) for m in obj["input_metrics"]
    )
    layers = tuple(
        (
            np.asarray(l["weights"], dtype=float).reshape(l["shape"]),
            np.asarray(l["bias"], dtype=float),
        )
        for l in obj["layers"]
    )
    model = MlpModel(
        purpose=Purpose(obj["purpose"]),
        input_metrics=metrics,
        layers=layers,
        input_norm=(
            np.asarray(obj["input_norm"]["mean"], dtype=float),
            np.asarray(obj["input_norm"]["std"], dtype=float),
        ),
        output_norm=(obj["output_norm"]["mean"], obj["output_norm"]["std"]),
        rng_seed=int(obj["rng_seed"]),
        reduce=obj.get("reduce", "mean"),
    )
    report = None
    if obj.get("fit_report"):
        fr = obj["fit_report"]
        report = FitReport(
            purpose=Purpose(fr["purpose"]),
            errors={k: dict(v) for k, v in fr["errors"].items()},
            epochs_run=int(fr["epochs_run"]),
            final_lambda=float(fr["final_lambda"]),
            split_ids={k: tuple(v) for k, v in fr["split_ids"].items()},
        )
    return model, report


def save_model(model: MlpModel, path: str, report: Optional[FitReport] = None) -> None:
    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(model_to_obj(model, report), sort_keys=True, indent=2))
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write model to {path}: {exc}") from exc


def load_model(path: str) -> tuple[MlpModel, Optional[FitReport]]:
    if not os.path.exists(path):
        raise IoError(f"no model file at {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{os.path.basename(path)}: invalid JSON ({exc.msg})") from exc
    return model_from_obj(obj)
