"""Experiment protocol: stratified CV, online next-attempt prediction,
RMSE/MAE metrics, the constant-average baseline, and grid search.

Per fold, the model is trained on the training students' full records.
Each held-out student's graded-attempt sequence is split in half: the
model folds in the student on the first half, then walks the second half
attempt by attempt, predicting each graded record before revealing it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, split_prefix_suffix, split_student_stratified
from .errors import ConfigError
from .model import HyperParams, predict_graded_clipped
from .train import fit, fold_in, online_update

METHODS = ("full", "base", "no_penalty", "avg")


def metrics(pred, actual):
    """Root mean squared error and mean absolute error."""
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.size == 0 or pred.shape != actual.shape:
        raise ConfigError("metrics needs equal nonempty prediction/actual lists")
    diff = pred - actual
    return float(np.sqrt(np.mean(diff**2))), float(np.mean(np.abs(diff)))


class AvgBaseline:
    """Predicts the mean graded training score for every query."""

    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, *_args, **_kwargs) -> float:
        return self.value


def avg_baseline(train_records, graded_views) -> AvgBaseline:
    graded_views = set(graded_views)
    values = [r.value for r in train_records if r.view in graded_views]
    if not values:
        raise ConfigError("no graded records to average")
    return AvgBaseline(float(np.mean(values)))


@dataclass
class EvalReport:
    method: str
    hyperparams: dict
    folds: list = field(default_factory=list)  # per-fold {"rmse","mae","n"}
    rmse_mean: float = 0.0
    rmse_var: float = 0.0
    mae_mean: float = 0.0
    mae_var: float = 0.0
    per_attempt: dict = field(default_factory=dict)  # attempt -> mean abs error

    def finalize(self):
        rmses = [f["rmse"] for f in self.folds]
        maes = [f["mae"] for f in self.folds]
        self.rmse_mean = float(np.mean(rmses))
        self.rmse_var = float(np.var(rmses))
        self.mae_mean = float(np.mean(maes))
        self.mae_var = float(np.var(maes))
        return self

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "hyperparams": self.hyperparams,
            "folds": self.folds,
            "rmse_mean": self.rmse_mean,
            "rmse_var": self.rmse_var,
            "mae_mean": self.mae_mean,
            "mae_var": self.mae_var,
            "per_attempt": {str(k): v for k, v in sorted(self.per_attempt.items())},
        }


def _target_view(ds: Dataset, target_view=None) -> int:
    if target_view is not None:
        return target_view
    graded = ds.graded_view_ids()
    if not graded:
        raise ConfigError("dataset has no graded view")
    return graded[0]


def _walk_students(
    ds, params, hp, ablation, test_students, target_view, fraction, access_log
):
    """Fold in test students, then predict their suffix graded records online.

    Returns (preds, actuals, per-attempt abs-error pairs).
    """
    prefixes = []
    suffixes = {}
    for student in test_students:
        try:
            prefix, suffix = split_prefix_suffix(ds, int(student), target_view, fraction)
        except ConfigError:
            continue  # student has no graded records; nothing to score
        prefixes.extend(prefix)
        suffixes[int(student)] = suffix
    folded = fold_in(params, prefixes, hp, ds, ablation=ablation)
    preds, actuals, attempt_pairs = [], [], []
    for student in sorted(suffixes):
        for rec in sorted(suffixes[student], key=lambda r: r.attempt):
            key = (rec.student, rec.attempt)
            if rec.view == target_view:
                pred = predict_graded_clipped(
                    folded, rec.student, rec.attempt, rec.material, rec.view
                )
                if access_log is not None:
                    access_log.append(("predict", key))
                preds.append(pred)
                actuals.append(rec.value)
                attempt_pairs.append((rec.attempt, abs(pred - rec.value)))
            if access_log is not None:
                access_log.append(("reveal", key))
            if ablation == "base" and not ds.view(rec.view).graded:
                continue
            online_update(folded, rec, hp, ds)
    return preds, actuals, attempt_pairs


def _walk_students_avg(ds, baseline, test_students, target_view, fraction, access_log):
    preds, actuals, attempt_pairs = [], [], []
    for student in sorted(int(s) for s in test_students):
        try:
            _, suffix = split_prefix_suffix(ds, student, target_view, fraction)
        except ConfigError:
            continue
        for rec in sorted(suffix, key=lambda r: r.attempt):
            if rec.view != target_view:
                continue
            pred = baseline(rec.student, rec.attempt, rec.material, rec.view)
            if access_log is not None:
                access_log.append(("predict", (rec.student, rec.attempt)))
                access_log.append(("reveal", (rec.student, rec.attempt)))
            preds.append(pred)
            actuals.append(rec.value)
            attempt_pairs.append((rec.attempt, abs(pred - rec.value)))
    return preds, actuals, attempt_pairs


def evaluate_online(
    ds: Dataset,
    hp: HyperParams,
    ablation: str = "full",
    folds: int = 5,
    seed: int = 0,
    fraction: float = 0.5,
    target_view=None,
    access_log=None,
) -> EvalReport:
    """Student-stratified CV with online next-attempt prediction."""
    if ablation not in METHODS:
        raise ConfigError(f"unknown method {ablation!r}")
    target = _target_view(ds, target_view)
    report = EvalReport(method=ablation, hyperparams=_hp_dict(hp))
    attempt_errs: dict[int, list[float]] = {}
    for train, test in split_student_stratified(ds, folds, seed):
        train_ds = ds.subset_students(train)
        if ablation == "avg":
            baseline = avg_baseline(train_ds.records, ds.graded_view_ids())
            preds, actuals, pairs = _walk_students_avg(
                ds, baseline, test, target, fraction, access_log
            )
        else:
            params, _ = fit(train_ds, hp, ablation=ablation)
            preds, actuals, pairs = _walk_students(
                ds, params, hp, ablation, test, target, fraction, access_log
            )
        rmse, mae = metrics(preds, actuals)
        report.folds.append({"rmse": rmse, "mae": mae, "n": len(preds)})
        for a, e in pairs:
            attempt_errs.setdefault(a, []).append(e)
    report.per_attempt = {a: float(np.mean(v)) for a, v in attempt_errs.items()}
    return report.finalize()


def grid_search(
    ds: Dataset,
    grid: dict,
    folds: int = 5,
    seed: int = 0,
    base_hp: HyperParams | None = None,
    ablation: str = "full",
    validation_fraction: float = 0.2,
    fraction: float = 0.5,
):
    """Exhaustive grid evaluation on a held-out validation student split.

    ``grid`` maps HyperParams field names to candidate value lists.
    Returns (best HyperParams, table of {hyperparams, rmse, mae}).
    """
    if not grid:
        raise ConfigError("empty grid")
    base_hp = base_hp if base_hp is not None else HyperParams()
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.num_students)
    n_val = max(1, int(round(validation_fraction * ds.num_students)))
    val_students = np.sort(order[:n_val])
    train_ds = ds.subset_students(order[n_val:])
    target = _target_view(ds)
    keys = sorted(grid)
    table = []
    best = None
    for combo in itertools.product(*(grid[k] for k in keys)):
        hp = replace(base_hp, **dict(zip(keys, combo)))
        params, _ = fit(train_ds, hp, ablation=ablation)
        preds, actuals, _ = _walk_students(
            ds, params, hp, ablation, val_students, target, fraction, None
        )
        rmse, mae = metrics(preds, actuals)
        row = {"hyperparams": _hp_dict(hp), "rmse": rmse, "mae": mae}
        table.append(row)
        if best is None or rmse < best[0]:
            best = (rmse, hp)
    return best[1], table


def _hp_dict(hp: HyperParams) -> dict:
    d = dict(hp.__dict__)
    d["gamma"] = {str(k): v for k, v in hp.gamma.items()}
    return d
