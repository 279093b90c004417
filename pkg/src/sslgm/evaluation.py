"""Precision-recall AUC, alert timeliness and the logistic-regression baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MetricUndefinedError
from .model import design, fit_softmax_regression


def _check_binary(labels) -> np.ndarray:
    y = np.asarray(labels).astype(int)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    if y.sum() == 0 or y.sum() == len(y):
        raise MetricUndefinedError("both classes are needed")
    return y


def pr_auc(scores, labels) -> float:
    """Area under the precision-recall curve, average-precision convention.

    Thresholds sweep the distinct scores in descending order; tied scores
    enter together. Each threshold adds ``(recall gain) * precision``.
    """
    s = np.asarray(scores, dtype=float)
    y = _check_binary(labels)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    n_pos = int(y.sum())
    ap = 0.0
    prev = 0.0
    for k in last:
        recall = int(tp[k]) / n_pos
        precision = int(tp[k]) / (int(tp[k]) + int(fp[k]))
        ap += (recall - prev) * precision
        prev = recall
    return ap


def macro_pr_auc(scores, labels) -> float:
    """Mean of PR-AUC for the positive class and, with negated scores, the negative class."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(int)
    return 0.5 * (pr_auc(s, y) + pr_auc(-s, 1 - y))


@dataclass
class Timeliness:
    mean_hours: float
    tpr: float
    ppv: float
    n_alerts: int
    lead_hours: list


def timeliness(risk_series, threshold: float, event_times, labels, step_hours=4.0) -> Timeliness:
    """Lead time of the first alert for each correctly alerted positive.

    ``risk_series[k][t - 1]`` is R(t) for t = 1..J_k; ``event_times[k]`` is the
    step at which the outcome happened. Alerts after the event are ignored.
    """
    y = np.asarray(labels).astype(int)
    hours = np.broadcast_to(np.asarray(step_hours, float), y.shape)
    alerts = np.zeros(len(y), dtype=bool)
    leads = []
    for k, series in enumerate(risk_series):
        r = np.asarray(series, dtype=float)
        hit = np.flatnonzero(r >= threshold)
        if hit.size == 0:
            continue
        t_alert = int(hit[0]) + 1
        if t_alert > event_times[k]:
            continue
        alerts[k] = True
        if y[k] == 1:
            leads.append((event_times[k] - t_alert) * float(hours[k]))
    tp = int(np.sum(alerts & (y == 1)))
    n_pos = int(y.sum())
    tpr = tp / n_pos if n_pos else float("nan")
    ppv = tp / int(alerts.sum()) if alerts.any() else float("nan")
    mean = float(np.mean(leads)) if leads else float("nan")
    return Timeliness(mean, tpr, ppv, int(alerts.sum()), leads)


def _rates(s, y, thr):
    pred = s >= thr
    tp = int(np.sum(pred & (y == 1)))
    tpr = tp / int(y.sum()) if y.sum() else float("nan")
    ppv = tp / int(pred.sum()) if pred.any() else float("nan")
    return tpr, ppv


def operating_point(summaries, labels, target: str, value: float) -> float:
    """Largest threshold whose TPR (or PPV) is at least ``value``."""
    if target not in ("tpr", "ppv"):
        raise ValueError("target must be 'tpr' or 'ppv'")
    s = np.asarray(summaries, dtype=float)
    y = np.asarray(labels).astype(int)
    achieved = []
    for thr in np.unique(s)[::-1]:
        tpr, ppv = _rates(s, y, thr)
        metric = tpr if target == "tpr" else ppv
        achieved.append(metric)
        if metric >= value:
            return float(thr)
    finite = [a for a in achieved if np.isfinite(a)]
    lo, hi = (min(finite), max(finite)) if finite else (float("nan"), float("nan"))
    raise MetricUndefinedError(f"{target}={value} is not achievable; achievable range [{lo:.4g}, {hi:.4g}]")


def summarize(series, how: str = "max", horizon: int | None = None) -> float:
    """Reduce a per-step risk series (t >= 1) to one episode score."""
    r = np.asarray(series, dtype=float)
    if how == "max":
        return float(r.max())
    if how == "last":
        return float(r[-1])
    if how == "horizon":
        return float(r[:horizon].max())
    raise ValueError(f"unknown summary {how!r}")


# --- logistic-regression baseline -------------------------------------------

def summary_features(Y) -> np.ndarray:
    """Per-channel mean, last value and least-squares slope."""
    Y = np.asarray(Y, dtype=float)
    J = len(Y)
    if J > 1:
        t = np.arange(J) - (J - 1) / 2
        slope = t @ (Y - Y.mean(0)) / (t @ t)
    else:
        slope = np.zeros(Y.shape[1])
    return np.concatenate([Y.mean(0), Y[-1], slope])


@dataclass
class LogisticBaseline:
    coef: np.ndarray
    mu: np.ndarray
    sd: np.ndarray

    @classmethod
    def fit(cls, X, y, l2: float = 1e-3) -> "LogisticBaseline":
        X = np.asarray(X, float)
        y = np.asarray(y).astype(int)
        mu, sd = X.mean(0), X.std(0)
        sd[sd == 0] = 1.0
        targets = np.column_stack([1 - y, y]).astype(float)
        return cls(fit_softmax_regression((X - mu) / sd, targets, l2), mu, sd)

    def predict(self, X) -> np.ndarray:
        Z = design((np.asarray(X, float) - self.mu) / self.sd) @ self.coef.T
        return 1.0 / (1.0 + np.exp(Z[:, 0] - Z[:, 1]))


def metrics_report(scores, labels, risk_series=None, event_times=None, step_hours=4.0,
                   tpr_targets=(0.5,), ppv_targets=()) -> dict:
    """JSON-ready metrics; undefined metrics are reported as None."""
    rep: dict = {"n": int(len(labels)), "n_positive": int(np.sum(labels))}
    try:
        rep["pr_auc_icu"] = pr_auc(scores, labels)
        rep["pr_auc_icu_discharge"] = macro_pr_auc(scores, labels)
    except MetricUndefinedError as exc:
        rep["pr_auc_icu"] = rep["pr_auc_icu_discharge"] = None
        rep["undefined"] = str(exc)
        return rep
    points = []
    for target, values in (("tpr", tpr_targets), ("ppv", ppv_targets)):
        for v in values:
            entry = {"target": target, "value": v}
            try:
                thr = operating_point(scores, labels, target, v)
                entry["threshold"] = thr
                if risk_series is not None:
                    tm = timeliness(risk_series, thr, event_times, labels, step_hours)
                    entry.update(tpr=tm.tpr, ppv=tm.ppv, mean_early_warning_hours=tm.mean_hours)
            except MetricUndefinedError as exc:
                entry["error"] = str(exc)
            points.append(entry)
    rep["operating_points"] = points
    return rep
