"""Rating-score features and a KNN detector for injected fake users.

Five per-user scalars summarize how far a user's scores sit from item-level
consensus (RDMA, WDA, WDMA, MeanVar) and how sharply their maximum-score
items diverge from the rest (FMTD).  A K-nearest-neighbor classifier over
z-scored features, with K picked by cross-validation on a labeled sample,
flags likely fakes; flagged users can then be excluded from the walk graph
before recommendations are recomputed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from sklearn.model_selection import StratifiedKFold, cross_val_score
from sklearn.neighbors import KNeighborsClassifier

from .ratings import ValidationError, item_stats, without_users
from .recommend import hit_ratio

FEATURE_NAMES = ("rdma", "wda", "wdma", "mean_var", "fmtd")


@dataclass(frozen=True)
class UserFeatures:
    rdma: float
    wda: float
    wdma: float
    mean_var: float
    fmtd: float

    def as_array(self):
        return np.array([self.rdma, self.wda, self.wdma, self.mean_var, self.fmtd])


def features(m, u):
    """The five rating-score features of one user.

    Item means and counts come from the full current matrix.  The maximum
    rating score partition for FMTD uses the scale maximum r_max; when a
    user has no r_max ratings (or nothing else), FMTD is 0.
    """
    items, scores = m.user_items(u)
    if len(items) == 0:
        raise ValidationError(f"user {u} has no ratings")
    stats = item_stats(m)
    dev = np.abs(scores - stats.mean[items])
    counts = stats.count[items].astype(np.float64)
    wda = float(np.sum(dev / counts))
    rdma = wda / len(items)
    wdma = float(np.sum(dev / counts ** 2)) / len(items)
    mean_var = float(np.sum((scores - stats.mean[items]) ** 2)) / len(items)
    at_max = scores == m.r_max
    if at_max.any() and (~at_max).any():
        fmtd = abs(float(scores[at_max].mean()) - float(scores[~at_max].mean()))
    else:
        fmtd = 0.0
    return UserFeatures(rdma=rdma, wda=wda, wdma=wdma, mean_var=mean_var, fmtd=fmtd)


def feature_matrix(m, users):
    """Feature rows for many users at once (vectorized)."""
    users = np.asarray(users, dtype=np.int64)
    stats = item_stats(m)
    out = np.zeros((len(users), len(FEATURE_NAMES)))
    for k, u in enumerate(users):
        items, scores = m.user_items(u)
        if len(items) == 0:
            raise ValidationError(f"user {u} has no ratings")
        dev = np.abs(scores - stats.mean[items])
        counts = stats.count[items].astype(np.float64)
        wda = float(np.sum(dev / counts))
        out[k, 0] = wda / len(items)
        out[k, 1] = wda
        out[k, 2] = float(np.sum(dev / counts ** 2)) / len(items)
        out[k, 3] = float(np.sum((scores - stats.mean[items]) ** 2)) / len(items)
        at_max = scores == m.r_max
        if at_max.any() and (~at_max).any():
            out[k, 4] = abs(float(scores[at_max].mean()) - float(scores[~at_max].mean()))
    return out


@dataclass
class DetectorModel:
    knn: KNeighborsClassifier
    k: int
    scale_mean: np.ndarray
    scale_std: np.ndarray
    cv_accuracy: float

    def standardize(self, x):
        return (x - self.scale_mean) / self.scale_std


@dataclass
class DetectionReport:
    users: np.ndarray
    predicted_fake: np.ndarray
    fpr: float
    fnr: float


def train_detector(m, normal_sample, fake_sample, seed, k_grid=None, folds=5):
    """Fit the KNN detector on labeled normal and fake users of matrix m.

    Features are z-scored with parameters fitted on the training rows only;
    K is chosen from an odd grid by stratified cross-validated accuracy,
    ties to the smaller K.  Zero-variance features keep unit scale.
    """
    normal_sample = np.asarray(normal_sample, dtype=np.int64)
    fake_sample = np.asarray(fake_sample, dtype=np.int64)
    if np.intersect1d(normal_sample, fake_sample).size:
        raise ValidationError("normal and fake training samples overlap")
    x = feature_matrix(m, np.concatenate([normal_sample, fake_sample]))
    y = np.concatenate([np.zeros(len(normal_sample), dtype=int),
                        np.ones(len(fake_sample), dtype=int)])
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    xz = (x - mean) / std

    if k_grid is None:
        k_grid = range(1, 20, 2)
    best_k, best_acc = None, -1.0
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    for k in k_grid:
        if k >= len(y):
            break
        knn = KNeighborsClassifier(n_neighbors=k)
        acc = float(cross_val_score(knn, xz, y, cv=splitter).mean())
        if acc > best_acc:
            best_k, best_acc = k, acc
    knn = KNeighborsClassifier(n_neighbors=best_k)
    knn.fit(xz, y)
    return DetectorModel(knn=knn, k=best_k, scale_mean=mean, scale_std=std,
                         cv_accuracy=best_acc)


def detect(model, m, users):
    """Classify users of m; FPR/FNR against the matrix's fake partition.

    An empty user set yields a report with NaN rates.
    """
    users = np.asarray(users, dtype=np.int64)
    if len(users) == 0:
        return DetectionReport(users=users, predicted_fake=np.zeros(0, dtype=bool),
                               fpr=float("nan"), fnr=float("nan"))
    x = model.standardize(feature_matrix(m, users))
    pred = model.knn.predict(x).astype(bool)
    truth = users >= m.num_normal
    normals = ~truth
    fpr = float(pred[normals].sum() / normals.sum()) if normals.any() else float("nan")
    fnr = float((~pred[truth]).sum() / truth.sum()) if truth.any() else float("nan")
    return DetectionReport(users=users, predicted_fake=pred, fpr=fpr, fnr=fnr)


def filtered_hit_ratio(m, report, t, n, alpha, **solver_kw):
    """Hit ratio after the predicted fakes are excluded from the graph.

    False-positive normal users are removed as well and no longer count in
    the denominator; features of the survivors are irrelevant here because
    the graph is rebuilt from the filtered matrix.
    """
    dropped = report.users[report.predicted_fake]
    filtered = without_users(m, dropped)
    # target index is unchanged: the item set is preserved by the filter
    return hit_ratio(filtered, t, n, alpha, **solver_kw)


def save_report(report, path, fmt="csv"):
    """Write per-user predictions for audit as CSV or JSON."""
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["user", "predicted_fake"])
            for u, p in zip(report.users, report.predicted_fake):
                writer.writerow([int(u), int(p)])
    elif fmt == "json":
        payload = {
            "fpr": None if np.isnan(report.fpr) else report.fpr,
            "fnr": None if np.isnan(report.fnr) else report.fnr,
            "predictions": {int(u): bool(p) for u, p in
                            zip(report.users, report.predicted_fake)},
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
    else:
        raise ValueError(f"unknown format {fmt!r}")
