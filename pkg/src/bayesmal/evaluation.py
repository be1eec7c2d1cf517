"""Detection ROC/AUC, clean classification metrics, particle diversity, drift."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.special import rel_entr

from .data import Dataset
from .errors import DataError
from .inference import Posterior, predict_proba
from .uncertainty import LN2, UncertaintyScores, score_dataset

SCORE_NAMES = ("pe", "mi", "pred_prob")


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float
    score_name: str = ""

    @property
    def points(self) -> list:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fpr", "tpr"])
        for f, t in zip(self.fpr, self.tpr):
            w.writerow([repr(float(f)), repr(float(t))])
        return buf.getvalue()


def roc_auc(neg_scores, pos_scores, score_name="") -> RocCurve:
    """ROC by threshold sweep over the distinct scores (higher = more positive).

    Tied scores move the curve diagonally, so the trapezoidal area equals the
    Mann-Whitney statistic with half credit for ties.
    """
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    if neg.size == 0 or pos.size == 0:
        raise DataError("roc_auc needs at least one negative and one positive score")
    if not (np.all(np.isfinite(neg)) and np.all(np.isfinite(pos))):
        raise DataError("scores must be finite")
    thresholds = np.unique(np.concatenate([neg, pos]))[::-1]
    neg_sorted = np.sort(neg)
    pos_sorted = np.sort(pos)
    # counts with score >= t
    fp = neg.size - np.searchsorted(neg_sorted, thresholds, side="left")
    tp = pos.size - np.searchsorted(pos_sorted, thresholds, side="left")
    fpr = np.concatenate([[0.0], fp / neg.size])
    tpr = np.concatenate([[0.0], tp / pos.size])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, np.concatenate([[np.inf], thresholds]), auc, score_name)


@dataclass
class ClassificationMetrics:
    f1: float
    precision: float
    recall: float
    auc: float

    def as_dict(self) -> dict:
        return {"f1": self.f1, "precision": self.precision, "recall": self.recall, "auc": self.auc}


def classification_metrics(pred_malware_prob, labels, threshold=0.5) -> ClassificationMetrics:
    p = np.asarray(pred_malware_prob, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if p.size != y.size:
        raise DataError(f"{p.size} predictions but {y.size} labels")
    pred = p >= threshold
    truth = y == 1
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    auc = roc_auc(p[~truth], p[truth]).auc
    return ClassificationMetrics(f1, precision, recall, auc)


# --------------------------------------------------------------------- diversity

def diversity_from_probs(probs) -> float:
    """Mean over samples and particles of KL(particle output || MC mean output).

    ``probs`` is ``m x n x C``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 3 or probs.shape[0] == 0:
        raise DataError("diversity needs a nonempty m x n x C probability stack")
    mean = probs.mean(axis=1, keepdims=True)
    kl = rel_entr(probs, mean).sum(axis=2)
    return float(max(kl.mean(), 0.0))


@dataclass
class DiversityEntry:
    method: str
    diversity: float
    n: int
    n_samples: int


def diversity(post: Posterior, adv: Dataset, n=None, seed=0) -> DiversityEntry:
    if len(adv) == 0:
        raise DataError("diversity needs a nonempty dataset")
    probs = predict_proba(post, adv, n=n, seed=seed)
    return DiversityEntry(post.method, diversity_from_probs(probs), probs.shape[1], len(adv))


# --------------------------------------------------------------------- drift

HIST_BINS = 30
HIST_EDGES = np.linspace(0.0, LN2, HIST_BINS + 1)


def histogram_masses(values, edges=HIST_EDGES) -> np.ndarray:
    v = np.clip(np.asarray(values, dtype=np.float64), edges[0], edges[-1])
    counts, _ = np.histogram(v, bins=edges)
    return counts / max(v.size, 1)


def histogram_csv(masses, edges=HIST_EDGES) -> str:
    """``bin_left,bin_right,mass`` rows for one histogram."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_left", "bin_right", "mass"])
    for k in range(len(edges) - 1):
        w.writerow([repr(float(edges[k])), repr(float(edges[k + 1])), repr(float(masses[k]))])
    return buf.getvalue()


@dataclass
class DriftReport:
    method: str
    score: str
    threshold_quantile: float
    thresholds: dict
    reference_mean: dict
    drifted_mean: dict
    mean_shift: dict
    flags: dict
    reference_hist: dict = field(repr=False)
    drifted_hist: dict = field(repr=False)

    @property
    def drift_flag(self) -> bool:
        return self.flags[self.score]

    @property
    def threshold(self) -> float:
        return self.thresholds[self.score]


    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "score": self.score,
            "drift_flag": self.drift_flag,
            "threshold_quantile": self.threshold_quantile,
            "thresholds": self.thresholds,
            "reference_mean": self.reference_mean,
            "drifted_mean": self.drifted_mean,
            "mean_shift": self.mean_shift,
            "flags": self.flags,
        }


def drift_report_from_scores(ref: UncertaintyScores, drifted: UncertaintyScores, method="",
                             threshold_quantile=0.95, score="pe") -> DriftReport:
    if len(ref) == 0 or len(drifted) == 0:
        raise DataError("drift report needs nonempty reference and drifted sets")
    out = {k: {} for k in ("thr", "rm", "dm", "shift", "flag", "rh", "dh")}
    for name in ("pe", "mi"):
        r, d = ref.score(name), drifted.score(name)
        thr = float(np.quantile(r, threshold_quantile))
        out["thr"][name] = thr
        out["rm"][name] = float(r.mean())
        out["dm"][name] = float(d.mean())
        out["shift"][name] = float(d.mean() - r.mean())
        out["flag"][name] = bool(d.mean() > thr)
        out["rh"][name] = histogram_masses(r)
        out["dh"][name] = histogram_masses(d)
    return DriftReport(method, score, threshold_quantile, out["thr"], out["rm"], out["dm"],
                       out["shift"], out["flag"], out["rh"], out["dh"])


def drift_report(post: Posterior, reference: Dataset, drifted: Dataset, n=None, seed=0,
                 threshold_quantile=0.95, score="pe") -> DriftReport:
    """Flag drift when the drifted set's mean uncertainty exceeds the reference quantile."""
    if len(reference) == 0 or len(drifted) == 0:
        raise DataError("drift report needs nonempty reference and drifted sets")
    ref = score_dataset(post, reference, n=n, seed=seed)
    dri = score_dataset(post, drifted, n=n, seed=seed)
    return drift_report_from_scores(ref, dri, post.method, threshold_quantile, score)


def drift_histogram_csv(reports, name: str, edges=HIST_EDGES) -> str:
    """Long-format histograms: ``method,set,bin_left,bin_right,mass``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "set", "bin_left", "bin_right", "mass"])
    for rep in reports:
        for label, hist in (("reference", rep.reference_hist), ("drifted", rep.drifted_hist)):
            for k in range(len(edges) - 1):
                w.writerow([rep.method, label, repr(float(edges[k])), repr(float(edges[k + 1])),
                            repr(float(hist[name][k]))])
    return buf.getvalue()


def detection_auc(benign: UncertaintyScores, adversarial: UncertaintyScores, score: str) -> RocCurve:
    """Benign test samples are negatives, adversarial malware positives."""
    return roc_auc(benign.score(score), adversarial.score(score), score)
