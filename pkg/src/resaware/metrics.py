"""Threshold-free and thresholded evaluation: EER, ROC-AUC, DET curve, reports.

Label convention: spoof (label 1) is the positive class; higher score means
more spoof-like. FAR is the rate of spoof accepted as bona fide (score below
threshold), FRR the rate of bona fide rejected (score at or above threshold).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateScores

BONA_FIDE = 0
SPOOF = 1


@dataclass
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray  # 0 bona fide, 1 spoof
    speaker_ids: list[str] | None = None
    dataset_ids: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape:
            raise ValueError("scores and labels must align")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    def split_classes(self):
        bona = self.scores[self.labels == BONA_FIDE]
        spoof = self.scores[self.labels == SPOOF]
        if len(bona) == 0 or len(spoof) == 0:
            raise DegenerateScores("EER/AUC need both classes present")
        return bona, spoof


@dataclass
class EvalReport:
    accuracy: float
    auc: float
    eer: float
    eer_threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    precision: dict = field(default_factory=dict)
    recall: dict = field(default_factory=dict)
    f1: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy, "auc": self.auc, "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "confusion": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
        }


def roc_auc(s: ScoreSet) -> float:
    """P(random spoof score > random bona fide score), ties counted 1/2.

    Rank-sum formulation with average ranks.
    """
    bona, spoof = s.split_classes()
    combined = np.concatenate([bona, spoof])
    order = np.argsort(combined, kind="mergesort")
    ranks = np.empty(len(combined))
    ranks[order] = np.arange(1, len(combined) + 1)
    # average ranks for ties
    sorted_vals = combined[order]
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + 1 + j + 1)
        i = j + 1
    rank_sum = ranks[len(bona):].sum()
    n_s, n_b = len(spoof), len(bona)
    return (rank_sum - n_s * (n_s + 1) / 2.0) / (n_s * n_b)


def _far_frr(bona: np.ndarray, spoof: np.ndarray, thresholds: np.ndarray):
    """FAR/FRR at each threshold for decision rule 'spoof iff score >= t'."""
    bona_s = np.sort(bona)
    spoof_s = np.sort(spoof)
    far = np.searchsorted(spoof_s, thresholds, side="left") / len(spoof)
    frr = 1.0 - np.searchsorted(bona_s, thresholds, side="left") / len(bona)
    return far, frr


def eer(s: ScoreSet) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Sweeps thresholds at all score midpoints and linearly interpolates
    between the two thresholds bracketing the FAR/FRR crossing.
    """
    bona, spoof = s.split_classes()
    uniq = np.unique(np.concatenate([bona, spoof]))
    mids = (uniq[:-1] + uniq[1:]) / 2.0 if len(uniq) > 1 else np.array([])
    lo = uniq[0] - 1.0
    hi = uniq[-1] + 1.0
    thresholds = np.concatenate([[lo], mids, [hi]])
    far, frr = _far_frr(bona, spoof, thresholds)
    diff = far - frr  # monotone non-decreasing in threshold
    idx = int(np.searchsorted(diff >= 0, True))
    if idx == 0:
        return float((far[0] + frr[0]) / 2.0), float(thresholds[0])
    f1_, f2 = diff[idx - 1], diff[idx]
    if f2 == f1_:
        alpha = 0.0
    else:
        alpha = -f1_ / (f2 - f1_)
    t = thresholds[idx - 1] + alpha * (thresholds[idx] - thresholds[idx - 1])
    far_t = far[idx - 1] + alpha * (far[idx] - far[idx - 1])
    frr_t = frr[idx - 1] + alpha * (frr[idx] - frr[idx - 1])
    return float((far_t + frr_t) / 2.0), float(t)


def det_curve(s: ScoreSet) -> np.ndarray:
    """(FAR, FRR) staircase over all distinct thresholds, endpoints included."""
    bona, spoof = s.split_classes()
    uniq = np.unique(np.concatenate([bona, spoof]))
    mids = (uniq[:-1] + uniq[1:]) / 2.0 if len(uniq) > 1 else np.array([])
    thresholds = np.concatenate([[uniq[0] - 1.0], mids, [uniq[-1] + 1.0]])
    far, frr = _far_frr(bona, spoof, thresholds)
    return np.stack([far, frr], axis=1)


def auc_from_det(points: np.ndarray) -> float:
    """Trapezoidal ROC area computed from DET points (cross-check for roc_auc)."""
    fpr = points[:, 1]          # bona fide wrongly called spoof
    tpr = 1.0 - points[:, 0]    # spoof correctly called spoof
    # trace the staircase corner-by-corner: ascending fpr, then ascending tpr
    order = np.lexsort((tpr, fpr))
    return float(np.trapezoid(tpr[order], fpr[order]))


def evaluate(s: ScoreSet, threshold: float = 0.5) -> EvalReport:
    """Full report: accuracy/confusion at the threshold plus EER and AUC."""
    pred = (s.scores >= threshold).astype(np.int64)
    tp = int(np.sum((pred == SPOOF) & (s.labels == SPOOF)))
    tn = int(np.sum((pred == BONA_FIDE) & (s.labels == BONA_FIDE)))
    fp = int(np.sum((pred == SPOOF) & (s.labels == BONA_FIDE)))
    fn = int(np.sum((pred == BONA_FIDE) & (s.labels == SPOOF)))
    total = tp + tn + fp + fn

    def prf(tp_, fp_, fn_):
        prec = tp_ / (tp_ + fp_) if tp_ + fp_ else 0.0
        rec = tp_ / (tp_ + fn_) if tp_ + fn_ else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        return prec, rec, f1

    p_spoof, r_spoof, f_spoof = prf(tp, fp, fn)
    p_bona, r_bona, f_bona = prf(tn, fn, fp)
    eer_val, eer_thr = eer(s)
    return EvalReport(
        accuracy=(tp + tn) / total, auc=roc_auc(s), eer=eer_val, eer_threshold=eer_thr,
        tp=tp, fp=fp, tn=tn, fn=fn,
        precision={"bona_fide": p_bona, "spoof": p_spoof},
        recall={"bona_fide": r_bona, "spoof": r_spoof},
        f1={"bona_fide": f_bona, "spoof": f_spoof},
    )
