"""Verification metrics: pair enumeration, ROC, EER and FRR at fixed FAR.

Scores are distances, so lower means more similar. At threshold t a pair
is accepted when its score is <= t.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, np.float64).ravel()
        self.impostor = np.asarray(self.impostor, np.float64).ravel()

    def check(self):
        if self.genuine.size == 0 or self.impostor.size == 0:
            raise ValueError("metrics need non-empty genuine and impostor score lists")
        if not (np.isfinite(self.genuine).all() and np.isfinite(self.impostor).all()):
            raise ValueError("scores must be finite")


def enumerate_pairs(labels, cap: int | None = None, seed: int = 0):
    """All unordered same-label and cross-label index pairs.

    ``cap`` limits each list separately by a seeded subsample (order kept).
    """
    labels = list(labels)
    if len(set(labels)) < 2:
        raise ValueError("pair enumeration needs at least two identities")
    genuine, impostor = [], []
    for i in range(len(labels)):
        for j in range(i + 1, len(labels)):
            (genuine if labels[i] == labels[j] else impostor).append((i, j))
    if not genuine:
        warnings.warn("no genuine pairs: every identity has a single sample")
    if cap is not None:
        rng = np.random.default_rng(seed)

        def sub(pairs):
            if len(pairs) <= cap:
                return pairs
            keep = np.sort(rng.choice(len(pairs), cap, replace=False))
            return [pairs[k] for k in keep]

        genuine, impostor = sub(genuine), sub(impostor)
    return genuine, impostor


def roc(scores: ScoreSet):
    """(thresholds, far, frr) with thresholds ascending over distinct scores.

    A leading -inf threshold gives the (FAR 0, FRR 1) end point.
    """
    scores.check()
    g = np.sort(scores.genuine)
    i = np.sort(scores.impostor)
    thr = np.unique(np.concatenate([g, i]))
    far = np.searchsorted(i, thr, side="right") / i.size
    frr = (g.size - np.searchsorted(g, thr, side="right")) / g.size
    return (np.concatenate([[-np.inf], thr]), np.concatenate([[0.0], far]),
            np.concatenate([[1.0], frr]))


def eer(scores: ScoreSet) -> float:
    """Linear interpolation between the two ROC points bracketing FAR = FRR."""
    _, far, frr = roc(scores)
    d = far - frr
    k = int(np.argmax(d >= 0))  # d ends at 1, so a crossing exists
    if d[k] == 0 or k == 0:
        return float(far[k])
    f0, r0, f1, r1 = far[k - 1], frr[k - 1], far[k], frr[k]
    # intersect the segment with the diagonal FAR = FRR
    t = (r0 - f0) / ((f1 - f0) - (r1 - r0))
    return float(f0 + t * (f1 - f0))


def frr_at_far(scores: ScoreSet, target: float) -> float:
    """FRR linearly interpolated in FAR at the requested FAR."""
    if not 0 <= target <= 1:
        raise ValueError("target FAR must lie in [0, 1]")
    _, far, frr = roc(scores)
    k = int(np.searchsorted(far, target, side="right")) - 1
    if far[k] == target or k == len(far) - 1:
        return float(frr[k])
    t = (target - far[k]) / (far[k + 1] - far[k])
    return float(frr[k] + t * (frr[k + 1] - frr[k]))


def summary(scores: ScoreSet, far: float = 0.001) -> dict:
    return {
        "eer": eer(scores),
        f"frr_at_far_{far:g}": frr_at_far(scores, far),
        "n_genuine": int(scores.genuine.size),
        "n_impostor": int(scores.impostor.size),
        "mean_genuine": float(scores.genuine.mean()),
        "mean_impostor": float(scores.impostor.mean()),
    }


def separation_gap(scores: ScoreSet):
    """(mean impostor - mean genuine, pooled standard error of that gap)."""
    g, i = scores.genuine, scores.impostor
    se = np.sqrt(g.var(ddof=1) / g.size + i.var(ddof=1) / i.size)
    return float(i.mean() - g.mean()), float(se)


def score_matrix(dist: np.ndarray, labels, cap=None, seed=0):
    """Collect (pair_id, label, score) rows from a full distance matrix."""
    genuine, impostor = enumerate_pairs(labels, cap, seed)
    rows = [(f"{a}_{b}", "genuine", float(dist[a, b])) for a, b in genuine]
    rows += [(f"{a}_{b}", "impostor", float(dist[a, b])) for a, b in impostor]
    return rows


def scoreset_from_rows(rows) -> ScoreSet:
    g = [s for _, lab, s in rows if lab == "genuine"]
    i = [s for _, lab, s in rows if lab == "impostor"]
    return ScoreSet(g, i)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def write_scores(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair_id", "label", "score"])
        for pid, lab, s in rows:
            w.writerow([pid, lab, repr(float(s))])


def read_scores(path):
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        return [(row["pair_id"], row["label"], float(row["score"])) for row in r]


def write_roc(path, scores: ScoreSet):
    thr, far, frr = roc(scores)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "far", "frr"])
        for t, a, b in zip(thr, far, frr):
            w.writerow([repr(float(t)), repr(float(a)), repr(float(b))])


def write_summary(path, summ: dict):
    with open(path, "w") as fh:
        json.dump(summ, fh, indent=2, sort_keys=True)
        fh.write("\n")
