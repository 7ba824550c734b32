"""Masked fractional distance, shift-minimised distance and the extended
triplet loss, plus triplet mining."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Node
from .ctensor import ComplexTensor


class EmptyOverlapError(ValueError):
    pass


@dataclass
class FeatureMap:
    values: ComplexTensor  # h x w x c
    mask: np.ndarray       # h x w, True = valid

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.values.shape[:2]:
            raise ValueError(f"mask shape {self.mask.shape} does not match feature grid "
                             f"{self.values.shape[:2]}")

    def shifted(self, b: int) -> "FeatureMap":
        v = self.values
        return FeatureMap(ComplexTensor(np.roll(v.re, b, 1), np.roll(v.im, b, 1)),
                          np.roll(self.mask, b, 1))


@dataclass
class Triplet:
    anchor: FeatureMap
    positive: FeatureMap
    negative: FeatureMap
    labels: tuple = (None, None, None)
    index: tuple = (None, None, None)


def shift_order(max_shift: int):
    """Candidate shifts in tie-breaking order: 0, -1, 1, -2, 2, ..."""
    if max_shift < 0:
        raise ValueError("maximum shift must be non-negative")
    out = [0]
    for b in range(1, max_shift + 1):
        out += [-b, b]
    return out


def downsample_mask(mask: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Block-majority downsampling: a cell is valid if more than half its block is."""
    mask = np.asarray(mask, dtype=np.float64)
    h, w = mask.shape
    if h % out_h or w % out_w:
        raise ValueError(f"mask {h}x{w} is not divisible into a {out_h}x{out_w} grid")
    blocks = mask.reshape(out_h, h // out_h, out_w, w // out_w).mean(axis=(1, 3))
    return blocks > 0.5


def fractional_distance(f1: FeatureMap, f2: FeatureMap) -> float:
    if f1.values.shape != f2.values.shape:
        raise ValueError(f"feature shapes differ: {f1.values.shape} vs {f2.values.shape}")
    joint = f1.mask & f2.mask
    count = int(joint.sum())
    if count == 0:
        raise EmptyOverlapError("no valid overlap between the two masks")
    dr = f1.values.re - f2.values.re
    di = f1.values.im - f2.values.im
    cell = (dr * dr + di * di).sum(axis=-1)
    return float(cell[joint].sum() / count)


def shift_distance(f1: FeatureMap, f2: FeatureMap, max_shift: int = 4):
    """min over circular column shifts b in [-B, B] of FD(shift(f1, b), f2).

    Returns ``(distance, best_shift)``; ties go to the smallest |b|, then to
    the negative shift.
    """
    best, best_b = np.inf, None
    for b in shift_order(max_shift):
        try:
            d = fractional_distance(f1.shifted(b), f2)
        except EmptyOverlapError:
            continue
        if d < best:
            best, best_b = d, b
    if best_b is None:
        raise EmptyOverlapError("no valid overlap for any shift")
    return best, best_b


def extended_triplet_loss(batch, alpha: float = 0.2, max_shift: int = 4) -> float:
    if not batch:
        raise ValueError("empty triplet batch")
    if not alpha > 0:
        raise ValueError("margin alpha must be positive")
    total = 0.0
    for t in batch:
        dap, _ = shift_distance(t.anchor, t.positive, max_shift)
        dan, _ = shift_distance(t.anchor, t.negative, max_shift)
        total += max(0.0, dap - dan + alpha)
    return total / len(batch)


# ---------------------------------------------------------------------------
# graph ops
# ---------------------------------------------------------------------------

def fd_node(f1: Node, f2: Node, m1, m2, shift: int = 0) -> Node:
    """Differentiable FD(shift(f1, b), f2) on h x w x c nodes."""
    a, b = f1.value, f2.value
    ar = np.roll(a.re, shift, 1)
    ai = np.roll(a.im, shift, 1)
    joint = np.roll(np.asarray(m1, bool), shift, 1) & np.asarray(m2, bool)
    count = int(joint.sum())
    if count == 0:
        raise EmptyOverlapError("no valid overlap between the two masks")
    w = joint[..., None] / count
    dr = (ar - b.re) * w
    di = (ai - b.im) * w
    val = float(((ar - b.re) * dr + (ai - b.im) * di).sum())
    out = ComplexTensor(np.array(val, a.dtype), np.array(0.0, a.dtype))

    def bw(g):
        s = 2 * g.re
        g1 = ComplexTensor(np.roll(s * dr, -shift, 1), np.roll(s * di, -shift, 1))
        g2 = ComplexTensor(-s * dr, -s * di)
        return g1, g2

    return Node(out, (f1, f2), bw, "fd")


def shift_distance_node(f1: Node, f2: Node, m1, m2, max_shift: int = 4) -> Node:
    """The argmin shift is found without a graph and then held fixed."""
    _, b = shift_distance(FeatureMap(f1.value, m1), FeatureMap(f2.value, m2), max_shift)
    return fd_node(f1, f2, m1, m2, b)


def hinge(x: Node) -> Node:
    v = x.value
    active = v.re > 0
    out = ComplexTensor(np.where(active, v.re, 0.0), np.zeros_like(v.im))
    return Node(out, (x,), lambda g: (ComplexTensor(g.re * active, np.zeros_like(g.im)),), "hinge")


def etl_node(features: Node, masks, triplets, alpha: float = 0.2, max_shift: int = 4) -> Node:
    """Extended triplet loss over index triplets into an N x h x w x c batch."""
    if len(triplets) == 0:
        raise ValueError("empty triplet batch")
    if not alpha > 0:
        raise ValueError("margin alpha must be positive")
    terms = []
    cache = {}

    def item(i):
        if i not in cache:
            cache[i] = ag.index(features, i)
        return cache[i]

    for ia, ip, ineg in triplets:
        dap = shift_distance_node(item(ia), item(ip), masks[ia], masks[ip], max_shift)
        dan = shift_distance_node(item(ia), item(ineg), masks[ia], masks[ineg], max_shift)
        terms.append(hinge(ag.add(ag.sub(dap, dan), alpha)))
    total = terms[0]
    for t in terms[1:]:
        total = ag.add(total, t)
    return ag.scale(total, 1.0 / len(triplets))


# ---------------------------------------------------------------------------
# mining
# ---------------------------------------------------------------------------

def pairwise_shift_distance(values: ComplexTensor, masks, max_shift: int = 4) -> np.ndarray:
    """N x N matrix of shift distances for a stacked N x h x w x c batch."""
    re = values.re.astype(np.float64)
    im = values.im.astype(np.float64)
    m = np.asarray(masks, dtype=np.float64)
    n = re.shape[0]
    best = np.full((n, n), np.inf)
    for b in shift_order(max_shift):
        rr = np.roll(re, b, 2)
        ri = np.roll(im, b, 2)
        mr = np.roll(m, b, 2)
        joint = mr[:, None] * m[None, :]
        count = joint.sum(axis=(2, 3))
        # |x - y|^2 = |x|^2 + |y|^2 - 2 Re(x conj(y)), all masked
        sq1 = (rr ** 2 + ri ** 2).sum(-1)
        sq2 = (re ** 2 + im ** 2).sum(-1)
        cross = np.einsum("ahwc,bhwc->abhw", rr, re) + np.einsum("ahwc,bhwc->abhw", ri, im)
        tot = (joint * (sq1[:, None] + sq2[None, :] - 2 * cross)).sum(axis=(2, 3))
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(count > 0, tot / np.maximum(count, 1), np.inf)
        best = np.minimum(best, np.maximum(d, 0.0))
    return best


MINING = ("random", "semi_hard", "hard")


def mine_triplets(features, labels, strategy: str = "random", count: int = 16, seed: int = 0,
                  alpha: float = 0.2, max_shift: int = 4, distances: np.ndarray | None = None):
    """Draw ``count`` (anchor, positive, negative) triplets.

    ``features`` is a list of FeatureMap (or None when only indices are
    needed and ``distances`` is given); ``labels`` holds one identity per
    sample. ``semi_hard`` prefers negatives with D(a,p) < D(a,n) < D(a,p) + alpha
    and falls back to a uniformly random negative. ``hard`` takes the farthest
    positive and the nearest negative of each sampled anchor.
    """
    labels = list(labels)
    n = len(labels)
    by_id = {}
    for i, lab in enumerate(labels):
        by_id.setdefault(lab, []).append(i)
    if len(by_id) < 2:
        raise ValueError("triplet mining needs at least two identities")
    anchors = [i for i in range(n) if len(by_id[labels[i]]) >= 2]
    if not anchors:
        raise ValueError("triplet mining needs an identity with at least two samples")
    if strategy not in MINING:
        raise ValueError(f"unknown mining strategy {strategy!r}")
    if strategy != "random" and distances is None:
        fm = list(features)
        distances = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                distances[i, j] = distances[j, i] = shift_distance(fm[i], fm[j], max_shift)[0]
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        a = anchors[rng.integers(len(anchors))]
        pos_pool = [j for j in by_id[labels[a]] if j != a]
        p = pos_pool[rng.integers(len(pos_pool))]
        neg_pool = [j for j in range(n) if labels[j] != labels[a]]
        neg = None
        if strategy == "hard":
            # first index wins ties, so the choice is deterministic
            p = max(pos_pool, key=lambda j: distances[a, j])
            neg = min(neg_pool, key=lambda j: distances[a, j])
        elif strategy == "semi_hard":
            dap = distances[a, p]
            band = [j for j in neg_pool if dap < distances[a, j] < dap + alpha]
            if band:
                neg = band[rng.integers(len(band))]
        if neg is None:
            neg = neg_pool[rng.integers(len(neg_pool))]
        fa = fp = fn = None
        if features is not None:
            fa, fp, fn = features[a], features[p], features[neg]
        out.append(Triplet(fa, fp, fn, (labels[a], labels[p], labels[neg]), (a, p, neg)))
    return out
