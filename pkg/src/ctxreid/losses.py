"""Training objectives with hand-derived gradients.

All losses take unit-norm features and treat cluster centroids as constants.
Gradients are with respect to the raw feature vector (no projection onto the
sphere); the encoder backpropagates them through its own normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ClusterSet, FeatureMemory


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.05
    gamma: float = 0.2
    alpha1: float = 1.0
    alpha2: float = 0.25
    margin: float = 0.3
    lambda_ratio: float = 0.6

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("alpha1 and alpha2 must be >= 0")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if not 0.0 < self.lambda_ratio <= 1.0:
            raise ValueError("lambda_ratio must lie in (0, 1]")


@dataclass(frozen=True)
class LossValueWithGrad:
    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class CombinedLoss:
    value: float
    fg_grad: np.ndarray
    bg_grad: np.ndarray
    n_detection_terms: int = 0


def _softmax_ce(x: np.ndarray, targets: np.ndarray, pos: int, tau: float) -> LossValueWithGrad:
    """-log softmax(targets @ x / tau)[pos], computed relative to the positive.

    Shifting by the positive logit and using log1p keeps full relative precision
    when the positive dominates, where the plain log-sum-exp form would cancel
    two large numbers.
    """
    diff = targets - targets[pos]
    d = diff @ x / tau
    d[pos] = 0.0
    top = d.max()
    e = np.exp(d - top)
    others = e.sum() - e[pos]
    if top == 0.0:
        value = np.log1p(others)
    else:
        value = top + np.log(e[pos] + others)
    p = e / e.sum()
    return LossValueWithGrad(float(value), (p @ diff) / tau)


def _check_cluster(clusters: ClusterSet, cid: int) -> None:
    if not 0 <= cid < clusters.n_clusters:
        raise KeyError(f"unknown cluster id {cid}")


def contrastive_loss(x, positive_cluster: int, clusters: ClusterSet,
                     cfg: LossConfig) -> LossValueWithGrad:
    """Memory contrastive loss against every centroid."""
    _check_cluster(clusters, positive_cluster)
    x = np.asarray(x, dtype=np.float64)
    return _softmax_ce(x, clusters.centroids, positive_cluster, cfg.tau)


def hard_negative_count(sorted_sims, lambda_ratio: float) -> int:
    """Number of hardest negatives whose cumulative (clamped) similarity mass
    is closest to ``lambda_ratio`` of the total. Ties go to the smaller count.

    ``lambda_ratio == 1`` keeps every negative: clamped zeros in the tail would
    otherwise tie with the full count and be dropped.
    ``sorted_sims`` must already be in descending order.
    """
    s = np.maximum(np.asarray(sorted_sims, dtype=np.float64), 0.0)
    if s.size == 0:
        raise ValueError("no negatives")
    if lambda_ratio >= 1.0:
        return int(s.size)
    cum = np.cumsum(s)
    total = cum[-1]
    if total == 0.0:
        return int(s.size)
    # argmin returns the first minimum, which is the smaller-k tie rule
    return int(np.argmin(np.abs(cum / total - lambda_ratio))) + 1


def select_hard_negative_count(x, clusters: ClusterSet, positive_cluster: int,
                               lambda_ratio: float) -> tuple[int, np.ndarray]:
    """Return K and all negative cluster ids sorted by descending similarity to ``x``."""
    _check_cluster(clusters, positive_cluster)
    if clusters.n_clusters < 2:
        raise ValueError("no negatives")
    if not 0.0 < lambda_ratio <= 1.0:
        raise ValueError("lambda_ratio must lie in (0, 1]")
    sims = clusters.centroids @ np.asarray(x, dtype=np.float64)
    neg = np.delete(np.arange(clusters.n_clusters), positive_cluster)
    order = neg[np.argsort(-sims[neg], kind="stable")]
    return hard_negative_count(sims[order], lambda_ratio), order


def memory_context_loss(x, positive_cluster: int, clusters: ClusterSet,
                        cfg: LossConfig) -> LossValueWithGrad:
    """Contrastive loss truncated to the positive plus the K hardest negatives."""
    x = np.asarray(x, dtype=np.float64)
    k, order = select_hard_negative_count(x, clusters, positive_cluster, cfg.lambda_ratio)
    keep = np.concatenate([[positive_cluster], order[:k]])
    return _softmax_ce(x, clusters.centroids[keep], 0, cfg.tau)


def _hinge(t: float) -> float:
    return t if t > 0.0 else 0.0


def quadruplet_terms(fg: np.ndarray, groups: np.ndarray, bg: np.ndarray, anchor: int,
                     cfg: LossConfig) -> tuple[float, dict[tuple[str, int], np.ndarray]]:
    """Quadruplet loss for foreground row ``anchor`` on plain arrays.

    Returns the value and a sparse gradient ``{("fg" | "bg", row): grad}`` that
    includes the partners the anchor selected. No normalization is checked or
    applied, so the anchor row may be perturbed freely.
    """
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64).reshape(-1, fg.shape[1])
    groups = np.asarray(groups)
    n_x = fg.shape[0]
    if not 0 <= anchor < n_x:
        raise IndexError(f"anchor {anchor} out of range")
    xi = fg[anchor]
    same = groups == groups[anchor]
    pos_idx = np.flatnonzero(same)
    pos_idx = pos_idx[pos_idx != anchor]
    neg_idx = np.flatnonzero(~same)
    if pos_idx.size == 0:
        raise ValueError("no positive proposal for the anchor instance")
    if neg_idx.size == 0:
        raise ValueError("no negative instance")
    if bg.shape[0] == 0:
        raise ValueError("no background features")
    others = np.flatnonzero(np.arange(n_x) != anchor)

    sims = fg @ xi
    bsims = bg @ xi
    p = pos_idx[np.argmin(sims[pos_idx])]
    n = neg_idx[np.argmax(sims[neg_idx])]
    o = others[np.argmin(sims[others])]
    b = int(np.argmax(bsims))

    t1 = cfg.margin - sims[p] + sims[n]
    t2 = cfg.margin - sims[o] + bsims[b]
    value = cfg.alpha1 * _hinge(t1) + cfg.alpha2 * _hinge(t2)

    grads: dict[tuple[str, int], np.ndarray] = {}

    def add(key, g):
        grads[key] = grads.get(key, 0.0) + g

    # hinge subgradient at the kink is 0
    if t1 > 0.0 and cfg.alpha1:
        add(("fg", anchor), cfg.alpha1 * (fg[n] - fg[p]))
        add(("fg", int(p)), -cfg.alpha1 * xi)
        add(("fg", int(n)), cfg.alpha1 * xi)
    if t2 > 0.0 and cfg.alpha2:
        add(("fg", anchor), cfg.alpha2 * (bg[b] - fg[o]))
        add(("fg", int(o)), -cfg.alpha2 * xi)
        add(("bg", b), cfg.alpha2 * xi)
    return float(value), grads


def detection_context_loss(batch, anchor: int, cfg: LossConfig) -> LossValueWithGrad:
    """Hinged quadruplet loss for one anchor; gradient w.r.t. the anchor only."""
    value, grads = quadruplet_terms(batch.foreground, batch.groups, batch.background, anchor, cfg)
    g = grads.get(("fg", anchor))
    if g is None:
        g = np.zeros(batch.foreground.shape[1])
    return LossValueWithGrad(value, np.asarray(g, dtype=np.float64))


def quadruplet_ready(batch, anchor: int) -> bool:
    same = batch.groups == batch.groups[anchor]
    return same.sum() >= 2 and (~same).any() and batch.n_b >= 1


def combined_loss(batch, assignments, clusters: ClusterSet, cfg: LossConfig,
                  use_detection_context: bool = True,
                  use_memory_context: bool = True) -> CombinedLoss:
    """Sum over foreground features of the quadruplet and memory terms.

    Gradients are of the total with respect to every batch feature, so a
    quadruplet term also contributes to the partners it selected. Anchors that
    cannot form a quadruplet contribute only the memory term. With
    ``use_memory_context`` off the full contrastive loss replaces the truncated one.
    """
    assignments = np.asarray(assignments, dtype=np.int64)
    if assignments.shape != (batch.n_x,):
        raise ValueError("need one cluster assignment per foreground feature")
    fg_grad = np.zeros_like(batch.foreground)
    bg_grad = np.zeros_like(batch.background)
    total = 0.0
    n_dc = 0
    truncated = use_memory_context and clusters.n_clusters >= 2
    for i in range(batch.n_x):
        x = batch.foreground[i]
        mc = (memory_context_loss if truncated else contrastive_loss)(x, int(assignments[i]), clusters, cfg)
        total += mc.value
        fg_grad[i] += mc.grad
        if use_detection_context and quadruplet_ready(batch, i):
            v, grads = quadruplet_terms(batch.foreground, batch.groups, batch.background, i, cfg)
            total += v
            n_dc += 1
            for (kind, row), g in grads.items():
                (fg_grad if kind == "fg" else bg_grad)[row] += g
    return CombinedLoss(total, fg_grad, bg_grad, n_dc)


def update_memory(memory: FeatureMemory, slot: int, x, gamma: float) -> FeatureMemory:
    """EMA update of one memory slot, renormalized; returns the same memory object."""
    memory.update_slot(slot, np.asarray(x, dtype=np.float64), gamma)
    return memory
