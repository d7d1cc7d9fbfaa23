"""Ordinal regression over fused distributions: closed-form squared
2-Wasserstein distance, hard-triplet mining by label geometry, and the
triplet hinge loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .uncertainty import GaussianEmbedding


class TripletError(Exception):
    pass


@dataclass(frozen=True)
class Triplet:
    anchor: int
    reference: int
    hard: int
    gap_r: float
    gap_h: float


def wasserstein2_sq(a: GaussianEmbedding, b: GaussianEmbedding) -> Tensor:
    """Squared 2-Wasserstein distance between diagonal Gaussians:
    sum_j (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2."""
    if a.mu.shape != b.mu.shape:
        raise dc.ShapeError(f"wasserstein2_sq: dims {a.mu.shape} vs {b.mu.shape}")
    dmu = dc.square(dc.sub(a.mu, b.mu))
    dsig = dc.square(dc.sub(a.sigma, b.sigma))
    return dc.tsum(dc.add(dmu, dsig))


def mine_triplets(labels: np.ndarray, xi: float,
                  rng: np.random.Generator) -> list[Triplet]:
    """Per-anchor hard triplets.

    For each anchor a, a reference r != a is drawn uniformly; among the
    remaining samples, candidates with a strictly larger label gap inside
    the xi window are ranked by gap difference (ties to the lowest index)
    and the hardest one is kept.  Anchors with no candidate yield nothing.
    """
    labels = np.asarray(labels, dtype=np.float64)
    n = labels.shape[0]
    if n < 3:
        raise TripletError(f"batch of {n} too small to mine triplets (need >= 3)")
    if xi <= 0:
        raise TripletError("xi must be positive")
    triplets = []
    for a in range(n):
        j = int(rng.integers(0, n - 1))
        r = j if j < a else j + 1
        g_r = abs(labels[a] - labels[r])
        best = None
        for h in range(n):
            if h == a or h == r:
                continue
            g_h = abs(labels[a] - labels[h])
            if g_h > g_r and abs(g_h - g_r) < xi:
                key = (abs(g_h - g_r), h)
                if best is None or key < best[0]:
                    best = (key, h, g_h)
        if best is not None:
            triplets.append(Triplet(anchor=a, reference=r, hard=best[1],
                                    gap_r=float(g_r), gap_h=float(best[2])))
    return triplets


def _row(emb: GaussianEmbedding, i: int) -> GaussianEmbedding:
    return GaussianEmbedding(
        mu=dc.tslice(emb.mu, 0, i, i + 1),
        sigma=dc.tslice(emb.sigma, 0, i, i + 1),
    )


def ordinal_loss(triplets: list[Triplet], fused: GaussianEmbedding,
                 delta: float) -> Tensor:
    """Mean hinge over triplets: max(0, d(a, r) + delta - d(a, h)) on the
    batched fused embedding (B, D).  Empty triplet set gives 0."""
    if delta < 0:
        raise TripletError("margin must be non-negative")
    if not triplets:
        return Tensor(0.0)
    bsz = fused.mu.shape[0]
    total = None
    margin = Tensor(float(delta))
    for t in triplets:
        for idx in (t.anchor, t.reference, t.hard):
            if not (0 <= idx < bsz):
                raise TripletError(f"triplet index {idx} out of range [0, {bsz})")
        d_r = wasserstein2_sq(_row(fused, t.anchor), _row(fused, t.reference))
        d_h = wasserstein2_sq(_row(fused, t.anchor), _row(fused, t.hard))
        hinge = dc.relu(dc.add(dc.sub(d_r, d_h), margin))
        total = hinge if total is None else dc.add(total, hinge)
    return dc.scalar_mul(total, 1.0 / len(triplets))
