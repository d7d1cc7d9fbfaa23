"""Bayesian fusion of diagonal Gaussian embeddings and the multimodal
prediction head.

Fusion is the normalized product of Gaussian densities: precision-weighted
means, harmonically reduced variances.  It has no learnable parameters and
is order-invariant up to floating-point roundoff.
"""

from __future__ import annotations

from . import diffcore as dc
from .diffcore import Tensor
from .uncertainty import GaussianEmbedding


class FusionError(Exception):
    pass


def fuse_pair(a: GaussianEmbedding, b: GaussianEmbedding) -> GaussianEmbedding:
    """Product-of-Gaussians update of two diagonal Gaussians."""
    if a.mu.shape != b.mu.shape:
        raise dc.ShapeError(
            f"fuse_pair: dims {a.mu.shape} vs {b.mu.shape}"
        )
    va = dc.square(a.sigma)
    vb = dc.square(b.sigma)
    denom = dc.add(va, vb)
    mu = dc.div(dc.add(dc.mul(a.mu, vb), dc.mul(b.mu, va)), denom)
    var = dc.div(dc.mul(va, vb), denom)
    return GaussianEmbedding(mu=mu, sigma=dc.sqrt(var))


def fuse_all(embeddings: list[GaussianEmbedding]) -> GaussianEmbedding:
    """Left fold of fuse_pair; a singleton list is returned unchanged."""
    if not embeddings:
        raise FusionError("fuse_all: empty embedding list")
    fused = embeddings[0]
    for emb in embeddings[1:]:
        fused = fuse_pair(fused, emb)
    return fused


def predict_multimodal(f_t: Tensor, f_v: Tensor, f_a: Tensor, z_f: Tensor,
                       head, train: bool = False, rng=None) -> Tensor:
    """Concatenate (text, visual, audio, fused latent) and regress."""
    axis = f_t.data.ndim - 1
    joint = dc.concat([f_t, f_v, f_a, z_f], axis=axis)
    return head(joint, train, rng)
