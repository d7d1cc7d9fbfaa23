"""Per-modality diagonal Gaussian estimation, reparameterized sampling,
and the reconstruction / KL regularizers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

SIGMA_FLOOR = 1e-6


@dataclass
class GaussianEmbedding:
    """Diagonal Gaussian over the latent space: mean plus per-dimension
    standard deviation (the uncertainty).  mu and sigma share a shape,
    either (D,) or batched (B, D)."""

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape:
            raise dc.ShapeError(
                f"gaussian embedding: mu {self.mu.shape} vs sigma {self.sigma.shape}"
            )

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]

    def batch_size(self) -> int:
        return self.mu.shape[0] if self.mu.data.ndim == 2 else 1


def estimate_distribution(f_star: Tensor, mlp_mu, mlp_sigma, train: bool = False,
                          rng=None) -> GaussianEmbedding:
    """Two MLP branches produce the mean and a softplus-floored std dev."""
    mu = mlp_mu(f_star, train, rng)
    raw = mlp_sigma(f_star, train, rng)
    sigma = dc.add(dc.softplus(raw), Tensor(np.full(raw.shape, SIGMA_FLOOR)))
    return GaussianEmbedding(mu=mu, sigma=sigma)


def sample(emb: GaussianEmbedding, eps: np.ndarray) -> Tensor:
    """Reparameterized draw mu + eps * sigma; eps carries no gradient."""
    if eps.shape != emb.mu.shape:
        raise dc.ShapeError(f"sample: eps shape {eps.shape} != {emb.mu.shape}")
    return dc.add(emb.mu, dc.mul(Tensor(eps), emb.sigma))


def reconstruction_loss(z_by_mod: dict[str, Tensor], f_star_by_mod: dict[str, Tensor],
                        decoders: dict, train: bool = False, rng=None) -> Tensor:
    """Mean over modalities of per-element squared reconstruction error.

    Per modality: ||decoder(z) - f*||^2 / d*, batch-averaged.
    """
    terms = []
    for m in sorted(z_by_mod):
        z_dec = decoders[m](z_by_mod[m], train, rng)
        f_star = f_star_by_mod[m]
        if z_dec.shape != f_star.shape:
            raise dc.ShapeError(
                f"reconstruction: decoded {z_dec.shape} vs target {f_star.shape}"
            )
        diff = dc.square(dc.sub(z_dec, f_star))
        d_star = f_star.shape[-1]
        bsz = f_star.shape[0] if f_star.data.ndim == 2 else 1
        terms.append(dc.scalar_mul(dc.tsum(diff), 1.0 / (d_star * bsz)))
    total = terms[0]
    for t in terms[1:]:
        total = dc.add(total, t)
    return dc.scalar_mul(total, 1.0 / len(terms))


def kl_loss(embeddings: dict[str, GaussianEmbedding]) -> Tensor:
    """Mean over modalities of KL(N(mu, sigma^2) || N(0, I)), summed over
    latent dimensions and averaged over the batch."""
    terms = []
    for m in sorted(embeddings):
        emb = embeddings[m]
        mu, sigma = emb.mu, emb.sigma
        expr = dc.add(dc.square(mu), dc.square(sigma))
        expr = dc.sub(expr, dc.scalar_mul(dc.log(sigma), 2.0))
        expr = dc.sub(expr, Tensor(np.ones(mu.shape)))
        terms.append(dc.scalar_mul(dc.tsum(expr), 0.5 / emb.batch_size()))
    total = terms[0]
    for t in terms[1:]:
        total = dc.add(total, t)
    return dc.scalar_mul(total, 1.0 / len(terms))
