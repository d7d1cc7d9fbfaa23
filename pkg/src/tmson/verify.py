"""Self-verification: finite-difference gradient checks of every loss
component on a tiny model."""

from __future__ import annotations

import numpy as np

from . import diffcore as dc
from . import ordinal as ordn
from .data import Batch
from .model import MODALITIES, ModelConfig, TMSONModel
from .training import LossWeights, mae_loss, total_loss

GRADCHECK_TOL = 1e-4

TINY_CONFIG = ModelConfig(
    d_t=6, d_v=5, d_a=4,
    text_hidden=6, d_tp=4, d_vp=4, d_ap=3,
    d_star=8, dist_dim=4, unc_hidden=6, fc_f_hidden=6,
    dropout_t=0.1, dropout_v=0.1, dropout_a=0.1, dropout_f=0.1,
)


def tiny_batch(seed: int, size: int = 6) -> Batch:
    rng = np.random.default_rng(seed)
    t_v, t_a = 4, 5
    v_len = rng.integers(2, t_v + 1, size=size)
    a_len = rng.integers(2, t_a + 1, size=size)
    visual = rng.normal(size=(size, t_v, TINY_CONFIG.d_v))
    audio = rng.normal(size=(size, t_a, TINY_CONFIG.d_a))
    for i in range(size):
        visual[i, v_len[i]:] = 0.0
        audio[i, a_len[i]:] = 0.0
    return Batch(
        ids=[f"tiny-{i}" for i in range(size)],
        y=rng.uniform(-3, 3, size=size),
        text=rng.normal(size=(size, TINY_CONFIG.d_t)),
        visual=visual, v_len=v_len,
        audio=audio, a_len=a_len,
    )


def _nudged_delta(model, batch, weights, triplets, forward_seed,
                  clearance: float = 1e-3) -> float:
    """Shift the triplet margin away from hinge kinks so the central
    finite difference stays on one linear piece."""
    rng = np.random.default_rng(forward_seed)
    out = model.forward(batch, train=True, rng=rng)
    margins = []
    for t in triplets:
        def w2(i, j):
            a = ordn._row(out.fused, i)
            b = ordn._row(out.fused, j)
            return ordn.wasserstein2_sq(a, b).item()
        margins.append(w2(t.anchor, t.hard) - w2(t.anchor, t.reference))
    delta = weights.delta
    while any(abs(delta - m) < clearance for m in margins):
        delta += 2.1 * clearance
    return delta


def gradcheck_suite(seed: int = 0, h: float = 1e-5) -> dict[str, float]:
    """Max relative gradient error of each loss component and the total
    objective on the tiny model.  All values should be <= 1e-4."""
    model = TMSONModel(TINY_CONFIG, seed=seed)
    batch = tiny_batch(seed + 1)
    weights = LossWeights(xi=1.0)
    forward_seed = seed + 17
    mine_rng = np.random.default_rng(seed + 29)
    triplets = ordn.mine_triplets(batch.y, weights.xi, mine_rng)
    delta = _nudged_delta(model, batch, weights, triplets, forward_seed)
    from dataclasses import replace
    weights = replace(weights, delta=delta)
    params = list(model.parameters().values())

    def forward():
        rng = np.random.default_rng(forward_seed)
        return model.forward(batch, train=True, rng=rng)

    components = {
        "L_f": lambda out: mae_loss(out.y_f, batch.y),
        "L_m": lambda out: _weighted_unimodal(out, batch.y, weights),
        "L_rec": lambda out: out.rec_loss,
        "L_kl": lambda out: out.kl,
        "L_ord": lambda out: ordn.ordinal_loss(triplets, out.fused, weights.delta),
        "total": lambda out: total_loss(out, batch.y, weights,
                                        triplets=triplets)[0],
    }
    errors = {}
    for name, build in components.items():
        errors[name] = dc.grad_check(lambda b=build: b(forward()), params, h=h)
    return errors


def _weighted_unimodal(out, labels, weights):
    total = None
    for m in MODALITIES:
        term = dc.scalar_mul(mae_loss(out.y_m[m], labels), weights.beta(m))
        total = term if total is None else dc.add(total, term)
    return total
