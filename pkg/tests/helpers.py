"""Independent reference implementations used as test oracles.

Everything here is deliberately written the slow, obvious way (explicit
loops, direct formulas) so it shares no code path with the package.
"""

from __future__ import annotations

import numpy as np

from tmson.diffcore import Tensor
from tmson.uncertainty import GaussianEmbedding


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop matrix product."""
    a = np.atleast_2d(a)
    b2 = b.reshape(b.shape[0], -1)
    out = np.zeros((a.shape[0], b2.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b2.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b2[k, j]
            out[i, j] = acc
    return out


def rankdata(x) -> np.ndarray:
    """Average ranks, ties shared."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    ra, rb = rankdata(a), rankdata(b)
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    return float((ra @ rb) / np.sqrt((ra @ ra) * (rb @ rb)))


def random_embedding(rng: np.random.Generator, shape,
                     sigma_lo=0.5, sigma_hi=2.0,
                     requires_grad=False) -> GaussianEmbedding:
    return GaussianEmbedding(
        mu=Tensor(rng.normal(size=shape), requires_grad=requires_grad),
        sigma=Tensor(rng.uniform(sigma_lo, sigma_hi, size=shape),
                     requires_grad=requires_grad),
    )


def gaussian_product_moments_quadrature(mu_a, var_a, mu_b, var_b, n=200_001):
    """Mean and variance of the normalized product of two 1-D Gaussian
    densities, by trapezoidal quadrature on a wide grid."""
    sd = np.sqrt(max(var_a, var_b))
    lo = min(mu_a, mu_b) - 12 * sd
    hi = max(mu_a, mu_b) + 12 * sd
    x = np.linspace(lo, hi, n)
    dens = (np.exp(-0.5 * (x - mu_a) ** 2 / var_a)
            * np.exp(-0.5 * (x - mu_b) ** 2 / var_b))
    z = np.trapezoid(dens, x)
    mean = np.trapezoid(x * dens, x) / z
    var = np.trapezoid((x - mean) ** 2 * dens, x) / z
    return mean, var


def kl_monte_carlo(mu, sigma, n, rng) -> float:
    """KL(N(mu, diag sigma^2) || N(0, I)) by sampling: mean of
    log q(z) - log p(z) under z ~ q."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    z = mu + sigma * rng.standard_normal((n, mu.size))
    log_q = (-0.5 * ((z - mu) / sigma) ** 2 - np.log(sigma)).sum(axis=1)
    log_p = (-0.5 * z * z).sum(axis=1)
    return float(np.mean(log_q - log_p))


def w2_sorted_coupling(sample_a, sample_b) -> float:
    """Empirical squared 2-Wasserstein distance between two 1-D samples
    of equal size via the sorted (quantile) coupling."""
    a = np.sort(np.asarray(sample_a))
    b = np.sort(np.asarray(sample_b))
    return float(np.mean((a - b) ** 2))


def exhaustive_triplets(labels, xi, rng):
    """Brute-force reference for triplet mining: same reference draw
    scheme, then a full scan of every candidate."""
    labels = np.asarray(labels, dtype=np.float64)
    n = len(labels)
    out = []
    for a in range(n):
        j = int(rng.integers(0, n - 1))
        r = j if j < a else j + 1
        g_r = abs(labels[a] - labels[r])
        candidates = []
        for h in range(n):
            if h in (a, r):
                continue
            g_h = abs(labels[a] - labels[h])
            if g_h > g_r and abs(g_h - g_r) < xi:
                candidates.append((abs(g_h - g_r), h, g_h))
        if candidates:
            _, h, g_h = min(candidates)
            out.append((a, r, h, g_r, g_h))
    return out


def reference_lstm_step(x, h, c, wx, wh, b, nh):
    """One LSTM cell step in plain numpy, gate order (i, f, o, g)."""
    z = x @ wx + h @ wh + b[0]
    def sig(v):
        return 1.0 / (1.0 + np.exp(-v))
    i = sig(z[..., 0:nh])
    f = sig(z[..., nh:2 * nh])
    o = sig(z[..., 2 * nh:3 * nh])
    g = np.tanh(z[..., 3 * nh:4 * nh])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


def reference_adam(theta, grads, m, v, t, lr, decay,
                   beta1=0.9, beta2=0.999, eps=1e-8):
    """One coupled-weight-decay Adam update in plain numpy."""
    g = grads + decay * theta
    m = beta1 * m + (1 - beta1) * g
    v = beta2 * v + (1 - beta2) * g * g
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


def bayes_floor_oracle(model, n_draws, rng) -> float:
    """Independent Monte Carlo estimate of the generator's Bayes-floor
    MAE: posterior mean over the label grid, conditioning on the drawn
    per-modality noise scale (matching the stored definition)."""
    cfg = model.cfg

    def basis(s):
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        return np.stack([np.ones_like(s), s / 3.0, s * s / 9.0,
                         np.sin(s), np.cos(s)], axis=-1)

    grid = model.posterior_grid()
    basis_grid = basis(grid)
    total = 0.0
    for _ in range(n_draws):
        s = model.draw_labels(1, rng)[0]
        log_post = np.zeros(grid.shape[0])
        for m, t_dim in (("t", 1), ("v", cfg.T_v), ("a", cfg.T_a)):
            if model.noise[m] == 0.0:
                continue
            steps = 1 if m == "t" else int(
                rng.integers(max(1, t_dim // 2), t_dim + 1))
            mean_true = model.maps[m] @ basis(s)[0]
            scale = model._noise_scale(rng)
            sigma = model.noise[m] * scale
            x = mean_true + sigma * rng.normal(size=(steps, model.n_info[m]))
            mean_grid = basis_grid @ model.maps[m].T      # (G, n_info)
            # log N(x | mean_grid, sigma) summed over steps and dims
            for row in x:
                diff = row[None, :] - mean_grid
                log_post -= (diff * diff).sum(axis=1) / (2.0 * sigma * sigma)
        log_post -= log_post.max()
        w = np.exp(log_post)
        w /= w.sum()
        total += abs(float(w @ grid) - s)
    return total / n_draws
