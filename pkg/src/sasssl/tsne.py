"""Exact t-SNE (O(N^2) affinities, no Barnes-Hut approximation)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iterations: int = 250
    learning_rate: float | None = None  # None -> N / 12
    initial_momentum: float = 0.5
    final_momentum: float = 0.8
    min_gain: float = 0.01
    entropy_tol: float = 1e-6


@dataclass
class Embedding2D:
    coords: np.ndarray
    labels: np.ndarray
    model_id: str = ""
    row_entropy: np.ndarray = field(default_factory=lambda: np.zeros(0))


def squared_distances(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    sq = np.sum(x * x, axis=1)
    d = sq[:, None] + sq[None, :] - 2 * x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def _row_distribution(dist_row: np.ndarray, beta: float):
    shifted = dist_row - dist_row.min()
    p = np.exp(-beta * shifted)
    p /= p.sum()
    nz = p > 0
    entropy_bits = -np.sum(p[nz] * np.log2(p[nz]))
    return p, entropy_bits


def conditional_affinities(distances: np.ndarray, perplexity: float, tol: float = 1e-6, max_iter: int = 200):
    """Per-row Gaussian precisions bisected so row entropy = log2(perplexity).

    Returns (P_cond, realized entropies in bits).  Rows whose distances are
    all equal are uniform for every precision and are returned as such.
    """
    n = len(distances)
    target = np.log2(perplexity)
    p_cond = np.zeros((n, n))
    entropies = np.zeros(n)
    for i in range(n):
        row = np.delete(distances[i], i)
        if np.ptp(row) == 0:
            p = np.full(n - 1, 1.0 / (n - 1))
            h = np.log2(n - 1)
        else:
            # Bisection on log(beta); the scale keeps the first guess sensible.
            scale = np.median(row - row.min()) or np.ptp(row)
            lo, hi = -np.inf, np.inf
            log_beta = -np.log(scale)
            for _ in range(max_iter):
                p, h = _row_distribution(row, np.exp(log_beta))
                if abs(h - target) < tol:
                    break
                if h > target:
                    lo = log_beta
                    log_beta = log_beta + 1.0 if hi == np.inf else (log_beta + hi) / 2
                else:
                    hi = log_beta
                    log_beta = log_beta - 1.0 if lo == -np.inf else (log_beta + lo) / 2
        p_cond[i, np.arange(n) != i] = p
        entropies[i] = h
    return p_cond, entropies


def joint_affinities(features: np.ndarray, perplexity: float, tol: float = 1e-6):
    n = len(features)
    if n < 3 * perplexity or perplexity <= 1:
        raise InputError(f"perplexity {perplexity} infeasible for {n} points (need N >= 3 * perplexity)")
    p_cond, entropies = conditional_affinities(squared_distances(features), perplexity, tol)
    p = (p_cond + p_cond.T) / (2 * n)
    return p, entropies


def kl_gradient(p: np.ndarray, y: np.ndarray):
    """KL(P || Q) and its gradient with Student-t (1 dof) output affinities."""
    num = 1.0 / (1.0 + squared_distances(y))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), 1e-300)
    pq = (p - q) * num
    grad = 4.0 * (np.diag(pq.sum(axis=1)) - pq) @ y
    mask = p > 0
    kl = float(np.sum(p[mask] * np.log(p[mask] / q[mask])))
    return kl, grad


def tsne_embed(features, labels=None, config: TsneConfig = TsneConfig(), seed: int = 0, model_id: str = "") -> Embedding2D:
    features = np.asarray(features, dtype=np.float64)
    n = len(features)
    p, entropies = joint_affinities(features, config.perplexity, config.entropy_tol)
    rng = np.random.default_rng(seed)
    y = rng.normal(0.0, 1e-4, size=(n, 2))
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    lr = config.learning_rate if config.learning_rate is not None else max(n / 12.0, 1.0)

    for it in range(config.iterations):
        exaggerate = it < config.exaggeration_iterations
        momentum = config.initial_momentum if exaggerate else config.final_momentum
        _, grad = kl_gradient(p * config.early_exaggeration if exaggerate else p, y)
        # Delta-bar-delta: shrink gains where gradient and velocity share a sign.
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, config.min_gain)
        velocity = momentum * velocity - lr * gains * grad
        y = y + velocity
        y = y - y.mean(axis=0)
    labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels)
    return Embedding2D(y, labels, model_id, entropies)
