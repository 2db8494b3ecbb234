"""Plasticity diagnostics computed on frozen network snapshots.

These are the quantities tracked across training to explain why an agent
stops learning: stable rank of the weight matrices (soft dimensionality of
what a layer spans), the average cosine similarity between neuron weight
vectors (redundancy), weight norms, policy entropy, and the spread of squared
input-output Jacobian entries.
"""

from __future__ import annotations

import numpy as np

from . import linalg, net


def stable_rank(w: np.ndarray) -> float:
    """sum(sigma_i^2) / sigma_max^2 == ||W||_F^2 / ||W||_2^2.

    A smooth lower bound on rank that ignores tiny singular values; equals n
    for any matrix with all singular values equal (e.g. scaled orthogonal).
    """
    sv = linalg.svd_values(w)
    if sv.size == 0 or sv[0] == 0.0:
        raise ValueError("stable rank of an all-zero matrix is undefined")
    return float(np.sum(sv * sv) / (sv[0] * sv[0]))


def avg_cosine_similarity(w: np.ndarray) -> float:
    """Mean pairwise cosine similarity of the rows of W (i != j)."""
    w = np.asarray(w, dtype=np.float64)
    n = w.shape[0]
    if n < 2:
        raise ValueError("need at least two rows for pairwise similarity")
    norms = np.sqrt(np.sum(w * w, axis=1))
    if np.any(norms == 0.0):
        raise ValueError("cosine similarity undefined for a zero row")
    unit = w / norms[:, None]
    gram = unit @ unit.T
    return float((np.sum(gram) - np.trace(gram)) / (n * (n - 1)))


def policy_entropy(policy, states: np.ndarray) -> float:
    """Mean policy entropy over a batch of states.

    Categorical: mean over states of -sum(p log p). Diagonal Gaussian with a
    state-independent log-std: closed form sum_d (0.5 log(2 pi e) + log_std_d).
    """
    states = np.atleast_2d(states)
    if states.shape[0] == 0:
        raise ValueError("policy entropy needs a nonempty state batch")
    if policy.kind == "categorical":
        logits, _ = policy.mlp.forward(states)
        z = logits - logits.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        p = np.exp(logp)
        return float(np.mean(-np.sum(p * logp, axis=1)))
    per_dim = 0.5 * (1.0 + np.log(2.0 * np.pi)) + policy.log_std
    return float(np.sum(per_dim))


def jacobian_sq_stats(mlp: net.Mlp, states: np.ndarray):
    """(mean, p5, p95) of squared input-output Jacobian entries, pooled
    over every state in the batch and every (output, input) pair.

    Percentiles use the linear-interpolation quantile definition.
    """
    jac = net.batch_jacobians(mlp, states)
    sq = (jac * jac).reshape(-1)
    return float(sq.mean()), float(np.percentile(sq, 5)), float(np.percentile(sq, 95))


def diagnostic_snapshot(policy, critic: net.Mlp, states: np.ndarray) -> dict:
    """All per-snapshot diagnostics in one record payload.

    Per-layer entries cover the hidden dense weight matrices in layer order;
    the Jacobian is taken on the actor's pre-distribution outputs.
    """
    payload: dict = {}
    for tag, mlp in (("actor", policy.mlp), ("critic", critic)):
        weights = mlp.hidden_dense_weights()
        payload[f"{tag}_stable_rank"] = [stable_rank(w) for w in weights]
        payload[f"{tag}_cosine_sim"] = [avg_cosine_similarity(w) for w in weights]
        payload[f"{tag}_weight_fro"] = [
            float(np.sqrt(linalg.frobenius_norm_sq(w))) for w in weights
        ]
    payload["policy_entropy"] = policy_entropy(policy, states)
    mean, p5, p95 = jacobian_sq_stats(policy.mlp, states)
    payload["jac_sq_mean"] = mean
    payload["jac_sq_p5"] = p5
    payload["jac_sq_p95"] = p95
    return payload
