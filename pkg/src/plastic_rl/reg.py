"""Regularizers that keep weight matrices trainable across task changes.

The main one drives each row block of a dense weight matrix toward mutually
orthogonal rows with a fixed squared norm, by penalizing how far W W^T sits
from s*I. Variants: contiguous row subgroups, an angle-only form computed on
row-normalized weights, and a strength that scales inversely with the square
of layer width so wider layers are not over-penalized.

Baselines: shrink-and-perturb (decay handled by the optimizer, perturbation
here), plus L2-to-initialization and its sorted-value (distributional)
variant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ParsevalSpec:
    strength: float = 1e-4          # loss weight before width scaling
    target_sq_norm: float = 2.0     # desired squared row norm
    groups: int = 1                 # contiguous row groups regularized independently
    angle_only: bool = False        # regularize row directions only
    base_width: int = 64            # width at which `strength` applies unscaled

    def validate(self) -> None:
        if self.strength < 0:
            raise ValueError("parseval strength must be >= 0")
        if self.target_sq_norm <= 0:
            raise ValueError("parseval target squared norm must be > 0")
        if self.groups < 1:
            raise ValueError("parseval groups must be >= 1")
        if self.base_width < 1:
            raise ValueError("parseval base_width must be >= 1")

    def effective_strength(self, layer_width: int) -> float:
        """Width-scaled weight: doubling the width divides the strength by 4."""
        return self.strength * (self.base_width / layer_width) ** 2


def _row_groups(w: np.ndarray, groups: int):
    rows = w.shape[0]
    if rows % groups != 0:
        raise ValueError(f"groups={groups} does not divide row count {rows}")
    size = rows // groups
    for g in range(groups):
        yield w[g * size:(g + 1) * size]


def _normalized_rows(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.sum(w * w, axis=1))
    if np.any(norms == 0.0):
        raise ValueError("angle-only regularization hit a zero row (undefined direction)")
    return w / norms[:, None], norms


# Reusable per-shape scratch buffers for the hot accumulate path; keyed by
# weight shape, one set per process (runs never share a process with another
# run's updates).
_WORKSPACE: dict = {}


def _workspace(shape):
    bufs = _WORKSPACE.get(shape)
    if bufs is None:
        rows, cols = shape
        bufs = (np.empty((rows, rows)), np.empty((rows, cols)))
        _WORKSPACE[shape] = bufs
    return bufs


def parseval_accumulate(w: np.ndarray, spec: ParsevalSpec, out_grad: np.ndarray) -> float:
    """Add the regularizer gradient into out_grad and return the loss.

    Allocation-free fast path for the common full-matrix case; grouped and
    angle-only variants fall back to the general routine. Same math as
    parseval_loss_and_grad.
    """
    if spec.groups != 1 or spec.angle_only:
        loss, grad = parseval_loss_and_grad(w, spec)
        out_grad += grad
        return loss
    lam = spec.effective_strength(w.shape[0])
    gram, tmp = _workspace(w.shape)
    np.dot(w, w.T, out=gram)
    idx = np.arange(w.shape[0])
    gram[idx, idx] -= spec.target_sq_norm
    flat = gram.reshape(-1)
    loss = lam * float(flat @ flat)
    np.dot(gram, w, out=tmp)
    tmp *= 4.0 * lam
    out_grad += tmp
    return loss


def parseval_loss(w: np.ndarray, spec: ParsevalSpec) -> float:
    spec.validate()
    lam = spec.effective_strength(w.shape[0])
    if spec.angle_only:
        w, _ = _normalized_rows(w)
        s = 1.0
    else:
        s = spec.target_sq_norm
    total = 0.0
    for wg in _row_groups(w, spec.groups):
        gram = wg @ wg.T
        np.fill_diagonal(gram, gram.diagonal() - s)
        flat = gram.reshape(-1)
        total += float(flat @ flat)
    return lam * total


def parseval_grad(w: np.ndarray, spec: ParsevalSpec) -> np.ndarray:
    return parseval_loss_and_grad(w, spec)[1]


def parseval_loss_and_grad(w: np.ndarray, spec: ParsevalSpec) -> tuple[float, np.ndarray]:
    """Loss and its exact gradient, sharing the Gram computation.

    Plain mode per group: 4 * lam * (W W^T - s I) W. Angle-only chains that
    through the row normalization, which leaves each row's gradient
    orthogonal to the row itself.
    """
    spec.validate()
    lam = spec.effective_strength(w.shape[0])
    if spec.angle_only:
        wn, norms = _normalized_rows(w)
        s = 1.0
    else:
        wn, norms = w, None
        s = spec.target_sq_norm
    rows = w.shape[0]
    if rows % spec.groups != 0:
        raise ValueError(f"groups={spec.groups} does not divide row count {rows}")
    if spec.groups == 1:
        gram = wn @ wn.T
        np.fill_diagonal(gram, gram.diagonal() - s)
        flat = gram.reshape(-1)
        total = float(flat @ flat)
        grad = gram @ wn
        grad *= 4.0 * lam
    else:
        grad = np.zeros_like(w)
        size = rows // spec.groups
        total = 0.0
        for g in range(spec.groups):
            sl = slice(g * size, (g + 1) * size)
            wg = wn[sl]
            gram = wg @ wg.T
            np.fill_diagonal(gram, gram.diagonal() - s)
            flat = gram.reshape(-1)
            total += float(flat @ flat)
            grad[sl] = (4.0 * lam) * (gram @ wg)
    if spec.angle_only:
        # d(w_i / |w_i|)/d w_i = (I - u u^T) / |w_i| applied to each row grad.
        radial = np.sum(grad * wn, axis=1, keepdims=True)
        grad = (grad - radial * wn) / norms[:, None]
    return lam * total, grad


@dataclass
class BaselineSpec:
    """Competing intervention configuration.

    kind: "none", "shrink_perturb", "regen" or "wregen". For shrink_perturb,
    weight decay runs inside the optimizer (decoupled) and the perturbation
    is applied after each optimizer step; for the regenerative kinds,
    `strength` weights the pull toward the initial parameter snapshot.
    """

    kind: str = "none"
    perturb_scale: float = 0.0
    weight_decay: float = 0.0
    strength: float = 0.0

    def validate(self) -> None:
        if self.kind not in ("none", "shrink_perturb", "regen", "wregen"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.perturb_scale < 0 or self.weight_decay < 0 or self.strength < 0:
            raise ValueError("baseline coefficients must be >= 0")


def apply_shrink_perturb(mlp, spec: BaselineSpec, rng: np.random.Generator) -> None:
    """Add perturb_scale * (fresh Xavier draw) to every dense weight matrix.

    Biases and the scale/norm layer parameters are left alone: a freshly
    initialized network has zeros there anyway.
    """
    if spec.perturb_scale == 0.0:
        return
    for layer in mlp.dense_layers():
        rows, cols = layer.w.shape
        std = np.sqrt(2.0 / (rows + cols))
        layer.w += spec.perturb_scale * rng.normal(0.0, std, size=(rows, cols))


def regen_loss_and_grad(params, snapshot, strength: float, wasserstein: bool = False):
    """Pull parameters toward their initial snapshot.

    Plain: strength * sum((p - p0)^2) with gradient 2 * strength * (p - p0).
    Wasserstein variant compares sorted values per tensor, with the gradient
    routed back through the sort permutation, so any within-tensor
    permutation of the current values is a minimum-preserving move.
    Returns (loss, [grad arrays parallel to params]).
    """
    if len(params) != len(snapshot):
        raise ValueError(
            f"snapshot has {len(snapshot)} tensors, parameters have {len(params)}"
        )
    loss = 0.0
    grads = []
    for p, p0 in zip(params, snapshot):
        p = np.asarray(p, dtype=np.float64)
        p0 = np.asarray(p0, dtype=np.float64)
        if p.shape != p0.shape:
            raise ValueError(f"snapshot shape {p0.shape} does not match parameter shape {p.shape}")
        if wasserstein:
            flat = p.reshape(-1)
            order = np.argsort(flat, kind="stable")
            diff_sorted = flat[order] - np.sort(p0.reshape(-1), kind="stable")
            loss += strength * float(np.sum(diff_sorted * diff_sorted))
            gflat = np.empty_like(flat)
            gflat[order] = 2.0 * strength * diff_sorted
            grads.append(gflat.reshape(p.shape))
        else:
            diff = p - p0
            loss += strength * float(np.sum(diff * diff))
            grads.append(2.0 * strength * diff)
    return loss, grads
