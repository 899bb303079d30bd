"""Softmax-family classification losses with hand-written gradients.

Every loss returns a :class:`LossOutput` holding the batch-mean loss and its
gradient with respect to the logits. The logit maps (linear and angular)
have matching ``*_backward`` functions returning input/parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DEFAULT_EPS, l2_normalize_rows, l2_normalize_rows_backward, masked_log_softmax

COS_CLAMP = 1e-7


@dataclass(frozen=True)
class MarginSpec:
    """Target logit ``s * (cos(m1 * theta + m2) - m3)``; others ``s * cos(theta)``.

    ``(1, 0, 0)`` is plain normalized softmax, ``(1, m, 0)`` ArcFace,
    ``(1, 0, m)`` CosFace, ``(m, 0, 0)`` SphereFace-style. With
    ``angular=False`` the head is an ordinary affine layer and the margins
    are ignored.
    """

    m1: float = 1.0
    m2: float = 0.5
    m3: float = 0.0
    s: float = 64.0
    angular: bool = True

    def __post_init__(self):
        if self.angular and not self.s > 0:
            raise ValueError("scale s must be positive")
        # m1 < 1 is allowed so the (0.9, 0.4, 0.15) combined margin is expressible.
        if not self.m1 > 0:
            raise ValueError("m1 must be positive")
        if self.m2 < 0 or self.m3 < 0:
            raise ValueError("m2 and m3 must be non-negative")

    @property
    def is_identity(self) -> bool:
        return self.m1 == 1.0 and self.m2 == 0.0

    @classmethod
    def linear(cls) -> "MarginSpec":
        return cls(1.0, 0.0, 0.0, 1.0, angular=False)


@dataclass
class LossOutput:
    loss: float
    grad_logits: np.ndarray


def _check_targets(targets, n: int, c: int) -> np.ndarray:
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != (n,):
        raise ValueError(f"expected {n} targets, got shape {t.shape}")
    if np.any(t < 0) or np.any(t >= c):
        raise ValueError("target label out of range")
    return t


def linear_logits(x, W, b=None) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if x.shape[1] != W.shape[1]:
        raise ValueError(f"embedding width {x.shape[1]} != weight width {W.shape[1]}")
    out = x @ W.T
    if b is not None:
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (W.shape[0],):
            raise ValueError("bias length must equal number of weight rows")
        out = out + b
    return out


def linear_logits_backward(x, W, grad):
    """Returns (d/dx, d/dW, d/db)."""
    return grad @ W, grad.T @ x, grad.sum(axis=0)


def _target_angle_terms(cos_t: np.ndarray, spec: MarginSpec):
    """Target logit and its derivative with respect to the raw cosine."""
    if spec.is_identity:
        return spec.s * (cos_t - spec.m3), np.full_like(cos_t, spec.s)
    lo, hi = -1.0 + COS_CLAMP, 1.0 - COS_CLAMP
    c = np.clip(cos_t, lo, hi)
    theta = np.arccos(c)
    phi = spec.m1 * theta + spec.m2
    capped = phi >= np.pi
    phi = np.minimum(phi, np.pi)
    logit = spec.s * (np.cos(phi) - spec.m3)
    # d/dc cos(m1*arccos(c) + m2) = m1 * sin(phi) / sqrt(1 - c^2)
    deriv = spec.s * spec.m1 * np.sin(phi) / np.sqrt(1.0 - c * c)
    inside = (cos_t > lo) & (cos_t < hi) & ~capped
    return logit, np.where(inside, deriv, 0.0)


def _cosines(x, W, eps):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if x.shape[1] != W.shape[1]:
        raise ValueError(f"embedding width {x.shape[1]} != weight width {W.shape[1]}")
    xn, Wn = l2_normalize_rows(x, eps), l2_normalize_rows(W, eps)
    return x, W, xn, Wn, xn @ Wn.T


def angular_logits(x, W, targets, spec: MarginSpec, eps: float = DEFAULT_EPS) -> np.ndarray:
    if not spec.angular:
        raise ValueError("angular_logits needs an angular margin spec")
    x, W, _, _, cos = _cosines(x, W, eps)
    t = _check_targets(targets, x.shape[0], W.shape[0])
    rows = np.arange(x.shape[0])
    logits = spec.s * cos
    target_logit, _ = _target_angle_terms(cos[rows, t], spec)
    logits[rows, t] = target_logit
    return logits


def angular_logits_backward(x, W, targets, spec: MarginSpec, grad, eps: float = DEFAULT_EPS):
    """Returns (d/dx, d/dW) given the upstream gradient on the logits."""
    x, W, xn, Wn, cos = _cosines(x, W, eps)
    t = _check_targets(targets, x.shape[0], W.shape[0])
    rows = np.arange(x.shape[0])
    dcos = spec.s * grad
    _, deriv = _target_angle_terms(cos[rows, t], spec)
    dcos[rows, t] = grad[rows, t] * deriv
    gxn = dcos @ Wn
    gWn = dcos.T @ xn
    return l2_normalize_rows_backward(x, gxn, eps), l2_normalize_rows_backward(W, gWn, eps)


def dataset_aware_loss(logits, targets, masks) -> LossOutput:
    """Mean cross-entropy with each row's softmax restricted to its mask.

    Masked-out classes get exactly zero gradient.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    n, c = logits.shape
    t = _check_targets(targets, n, c)
    masks = np.asarray(masks, dtype=bool)
    if masks.shape != logits.shape:
        raise ValueError(f"mask shape {masks.shape} does not match logits {logits.shape}")
    rows = np.arange(n)
    if not np.all(masks[rows, t]):
        raise ValueError("target masked out")
    logp = masked_log_softmax(logits, masks)
    loss = -float(np.mean(logp[rows, t]))
    grad = np.where(masks, np.exp(logp), 0.0)
    grad[rows, t] -= 1.0
    return LossOutput(max(0.0, loss), grad / n)


def softmax_loss(logits, targets) -> LossOutput:
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    return dataset_aware_loss(logits, targets, np.ones(logits.shape, dtype=bool))


def domain_loss(domain_logits, dataset_ids) -> LossOutput:
    """Dataset-classifier cross-entropy over the K datasets."""
    domain_logits = np.atleast_2d(np.asarray(domain_logits, dtype=np.float64))
    n, k = domain_logits.shape
    ids = np.asarray(dataset_ids)
    if ids.shape != (n,) or np.any(ids < 0) or np.any(ids >= k):
        raise ValueError(f"dataset label out of range [0, {k})")
    return softmax_loss(domain_logits, ids)
