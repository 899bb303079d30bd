"""Dense float64 helpers shared by every other module.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Masks are
boolean arrays. Nothing here keeps state except :class:`Prng`.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

DEFAULT_EPS = 1e-12
PRNG_ALGORITHM = "PCG64+BoxMuller"


class Prng:
    """Seeded random stream.

    Uniform draws come from numpy's PCG64 bit generator; Gaussian draws are
    produced from those uniforms with the Box-Muller transform so the whole
    stream is reproducible from the seed alone.
    """

    algorithm = PRNG_ALGORITHM

    def __init__(self, seed: int | tuple[int, ...]):
        self.seed = seed
        entropy = list(seed) if isinstance(seed, tuple) else int(seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def uniform(self, size=None) -> np.ndarray:
        """Draws in [0, 1)."""
        return self._gen.random(size)

    def normal(self, size, scale: float = 1.0) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        half = (n + 1) // 2
        u1 = 1.0 - self._gen.random(half)  # (0, 1], keeps log finite
        u2 = self._gen.random(half)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
        return scale * z.reshape(shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite values in {what}")


def masked_log_softmax(logits, mask) -> np.ndarray:
    """Log-softmax restricted to the active entries of ``mask``.

    Works on a single row or on an N x C batch. Inactive entries come back
    as ``-inf``; the max-subtraction and the sum only ever see active ones.
    """
    logits = np.asarray(logits, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if mask.shape != logits.shape:
        raise ValueError(f"mask shape {mask.shape} does not match logits {logits.shape}")
    _check_finite(logits, "logits")
    squeeze = logits.ndim == 1
    z = np.atleast_2d(logits)
    m = np.atleast_2d(mask)
    if not np.all(m.any(axis=1)):
        raise ValueError("empty active set")

    shift = np.where(m, z, -np.inf).max(axis=1, keepdims=True)
    centered = np.where(m, z - shift, 0.0)
    lse = np.log(np.sum(np.where(m, np.exp(centered), 0.0), axis=1, keepdims=True))
    out = np.where(m, centered - lse, -np.inf)
    return out[0] if squeeze else out


def log_softmax(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    return masked_log_softmax(logits, np.ones(logits.shape, dtype=bool))


def l2_normalize_rows(M, eps: float = DEFAULT_EPS) -> np.ndarray:
    if eps <= 0:
        raise ValueError("eps must be positive")
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    norms = np.maximum(np.linalg.norm(M, axis=1, keepdims=True), eps)
    return M / norms


def l2_normalize_rows_backward(M, grad_out, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Vector-Jacobian product of :func:`l2_normalize_rows`."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    guarded = norms < eps
    safe = np.where(guarded, eps, norms)
    unit = M / safe
    radial = np.sum(unit * grad_out, axis=1, keepdims=True)
    # Below eps the divisor is the constant eps, so the map is linear.
    return np.where(guarded, grad_out / eps, (grad_out - unit * radial) / safe)


def finite_diff_grad(f: Callable[[np.ndarray], float], theta, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    if h <= 0:
        raise ValueError("h must be positive")
    theta = np.array(theta, dtype=np.float64)
    flat = theta.reshape(-1)
    grad = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(theta)
        flat[i] = orig - h
        fm = f(theta)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(theta.shape)


def glorot_uniform(prng: Prng, fan_out: int, fan_in: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return (2.0 * prng.uniform((fan_out, fan_in)) - 1.0) * a


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Norm-wise relative error between two gradient arrays."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / scale)
