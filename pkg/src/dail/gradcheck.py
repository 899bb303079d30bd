"""Finite-difference check of every analytic parameter gradient on a tiny model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .losses import MarginSpec
from .numerics import Prng, finite_diff_grad, relative_error
from .registry import ClassTable
from .trainer import LOSS_MODES, TrainConfig, build_masks

TOLERANCE = 1e-4

MARGINS = {
    "linear": MarginSpec.linear(),
    "arcface": MarginSpec(1.0, 0.5, 0.0, 64.0),
    "combined": MarginSpec(0.9, 0.4, 0.15, 64.0),
}


@dataclass
class TinyProblem:
    params: model.ModelParams
    X: np.ndarray
    y: np.ndarray
    k: np.ndarray
    masks: np.ndarray


def tiny_problem(seed: int, loss_mode: str, margin: MarginSpec, lam: float = 0.1,
                 d_in: int = 3, hidden: int = 4, d: int = 2, n: int = 3) -> TinyProblem:
    """d_in=3, one hidden layer of 4, d=2, C=4 classes over K=2 datasets, N=3."""
    prng = Prng((seed, 11))
    table = ClassTable(np.array([0, 0, 1, 1]), 2)
    cfg = TrainConfig(loss_mode=loss_mode, margin=margin, lam=lam, cd_p=0.3)
    params = model.init_params(prng, d_in, [hidden], d, 4, 2 if cfg.uses_grl else None, margin, lam)
    arrays = params.named_arrays()
    for name, a in arrays.items():
        # Non-zero biases so every term is exercised.
        if name.endswith(".b"):
            a[...] = 0.1 * prng.normal(a.shape)
    X = prng.normal((n, d_in))
    k = np.array([0, 1, 0])[:n]
    y = np.array([int(prng.integers(0, 2)) + 2 * int(kk) for kk in k])
    masks = build_masks(cfg, table, k, prng)
    return TinyProblem(params, X, y, k, masks)


def check_problem(prob: TinyProblem, stage: int, h: float = 1e-6) -> dict[str, float]:
    """Relative error per parameter array against central differences.

    Embedder and class head are checked against ``L_cls`` (minus
    ``lambda * L_d`` in stage 2); the dataset classifier against ``L_d``.
    """
    p = prob.params
    trace = model.forward(p, prob.X, prob.y)
    res = model.backward(p, trace, prob.y, prob.k, prob.masks, stage)
    arrays = p.named_arrays()
    errors = {}
    for name, analytic in res.grads.items():

        def objective(theta, name=name):
            trial = p.with_arrays({**arrays, name: theta})
            l_cls, l_d = model.objectives(trial, prob.X, prob.y, prob.k, prob.masks)
            if name.startswith("domain."):
                return l_d
            if stage == 2 and l_d is not None:
                return l_cls - p.lam * l_d
            return l_cls

        numeric = finite_diff_grad(objective, arrays[name], h)
        errors[name] = relative_error(analytic, numeric)
    return errors


def run_gradcheck(seed: int = 0) -> dict[tuple[str, str, int], dict[str, float]]:
    """All loss modes x margins x stages; returns errors keyed by (mode, margin, stage)."""
    out = {}
    for mode in LOSS_MODES:
        for mname, margin in MARGINS.items():
            prob = tiny_problem(seed, mode, margin)
            for stage in (1, 2):
                out[(mode, mname, stage)] = check_problem(prob, stage)
    return out


def max_by_group(results) -> dict[str, float]:
    worst: dict[str, float] = {}
    for errs in results.values():
        for name, e in errs.items():
            worst[name] = max(worst.get(name, 0.0), e)
    return worst
