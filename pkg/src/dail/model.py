"""Embedding MLP, class head, dataset-classifier head and the gradient reversal junction.

Layout follows the usual three-part picture: ``G_f`` maps inputs to
embeddings, ``G_y`` classifies identities, ``G_d`` guesses the source
dataset. ``G_d`` reads the embeddings through a gradient reversal layer,
which is the identity going forward and scales gradients by ``-lambda``
coming back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import losses
from .losses import MarginSpec
from .numerics import Prng, glorot_uniform


@dataclass
class ModelParams:
    embed_layers: list[tuple[np.ndarray, np.ndarray]]
    class_w: np.ndarray
    class_b: np.ndarray | None = None
    domain_w: np.ndarray | None = None
    domain_b: np.ndarray | None = None
    margin: MarginSpec = field(default_factory=MarginSpec)
    lam: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        for (W, b), (W_next, _) in zip(self.embed_layers, self.embed_layers[1:]):
            if W_next.shape[1] != W.shape[0]:
                raise ValueError("embedding layer shapes do not chain")
        for W, b in self.embed_layers:
            if b.shape != (W.shape[0],):
                raise ValueError("embedding bias length mismatch")
        if self.embed_layers and self.class_w.shape[1] != self.embed_dim:
            raise ValueError("class head width differs from embedding dimension")
        if self.margin.angular and self.class_b is not None:
            raise ValueError("angular heads have no bias")
        if self.domain_w is not None and self.domain_w.shape[1] != self.class_w.shape[1]:
            raise ValueError("domain head width differs from embedding dimension")

    @property
    def embed_dim(self) -> int:
        return self.class_w.shape[1]

    @property
    def input_dim(self) -> int:
        return self.embed_layers[0][0].shape[1] if self.embed_layers else self.embed_dim

    @property
    def has_domain_head(self) -> bool:
        return self.domain_w is not None

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (W, b) in enumerate(self.embed_layers):
            out[f"embed.{i}.w"] = W
            out[f"embed.{i}.b"] = b
        out["class.w"] = self.class_w
        if self.class_b is not None:
            out["class.b"] = self.class_b
        if self.domain_w is not None:
            out["domain.w"] = self.domain_w
            out["domain.b"] = self.domain_b
        return out

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "ModelParams":
        """New params of the same structure holding the given arrays."""
        n = len(self.embed_layers)
        return ModelParams(
            embed_layers=[(arrays[f"embed.{i}.w"], arrays[f"embed.{i}.b"]) for i in range(n)],
            class_w=arrays["class.w"],
            class_b=arrays.get("class.b"),
            domain_w=arrays.get("domain.w"),
            domain_b=arrays.get("domain.b"),
            margin=self.margin,
            lam=self.lam,
        )

    def copy(self) -> "ModelParams":
        return self.with_arrays({k: v.copy() for k, v in self.named_arrays().items()})


def init_params(
    prng: Prng,
    input_dim: int,
    hidden: list[int] | tuple[int, ...],
    embed_dim: int,
    num_classes: int,
    num_datasets: int | None,
    margin: MarginSpec,
    lam: float = 0.1,
) -> ModelParams:
    """Glorot-uniform weights, zero biases.

    ``num_datasets=None`` builds a model without a dataset classifier.
    """
    widths = [input_dim, *hidden, embed_dim]
    layers = []
    for fan_in, fan_out in zip(widths, widths[1:]):
        layers.append((glorot_uniform(prng, fan_out, fan_in), np.zeros(fan_out)))
    class_w = glorot_uniform(prng, num_classes, embed_dim)
    class_b = None if margin.angular else np.zeros(num_classes)
    domain_w = domain_b = None
    if num_datasets is not None:
        domain_w = glorot_uniform(prng, num_datasets, embed_dim)
        domain_b = np.zeros(num_datasets)
    return ModelParams(layers, class_w, class_b, domain_w, domain_b, margin, lam)


@dataclass
class ForwardTrace:
    inputs: list[np.ndarray]  # input to each embedding layer
    pre: list[np.ndarray]  # affine outputs of each embedding layer
    embeddings: np.ndarray
    class_logits: np.ndarray | None = None
    domain_logits: np.ndarray | None = None


def embed_forward(params: ModelParams, X) -> ForwardTrace:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.input_dim:
        raise ValueError(f"input width {X.shape[1]} != model input width {params.input_dim}")
    inputs, pre = [], []
    h = X
    last = len(params.embed_layers) - 1
    for i, (W, b) in enumerate(params.embed_layers):
        inputs.append(h)
        z = h @ W.T + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    return ForwardTrace(inputs, pre, h)


def grl_forward(x: np.ndarray) -> np.ndarray:
    return x


def grl_backward(upstream, lam: float) -> np.ndarray:
    return -lam * np.asarray(upstream, dtype=np.float64)


def heads_forward(params: ModelParams, trace: ForwardTrace, targets):
    x = trace.embeddings
    if params.margin.angular:
        trace.class_logits = losses.angular_logits(x, params.class_w, targets, params.margin)
    else:
        trace.class_logits = losses.linear_logits(x, params.class_w, params.class_b)
    if params.has_domain_head:
        trace.domain_logits = losses.linear_logits(grl_forward(x), params.domain_w, params.domain_b)
    return trace.class_logits, trace.domain_logits


def forward(params: ModelParams, X, targets) -> ForwardTrace:
    trace = embed_forward(params, X)
    heads_forward(params, trace, targets)
    return trace


def embed_backward(params: ModelParams, trace: ForwardTrace, grad_x) -> dict[str, np.ndarray]:
    """Backpropagate an embedding gradient through the MLP."""
    grads = {}
    g = grad_x
    last = len(params.embed_layers) - 1
    for i in range(last, -1, -1):
        W, _ = params.embed_layers[i]
        if i < last:
            g = g * (trace.pre[i] > 0)
        grads[f"embed.{i}.w"] = g.T @ trace.inputs[i]
        grads[f"embed.{i}.b"] = g.sum(axis=0)
        g = g @ W
    return grads


@dataclass
class BackwardResult:
    grads: dict[str, np.ndarray]
    loss_cls: float
    loss_d: float | None
    grad_x_cls: np.ndarray
    grad_x_domain: np.ndarray | None  # dL_d/dx before the reversal


def backward(params: ModelParams, trace: ForwardTrace, y, k, masks, stage: int) -> BackwardResult:
    """Parameter gradients for one batch.

    Class head and embedder descend the classification loss. The dataset
    classifier descends its own loss in both stages. Only in stage 2 does
    the domain loss reach the embedder, reversed and scaled by ``lambda``.
    """
    if stage not in (1, 2):
        raise ValueError(f"invalid stage {stage!r}; expected 1 or 2")
    x = trace.embeddings
    cls = losses.dataset_aware_loss(trace.class_logits, y, masks)
    grads: dict[str, np.ndarray] = {}
    if params.margin.angular:
        gx_cls, grads["class.w"] = losses.angular_logits_backward(
            x, params.class_w, y, params.margin, cls.grad_logits
        )
    else:
        gx_cls, grads["class.w"], grads["class.b"] = losses.linear_logits_backward(
            x, params.class_w, cls.grad_logits
        )

    loss_d = gx_dom = None
    gx = gx_cls
    if params.has_domain_head:
        dom = losses.domain_loss(trace.domain_logits, k)
        loss_d = dom.loss
        gx_dom, grads["domain.w"], grads["domain.b"] = losses.linear_logits_backward(
            x, params.domain_w, dom.grad_logits
        )
        if stage == 2:
            gx = gx_cls + grl_backward(gx_dom, params.lam)

    grads.update(embed_backward(params, trace, gx))
    return BackwardResult(grads, cls.loss, loss_d, gx_cls, gx_dom)


def objectives(params: ModelParams, X, y, k, masks) -> tuple[float, float | None]:
    """Forward-only (L_cls, L_d); used by the finite-difference checks."""
    trace = forward(params, X, y)
    l_cls = losses.dataset_aware_loss(trace.class_logits, y, masks).loss
    l_d = losses.domain_loss(trace.domain_logits, k).loss if params.has_domain_head else None
    return l_cls, l_d
