"""ReLU network with explicit per-sample activation masks.

The rectifier is represented as a binary diagonal mask per sample and layer
(1 where the pre-activation is strictly positive), so the network restricted
to one sample and one instant is a masked linear map followed by softmax.
Training recomputes masks every step; the residual instrumentation freezes
them across a single measured step, which is the window in which the
linear-network balance law applies to the masked weights.

Mask convention: a unit with pre-activation exactly zero is masked off.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .data import ClassBatch
from .errors import DivergenceError, ShapeError
from .linalg import frobenius_norm
from .linear import LinearNet, end_to_end
from .trajectory import TrajectoryRecord

__all__ = [
    "ReluNet",
    "SymmetryResidual",
    "batch_step",
    "cross_entropy",
    "glorot_beta_for_relu",
    "mask_agreement",
    "masked_forward",
    "masked_layer_gradient",
    "per_sample_balance_residual",
    "relu_forward",
    "relu_forward_batch",
    "run_relu_training",
    "single_sample_step",
    "symmetry_residual",
    "train_relu",
]

# A ReLU net is a plain weight stack; biases are not modelled.
ReluNet = LinearNet

_DIVERGENCE_LIMIT = 1e12


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean softmax cross-entropy, computed in log-sum-exp form."""
    logits = np.atleast_2d(logits)
    targets = np.atleast_2d(targets)
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    return float(np.mean(lse - np.sum(shifted * targets, axis=1)))


def relu_forward_batch(
    net: LinearNet, inputs: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass for a batch of row-vector inputs.

    Returns class probabilities (m, k) and the realized masks, one boolean
    (m, width) array per layer.  The rectifier is applied after every layer
    including the last; probabilities come from a softmax over the masked
    output.
    """
    h = np.asarray(inputs, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != net.dims[0]:
        raise ShapeError(f"inputs must be (m, {net.dims[0]}), got {h.shape}")
    masks = []
    for w in net.weights:
        z = h @ w.T
        m = z > 0.0
        masks.append(m)
        h = np.where(m, z, 0.0)
    return _softmax(h), masks


def relu_forward(net: LinearNet, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Single-input forward pass; see ``relu_forward_batch``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("x must be a 1-D vector")
    probs, masks = relu_forward_batch(net, x[None, :])
    return probs[0], [m[0] for m in masks]


def _check_masks(net: LinearNet, masks, n_rows: int | None = None) -> list[np.ndarray]:
    if len(masks) != net.depth:
        raise ShapeError(f"need one mask per layer ({net.depth}), got {len(masks)}")
    out = []
    for l, m in enumerate(masks):
        m = np.asarray(m)
        width = net.weights[l].shape[0]
        expected = (width,) if n_rows is None else (n_rows, width)
        if m.shape != expected:
            raise ShapeError(f"mask {l} has shape {m.shape}, expected {expected}")
        out.append(m.astype(np.float64))
    return out


def masked_forward(net: LinearNet, x: np.ndarray, masks) -> np.ndarray:
    """Apply the weight stack with frozen masks; returns the raw output."""
    masks = _check_masks(net, masks)
    h = np.asarray(x, dtype=np.float64)
    for w, m in zip(net.weights, masks):
        h = (w @ h) * m
    return h


def masked_layer_gradient(
    net: LinearNet, x: np.ndarray, y: np.ndarray, masks, layer: int
) -> np.ndarray:
    """Descent direction for one layer of the frozen-mask network.

    Differentiates the softmax cross-entropy of ``masked_forward`` with the
    masks held constant and returns the negated gradient, so a descent step
    is ``W += eta * g``.  Rows whose mask entry is 0 are identically zero:
    those rows cannot influence the masked output.
    """
    if not 0 <= layer < net.depth:
        raise ShapeError(f"layer {layer} out of range for depth {net.depth}")
    masks = _check_masks(net, masks)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)

    activations = [x]
    h = x
    for w, m in zip(net.weights, masks):
        h = (w @ h) * m
        activations.append(h)
    err = y - _softmax(activations[-1])  # descent sign

    # Backpropagate through the frozen masks down to the requested layer.
    delta = err * masks[-1]
    for l in range(net.depth - 1, layer, -1):
        delta = (net.weights[l].T @ delta) * masks[l - 1]
    return np.outer(delta, activations[layer])


def single_sample_step(
    net: LinearNet, x: np.ndarray, y: np.ndarray, masks, eta: float
) -> LinearNet:
    """One descent step on a single sample with frozen masks.

    All layers update simultaneously from the same snapshot.
    """
    grads = [
        masked_layer_gradient(net, x, y, masks, layer)
        for layer in range(net.depth)
    ]
    return LinearNet([w + eta * g for w, g in zip(net.weights, grads)])


def _batch_gradients(
    weights: list[np.ndarray], inputs: np.ndarray, targets: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray], float]:
    """Full-batch descent directions with freshly realized masks.

    Returns (gradients, masks, loss); gradients are already averaged and
    negated, so ``W += eta * g`` descends the mean cross-entropy.
    """
    m = inputs.shape[0]
    activations = [inputs]
    masks = []
    h = inputs
    for w in weights:
        z = h @ w.T
        mask = z > 0.0
        masks.append(mask)
        h = np.where(mask, z, 0.0)
        activations.append(h)
    loss = cross_entropy(h, targets)
    err = (targets - _softmax(h)) / m

    depth = len(weights)
    grads: list[np.ndarray | None] = [None] * depth
    delta = err * masks[-1]
    for l in range(depth - 1, -1, -1):
        grads[l] = delta.T @ activations[l]
        if l > 0:
            delta = (delta @ weights[l]) * masks[l - 1]
    return grads, masks, loss


def batch_step(
    net: LinearNet, batch: ClassBatch, eta: float
) -> tuple[LinearNet, list[np.ndarray], float]:
    """One full-batch descent step; masks are recomputed at the snapshot.

    Returns (updated net, masks realized at the pre-step weights, pre-step
    loss).
    """
    grads, masks, loss = _batch_gradients(net.weights, batch.inputs, batch.targets)
    stepped = LinearNet([w + eta * g for w, g in zip(net.weights, grads)])
    return stepped, masks, loss


def _active_block_residual(
    before: LinearNet, after: LinearNet, lo_mask: np.ndarray, hi_mask: np.ndarray, pair: int
) -> float:
    """Residual of the balance law on one sample's active sub-block."""

    def gram_pair(net: LinearNet) -> tuple[np.ndarray, np.ndarray]:
        w_lo = lo_mask[:, None] * net.weights[pair]
        w_hi = hi_mask[:, None] * net.weights[pair + 1]
        q_hi = (w_hi.T @ w_hi) * np.outer(lo_mask, lo_mask)
        q_lo = w_lo @ w_lo.T
        return q_hi, q_lo

    hi0, lo0 = gram_pair(before)
    hi1, lo1 = gram_pair(after)
    return frobenius_norm((hi1 - hi0) - (lo1 - lo0))


def per_sample_balance_residual(
    net_before: LinearNet, net_after: LinearNet, masks
) -> np.ndarray:
    """Balance-law residual of a single-sample step, per adjacent pair.

    With the masks frozen, the sample sees a linear network in the masked
    weights, and the adjacent-layer Gram matrices restricted to the sample's
    active units change identically to first order; the restriction matters
    because rows the lower mask switches off never move, while the upper
    layer's Gram matrix still picks up first-order mass there.  The returned
    residual therefore shrinks quadratically with the step size.

    ``masks`` must be the frozen masks the step was taken with (one 1-D
    mask per layer); the two nets are the pre- and post-step snapshots.
    """
    masks = _check_masks(net_before, masks)
    out = np.empty(net_before.depth - 1)
    for pair in range(net_before.depth - 1):
        out[pair] = _active_block_residual(
            net_before, net_after, masks[pair], masks[pair + 1], pair
        )
    return out


@dataclass(frozen=True)
class SymmetryResidual:
    """Aggregate balance-law residual of a full-batch step.

    Attributes:
        total: per pair, ``|D(W[l+1].T W[l+1]) - D(W[l] W[l].T)|_F`` across
            the step (raw weights, no masks).
        cross_terms: per pair, the norm of the change in the cross-sample
            component -- the average over ordered sample pairs (i != j) of
            the masked-weight products.  Empty (zero) when the batch has a
            single sample; this is the part that survives the per-sample
            cancellation and breaks the growth symmetry.
    """

    total: np.ndarray
    cross_terms: np.ndarray


def _cross_components(
    net: LinearNet, masks: list[np.ndarray], pair: int
) -> tuple[np.ndarray, np.ndarray]:
    m = masks[0].shape[0]
    lo = masks[pair].astype(np.float64)
    hi = masks[pair + 1].astype(np.float64)
    denom = m * m - m
    c_hi = hi.sum(axis=0)
    cross_hi = (net.weights[pair + 1].T * (c_hi * c_hi - c_hi)) @ net.weights[
        pair + 1
    ] / denom
    gram_lo = net.weights[pair] @ net.weights[pair].T
    c_lo = lo.sum(axis=0)
    cross_lo = gram_lo * (np.outer(c_lo, c_lo) - lo.T @ lo) / denom
    return cross_hi, cross_lo


def symmetry_residual(
    net_before: LinearNet, net_after: LinearNet, masks
) -> SymmetryResidual:
    """Aggregate growth-symmetry residual across one full-batch step.

    ``masks`` are the per-layer (m, width) boolean masks realized at the
    pre-step weights (the frozen window).  The ``total`` component uses the
    raw weights; ``cross_terms`` isolates the sample-coupling part, which
    vanishes exactly for a single sample and stays first order in the step
    size once two samples disagree on a mask.
    """
    masks = [np.asarray(m) for m in masks]
    if masks[0].ndim != 2:
        raise ShapeError("symmetry_residual expects batched (m, width) masks")
    n_samples = masks[0].shape[0]
    depth = net_before.depth
    total = np.empty(depth - 1)
    cross = np.zeros(depth - 1)
    for pair in range(depth - 1):
        def gram_gap(net: LinearNet) -> np.ndarray:
            hi = net.weights[pair + 1]
            lo = net.weights[pair]
            return hi.T @ hi - lo @ lo.T

        total[pair] = frobenius_norm(gram_gap(net_after) - gram_gap(net_before))
        if n_samples > 1:
            hi0, lo0 = _cross_components(net_before, masks, pair)
            hi1, lo1 = _cross_components(net_after, masks, pair)
            cross[pair] = frobenius_norm((hi1 - hi0) - (lo1 - lo0))
    return SymmetryResidual(total=total, cross_terms=cross)


def _mask_signatures(masks: list[np.ndarray], layer: int) -> list[bytes]:
    """Hashable per-sample signature of the masks at layers >= layer."""
    stacked = np.hstack([m.astype(np.uint8) for m in masks[layer:]])
    packed = np.packbits(stacked, axis=1)
    return [row.tobytes() for row in packed]


def mask_agreement(masks, labels, layer: int) -> float:
    """Fraction of same-label pairs with identical masks from a layer up.

    A pair agrees when the two samples share every mask entry at layers
    ``layer, layer + 1, ..., L - 1``; the fraction is over all unordered
    same-label pairs.  Agreement is non-decreasing in ``layer`` by
    construction (fewer layers need to match).
    """
    masks = [np.asarray(m) for m in masks]
    if not 0 <= layer < len(masks):
        raise ShapeError(f"layer {layer} out of range for {len(masks)} masks")
    labels = np.asarray(labels)
    signatures = _mask_signatures(masks, layer)
    same = 0
    agree = 0
    for label in np.unique(labels):
        idx = np.nonzero(labels == label)[0]
        g = len(idx)
        if g < 2:
            continue
        same += g * (g - 1) // 2
        counts = Counter(signatures[i] for i in idx)
        agree += sum(c * (c - 1) // 2 for c in counts.values())
    if same == 0:
        raise ValueError("no same-label pairs to compare")
    return agree / same


def glorot_beta_for_relu(dims) -> float:
    """Glorot scale that keeps activations alive through a deep ReLU stack.

    With per-entry variance ``beta / (fan_in * fan_out)``, a hidden layer
    preserves pre-activation variance when ``beta = 2 * fan_out``; using the
    widest hidden layer keeps every hidden map at or above that scale.
    """
    if len(dims) < 3:
        return 2.0 * dims[-1]
    return 2.0 * max(dims[1:-1])


def train_relu(net: LinearNet, batch: ClassBatch, cfg) -> TrajectoryRecord:
    """Full-batch descent on softmax cross-entropy with per-step masks.

    Masks are recomputed at every step.  At each recorded snapshot the log
    keeps layer norms, loss, and mask-agreement fractions; over each
    recorded interval it keeps the growth-symmetry residuals (total and
    cross-sample components, rated per unit time) measured with the masks
    frozen at the interval start.

    Raises:
        DivergenceError: a layer norm exceeds the guard or goes non-finite.
    """
    record, _ = run_relu_training(net, batch, cfg)
    return record


def run_relu_training(
    net: LinearNet, batch: ClassBatch, cfg
) -> tuple[TrajectoryRecord, LinearNet]:
    """Same as ``train_relu`` but also hands back the final network."""
    labels = batch.labels
    steps_log, norms_log, loss_log, prod_log, agree_log = [], [], [], [], []
    gap_log, cross_log = [], []
    prev: tuple[LinearNet, list[np.ndarray], float] | None = None

    weights = [w.copy() for w in net.weights]
    diverged_at = None
    for step in range(cfg.steps + 1):
        norms = np.array([np.linalg.norm(w) for w in weights])
        if not np.all(np.isfinite(norms)) or np.any(norms > _DIVERGENCE_LIMIT):
            diverged_at = step
            break
        record_now = step % cfg.record_every == 0 or step == cfg.steps
        grads = None
        if record_now:
            snapshot = LinearNet(weights)
            grads, masks, loss = _batch_gradients(
                weights, batch.inputs, batch.targets
            )
            steps_log.append(step)
            norms_log.append(norms)
            loss_log.append(loss)
            prod_log.append(frobenius_norm(end_to_end(snapshot)))
            agree_log.append(
                [mask_agreement(masks, labels, l) for l in range(snapshot.depth)]
            )
            if prev is not None:
                prev_net, prev_masks, prev_time = prev
                res = symmetry_residual(prev_net, snapshot, prev_masks)
                dt = step * cfg.eta - prev_time
                if dt > 0:
                    gap_log.append(res.total / dt)
                    cross_log.append(res.cross_terms / dt)
                else:  # eta == 0: nothing moved, rate is zero
                    gap_log.append(np.zeros_like(res.total))
                    cross_log.append(np.zeros_like(res.cross_terms))
            prev = (snapshot, masks, step * cfg.eta)
        if step < cfg.steps:
            if grads is None:
                grads, _, _ = _batch_gradients(
                    weights, batch.inputs, batch.targets
                )
            weights = [w + cfg.eta * g for w, g in zip(weights, grads)]

    steps_arr = np.array(steps_log)
    record = TrajectoryRecord(
        steps=steps_arr,
        times=steps_arr * cfg.eta,
        layer_norms=np.array(norms_log),
        losses=np.array(loss_log),
        prod_norms=np.array(prod_log),
        eta=cfg.eta,
        growth_gaps=np.array(gap_log) if gap_log else None,
        cross_sample_gaps=np.array(cross_log) if cross_log else None,
        mask_agreement=np.array(agree_log) if agree_log else None,
    )
    if diverged_at is not None:
        err = DivergenceError(f"ReLU run diverged at step {diverged_at}",
                              diverged_at)
        err.partial = record if steps_log else None
        raise err
    return record, LinearNet(weights)
