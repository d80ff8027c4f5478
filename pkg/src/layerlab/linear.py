"""Deep linear network: forward map, loss, analytic gradients, trainer.

The model is a stack of weight matrices applied in sequence with no
nonlinearity.  Training is plain full-batch gradient descent on the mean
squared-error loss; with whitened inputs the per-layer steepest-descent
direction has the closed product form implemented here, so a run doubles as
a small-step approximation of the continuous gradient flow.  All layer
updates within one step are computed from the same pre-step snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, input_second_moment
from .errors import DivergenceError, ShapeError, UnwhitenedDataError
from .linalg import as_matrix, frobenius_norm
from .trajectory import TrajectoryRecord

__all__ = [
    "CovarianceSummary",
    "FlowConfig",
    "LinearNet",
    "covariance",
    "end_to_end",
    "forward",
    "gd_step",
    "l2_loss",
    "layer_gradient",
    "run_training",
    "train",
]

# Covariance counts as whitened when within this Frobenius distance of I.
_WHITENED_TOL = 1e-8

# A trajectory is declared divergent when any layer norm passes this.
_DIVERGENCE_LIMIT = 1e12


@dataclass
class LinearNet:
    """Ordered stack of weight matrices.

    ``weights[l]`` maps activations of width ``dims[l]`` to width
    ``dims[l+1]``; adjacent shapes must chain.  Arrays are copied on
    construction and treated as immutable afterwards, so nets can be shared
    freely; the trainer returns new nets instead of mutating.
    """

    weights: list[np.ndarray]

    def __post_init__(self):
        if not self.weights:
            raise ShapeError("a network needs at least one weight matrix")
        self.weights = [as_matrix(w, f"weights[{i}]").copy()
                        for i, w in enumerate(self.weights)]
        for i in range(1, len(self.weights)):
            if self.weights[i].shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(
                    f"weights[{i}] has {self.weights[i].shape[1]} columns but "
                    f"weights[{i - 1}] has {self.weights[i - 1].shape[0]} rows"
                )

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def layer_norms(self) -> np.ndarray:
        return np.array([frobenius_norm(w) for w in self.weights])


@dataclass(frozen=True)
class FlowConfig:
    """Step size and duration of a gradient-descent run.

    ``tau`` is the reciprocal step size; it defaults to ``1/eta`` and the
    pair must satisfy ``eta * tau == 1`` (to 1e-12) when both are given.
    A zero step size is allowed for no-op runs, in which case ``tau`` is
    infinite.
    """

    eta: float
    steps: int
    record_every: int = 1
    tau: float | None = None

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")
        if self.steps < 1:
            raise ValueError(f"steps must be positive, got {self.steps}")
        if self.record_every < 1:
            raise ValueError(f"record_every must be positive, got {self.record_every}")
        if self.tau is None:
            object.__setattr__(
                self, "tau", 1.0 / self.eta if self.eta > 0 else float("inf")
            )
        elif self.eta == 0:
            raise ValueError("tau cannot be finite when eta is 0")
        elif abs(self.eta * self.tau - 1.0) > 1e-12:
            raise ValueError(
                f"eta * tau must equal 1, got {self.eta} * {self.tau} "
                f"= {self.eta * self.tau}"
            )


@dataclass(frozen=True)
class CovarianceSummary:
    """Input-output and input covariances of a dataset.

    ``whitened`` is True when the input covariance is the identity to within
    the detection tolerance.
    """

    sigma_yx: np.ndarray
    sigma_xx: np.ndarray
    whitened: bool

    @property
    def norm(self) -> float:
        return frobenius_norm(self.sigma_yx)


def covariance(data: Dataset) -> CovarianceSummary:
    """Sample covariances (1/m) * Y.T @ X and (1/m) * X.T @ X."""
    sigma_yx = data.targets.T @ data.inputs / data.n_samples
    sigma_xx = input_second_moment(data.inputs)
    eye = np.eye(sigma_xx.shape[0])
    whitened = float(np.linalg.norm(sigma_xx - eye)) <= _WHITENED_TOL
    return CovarianceSummary(sigma_yx=sigma_yx, sigma_xx=sigma_xx, whitened=whitened)


def forward(net: LinearNet, x: np.ndarray) -> np.ndarray:
    """Apply the weight stack to a single input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.dims[0]:
        raise ShapeError(f"input must be a vector of length {net.dims[0]}")
    for w in net.weights:
        x = w @ x
    return x


def end_to_end(net: LinearNet) -> np.ndarray:
    """Collapse the stack into the single matrix it realizes."""
    out = net.weights[0]
    for w in net.weights[1:]:
        out = w @ out
    return out


def l2_loss(net: LinearNet, data: Dataset) -> float:
    """Mean halved squared error over the dataset."""
    if data.input_dim != net.dims[0] or data.target_dim != net.dims[-1]:
        raise ShapeError(
            f"net maps {net.dims[0]} -> {net.dims[-1]} but data is "
            f"{data.input_dim} -> {data.target_dim}"
        )
    resid = data.inputs @ end_to_end(net).T - data.targets
    return 0.5 * float(np.sum(resid * resid)) / data.n_samples


def _require_whitened(cov: CovarianceSummary) -> None:
    if not cov.whitened:
        raise UnwhitenedDataError(
            "layer gradients assume identity input covariance; "
            "run data.whiten() on the dataset first"
        )


def _raw_gradients(weights: list[np.ndarray], sigma_yx: np.ndarray) -> list[np.ndarray]:
    """Steepest-descent directions for every layer, from one snapshot.

    For layer l the direction is ``suffix.T @ (sigma_yx - E) @ prefix.T``
    where E is the end-to-end matrix, prefix multiplies the layers below l
    and suffix the layers above (empty products are the identity).  This is
    exactly minus the gradient of the mean L2 loss on whitened data.
    """
    n = len(weights)
    # prefixes[l] = W_{l-1} ... W_0 ; suffixes[l] = W_{n-1} ... W_{l+1}
    prefixes: list[np.ndarray | None] = [None] * n
    acc = None
    for l in range(n):
        prefixes[l] = acc
        acc = weights[l] if acc is None else weights[l] @ acc
    e2e = acc
    suffixes: list[np.ndarray | None] = [None] * n
    acc = None
    for l in range(n - 1, -1, -1):
        suffixes[l] = acc
        acc = weights[l] if acc is None else acc @ weights[l]
    misfit = sigma_yx - e2e
    grads = []
    for l in range(n):
        g = misfit if suffixes[l] is None else suffixes[l].T @ misfit
        if prefixes[l] is not None:
            g = g @ prefixes[l].T
        grads.append(g)
    return grads


def layer_gradient(net: LinearNet, cov: CovarianceSummary, layer: int) -> np.ndarray:
    """Steepest-descent direction for one layer (0-based index).

    Equals minus the gradient of ``l2_loss`` with respect to that weight
    matrix, scaled so that a gradient-descent step is ``W += eta * g``.

    Raises:
        UnwhitenedDataError: the covariance summary is not whitened.
        ShapeError: layer index out of range.
    """
    _require_whitened(cov)
    if not 0 <= layer < net.depth:
        raise ShapeError(f"layer {layer} out of range for depth {net.depth}")
    return _raw_gradients(net.weights, cov.sigma_yx)[layer]


def gd_step(net: LinearNet, cov: CovarianceSummary, eta: float) -> LinearNet:
    """One gradient-descent step; all layers update from the same snapshot."""
    _require_whitened(cov)
    grads = _raw_gradients(net.weights, cov.sigma_yx)
    return LinearNet([w + eta * g for w, g in zip(net.weights, grads)])


def _conservation_matrices(weights: list[np.ndarray]) -> list[np.ndarray]:
    return [
        weights[l + 1].T @ weights[l + 1] - weights[l] @ weights[l].T
        for l in range(len(weights) - 1)
    ]


def train(
    net: LinearNet,
    data: Dataset,
    cfg: FlowConfig,
    alignment=None,
    record_conservation: bool = True,
) -> TrajectoryRecord:
    """Run full-batch gradient descent and log the trajectory.

    Snapshots are taken at step 0, every ``cfg.record_every`` steps, and at
    the final step.  Each snapshot records layer norms, loss, and the norm
    of the end-to-end map; the balancedness matrices per adjacent pair are
    kept unless ``record_conservation`` is off, and per-mode strengths are
    logged when a singular-basis ``alignment`` (see ``init``) is supplied.

    Raises:
        UnwhitenedDataError: the dataset is not whitened.
        DivergenceError: a layer norm exceeds the guard or goes non-finite;
            the error reports the offending step.
    """
    record, _ = run_training(
        net, data, cfg, alignment=alignment, record_conservation=record_conservation
    )
    return record


def run_training(
    net: LinearNet,
    data: Dataset,
    cfg: FlowConfig,
    alignment=None,
    record_conservation: bool = True,
) -> tuple[TrajectoryRecord, LinearNet]:
    """Same as ``train`` but also hands back the final network."""
    cov = covariance(data)
    _require_whitened(cov)
    if not data.whitened:
        raise UnwhitenedDataError("dataset flag says unwhitened; run data.whiten()")

    steps_log, norms_log, loss_log, prod_log = [], [], [], []
    cons_log: list[list[np.ndarray]] | None = [] if record_conservation else None
    mode_log = [] if alignment is not None else None

    # The loop works on raw arrays so the divergence guard, not the
    # LinearNet finiteness contract, is what reports a blow-up.
    weights = [w.copy() for w in net.weights]
    targets = data.targets
    inputs = data.inputs
    m = data.n_samples
    diverged_at = None
    for step in range(cfg.steps + 1):
        norms = np.array([np.linalg.norm(w) for w in weights])
        if not np.all(np.isfinite(norms)) or np.any(norms > _DIVERGENCE_LIMIT):
            diverged_at = step
            break
        if step % cfg.record_every == 0 or step == cfg.steps:
            e2e = weights[0]
            for w in weights[1:]:
                e2e = w @ e2e
            resid = inputs @ e2e.T - targets
            steps_log.append(step)
            norms_log.append(norms)
            loss_log.append(0.5 * float(np.sum(resid * resid)) / m)
            prod_log.append(float(np.linalg.norm(e2e)))
            if cons_log is not None:
                cons_log.append(_conservation_matrices(weights))
            if mode_log is not None:
                mode_log.append(alignment.project(LinearNet(weights)))
        if step < cfg.steps:
            grads = _raw_gradients(weights, cov.sigma_yx)
            weights = [w + cfg.eta * g for w, g in zip(weights, grads)]

    steps_arr = np.array(steps_log)
    record = TrajectoryRecord(
        steps=steps_arr,
        times=steps_arr * cfg.eta,
        layer_norms=np.array(norms_log),
        losses=np.array(loss_log),
        prod_norms=np.array(prod_log),
        eta=cfg.eta,
        sigma_yx_norm=cov.norm,
        conservation=cons_log,
        mode_strengths=np.array(mode_log) if mode_log is not None else None,
    )
    if diverged_at is not None:
        err = DivergenceError(
            f"trajectory diverged at step {diverged_at}", diverged_at
        )
        err.partial = record if steps_log else None
        raise err
    return record, LinearNet(weights)
