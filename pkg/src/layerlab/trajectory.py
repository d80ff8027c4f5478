"""Time-indexed record of quantities logged while a network trains."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["TrajectoryRecord"]


@dataclass
class TrajectoryRecord:
    """Snapshot log produced by the trainers.

    All per-snapshot arrays share the leading length ``len(times)``.  The
    time axis is ``t = step * eta``.  Optional fields are populated only by
    the runs that measure them: ``conservation`` and ``mode_strengths`` by
    the linear trainer, the residual/agreement series by the ReLU trainer.

    Attributes:
        steps: recorded step indices (includes step 0 and the final step).
        times: recorded times, ``steps * eta``.
        layer_norms: (T, L) Frobenius norm of each weight matrix.
        losses: (T,) training loss.
        prod_norms: (T,) Frobenius norm of the end-to-end linear map.
        eta: step size the run used.
        sigma_yx_norm: Frobenius norm of the input-output covariance the run
            trained against, when known.
        conservation: per snapshot, per adjacent pair, the balancedness
            matrix ``W[l+1].T @ W[l+1] - W[l] @ W[l].T``.
        mode_strengths: (T, L, K) singular-basis projections per layer/mode.
        growth_gaps: (T-1, L-1) norm of the difference in adjacent-layer
            Gram-matrix changes per unit time over each recorded interval.
        cross_sample_gaps: (T-1, L-1) cross-sample component of the same
            quantity (masked ReLU runs only).
        mask_agreement: (T, L) fraction of same-label pairs with identical
            activation masks from each layer upward (masked ReLU runs only).
    """

    steps: np.ndarray
    times: np.ndarray
    layer_norms: np.ndarray
    losses: np.ndarray
    prod_norms: np.ndarray
    eta: float
    sigma_yx_norm: float | None = None
    conservation: list[list[np.ndarray]] | None = None
    mode_strengths: np.ndarray | None = None
    growth_gaps: np.ndarray | None = None
    cross_sample_gaps: np.ndarray | None = None
    mask_agreement: np.ndarray | None = None
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.times)
        for name in ("steps", "losses", "prod_norms"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length {len(getattr(self, name))} != {n}")
        if self.layer_norms.shape[0] != n:
            raise ValueError("layer_norms rows do not match times")
        if self.conservation is not None and len(self.conservation) != n:
            raise ValueError("conservation snapshots do not match times")
        if self.mode_strengths is not None and self.mode_strengths.shape[0] != n:
            raise ValueError("mode_strengths rows do not match times")

    @property
    def depth(self) -> int:
        return self.layer_norms.shape[1]

    def __len__(self) -> int:
        return len(self.times)

    def squared_norm_gaps(self) -> np.ndarray:
        """(T, L-1) series of ``|W[l]|_F**2 - |W[l+1]|_F**2`` per pair."""
        sq = self.layer_norms**2
        return sq[:, :-1] - sq[:, 1:]
