"""Weight initialization schemes with controlled balancedness.

Three schemes are provided:

* ``glorot_init`` -- i.i.d. Gaussian entries whose variance is scaled by the
  product of the layer's fan-in and fan-out, so every layer starts with the
  same expected squared Frobenius norm.
* ``balanced_orthogonal_init`` -- chained singular factors with one shared
  spectrum, which makes the adjacent-layer balancedness matrices exactly
  zero at the start.
* ``saxe_aligned_init`` -- singular factors chained as above but with the
  outermost bases taken from the SVD of the input-output covariance, so
  each singular mode of the data evolves independently and can be read off
  layer by layer during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, ShapeError, UnwhitenedDataError
from .linalg import frobenius_norm, svd
from .linear import CovarianceSummary, LinearNet

__all__ = [
    "ModeAlignment",
    "balanced_orthogonal_init",
    "glorot_init",
    "saxe_aligned_init",
]

# Singular values of the covariance below this fraction of the largest are
# treated as zero when choosing how many modes to align.
_RANK_TOL = 1e-10


def _orthonormal_columns(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """Random (n, k) matrix with orthonormal columns, sign-fixed QR."""
    q, r = np.linalg.qr(rng.standard_normal((n, k)))
    return q * np.sign(np.diag(r))


def _check_dims(dims) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise ShapeError("dims needs an input and an output width")
    if any(d < 1 for d in dims):
        raise ShapeError(f"dims must be positive, got {dims}")
    return dims


def glorot_init(dims, beta: float = 1.0, seed: int = 0) -> LinearNet:
    """Gaussian entries with per-entry variance beta / (fan_in * fan_out).

    With this scaling every layer satisfies E[|W|_F^2] = beta regardless of
    its shape.  Deterministic for a given seed.
    """
    dims = _check_dims(dims)
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    rng = np.random.default_rng(seed)
    weights = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        std = np.sqrt(beta / (n_in * n_out))
        weights.append(std * rng.standard_normal((n_out, n_in)))
    return LinearNet(weights)


def balanced_orthogonal_init(dims, sigma_profile, seed: int = 0) -> LinearNet:
    """Chained singular factors sharing one spectrum.

    Each layer is built as ``W[l] = B[l+1] @ diag(sigma_profile) @ B[l].T``
    with random orthonormal bases, the output basis of one layer serving as
    the input basis of the next.  Consequently
    ``W[l+1].T @ W[l+1] == W[l] @ W[l].T`` holds exactly and all layers have
    identical Frobenius norm.
    """
    dims = _check_dims(dims)
    profile = np.asarray(sigma_profile, dtype=np.float64)
    if profile.ndim != 1 or profile.size == 0:
        raise ShapeError("sigma_profile must be a non-empty 1-D sequence")
    if np.any(profile < 0):
        raise ValueError("sigma_profile entries must be non-negative")
    max_rank = min(min(a, b) for a, b in zip(dims[:-1], dims[1:]))
    if profile.size > max_rank:
        raise ShapeError(
            f"sigma_profile has {profile.size} entries but the narrowest layer "
            f"supports at most {max_rank} modes"
        )
    rng = np.random.default_rng(seed)
    bases = [_orthonormal_columns(rng, d, profile.size) for d in dims]
    weights = [
        (bases[i + 1] * profile) @ bases[i].T for i in range(len(dims) - 1)
    ]
    return LinearNet(weights)


@dataclass(frozen=True)
class ModeAlignment:
    """Shared singular bases of an aligned network.

    ``left[l]`` and ``right[l]`` hold the output/input bases of layer l as
    orthonormal columns; ``right[l+1] is left[l]`` by construction.
    ``data_strengths`` are the singular values of the input-output
    covariance the alignment was built against, one per tracked mode.
    """

    left: tuple[np.ndarray, ...]
    right: tuple[np.ndarray, ...]
    data_strengths: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.data_strengths.size

    def project(self, net: LinearNet, tol: float = 1e-6) -> np.ndarray:
        """Per-layer, per-mode strengths read off by basis projection.

        Returns an (L, n_modes) array whose row l is
        ``diag(left[l].T @ W[l] @ right[l])``.

        Raises:
            AlignmentError: the weights no longer factor through the bases;
                the reconstruction residual (relative to ``max(1, |W|_F)``)
                exceeds ``tol``.
        """
        if net.depth != len(self.left):
            raise ShapeError(
                f"alignment covers {len(self.left)} layers, net has {net.depth}"
            )
        out = np.empty((net.depth, self.n_modes))
        for l, w in enumerate(net.weights):
            core = self.left[l].T @ w @ self.right[l]
            strengths = np.diag(core).copy()
            recon = (self.left[l] * strengths) @ self.right[l].T
            residual = frobenius_norm(w - recon) / max(1.0, frobenius_norm(w))
            if residual > tol:
                raise AlignmentError(
                    f"layer {l} strayed from its singular bases: projection "
                    f"residual {residual:.3e} exceeds {tol:.0e}"
                )
            out[l] = strengths
        return out


def saxe_aligned_init(
    dims,
    cov: CovarianceSummary,
    sigma0,
    seed: int = 0,
) -> tuple[LinearNet, ModeAlignment]:
    """Network whose singular bases match the data covariance.

    The outer bases come from the SVD of ``cov.sigma_yx`` (truncated to its
    numerical rank), interior bases are random orthonormal, and every mode
    starts at strength ``sigma0`` in each layer.  ``sigma0`` may also be a
    per-layer sequence to start the layers at unequal strengths.

    Returns the network together with the ``ModeAlignment`` needed to read
    per-mode strengths back off the weights during training.
    """
    dims = _check_dims(dims)
    if not cov.whitened:
        raise UnwhitenedDataError(
            "aligned initialization assumes whitened inputs; whiten the data first"
        )
    k, d = cov.sigma_yx.shape
    if (d, k) != (dims[0], dims[-1]):
        raise ShapeError(
            f"covariance maps {d} -> {k} but dims are {dims[0]} -> {dims[-1]}"
        )
    decomp = svd(cov.sigma_yx)
    rank = int(np.sum(decomp.sigma > _RANK_TOL * decomp.sigma[0]))
    if rank == 0:
        raise ShapeError("input-output covariance is numerically zero")
    max_rank = min(min(a, b) for a, b in zip(dims[:-1], dims[1:]))
    n_modes = min(rank, max_rank)

    depth = len(dims) - 1
    strengths = np.broadcast_to(
        np.asarray(sigma0, dtype=np.float64), (depth,)
    ).copy()
    if np.any(strengths <= 0):
        raise ValueError("sigma0 must be positive")

    rng = np.random.default_rng(seed)
    bases = [decomp.v[:, :n_modes]]
    for width in dims[1:-1]:
        bases.append(_orthonormal_columns(rng, width, n_modes))
    bases.append(decomp.u[:, :n_modes])

    weights = [
        (bases[l + 1] * strengths[l]) @ bases[l].T for l in range(depth)
    ]
    alignment = ModeAlignment(
        left=tuple(bases[1:]),
        right=tuple(bases[:-1]),
        data_strengths=decomp.sigma[:n_modes].copy(),
    )
    return LinearNet(weights), alignment
