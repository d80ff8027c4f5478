"""layerlab: training-dynamics laboratory for deep linear and ReLU networks.

The package simulates full-batch gradient descent in deep linear networks
and mask-linearized ReLU networks, and measures the conserved quantities,
per-mode dynamics, and growth-rate bounds those systems obey.  The
functional core lives in ``linalg``, ``linear``, ``init``, ``diagnostics``,
``relu``, and ``data``; ``estimators`` wraps the trainers in scikit-learn
compatible classes; ``cli`` exposes the experiment harness.
"""

from .data import (
    ClassBatch,
    Dataset,
    MixtureSpec,
    gen_gaussian_mixture,
    gen_linear_targets,
    load_idx,
    make_mixture_regression,
    whiten,
    write_idx,
)
from .diagnostics import (
    BoundParams,
    balancedness_drift,
    bound_check,
    bound_trajectory,
    combined_strength,
    conservation_constant,
    estimate_kappas,
    integrate_mode_ode,
    layer_norm_spread,
    min_time_to_strength,
    mode_strengths,
    norm_gap,
)
from .errors import (
    AlignmentError,
    ConfigError,
    DivergenceError,
    IdxFormatError,
    LayerlabError,
    NumericalError,
    RankDeficiencyError,
    ShapeError,
    UnwhitenedDataError,
)
from .estimators import CovarianceWhitener, DeepLinearRegressor, MaskedReluClassifier
from .init import (
    ModeAlignment,
    balanced_orthogonal_init,
    glorot_init,
    saxe_aligned_init,
)
from .linalg import SvdResult, frobenius_norm, matmul, spectral_norm, svd, trace
from .linear import (
    CovarianceSummary,
    FlowConfig,
    LinearNet,
    covariance,
    end_to_end,
    forward,
    gd_step,
    l2_loss,
    layer_gradient,
    run_training,
    train,
)
from .relu import (
    ReluNet,
    batch_step,
    cross_entropy,
    glorot_beta_for_relu,
    mask_agreement,
    masked_forward,
    masked_layer_gradient,
    per_sample_balance_residual,
    relu_forward,
    relu_forward_batch,
    run_relu_training,
    single_sample_step,
    symmetry_residual,
    train_relu,
)
from .trajectory import TrajectoryRecord

__version__ = "0.1.0"
