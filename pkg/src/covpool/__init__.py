"""Matrix power normalized covariance pooling with exact backpropagation."""

from .linalg import EigenSystem, apply_spectral, norms, sym_eig
from .pooling import (
    NormalizationSpec,
    PoolingTape,
    Variant,
    covariance,
    elemwise_power,
    first_order_pool,
    normalize_spectrum,
    pool_forward,
    truncate_eigenvalues,
    vectorize_upper,
)
from .gradients import (
    SpectralGrads,
    fused_spectral_backward,
    grad_covariance,
    grad_eig,
    grad_elemwise,
    grad_normalization,
    pool_backward,
    unvectorize_upper,
)

__version__ = "0.1.0"

__all__ = [
    "EigenSystem",
    "NormalizationSpec",
    "PoolingTape",
    "SpectralGrads",
    "Variant",
    "apply_spectral",
    "covariance",
    "elemwise_power",
    "first_order_pool",
    "fused_spectral_backward",
    "grad_covariance",
    "grad_eig",
    "grad_elemwise",
    "grad_normalization",
    "normalize_spectrum",
    "norms",
    "pool_backward",
    "pool_forward",
    "sym_eig",
    "truncate_eigenvalues",
    "unvectorize_upper",
    "vectorize_upper",
]
