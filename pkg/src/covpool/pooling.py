"""Forward pass of the pooling variants.

A feature matrix X (d channels x N spatial positions) is pooled into a d x d
matrix: sample covariance followed by one of several spectral normalizations,
or the element-wise signed-power baseline, or first-order mean/max pooling.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .linalg import EigenSystem, apply_spectral, check_symmetric, sym_eig, symmetrize


class Variant(str, enum.Enum):
    PLAIN = "plain"
    MPN = "mpn"
    MPN_L2 = "mpn_l2"
    MPN_FRO = "mpn_fro"
    M_L2_ONLY = "m_l2_only"
    M_FRO_ONLY = "m_fro_only"
    LOG_E = "log_e"
    ELEMWISE_POWER = "elemwise_power"


# Variants whose normalization is an eigenvalue-wise function plus a spectrum-
# dependent scale; the *_ONLY forms are the alpha = 1 reductions.
SPECTRAL_VARIANTS = (
    Variant.PLAIN,
    Variant.MPN,
    Variant.MPN_L2,
    Variant.MPN_FRO,
    Variant.M_L2_ONLY,
    Variant.M_FRO_ONLY,
    Variant.LOG_E,
)


class NormalizationError(ValueError):
    """A normalization precondition failed for the selected variant."""


@dataclass(frozen=True)
class NormalizationSpec:
    variant: Variant = Variant.MPN
    alpha: float = 0.5
    eps_log: float = 1e-3
    beta: float = 0.5
    eps_elem: float = 1e-5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.eps_log < 0:
            raise ValueError(f"eps_log must be non-negative, got {self.eps_log}")
        if self.eps_elem < 0:
            raise ValueError(f"eps_elem must be non-negative, got {self.eps_elem}")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must be in (0, 1], got {self.beta}")

    @property
    def effective_alpha(self) -> float:
        # The *_ONLY variants are defined as the alpha = 1 reductions.
        if self.variant in (Variant.M_L2_ONLY, Variant.M_FRO_ONLY, Variant.PLAIN):
            return 1.0
        return self.alpha


@dataclass(frozen=True)
class PoolingTape:
    """Cached forward intermediates consumed by the backward pass."""

    x: np.ndarray
    p: np.ndarray
    eig: EigenSystem | None
    q: np.ndarray
    spec: NormalizationSpec


def covariance(x: np.ndarray) -> np.ndarray:
    """Sample covariance P = X Ibar X^T with Ibar = (1/N)(I - (1/N) 1 1^T)."""
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("feature matrix contains non-finite entries")
    n = x.shape[1]
    xc = x - x.mean(axis=1, keepdims=True)
    return symmetrize((xc @ xc.T) / n)


def truncate_eigenvalues(eig: EigenSystem, dtype=None) -> EigenSystem:
    """Zero out eigenvalues below the floating-point spacing at the top eigenvalue.

    The threshold is the ulp spacing at lambda_1 in the active precision
    profile (dtype of the spectrum unless overridden).
    """
    lam = eig.lam
    dtype = np.dtype(dtype) if dtype is not None else lam.dtype
    lam1 = float(lam[0]) if lam.size else 0.0
    if lam1 <= 0.0:
        return EigenSystem(u=eig.u, lam=np.zeros_like(lam))
    thresh = float(np.spacing(dtype.type(lam1)))
    out = np.where(lam < thresh, 0.0, lam).astype(lam.dtype)
    return EigenSystem(u=eig.u, lam=out)


def _power(lam: np.ndarray, alpha: float) -> np.ndarray:
    # 0^alpha := 0 for every alpha > 0, so truncated spectra need no epsilon.
    out = np.zeros_like(lam)
    pos = lam > 0
    out[pos] = lam[pos] ** alpha
    return out


def normalized_eigenvalues(lam: np.ndarray, spec: NormalizationSpec) -> np.ndarray:
    """Apply the variant's scalar normalization to a truncated spectrum."""
    v = spec.variant
    alpha = spec.effective_alpha
    if v is Variant.PLAIN:
        return lam.copy()
    if v is Variant.MPN:
        return _power(lam, alpha)
    if v in (Variant.MPN_L2, Variant.M_L2_ONLY):
        if lam[0] <= 0:
            raise NormalizationError(
                f"{v.value}: leading eigenvalue must be positive, got {lam[0]}"
            )
        return _power(lam, alpha) / lam[0] ** alpha
    if v in (Variant.MPN_FRO, Variant.M_FRO_ONLY):
        powers = _power(lam, alpha)
        denom = float(np.sqrt(np.sum(powers**2)))
        if denom <= 0:
            raise NormalizationError(f"{v.value}: spectrum has zero Frobenius mass")
        return powers / denom
    if v is Variant.LOG_E:
        shifted = lam + spec.eps_log
        bad = shifted <= 0
        if np.any(bad):
            i = int(np.argmax(bad))
            raise NormalizationError(
                f"log_e: eigenvalue {lam[i]} + eps {spec.eps_log} is not positive"
            )
        return np.log(shifted)
    raise NormalizationError(f"variant {v.value} has no spectral normalization")


def normalize_spectrum(eig: EigenSystem, spec: NormalizationSpec) -> np.ndarray:
    flam = normalized_eigenvalues(eig.lam, spec)
    return symmetrize((eig.u * flam) @ eig.u.T)


def elemwise_power(p: np.ndarray, beta: float, eps_elem: float) -> np.ndarray:
    """Signed element-wise power: sign(p) * (|p| + eps)^beta."""
    p = np.asarray(p)
    if not np.all(np.isfinite(p)):
        raise ValueError("input contains non-finite entries")
    return np.sign(p) * (np.abs(p) + eps_elem) ** beta


def pool_forward(x: np.ndarray, spec: NormalizationSpec) -> tuple[np.ndarray, PoolingTape]:
    """Covariance -> eigendecomposition -> truncation -> normalization.

    The element-wise-power variant skips the eigendecomposition and operates
    on P directly; its tape carries eig=None.
    """
    p = covariance(x)
    if spec.variant is Variant.ELEMWISE_POWER:
        q = elemwise_power(p, spec.beta, spec.eps_elem)
        return q, PoolingTape(x=x, p=p, eig=None, q=q, spec=spec)
    eig = truncate_eigenvalues(sym_eig(p))
    q = normalize_spectrum(eig, spec)
    return q, PoolingTape(x=x, p=p, eig=eig, q=q, spec=spec)


def vectorize_upper(q: np.ndarray) -> np.ndarray:
    """Row-major upper-triangle (i <= j) entries, length d(d+1)/2, unscaled."""
    q = check_symmetric(q)
    iu = np.triu_indices(q.shape[0])
    return q[iu]


def first_order_pool(x: np.ndarray, kind: str) -> np.ndarray:
    """Per-channel mean or max over the N spatial positions."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError(f"feature matrix must be d x N with N >= 1, got {x.shape}")
    if kind == "average":
        return x.mean(axis=1)
    if kind == "max":
        return x.max(axis=1)
    raise ValueError(f"unknown first-order pooling kind {kind!r}")
