"""Backward pass of the pooling variants.

Implements the chain dl/dQ -> (dl/dU, dl/dLambda) -> dl/dP -> dl/dX for the
spectral normalizations, the element-wise baseline's direct gradient, and a
fused divided-difference (Loewner) backward that stays finite on repeated
eigenvalues.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import EigenSystem, symmetrize
from .pooling import (
    NormalizationSpec,
    PoolingTape,
    Variant,
    normalized_eigenvalues,
)

# Variants whose normalization is a pure eigenvalue-wise function, eligible for
# the fused Loewner backward. The norm-coupled variants (M-l2 / M-Fro scaling)
# mix eigenvalues and go through the exact two-step path.
PURE_SPECTRAL_VARIANTS = (Variant.PLAIN, Variant.MPN, Variant.LOG_E)


@dataclass(frozen=True)
class SpectralGrads:
    """dl/dU plus the diagonal of dl/dLambda (off-diagonals are zeroed)."""

    dl_du: np.ndarray
    dl_dlambda: np.ndarray


def default_gap_floor(lam: np.ndarray) -> float:
    top = float(lam[0]) if lam.size else 0.0
    return 1e-10 * max(top, 1.0)


def k_matrix(lam: np.ndarray, gap_floor: float) -> np.ndarray:
    """Antisymmetric K with K_ij = 1/(lambda_i - lambda_j), zero on the
    diagonal and on pairs whose gap is below gap_floor."""
    gaps = lam[:, None] - lam[None, :]
    with np.errstate(divide="ignore"):
        k = np.where(np.abs(gaps) < gap_floor, 0.0, 1.0 / gaps)
    np.fill_diagonal(k, 0.0)
    return k


def _power_dm1(lam: np.ndarray, alpha: float) -> np.ndarray:
    # lambda^(alpha-1) with truncated-zero eigenvalues contributing zero;
    # for alpha = 1 the exponent is 0 and the derivative is 1 everywhere.
    if alpha == 1.0:
        return np.ones_like(lam)
    out = np.zeros_like(lam)
    pos = lam > 0
    out[pos] = lam[pos] ** (alpha - 1.0)
    return out


def grad_normalization(tape: PoolingTape, dl_dq: np.ndarray) -> SpectralGrads:
    """Gradients of the loss w.r.t. U and Lambda for the spectral variants."""
    spec = tape.spec
    if spec.variant is Variant.ELEMWISE_POWER:
        raise ValueError("elemwise_power has no spectral gradients; use grad_elemwise")
    eig = tape.eig
    assert eig is not None
    lam = eig.lam
    u = eig.u
    alpha = spec.effective_alpha
    g = np.asarray(dl_dq)

    flam = normalized_eigenvalues(lam, spec)
    dl_du = (g + g.T) @ (u * flam)

    g_tilde_diag = np.einsum("ij,ik,jk->k", g, u, u)
    v = spec.variant
    if v in (Variant.PLAIN, Variant.MPN):
        dl_dlam = alpha * _power_dm1(lam, alpha) * g_tilde_diag
    elif v is Variant.LOG_E:
        dl_dlam = g_tilde_diag / (lam + spec.eps_log)
    elif v in (Variant.MPN_L2, Variant.M_L2_ONLY):
        lam1 = lam[0]
        tr_qg = float(np.sum(flam * g_tilde_diag))
        dl_dlam = (alpha / lam1**alpha) * _power_dm1(lam, alpha) * g_tilde_diag
        dl_dlam = np.where(lam > 0, dl_dlam, 0.0)
        dl_dlam[0] -= (alpha / lam1) * tr_qg
    elif v in (Variant.MPN_FRO, Variant.M_FRO_ONLY):
        powers = np.where(lam > 0, lam, 0.0) ** alpha
        powers[lam <= 0] = 0.0
        c2 = float(np.sum(powers**2))
        c = np.sqrt(c2)
        tr_qg = float(np.sum(flam * g_tilde_diag))
        dl_dlam = (alpha / c) * _power_dm1(lam, alpha) * g_tilde_diag
        dl_dlam -= (alpha / c2) * tr_qg * np.where(lam > 0, lam, 1.0) ** (2 * alpha - 1.0) * (lam > 0)
        dl_dlam = np.where(lam > 0, dl_dlam, 0.0)
    else:  # pragma: no cover - enum is exhaustive
        raise ValueError(f"unhandled variant {v}")
    return SpectralGrads(dl_du=dl_du, dl_dlambda=dl_dlam)


def grad_eig(eig: EigenSystem, grads: SpectralGrads, gap_floor: float | None = None) -> np.ndarray:
    """Backward through the eigendecomposition:
    dl/dP = U (K^T o (U^T dl/dU) + diag(dl/dLambda)) U^T, symmetrized."""
    if gap_floor is None:
        gap_floor = default_gap_floor(eig.lam)
    k = k_matrix(eig.lam, gap_floor)
    inner = k.T * (eig.u.T @ grads.dl_du)
    inner[np.diag_indices_from(inner)] = grads.dl_dlambda
    return symmetrize(eig.u @ inner @ eig.u.T)


def grad_covariance(x: np.ndarray, dl_dp: np.ndarray) -> np.ndarray:
    """Backward through P = X Ibar X^T: dl/dX = (dl/dP + dl/dP^T) X Ibar.

    X Ibar equals (1/N) times the row-centered X, so no N x N matrix is formed.
    """
    n = x.shape[1]
    xc = x - x.mean(axis=1, keepdims=True)
    return (dl_dp + dl_dp.T) @ xc / n


def grad_elemwise(tape: PoolingTape, dl_dq: np.ndarray) -> np.ndarray:
    """Gradient of the signed element-wise power; the sign factor cancels so
    d/dp [sign(p)(|p|+eps)^beta] = beta (|p|+eps)^(beta-1), used at p = 0 too."""
    spec = tape.spec
    if spec.variant is not Variant.ELEMWISE_POWER:
        raise ValueError("grad_elemwise requires the elemwise_power variant")
    return np.asarray(dl_dq) * spec.beta * (np.abs(tape.p) + spec.eps_elem) ** (spec.beta - 1.0)


def _spectral_derivative(lam: np.ndarray, spec: NormalizationSpec) -> np.ndarray:
    """f'(lambda) for the pure eigenvalue-wise variants."""
    v = spec.variant
    alpha = spec.effective_alpha
    if v is Variant.PLAIN:
        return np.ones_like(lam)
    if v is Variant.MPN:
        return alpha * _power_dm1(lam, alpha)
    if v is Variant.LOG_E:
        return 1.0 / (lam + spec.eps_log)
    raise ValueError(f"variant {v.value} is not an eigenvalue-wise function")


def fused_spectral_backward(
    tape: PoolingTape, dl_dq: np.ndarray, gap_floor: float | None = None
) -> np.ndarray:
    """dl/dP via the divided-difference (Loewner) form of the derivative of the
    spectral function: dl/dP = U (L o (U^T sym(dl/dQ) U)) U^T with
    L_ij = (f(li) - f(lj)) / (li - lj), and f'(li) on coincident pairs.

    Exact limit on repeated eigenvalues; equals the two-step path on
    well-separated spectra.
    """
    spec = tape.spec
    eig = tape.eig
    assert eig is not None
    lam = eig.lam
    if gap_floor is None:
        gap_floor = default_gap_floor(lam)
    flam = normalized_eigenvalues(lam, spec)
    fprime = _spectral_derivative(lam, spec)
    gaps = lam[:, None] - lam[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        loewner = (flam[:, None] - flam[None, :]) / gaps
    near = np.abs(gaps) < gap_floor
    loewner = np.where(near, fprime[:, None], loewner)
    if spec.variant is Variant.MPN and spec.alpha < 1.0:
        # Rows/columns of truncated-zero eigenvalues contribute nothing:
        # the forward treats 0^alpha as the constant 0.
        zero = lam <= 0
        loewner[zero, :] = 0.0
        loewner[:, zero] = 0.0
    g = symmetrize(np.asarray(dl_dq))
    return symmetrize(eig.u @ (loewner * (eig.u.T @ g @ eig.u)) @ eig.u.T)


def unvectorize_upper(g: np.ndarray, d: int, mode: str = "half") -> np.ndarray:
    """Adjoint-style reshape of an upper-triangle gradient back to d x d.

    mode "half" splits each off-diagonal weight evenly onto (i, j) and (j, i)
    (the true adjoint of vectorize_upper on symmetric matrices); mode "full"
    puts the whole weight on (i, j). Both pass through the symmetrization in
    the normalization backward.
    """
    g = np.asarray(g)
    expected = d * (d + 1) // 2
    if g.shape != (expected,):
        raise ValueError(f"gradient length {g.shape} does not match d={d} (need {expected})")
    out = np.zeros((d, d), dtype=g.dtype)
    iu = np.triu_indices(d)
    out[iu] = g
    if mode == "half":
        out = symmetrize(out)
    elif mode != "full":
        raise ValueError(f"unknown unvectorize mode {mode!r}")
    return out


def pool_backward(tape: PoolingTape, dl_dq: np.ndarray, method: str = "auto") -> np.ndarray:
    """Full backward from dl/dQ to dl/dX.

    method "exact" composes the normalization and eigendecomposition
    backwards (the K-matrix path); "fused" uses the Loewner form (pure
    eigenvalue-wise variants only); "auto" picks fused where available.
    """
    dl_dq = np.asarray(dl_dq)
    if dl_dq.ndim == 1:
        dl_dq = unvectorize_upper(dl_dq, tape.p.shape[0])
    if tape.spec.variant is Variant.ELEMWISE_POWER:
        return grad_covariance(tape.x, grad_elemwise(tape, dl_dq))
    if method == "auto":
        method = "fused" if tape.spec.variant in PURE_SPECTRAL_VARIANTS else "exact"
    if method == "fused":
        dl_dp = fused_spectral_backward(tape, dl_dq)
    elif method == "exact":
        grads = grad_normalization(tape, dl_dq)
        dl_dp = grad_eig(tape.eig, grads)
    else:
        raise ValueError(f"unknown backward method {method!r}")
    return grad_covariance(tape.x, dl_dp)
