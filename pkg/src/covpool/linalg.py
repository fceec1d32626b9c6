"""Dense symmetric linear algebra: eigendecomposition, spectral functions, norms.

All routines operate on numpy arrays in one of two precision profiles
(float32 or float64, selected by the dtype of the input) and are pure
functions: identical input bits produce identical output bits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numba import njit

F32 = np.float32
F64 = np.float64

# Off-diagonal convergence threshold relative to ||A||_F, per profile.
_EIG_TOL = {np.dtype(np.float32): 1e-6, np.dtype(np.float64): 1e-14}
_MAX_SWEEPS = 30


class EigenConvergenceError(RuntimeError):
    """Jacobi sweeps exhausted before the off-diagonal norm dropped below tolerance."""

    def __init__(self, residual: float, sweeps: int):
        super().__init__(
            f"eigendecomposition did not converge after {sweeps} sweeps "
            f"(off-diagonal residual {residual:.3e})"
        )
        self.residual = residual
        self.sweeps = sweeps


class SpectralFunctionError(ValueError):
    """A scalar function produced a non-finite value on an eigenvalue."""


@dataclass(frozen=True)
class EigenSystem:
    """Orthogonal eigenvectors (columns of u) with eigenvalues sorted non-increasing."""

    u: np.ndarray
    lam: np.ndarray

    @property
    def dim(self) -> int:
        return self.lam.shape[0]

    def reconstruct(self) -> np.ndarray:
        a = (self.u * self.lam) @ self.u.T
        return symmetrize(a)


def check_symmetric(a: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    scale = max(1.0, float(np.linalg.norm(a)))
    if np.max(np.abs(a - a.T)) > rtol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    return a


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


@njit(cache=True)
def _jacobi_sweeps(a, v, tol, max_sweeps):
    # Cyclic Jacobi: rotate away every (p, q) pair per sweep, accumulating
    # rotations into v. a is overwritten; its diagonal ends up holding the
    # eigenvalues. Returns the final off-diagonal residual and sweep count.
    d = a.shape[0]
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(d):
            for j in range(i + 1, d):
                off += a[i, j] * a[i, j]
        off = np.sqrt(2.0 * off)
        if off <= tol:
            return off, sweep
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(d):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(d):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(d):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    off = 0.0
    for i in range(d):
        for j in range(i + 1, d):
            off += a[i, j] * a[i, j]
    return np.sqrt(2.0 * off), max_sweeps


def _fix_eigenvector_signs(u: np.ndarray) -> np.ndarray:
    # Deterministic sign convention: the largest-magnitude component of each
    # eigenvector is made positive; magnitude ties resolve to the lowest index.
    d = u.shape[0]
    for j in range(d):
        col = u[:, j]
        k = int(np.argmax(np.abs(col)))
        if col[k] < 0:
            u[:, j] = -col
    return u


def sym_eig(a: np.ndarray) -> EigenSystem:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Eigenvalues come back sorted non-increasing; eigenvector signs follow the
    largest-magnitude-component-positive convention for reproducibility.
    """
    a = check_symmetric(a)
    dtype = a.dtype
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        a = a.astype(F64)
        dtype = a.dtype
    d = a.shape[0]
    work = symmetrize(a).astype(dtype, copy=True)
    v = np.eye(d, dtype=dtype)
    scale = float(np.linalg.norm(work))
    if scale == 0.0:
        return EigenSystem(u=v, lam=np.zeros(d, dtype=dtype))
    tol = _EIG_TOL[dtype] * scale
    residual, sweeps = _jacobi_sweeps(work, v, dtype.type(tol), _MAX_SWEEPS)
    if residual > tol:
        raise EigenConvergenceError(float(residual), int(sweeps))
    lam = np.diag(work).copy()
    order = np.argsort(-lam, kind="stable")
    lam = lam[order]
    u = _fix_eigenvector_signs(np.ascontiguousarray(v[:, order]))
    return EigenSystem(u=u, lam=lam)


def apply_spectral(e: EigenSystem, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """U diag(f(lam)) U^T for a scalar function f applied to the spectrum."""
    with np.errstate(invalid="ignore", divide="ignore"):
        flam = np.asarray(f(e.lam), dtype=e.lam.dtype)
    if flam.shape != e.lam.shape:
        raise ValueError("scalar function must map the spectrum element-wise")
    bad = ~np.isfinite(flam)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise SpectralFunctionError(
            f"scalar function produced {flam[i]!r} at eigenvalue {e.lam[i]!r} (index {i})"
        )
    return symmetrize((e.u * flam) @ e.u.T)


def norms(a: np.ndarray) -> tuple[float, float]:
    """(Frobenius norm, spectral norm) of a symmetric matrix.

    The spectral norm is the largest singular value, i.e. max |eigenvalue|;
    for PSD input that is the top eigenvalue.
    """
    a = check_symmetric(a)
    fro = float(np.sqrt(np.sum(a * a)))
    if fro == 0.0:
        return 0.0, 0.0
    e = sym_eig(a)
    return fro, float(np.max(np.abs(e.lam)))
