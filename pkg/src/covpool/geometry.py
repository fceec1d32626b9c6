"""SPD geometry and statistics: power/log-Euclidean metrics, the von Neumann
regularized MLE, and eigenvalue spectrum / shrinkage tabulation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .linalg import EigenSystem, apply_spectral, check_symmetric, sym_eig
from .pooling import covariance, truncate_eigenvalues


class SingularMatrixError(ValueError):
    """An operation requiring strictly positive eigenvalues met a singular matrix."""


def _eig_psd(p: np.ndarray) -> EigenSystem:
    return sym_eig(check_symmetric(p))


def pow_euclidean_dist(p: np.ndarray, p2: np.ndarray, alpha: float) -> float:
    """(1/alpha) ||P^alpha - P2^alpha||_F; defined for PSD inputs."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")

    def power(m):
        e = _eig_psd(m)
        lam = np.maximum(e.lam, 0.0)
        return (e.u * lam**alpha) @ e.u.T

    return float(np.linalg.norm(power(p) - power(p2)) / alpha)


def log_euclidean_dist(p: np.ndarray, p2: np.ndarray) -> float:
    """||log P - log P2||_F; requires strictly positive spectra (no silent eps)."""

    def logm(m):
        e = _eig_psd(m)
        if e.lam[-1] <= 0:
            raise SingularMatrixError(
                f"log-Euclidean metric needs strictly positive eigenvalues, got {e.lam[-1]}"
            )
        return apply_spectral(e, np.log)

    return float(np.linalg.norm(logm(p) - logm(p2)))


def vnmle_objective(sigma: np.ndarray, p: np.ndarray) -> float:
    """log|Sigma| + tr(Sigma^-1 P) + D_vN(I, Sigma).

    With log(I) = 0 the divergence term reduces to tr(-log Sigma - I + Sigma),
    so the whole objective decouples over Sigma's eigenvalues when Sigma and P
    commute.
    """
    es = _eig_psd(sigma)
    if es.lam[-1] <= 0:
        raise SingularMatrixError(
            f"objective needs Sigma positive definite, got eigenvalue {es.lam[-1]}"
        )
    logdet = float(np.sum(np.log(es.lam)))
    inv = (es.u / es.lam) @ es.u.T
    trace_term = float(np.trace(inv @ p))
    d = sigma.shape[0]
    dvn = float(-logdet - d + np.sum(es.lam))
    return logdet + trace_term + dvn


def _golden_min(fn, lo: float, hi: float, tol: float = 1e-10) -> float:
    """Golden-section minimization of a unimodal scalar function on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return 0.5 * (a + b)


def vnmle_minimize(p: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Numerical minimizer of the regularized-MLE objective over SPD Sigma.

    In P's eigenbasis the objective decouples into per-eigenvalue scalar
    problems g(s) = p_i / s + s - 1; each is minimized by golden section
    rather than solved in closed form, so the analytic prediction (the matrix
    square root) is verified instead of assumed.
    """
    ep = _eig_psd(p)
    lam = np.maximum(ep.lam, 0.0)
    sigma_lam = np.zeros_like(lam)
    for i, pi in enumerate(lam):
        if pi <= 0.0:
            continue
        root = np.sqrt(pi)
        sigma_lam[i] = _golden_min(lambda s: pi / s + s, 0.1 * root, 10.0 * root, tol)
    return (ep.u * sigma_lam) @ ep.u.T


@dataclass(frozen=True)
class SpectrumHistogram:
    bin_edges: np.ndarray  # log-spaced, len bins + 1
    counts: np.ndarray
    n_matrices: int
    zero_count: int  # truncated-zero eigenvalues, excluded from the bins

    def total_eigenvalues(self) -> int:
        return int(np.sum(self.counts)) + self.zero_count

    def to_csv(self) -> str:
        lines = ["bin_lo,bin_hi,count"]
        for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            lines.append(f"{lo!r},{hi!r},{int(c)}")
        return "\n".join(lines) + "\n"


def spectrum_histogram(
    features: Iterable[np.ndarray],
    bins: int = 100,
    lo: float = 1e-8,
    hi: float = 1e3,
) -> SpectrumHistogram:
    """Histogram of covariance eigenvalues over a stream of feature matrices.

    Nonzero (post-truncation) eigenvalues are clipped into log-spaced bins;
    truncated zeros are counted separately so the totals always balance.
    """
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    edges = np.logspace(np.log10(lo), np.log10(hi), bins + 1)
    counts = np.zeros(bins, dtype=np.int64)
    n_matrices = 0
    zero_count = 0
    for x in features:
        n_matrices += 1
        eig = truncate_eigenvalues(sym_eig(covariance(x)))
        nz = eig.lam[eig.lam > 0]
        zero_count += eig.lam.size - nz.size
        if nz.size:
            idx = np.clip(np.searchsorted(edges, nz, side="right") - 1, 0, bins - 1)
            np.add.at(counts, idx, 1)
    return SpectrumHistogram(
        bin_edges=edges, counts=counts, n_matrices=n_matrices, zero_count=zero_count
    )


@dataclass(frozen=True)
class ShrinkageRow:
    lam: float
    f_sqrt: float
    f_log: float
    d_sqrt: float
    d_log: float


def shrinkage_table(lambdas: np.ndarray) -> list[ShrinkageRow]:
    """Tabulate sqrt/log normalizations and their derivatives over a positive grid."""
    rows = []
    for lam in np.asarray(lambdas, dtype=np.float64):
        if lam <= 0:
            raise ValueError(f"shrinkage table requires positive eigenvalues, got {lam}")
        rows.append(
            ShrinkageRow(
                lam=float(lam),
                f_sqrt=float(np.sqrt(lam)),
                f_log=float(np.log(lam)),
                d_sqrt=float(0.5 / np.sqrt(lam)),
                d_log=float(1.0 / lam),
            )
        )
    return rows


def shrinkage_csv(rows: list[ShrinkageRow]) -> str:
    lines = ["lambda,f_sqrt,f_log,d_sqrt,d_log"]
    for r in rows:
        vals = (r.lam, r.f_sqrt, r.f_log, r.d_sqrt, r.d_log)
        lines.append(",".join(repr(float(v)) for v in vals))
    return "\n".join(lines) + "\n"
