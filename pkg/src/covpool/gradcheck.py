"""Finite-difference certification of the analytic backward formulas."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np

from .linalg import sym_eig
from .pooling import NormalizationSpec, Variant, covariance, pool_forward, vectorize_upper
from .gradients import pool_backward

DEFAULT_STEP = 1e-5
DEFAULT_THRESHOLD = 1e-5
# Floor inside the relative-error denominator so near-zero entries compare
# absolutely instead of blowing up.
REL_FLOOR = 1e-8


def finite_diff(
    fn: Callable[[np.ndarray], float],
    x: np.ndarray,
    h: float = DEFAULT_STEP,
    symmetric: bool = False,
) -> np.ndarray:
    """Central differences of a scalar function, entry by entry.

    With symmetric=True each off-diagonal perturbation touches (i, j) and
    (j, i) together (E_ij + E_ji), keeping the input in the symmetric cone;
    the result is then the gradient restricted to symmetric directions.
    """
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.ndindex(*x.shape)
    for idx in it:
        if symmetric and idx[0] > idx[1]:
            continue
        pert = np.zeros_like(x)
        pert[idx] = h
        if symmetric and idx[0] != idx[1]:
            pert[idx[1], idx[0]] = h
        hi = fn(x + pert)
        lo = fn(x - pert)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise ValueError(f"function is non-finite under perturbation at {idx}")
        g = (hi - lo) / (2.0 * h)
        grad[idx] = g
        if symmetric and idx[0] != idx[1]:
            grad[idx[1], idx[0]] = g
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / denom


@dataclass(frozen=True)
class GradCheckReport:
    variant: str
    alpha: float
    dims: tuple[int, int]
    max_rel_err: float
    max_abs_err: float
    worst_entry: tuple[int, int]
    passed: bool
    seed: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["worst_entry"] = list(self.worst_entry)
        return d


def controlled_features(d: int, n: int, seed: int, gap_ratio: float = 1e-3) -> np.ndarray:
    """Feature matrix whose sample covariance has a controlled spectrum.

    The target eigenvalues are log-spaced so that all eigen-gaps stay at or
    above gap_ratio * lambda_1, keeping the K-matrix path well-conditioned.
    """
    if d < 2 or n < max(2, d // 2):
        raise ValueError(f"need d >= 2 and n >= d/2, got d={d}, n={n}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    r = min(d, n - 1)  # attainable covariance rank after centering
    lam_target = np.logspace(0.0, np.log10(max(gap_ratio * 10, 0.02)), r)
    z = rng.standard_normal((d, d))
    u_target, _ = np.linalg.qr(z)
    x0 = rng.standard_normal((d, n))
    p0 = covariance(x0)
    e0 = sym_eig(p0)
    # Whiten x0's covariance on its leading rank-r subspace and recolor it to
    # the target spectrum exactly.
    w = (u_target[:, :r] * np.sqrt(lam_target)) @ (e0.u[:, :r] / np.sqrt(e0.lam[:r])).T
    return w @ x0


def run_gradcheck(
    spec: NormalizationSpec,
    d: int,
    n: int,
    seed: int,
    h: float | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    method: str = "auto",
    dtype=np.float64,
) -> GradCheckReport:
    """Analytic dl/dX for l = <W, vec(Q)> versus central finite differences."""
    if h is None:
        # The element-wise power's curvature blows up as (|p| + eps)^(beta-2)
        # near zero entries, so its truncation error needs a finer step.
        h = 1e-6 if spec.variant is Variant.ELEMWISE_POWER else DEFAULT_STEP
    x = controlled_features(d, n, seed).astype(dtype)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0FFEE)))
    w = rng.standard_normal(d * (d + 1) // 2)

    def loss(xm: np.ndarray) -> float:
        q, _ = pool_forward(np.asarray(xm, dtype=dtype), spec)
        return float(w @ vectorize_upper(q).astype(np.float64))

    q, tape = pool_forward(x, spec)
    analytic = pool_backward(tape, w, method=method)
    numeric = finite_diff(loss, x, h=h)
    rel = relative_error(analytic, numeric)
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape)
    max_rel = float(rel[worst])
    max_abs = float(np.max(np.abs(analytic - numeric)))
    return GradCheckReport(
        variant=spec.variant.value,
        alpha=spec.alpha,
        dims=(d, n),
        max_rel_err=max_rel,
        max_abs_err=max_abs,
        worst_entry=(int(worst[0]), int(worst[1])),
        passed=max_rel < threshold,
        seed=seed,
    )


def reports_to_json(reports: list[GradCheckReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)


def all_variant_specs(alpha: float = 0.5) -> list[NormalizationSpec]:
    """One spec per variant, suitable for grid runs."""
    return [NormalizationSpec(variant=v, alpha=alpha) for v in Variant]
