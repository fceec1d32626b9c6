import json

import numpy as np
import pytest

from covpool.gradcheck import (
    GradCheckReport,
    all_variant_specs,
    controlled_features,
    finite_diff,
    relative_error,
    reports_to_json,
    run_gradcheck,
)
from covpool.pooling import NormalizationSpec, Variant, covariance


def test_finite_diff_quadratic_exact():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])

    def f(x):
        return float(x.flatten() @ a.flatten())

    g = finite_diff(f, np.zeros((2, 2)))
    assert np.allclose(g, a, atol=1e-10)


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff(lambda x: 0.0, np.zeros(2), h=0.0)


def test_finite_diff_symmetric_mode():
    # Paired (i,j)/(j,i) perturbations double the off-diagonal sensitivity:
    # the result is the gradient along symmetric directions.
    w = np.array([[1.0, 2.0], [2.0, 3.0]])

    def f(p):
        return float(np.sum(w * p))

    g = finite_diff(f, np.eye(2), symmetric=True)
    expected = 2.0 * w - np.diag(np.diag(w))
    assert np.allclose(g, expected)


def test_relative_error_floor():
    # Near-zero entries compare absolutely via the 1e-8 floor.
    err = relative_error(np.array([1e-12]), np.array([0.0]))
    assert err[0] == pytest.approx(1e-4)


def test_controlled_features_spectrum():
    x = controlled_features(d=8, n=12, seed=0)
    lam = np.sort(np.linalg.eigvalsh(covariance(x)))[::-1]
    # Leading eigenvalue is 1 and all gaps are resolvable.
    assert lam[0] == pytest.approx(1.0, rel=1e-8)
    gaps = -np.diff(lam[:8])
    assert gaps.min() > 1e-4


def test_controlled_features_rank_limited():
    # n - 1 < d: the sample covariance cannot exceed rank n - 1.
    x = controlled_features(d=8, n=5, seed=1)
    lam = np.sort(np.linalg.eigvalsh(covariance(x)))[::-1]
    assert np.all(lam[4:] < 1e-10)
    assert lam[0] > 0.5


def test_controlled_features_validates_dims():
    with pytest.raises(ValueError):
        controlled_features(d=1, n=10, seed=0)
    with pytest.raises(ValueError):
        controlled_features(d=8, n=2, seed=0)


@pytest.mark.parametrize("variant", list(Variant))
def test_run_gradcheck_passes_each_variant(variant):
    spec = NormalizationSpec(variant=variant, alpha=0.5)
    report = run_gradcheck(spec, d=6, n=10, seed=0)
    assert report.passed, f"{variant.value}: max rel err {report.max_rel_err:.2e}"


def test_run_gradcheck_detects_wrong_gradient(monkeypatch):
    # Sabotage the backward and confirm the harness notices.
    import covpool.gradcheck as gc

    real = gc.pool_backward
    monkeypatch.setattr(gc, "pool_backward", lambda tape, g, method="auto": 1.1 * real(tape, g, method=method))
    spec = NormalizationSpec(variant=Variant.MPN, alpha=0.5)
    report = gc.run_gradcheck(spec, d=5, n=9, seed=2)
    assert not report.passed


def test_report_serialization_round_trip():
    spec = NormalizationSpec(variant=Variant.PLAIN)
    report = run_gradcheck(spec, d=4, n=8, seed=3)
    doc = json.loads(reports_to_json([report]))
    assert doc[0]["variant"] == "plain"
    assert doc[0]["passed"] is True
    assert doc[0]["dims"] == [4, 8]


def test_all_variant_specs_cover_enum():
    specs = all_variant_specs(alpha=0.7)
    assert {s.variant for s in specs} == set(Variant)
    assert all(s.alpha == 0.7 for s in specs)


def test_run_gradcheck_float32_profile():
    spec = NormalizationSpec(variant=Variant.MPN, alpha=0.5)
    report = run_gradcheck(
        spec, d=6, n=10, seed=4, h=1e-2, threshold=2e-2, dtype=np.float32
    )
    assert report.passed
