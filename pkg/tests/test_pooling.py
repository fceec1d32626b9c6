import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from covpool.linalg import sym_eig, EigenSystem
from covpool.pooling import (
    NormalizationSpec,
    NormalizationError,
    Variant,
    covariance,
    elemwise_power,
    first_order_pool,
    normalized_eigenvalues,
    pool_forward,
    truncate_eigenvalues,
    vectorize_upper,
)


def features(d, n, seed):
    return np.random.default_rng(seed).standard_normal((d, n))


# ---------------------------------------------------------------------------
# covariance


def test_covariance_matches_numpy():
    x = features(5, 20, 0)
    p = covariance(x)
    ref = np.cov(x, bias=True)
    assert np.allclose(p, ref, atol=1e-14)


def test_covariance_is_psd():
    p = covariance(features(6, 4, 1))
    lam = np.linalg.eigvalsh(p)
    assert lam.min() > -1e-12


def test_covariance_centering_invariance():
    x = features(4, 10, 2)
    shifted = x + np.arange(4)[:, None] * 100.0
    assert np.allclose(covariance(x), covariance(shifted), atol=1e-9)


def test_covariance_rank_deficit():
    # N < d gives rank at most N - 1 after centering.
    x = features(8, 4, 3)
    lam = np.sort(np.linalg.eigvalsh(covariance(x)))[::-1]
    assert np.all(lam[3:] < 1e-12)


def test_covariance_rejects_nonfinite():
    x = features(3, 5, 4)
    x[1, 2] = np.inf
    with pytest.raises(ValueError, match="non-finite"):
        covariance(x)


def test_covariance_rejects_bad_ndim():
    with pytest.raises(ValueError):
        covariance(np.zeros(5))


# ---------------------------------------------------------------------------
# truncation


def test_truncate_keeps_separated_spectrum():
    eig = sym_eig(np.diag([4.0, 2.0, 1.0]))
    out = truncate_eigenvalues(eig)
    assert np.array_equal(out.lam, eig.lam)


def test_truncate_zeroes_tiny_eigenvalues():
    eig = EigenSystem(u=np.eye(3), lam=np.array([1.0, 1e-18, -1e-18]))
    out = truncate_eigenvalues(eig)
    assert out.lam[0] == 1.0
    assert np.all(out.lam[1:] == 0.0)


def test_truncate_threshold_is_ulp_at_top():
    top = 8.0
    just_below = float(np.spacing(top)) * 0.5
    just_above = float(np.spacing(top)) * 2.0
    eig = EigenSystem(u=np.eye(3), lam=np.array([top, just_above, just_below]))
    out = truncate_eigenvalues(eig)
    assert out.lam[1] == just_above
    assert out.lam[2] == 0.0


def test_truncate_all_nonpositive():
    eig = EigenSystem(u=np.eye(2), lam=np.array([0.0, -1.0]))
    out = truncate_eigenvalues(eig)
    assert np.all(out.lam == 0.0)


def test_truncate_f32_profile_coarser():
    eig = EigenSystem(u=np.eye(2), lam=np.array([1.0, 1e-9]))
    assert truncate_eigenvalues(eig).lam[1] == 1e-9
    assert truncate_eigenvalues(eig, dtype=np.float32).lam[1] == 0.0


# ---------------------------------------------------------------------------
# spectral normalizations


def spd_features(d, n, seed):
    x = features(d, n, seed)
    return x


@pytest.mark.parametrize("alpha", [0.5, 0.7, 1.0])
def test_mpn_matches_fractional_power(alpha):
    x = spd_features(5, 30, 10)
    q, tape = pool_forward(x, NormalizationSpec(variant=Variant.MPN, alpha=alpha))
    lam, u = np.linalg.eigh(covariance(x))
    ref = (u * np.maximum(lam, 0.0) ** alpha) @ u.T
    assert np.allclose(q, ref, atol=1e-10)


def test_mpn_half_is_matrix_square_root():
    x = spd_features(4, 40, 11)
    q, _ = pool_forward(x, NormalizationSpec(variant=Variant.MPN, alpha=0.5))
    assert np.allclose(q @ q, covariance(x), atol=1e-10)


def test_plain_is_identity_normalization():
    x = spd_features(4, 12, 12)
    q, _ = pool_forward(x, NormalizationSpec(variant=Variant.PLAIN))
    assert np.allclose(q, covariance(x), atol=1e-12)


def test_plain_ignores_alpha():
    spec = NormalizationSpec(variant=Variant.PLAIN, alpha=0.3)
    assert spec.effective_alpha == 1.0


def test_mpn_l2_unit_spectral_norm():
    x = spd_features(6, 25, 13)
    q, _ = pool_forward(x, NormalizationSpec(variant=Variant.MPN_L2, alpha=0.5))
    lam = np.linalg.eigvalsh(q)
    assert lam.max() == pytest.approx(1.0, abs=1e-10)


def test_mpn_fro_unit_frobenius_norm():
    x = spd_features(6, 25, 14)
    q, _ = pool_forward(x, NormalizationSpec(variant=Variant.MPN_FRO, alpha=0.5))
    assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-10)


def test_only_variants_are_alpha_one_reductions():
    x = spd_features(5, 20, 15)
    q_only, _ = pool_forward(x, NormalizationSpec(variant=Variant.M_L2_ONLY, alpha=0.5))
    q_one, _ = pool_forward(x, NormalizationSpec(variant=Variant.MPN_L2, alpha=1.0))
    assert np.allclose(q_only, q_one, atol=1e-12)
    q_only, _ = pool_forward(x, NormalizationSpec(variant=Variant.M_FRO_ONLY, alpha=0.5))
    q_one, _ = pool_forward(x, NormalizationSpec(variant=Variant.MPN_FRO, alpha=1.0))
    assert np.allclose(q_only, q_one, atol=1e-12)


def test_log_e_shifts_spectrum():
    x = spd_features(4, 30, 16)
    spec = NormalizationSpec(variant=Variant.LOG_E, eps_log=1e-3)
    q, tape = pool_forward(x, spec)
    assert np.allclose(
        np.sort(np.linalg.eigvalsh(q)),
        np.sort(np.log(tape.eig.lam + 1e-3)),
        atol=1e-10,
    )


def test_log_e_rejects_too_negative_shift():
    lam = np.array([1.0, 0.0])
    with pytest.raises(NormalizationError):
        normalized_eigenvalues(lam - 2.0, NormalizationSpec(variant=Variant.LOG_E))


def test_mpn_zero_eigenvalue_is_zero():
    # 0^alpha := 0, no epsilon shift.
    lam = np.array([4.0, 0.0])
    out = normalized_eigenvalues(lam, NormalizationSpec(variant=Variant.MPN, alpha=0.5))
    assert out[0] == 2.0
    assert out[1] == 0.0


def test_l2_normalization_requires_positive_top():
    with pytest.raises(NormalizationError):
        normalized_eigenvalues(
            np.zeros(3), NormalizationSpec(variant=Variant.MPN_L2)
        )


def test_spec_validation():
    with pytest.raises(ValueError):
        NormalizationSpec(alpha=0.0)
    with pytest.raises(ValueError):
        NormalizationSpec(eps_log=-1.0)
    with pytest.raises(ValueError):
        NormalizationSpec(beta=0.0)


# ---------------------------------------------------------------------------
# element-wise power


def test_elemwise_power_values():
    p = np.array([[4.0, -4.0], [-4.0, 0.0]])
    out = elemwise_power(p, beta=0.5, eps_elem=0.0)
    assert np.allclose(out, [[2.0, -2.0], [-2.0, 0.0]])


def test_elemwise_power_odd_symmetry():
    p = np.linspace(-3, 3, 16).reshape(4, 4)
    out = elemwise_power(p, 0.5, 1e-5)
    ref = elemwise_power(-p, 0.5, 1e-5)
    assert np.allclose(out, -ref)


def test_elemwise_variant_skips_eig():
    x = features(4, 9, 17)
    q, tape = pool_forward(x, NormalizationSpec(variant=Variant.ELEMWISE_POWER))
    assert tape.eig is None
    assert np.allclose(q, elemwise_power(tape.p, 0.5, 1e-5))


# ---------------------------------------------------------------------------
# vectorization and first-order pooling


def test_vectorize_upper_length_and_order():
    q = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    v = vectorize_upper(q)
    assert np.array_equal(v, [1, 2, 3, 4, 5, 6])


def test_vectorize_upper_dim_formula():
    d = 256
    q = np.eye(d)
    assert vectorize_upper(q).size == d * (d + 1) // 2 == 32896


def test_first_order_average_and_max():
    x = np.array([[1.0, 3.0], [-2.0, 0.0]])
    assert np.allclose(first_order_pool(x, "average"), [2.0, -1.0])
    assert np.allclose(first_order_pool(x, "max"), [3.0, 0.0])


def test_first_order_rejects_unknown_kind():
    with pytest.raises(ValueError):
        first_order_pool(np.ones((2, 2)), "median")


@settings(max_examples=25, deadline=None)
@given(
    d=st.integers(min_value=2, max_value=6),
    n=st.integers(min_value=4, max_value=20),
    seed=st.integers(min_value=0, max_value=1000),
)
def test_pool_forward_output_symmetric_psd_mpn(d, n, seed):
    x = features(d, n, seed)
    q, _ = pool_forward(x, NormalizationSpec(variant=Variant.MPN, alpha=0.5))
    assert np.allclose(q, q.T)
    assert np.linalg.eigvalsh(q).min() > -1e-8
