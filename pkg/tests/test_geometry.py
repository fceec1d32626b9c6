import numpy as np
import pytest

from covpool.geometry import (
    ShrinkageRow,
    SingularMatrixError,
    log_euclidean_dist,
    pow_euclidean_dist,
    shrinkage_csv,
    shrinkage_table,
    spectrum_histogram,
    vnmle_minimize,
    vnmle_objective,
)
from covpool.linalg import apply_spectral, sym_eig, symmetrize


def random_spd(d, seed, lo=-1.0, hi=1.0):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.exp(rng.uniform(lo, hi, size=d))
    return symmetrize((q * lam) @ q.T)


# ---------------------------------------------------------------------------
# metrics


def test_metrics_vanish_on_equal_inputs():
    p = random_spd(5, 0)
    assert pow_euclidean_dist(p, p, 0.5) == 0.0
    assert log_euclidean_dist(p, p) == 0.0


def test_metrics_symmetric_in_arguments():
    p1, p2 = random_spd(4, 1), random_spd(4, 2)
    assert pow_euclidean_dist(p1, p2, 0.5) == pytest.approx(
        pow_euclidean_dist(p2, p1, 0.5)
    )
    assert log_euclidean_dist(p1, p2) == pytest.approx(log_euclidean_dist(p2, p1))


def test_pow_euclidean_alpha_one_is_euclidean():
    p1, p2 = random_spd(4, 3), random_spd(4, 4)
    assert pow_euclidean_dist(p1, p2, 1.0) == pytest.approx(np.linalg.norm(p1 - p2))


def test_pow_euclidean_commuting_closed_form():
    # On commuting (diagonal) inputs the distance reduces to the scalar formula.
    a = np.diag([4.0, 1.0])
    b = np.diag([9.0, 1.0])
    expected = (4.0**0.5 - 9.0**0.5) / 0.5
    assert pow_euclidean_dist(a, b, 0.5) == pytest.approx(abs(expected))


def test_pow_euclidean_rejects_nonpositive_alpha():
    p = random_spd(3, 5)
    with pytest.raises(ValueError):
        pow_euclidean_dist(p, p, 0.0)


def test_log_euclidean_rejects_singular():
    p = random_spd(3, 6)
    singular = np.diag([1.0, 1.0, 0.0])
    with pytest.raises(SingularMatrixError):
        log_euclidean_dist(p, singular)


def test_pow_to_log_convergence():
    p1, p2 = random_spd(5, 7), random_spd(5, 8)
    d_log = log_euclidean_dist(p1, p2)
    errs = [
        abs(pow_euclidean_dist(p1, p2, a) - d_log) for a in (1e-1, 1e-2, 1e-3)
    ]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] / d_log < 1e-3


# ---------------------------------------------------------------------------
# regularized MLE


def test_vnmle_minimizer_is_matrix_square_root():
    p = random_spd(5, 9)
    sigma = vnmle_minimize(p)
    root = apply_spectral(sym_eig(p), np.sqrt)
    rel = np.linalg.norm(sigma - root) / np.linalg.norm(root)
    assert rel < 1e-6


def test_vnmle_objective_larger_away_from_minimum():
    p = random_spd(4, 10)
    sigma = vnmle_minimize(p)
    base = vnmle_objective(sigma, p)
    assert vnmle_objective(1.3 * sigma, p) > base
    assert vnmle_objective(0.7 * sigma, p) > base


def test_vnmle_objective_rejects_singular_sigma():
    p = random_spd(3, 11)
    with pytest.raises(SingularMatrixError):
        vnmle_objective(np.diag([1.0, 1.0, 0.0]), p)


def test_vnmle_handles_psd_input():
    # Zero eigenvalues of P map to zero in the minimizer.
    p = np.diag([4.0, 0.0])
    sigma = vnmle_minimize(p)
    assert sigma[0, 0] == pytest.approx(2.0, abs=1e-6)
    assert sigma[1, 1] == 0.0


# ---------------------------------------------------------------------------
# spectrum histogram


def test_spectrum_histogram_counts_balance():
    rng = np.random.default_rng(12)
    mats = [rng.standard_normal((6, 4)) for _ in range(5)]
    hist = spectrum_histogram(mats, bins=20)
    assert hist.n_matrices == 5
    # Rank-deficient inputs (N=4 < d=6) force truncated zeros.
    assert hist.zero_count > 0
    assert hist.total_eigenvalues() == 5 * 6


def test_spectrum_histogram_clips_out_of_range():
    x = np.random.default_rng(13).standard_normal((3, 50)) * 1e5
    hist = spectrum_histogram([x], bins=10, lo=1e-2, hi=1.0)
    assert int(hist.counts.sum()) + hist.zero_count == 3


def test_spectrum_histogram_csv_header():
    hist = spectrum_histogram([np.random.default_rng(14).standard_normal((3, 9))], bins=5)
    lines = hist.to_csv().strip().split("\n")
    assert lines[0] == "bin_lo,bin_hi,count"
    assert len(lines) == 6


def test_spectrum_histogram_rejects_too_few_bins():
    with pytest.raises(ValueError):
        spectrum_histogram([], bins=1)


# ---------------------------------------------------------------------------
# shrinkage table


def test_shrinkage_spot_values():
    rows = shrinkage_table(np.array([50.0, 1e-3]))
    assert rows[0].f_sqrt == pytest.approx(7.1, abs=0.05)
    assert rows[0].f_log == pytest.approx(3.9, abs=0.05)
    assert rows[1].f_sqrt == pytest.approx(0.032, abs=5e-4)
    assert rows[1].f_log == pytest.approx(-6.9, abs=0.05)
    assert rows[1].d_log == pytest.approx(1e3)


def test_shrinkage_shrinks_above_one_stretches_below():
    lams = np.logspace(-3, 3, 101)
    for row in shrinkage_table(lams):
        if row.lam > 1.0:
            assert row.f_sqrt < row.lam
        elif row.lam < 1.0:
            assert row.f_sqrt > row.lam


def test_shrinkage_monotone_order_preserving():
    lams = np.logspace(-5, 3, 1000)
    rows = shrinkage_table(lams)
    sq = [r.f_sqrt for r in rows]
    lg = [r.f_log for r in rows]
    assert all(a < b for a, b in zip(sq, sq[1:]))
    assert all(a < b for a, b in zip(lg, lg[1:]))


def test_shrinkage_rejects_nonpositive():
    with pytest.raises(ValueError):
        shrinkage_table(np.array([1.0, 0.0]))


def test_shrinkage_csv_round_trip():
    rows = [ShrinkageRow(lam=2.0, f_sqrt=2.0**0.5, f_log=np.log(2.0), d_sqrt=0.5 / 2.0**0.5, d_log=0.5)]
    text = shrinkage_csv(rows)
    header, line = text.strip().split("\n")
    assert header == "lambda,f_sqrt,f_log,d_sqrt,d_log"
    vals = [float(v) for v in line.split(",")]
    assert vals[0] == 2.0
    assert vals[4] == 0.5
