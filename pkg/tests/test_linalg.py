import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ictxot import linalg
from ictxot.linalg import ConvergenceError, NotPSDError, NotSymmetricError

from conftest import random_psd, random_sym


def test_identity_eigs():
    w, v = linalg.sym_eig(np.eye(3))
    np.testing.assert_array_equal(w, [1.0, 1.0, 1.0])
    assert linalg.is_orthogonal(v)
    # a permutation of the axes up to sign
    np.testing.assert_allclose(np.abs(v).sum(axis=0), 1.0)


def test_diagonal_sorted():
    w, v = linalg.sym_eig(np.diag([2.0, 1.0]))
    np.testing.assert_array_equal(w, [1.0, 2.0])
    np.testing.assert_allclose(np.abs(v), [[0, 1], [1, 0]])


def test_rotation_round_trip():
    r = linalg.rotation2(0.3)
    w, v = linalg.sym_eig(linalg.sym_matrix(r @ np.diag([1.0, 4.0]) @ r.T, symmetrize=True))
    np.testing.assert_allclose(w, [1.0, 4.0], atol=1e-12)
    for k in range(2):
        assert abs(abs(v[:, k] @ r[:, k]) - 1.0) < 1e-12


def test_ties_keep_diagonal_order():
    w, v = linalg.sym_eig(np.diag([3.0, 1.0, 3.0]))
    np.testing.assert_array_equal(w, [1.0, 3.0, 3.0])
    np.testing.assert_array_equal(np.abs(v[:, 1]), [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(np.abs(v[:, 2]), [0.0, 0.0, 1.0])


def test_asymmetric_rejected():
    with pytest.raises(NotSymmetricError):
        linalg.sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_non_finite_rejected():
    with pytest.raises(linalg.LinalgError):
        linalg.sym_eig(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_sweep_cap_reports_count(monkeypatch):
    monkeypatch.setattr(linalg, "JACOBI_MAX_SWEEPS", 0)
    with pytest.raises(ConvergenceError) as exc:
        linalg.sym_eig(np.array([[1.0, 0.5], [0.5, 2.0]]))
    assert exc.value.sweeps == 0


def test_sqrtm_examples():
    np.testing.assert_allclose(linalg.sqrtm_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)
    np.testing.assert_allclose(linalg.sqrtm_psd(np.eye(3)), np.eye(3), atol=1e-14)


def test_sqrtm_clamps_roundoff_and_rejects_negative():
    root = linalg.sqrtm_psd(np.diag([1.0, -5e-11]))
    np.testing.assert_allclose(root, np.diag([1.0, 0.0]))
    with pytest.raises(NotPSDError) as exc:
        linalg.sqrtm_psd(np.diag([1.0, -1e-6]))
    assert exc.value.eigenvalue == pytest.approx(-1e-6)


def test_norm_examples():
    z = np.zeros((3, 3))
    assert linalg.frob_norm(z) == 0.0 and linalg.op_norm(z) == 0.0
    a = np.diag([3.0, -4.0])
    assert linalg.frob_norm(a) == 5.0
    assert linalg.op_norm(a) == 4.0


@given(st.integers(1, 16), st.integers(0, 2**31 - 1))
def test_reconstruction_property(d, seed):
    a = random_sym(np.random.default_rng(seed), d)
    dec = linalg.sym_eig(a)
    assert np.all(np.diff(dec.eigenvalues) >= 0)
    assert np.max(np.abs(dec.eigenvectors.T @ dec.eigenvectors - np.eye(d))) < 1e-10
    rel = np.linalg.norm(dec.reconstruct() - a) / max(np.linalg.norm(a), 1e-300)
    assert rel < 1e-9


@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_sqrtm_squares_back(d, seed):
    a = random_psd(np.random.default_rng(seed), d)
    root = linalg.sqrtm_psd(a)
    np.testing.assert_array_equal(root, root.T)
    assert np.linalg.norm(root @ root - a) <= 1e-8 * np.linalg.norm(a)
    assert linalg.sym_eig(root).eigenvalues[0] >= -1e-10


@given(st.integers(1, 10), st.integers(0, 2**31 - 1), st.floats(-50, 50))
def test_shift_moves_eigenvalues(d, seed, c):
    a = random_sym(np.random.default_rng(seed), d)
    w = linalg.sym_eig(a).eigenvalues
    w_shift = linalg.sym_eig(linalg.sym_matrix(a + c * np.eye(d), symmetrize=True)).eigenvalues
    np.testing.assert_allclose(w_shift, w + c, atol=1e-9 * (1 + abs(c) + np.abs(w).max()))


@given(st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_norm_equivalence(d, seed):
    a = random_sym(np.random.default_rng(seed), d)
    op, fr = linalg.op_norm(a), linalg.frob_norm(a)
    assert op <= fr * (1 + 1e-12)
    assert fr <= np.sqrt(d) * op * (1 + 1e-12)


def test_eigenvalues_agree_with_lapack(rng):
    for d in (2, 5, 17, 32):
        a = random_sym(rng, d)
        np.testing.assert_allclose(linalg.sym_eig(a).eigenvalues, np.linalg.eigvalsh(a), atol=1e-10)


def test_spectral_norm_matches_svd(rng):
    a = rng.normal(size=(4, 4))
    assert linalg.spectral_norm(a) == pytest.approx(np.linalg.svd(a, compute_uv=False)[0], rel=1e-10)
