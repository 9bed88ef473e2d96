"""Small dense symmetric linear algebra (d <= ~32), float64 throughout."""

from typing import NamedTuple

import numpy as np

from . import kernels

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
PSD_CLAMP = 1e-10


class LinalgError(ValueError):
    pass


class NotSymmetricError(LinalgError):
    pass


class NotPSDError(LinalgError):
    def __init__(self, eigenvalue):
        self.eigenvalue = float(eigenvalue)
        super().__init__(f"matrix is not PSD: eigenvalue {self.eigenvalue:.3e} < -{PSD_CLAMP:g}")


class ConvergenceError(LinalgError):
    def __init__(self, sweeps, off):
        self.sweeps = sweeps
        super().__init__(f"Jacobi did not converge after {sweeps} sweeps (off-diagonal mass {off:.3e})")


class EigenDecomp(NamedTuple):
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns paired with eigenvalues

    def reconstruct(self):
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def sym_matrix(a, symmetrize=False):
    """Validate (or symmetrize) a square finite matrix and return a float64 copy."""
    a = np.array(a, dtype=np.float64, copy=True)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise LinalgError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise LinalgError("matrix has non-finite entries")
    if symmetrize:
        a = 0.5 * (a + a.T)
    elif not np.array_equal(a, a.T):
        raise NotSymmetricError(
            f"matrix is not symmetric (max |a - a^T| = {np.max(np.abs(a - a.T)):.3e})"
        )
    return a


def sym_eig(a):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Eigenvalues come back ascending; equal eigenvalues keep the order of the
    diagonal positions they converged to.
    """
    a = sym_matrix(a)
    w, v, sweeps, converged = kernels.jacobi_eig(a, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    if not converged:
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        raise ConvergenceError(sweeps, off)
    order = np.argsort(w, kind="stable")
    return EigenDecomp(np.asarray(w)[order], np.asarray(v)[:, order])


def sqrtm_psd(a):
    """Principal square root of a PSD matrix.

    Eigenvalues in [-1e-10, 0) are treated as roundoff and clamped to zero.
    """
    w, v = sym_eig(a)
    if w.size and w[0] < -PSD_CLAMP:
        raise NotPSDError(w[0])
    root = np.sqrt(np.clip(w, 0.0, None))
    out = (v * root) @ v.T
    return 0.5 * (out + out.T)


def frob_norm(a):
    a = np.asarray(a, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def op_norm(a):
    """Spectral norm of a symmetric matrix (largest |eigenvalue|)."""
    w, _ = sym_eig(a)
    return float(np.max(np.abs(w))) if w.size else 0.0


def rotation2(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def is_orthogonal(u, tol=1e-10):
    u = np.asarray(u, dtype=np.float64)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.max(np.abs(u.T @ u - np.eye(u.shape[0]))) <= tol


def spectral_norm(a):
    """Largest singular value of a (not necessarily symmetric) square matrix."""
    a = np.asarray(a, dtype=np.float64)
    g = a.T @ a
    return float(np.sqrt(max(op_norm(0.5 * (g + g.T)), 0.0)))
