"""Kernels and squared-MMD estimators (unbiased U-statistic, biased V-statistic)."""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels

QUADRATIC = "Quadratic"
MULTI_SCALE_RBF = "MultiScaleRBF"


class DegenerateBandwidthWarning(UserWarning):
    """All pooled points coincide; the base bandwidth fell back to 1."""


class SampleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str = MULTI_SCALE_RBF
    levels: int = 5
    weights: tuple = None
    bandwidth: float = None  # None -> adaptive base bandwidth per batch

    def __post_init__(self):
        if self.kind not in (QUADRATIC, MULTI_SCALE_RBF):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.levels < 1:
            raise ValueError("need at least one bandwidth level")
        w = np.full(self.levels, 1.0 / self.levels) if self.weights is None else np.asarray(self.weights, float)
        if w.shape != (self.levels,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative, one per level, summing to 1")
        object.__setattr__(self, "weights", tuple(float(v) for v in w))
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ValueError("fixed bandwidth must be positive")

    def scales(self, sigma0):
        """Geometric ladder sigma0 * 2**(l - ceil(L/2)), l = 1..L."""
        mid = math.ceil(self.levels / 2)
        return np.array([sigma0 * 2.0 ** (l - mid) for l in range(1, self.levels + 1)])

    def _code(self):
        return kernels.QUADRATIC if self.kind == QUADRATIC else kernels.RBF


QUADRATIC_KERNEL = KernelSpec(kind=QUADRATIC)
RBF5 = KernelSpec()


def kernel_eval(spec, u, v, sigma0=None):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if spec.kind == QUADRATIC:
        return float(np.dot(u, v) ** 2)
    sigma0 = spec.bandwidth if sigma0 is None else sigma0
    if sigma0 is None or not sigma0 > 0:
        raise ValueError("RBF kernel needs a positive base bandwidth")
    dist2 = float(np.sum((u - v) ** 2))
    return float(sum(w * math.exp(-dist2 / s) for w, s in zip(spec.weights, spec.scales(sigma0))))


def adaptive_base_bandwidth(pred, truth):
    """Mean pairwise squared distance over the pooled sample pred U truth."""
    z = np.concatenate([np.atleast_2d(pred), np.atleast_2d(truth)]).astype(np.float64)
    n = z.shape[0]
    if n < 2:
        raise SampleSizeError("need at least two pooled points")
    zc = z - z.mean(axis=0)
    # sum_{i != j} |z_i - z_j|^2 == 2 n sum_i |z_i - mean|^2
    sigma0 = 2.0 * n * float(np.sum(zc * zc)) / (n * (n - 1))
    if not sigma0 > 0:
        warnings.warn("all pooled points coincide; using sigma0 = 1", DegenerateBandwidthWarning, stacklevel=2)
        return 1.0
    return sigma0


def _resolve(spec, x, y, sigma0):
    if spec.kind == QUADRATIC:
        return None, None
    if sigma0 is None:
        sigma0 = spec.bandwidth if spec.bandwidth is not None else adaptive_base_bandwidth(x, y)
    return spec.scales(sigma0), np.asarray(spec.weights)


def _as_sets(x, y):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return x, y


def mmd2_u(x, y, kernel=RBF5, sigma0=None):
    """Unbiased U-statistic estimate of MMD^2 between equal-size samples.

    Uses the standard off-diagonal form
    sum_{i != j} k(x_i, x_j) + k(y_i, y_j) - k(x_i, y_j) - k(x_j, y_i),
    divided by m (m - 1). The value can be negative.
    """
    x, y = _as_sets(x, y)
    m = x.shape[0]
    if m < 2 or y.shape[0] != m:
        raise SampleSizeError(f"mmd2_u needs two sets of equal size >= 2, got {x.shape[0]} and {y.shape[0]}")
    scales, weights = _resolve(kernel, x, y, sigma0)
    code = kernel._code()
    sxx, txx = kernels.gram_sums(x, x, code, scales, weights)
    syy, tyy = kernels.gram_sums(y, y, code, scales, weights)
    sxy, txy = kernels.gram_sums(x, y, code, scales, weights)
    return ((sxx - txx) + (syy - tyy) - 2.0 * (sxy - txy)) / (m * (m - 1))


def mmd2_biased(x, y, kernel=RBF5, sigma0=None):
    """V-statistic estimate (diagonal terms kept); always >= 0 up to roundoff."""
    x, y = _as_sets(x, y)
    m, n = x.shape[0], y.shape[0]
    if m == 0 or n == 0:
        raise SampleSizeError("mmd2_biased needs nonempty sets")
    scales, weights = _resolve(kernel, x, y, sigma0)
    code = kernel._code()
    sxx, _ = kernels.gram_sums(x, x, code, scales, weights)
    syy, _ = kernels.gram_sums(y, y, code, scales, weights)
    sxy, _ = kernels.gram_sums(x, y, code, scales, weights)
    return sxx / m**2 + syy / n**2 - 2.0 * sxy / (m * n)


def second_moment(x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return x.T @ x / x.shape[0]


def quadratic_mmd2_closed(x, y):
    """Quadratic-kernel MMD^2 as the squared Frobenius gap of second moments."""
    x, y = _as_sets(x, y)
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise SampleSizeError("need nonempty sets")
    diff = second_moment(x) - second_moment(y)
    return float(np.sum(diff * diff))
