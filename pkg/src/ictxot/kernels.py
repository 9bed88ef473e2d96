"""Hot inner loops, each in two flavours: a numba kernel and a numpy fallback.

The public wrappers dispatch on :data:`USE_NUMBA` (off when numba is missing
or ``ICTXOT_DISABLE_NUMBA=1``). Both flavours are always importable so the
benchmark and the tests can compare them directly.
"""

import math

import numpy as np

from ._accel import HAVE_NUMBA, njit, prange

USE_NUMBA = HAVE_NUMBA

QUADRATIC = 0
RBF = 1


# --------------------------------------------------------------------------
# cyclic Jacobi eigen-solver


@njit(cache=True)
def _jacobi_nb(a, tol, max_sweeps):
    n = a.shape[0]
    A = a.copy()
    V = np.eye(n)
    norm = 0.0
    for i in range(n):
        for j in range(n):
            norm += A[i, j] * A[i, j]
    norm = math.sqrt(norm)
    for sweep in range(max_sweeps + 1):
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += A[i, j] * A[i, j]
        if math.sqrt(off) <= tol * norm:
            return np.diag(A).copy(), V, sweep, True
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = A[k, p]
                    akq = A[k, q]
                    A[k, p] = c * akp - s * akq
                    A[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = A[p, k]
                    aqk = A[q, k]
                    A[p, k] = c * apk - s * aqk
                    A[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - s * vkq
                    V[k, q] = s * vkp + c * vkq
    return np.diag(A).copy(), V, max_sweeps, False


def _jacobi_np(a, tol, max_sweeps):
    n = a.shape[0]
    A = np.array(a, dtype=np.float64, copy=True)
    V = np.eye(n)
    norm = math.sqrt(float(np.sum(A * A)))
    offmask = ~np.eye(n, dtype=bool)
    for sweep in range(max_sweeps + 1):
        if math.sqrt(float(np.sum(A[offmask] ** 2))) <= tol * norm:
            return np.diag(A).copy(), V, sweep, True
        if sweep == max_sweeps:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0)), theta)
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                colp, colq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * colp - s * colq
                A[:, q] = s * colp + c * colq
                rowp, rowq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rowp - s * rowq
                A[q, :] = s * rowp + c * rowq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    return np.diag(A).copy(), V, max_sweeps, False


def jacobi_eig(a, tol=1e-12, max_sweeps=100):
    """Raw Jacobi sweep loop: returns (diag, V, sweeps, converged), unsorted."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if USE_NUMBA:
        return _jacobi_nb(a, tol, max_sweeps)
    return _jacobi_np(a, tol, max_sweeps)


# --------------------------------------------------------------------------
# shallow ReLU network evaluation: psi(z) = sum_k c_k relu(w_k z + b_k)


@njit(cache=True)
def _relu_sum_nb(z, c, w, b):
    out = np.empty(z.size)
    m = c.size
    for i in range(z.size):
        zi = z[i]
        acc = 0.0
        for k in range(m):
            u = w[k] * zi + b[k]
            acc += c[k] * max(u, 0.0)
        out[i] = acc
    return out


def _relu_sum_np(z, c, w, b, block=1 << 22):
    out = np.empty(z.size)
    step = max(1, block // max(1, c.size))
    for start in range(0, z.size, step):
        zc = z[start:start + step]
        pre = np.multiply.outer(zc, w)
        pre += b
        np.maximum(pre, 0.0, out=pre)
        out[start:start + step] = pre @ c
    return out


def relu_sum(z, c, w, b):
    """Evaluate the one-hidden-layer scalar ReLU net elementwise on ``z``."""
    z = np.asarray(z, dtype=np.float64)
    flat = np.ascontiguousarray(z.reshape(-1))
    c = np.ascontiguousarray(c, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if USE_NUMBA:
        out = _relu_sum_nb(flat, c, w, b)
    else:
        out = _relu_sum_np(flat, c, w, b)
    return out.reshape(z.shape)


# --------------------------------------------------------------------------
# pairwise kernel sums for MMD estimators


@njit(parallel=True, cache=True)
def _gram_sums_nb(x, y, kind, scales, weights):
    m = x.shape[0]
    n = y.shape[0]
    d = x.shape[1]
    rows = np.zeros(m)
    diag = np.zeros(m)
    for i in prange(m):
        acc = 0.0
        for j in range(n):
            s = 0.0
            if kind == 0:
                for t in range(d):
                    s += x[i, t] * y[j, t]
                kij = s * s
            else:
                for t in range(d):
                    diff = x[i, t] - y[j, t]
                    s += diff * diff
                kij = 0.0
                for l in range(scales.size):
                    kij += weights[l] * math.exp(-s / scales[l])
            acc += kij
            if i == j:
                diag[i] = kij
        rows[i] = acc
    # fixed-order reduction keeps the result independent of the thread count
    total = 0.0
    trace = 0.0
    for i in range(m):
        total += rows[i]
        trace += diag[i]
    return total, trace


def _gram_np(x, y, kind, scales, weights):
    if kind == QUADRATIC:
        return (x @ y.T) ** 2
    sq = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(y * y, axis=1)[None, :]
        - 2.0 * (x @ y.T)
    )
    np.maximum(sq, 0.0, out=sq)
    k = np.zeros_like(sq)
    for s, wl in zip(scales, weights):
        k += wl * np.exp(-sq / s)
    return k


def _gram_sums_np(x, y, kind, scales, weights):
    k = _gram_np(x, y, kind, scales, weights)
    r = min(k.shape)
    return float(k.sum()), float(np.trace(k[:r, :r]))


def gram_sums(x, y, kind, scales=None, weights=None):
    """Return (sum of all kernel entries, sum of the i == j entries)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    scales = np.ascontiguousarray(np.zeros(1) if scales is None else scales, dtype=np.float64)
    weights = np.ascontiguousarray(np.zeros(1) if weights is None else weights, dtype=np.float64)
    if USE_NUMBA:
        total, trace = _gram_sums_nb(x, y, kind, scales, weights)
        return float(total), float(trace)
    return _gram_sums_np(x, y, kind, scales, weights)
