"""Linear-attention in-context model for Gaussian-to-Gaussian transport.

Given target samples y_1..y_n, the model forms

    A = Q (1/n sum_i phi(y_i) phi(y_i)^T) Q^T,    phi(y) = psi(W y),

with psi a scalar shallow ReLU net applied componentwise, and maps a query
x to A x. The loss on a 2n-sample prompt evaluates the source expectation
E_x |A x - x|^2 = tr(A^2) + d - 2 tr(A) in closed form and penalises
|A^2 - Sigma_n|_F^2, where Sigma_n is the second moment of the last n rows.
"""

import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from . import kernels
from .linalg import frob_norm, is_orthogonal, spectral_norm

Q_SCALE = (math.pi / 2.0) ** 0.25  # squared, gives c = sqrt(pi / 2)
PARAM_KEYS = ("q", "w_inner", "c", "w", "b")


class CapacityError(ValueError):
    def __init__(self, required, capacity):
        self.required = float(required)
        self.capacity = float(capacity)
        super().__init__(f"path norm {self.required:.4g} exceeds capacity M = {self.capacity:.4g}")


def path_norm(c, w, b):
    c, w, b = (np.asarray(v, dtype=np.float64) for v in (c, w, b))
    return float(np.sum(np.abs(c) * (np.abs(w) + np.abs(b))))


@dataclass(eq=False)
class FeatureNet:
    """phi(y) = psi(W y) with psi(z) = sum_k c_k relu(w_k z + b_k)."""

    inner: np.ndarray
    c: np.ndarray
    w: np.ndarray
    b: np.ndarray
    capacity: float = math.inf
    c_theta: float = None

    def __post_init__(self):
        self.inner = np.array(self.inner, dtype=np.float64)
        self.c, self.w, self.b = (np.array(v, dtype=np.float64).reshape(-1) for v in (self.c, self.w, self.b))
        d = self.inner.shape[0]
        if self.inner.shape != (d, d):
            raise ValueError(f"inner layer must be square, got {self.inner.shape}")
        if not (self.c.shape == self.w.shape == self.b.shape):
            raise ValueError("unit arrays c, w, b must have equal length")
        if self.c_theta is None:
            self.c_theta = math.sqrt(d)
        if spectral_norm(self.inner) > self.c_theta + 1e-10:
            raise ValueError(f"|W|_op = {spectral_norm(self.inner):.6g} exceeds C_theta = {self.c_theta:.6g}")
        if self.path_norm > self.capacity * (1 + 1e-12):
            raise CapacityError(self.path_norm, self.capacity)

    @property
    def dim(self):
        return self.inner.shape[0]

    @property
    def units(self):
        return self.c.size

    @property
    def path_norm(self):
        return path_norm(self.c, self.w, self.b)

    def psi(self, z):
        return kernels.relu_sum(z, self.c, self.w, self.b)

    def __call__(self, y):
        return self.psi(np.asarray(y, dtype=np.float64) @ self.inner.T)


@dataclass(eq=False)
class ParametricParams:
    q: np.ndarray
    feature: FeatureNet
    lam: float = 0.0
    c_theta: float = None

    def __post_init__(self):
        self.q = np.array(self.q, dtype=np.float64)
        if self.q.shape != (self.feature.dim, self.feature.dim):
            raise ValueError(f"Q has shape {self.q.shape}, feature dim is {self.feature.dim}")
        if self.c_theta is None:
            self.c_theta = math.sqrt(self.feature.dim)
        if frob_norm(self.q) > self.c_theta + 1e-10:
            raise ValueError(f"|Q|_F = {frob_norm(self.q):.6g} exceeds C_theta = {self.c_theta:.6g}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError("lambda must be finite and >= 0")

    @property
    def dim(self):
        return self.feature.dim

    def arrays(self):
        f = self.feature
        return {"q": self.q.copy(), "w_inner": f.inner.copy(), "c": f.c.copy(), "w": f.w.copy(), "b": f.b.copy()}

    def with_arrays(self, arrays, check=True):
        f = self.feature
        if not check:
            new = object.__new__(ParametricParams)
            feat = object.__new__(FeatureNet)
            feat.inner, feat.c, feat.w, feat.b = (np.asarray(arrays[k], dtype=np.float64) for k in PARAM_KEYS[1:])
            feat.capacity, feat.c_theta = f.capacity, f.c_theta
            new.q, new.feature, new.lam, new.c_theta = np.asarray(arrays["q"], dtype=np.float64), feat, self.lam, self.c_theta
            return new
        feat = FeatureNet(arrays["w_inner"], arrays["c"], arrays["w"], arrays["b"], f.capacity, f.c_theta)
        return ParametricParams(arrays["q"], feat, self.lam, self.c_theta)

    def to_dict(self):
        f = self.feature
        return {
            "dim": self.dim,
            "C_theta": self.c_theta,
            "M": None if math.isinf(f.capacity) else f.capacity,
            "lambda": self.lam,
            "Q": self.q.reshape(-1).tolist(),
            "W": f.inner.reshape(-1).tolist(),
            "units": [[float(c), float(w), float(b)] for c, w, b in zip(f.c, f.w, f.b)],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        dim = int(d["dim"])
        units = np.array(d["units"], dtype=np.float64).reshape(-1, 3)
        capacity = math.inf if d.get("M") is None else float(d["M"])
        feat = FeatureNet(np.reshape(d["W"], (dim, dim)), units[:, 0], units[:, 1], units[:, 2], capacity, d["C_theta"])
        return cls(np.reshape(d["Q"], (dim, dim)), feat, float(d["lambda"]), float(d["C_theta"]))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def linear_feature(dim, capacity=math.inf):
    """phi(y) = y, realised by relu(z) - relu(-z)."""
    return FeatureNet(np.eye(dim), [1.0, -1.0], [1.0, -1.0], [0.0, 0.0], capacity)


# --------------------------------------------------------------------------
# forward pass and loss (numeric path)


def forward_matrix(params, target_samples):
    y = np.atleast_2d(np.asarray(target_samples, dtype=np.float64))
    if y.shape[0] < 1 or y.shape[1] != params.dim:
        raise ValueError(f"expected n x {params.dim} samples, got {y.shape}")
    phi = params.feature(y)
    moment = phi.T @ phi / y.shape[0]
    a = params.q @ moment @ params.q.T
    return 0.5 * (a + a.T)


def predict(params, target_samples, query):
    a = forward_matrix(params, target_samples)
    query = np.asarray(query, dtype=np.float64)
    return a @ query if query.ndim == 1 else query @ a.T


def transport_cost(a):
    """E_{x ~ N(0, I)} |A x - x|^2 for symmetric A."""
    d = a.shape[0]
    return float(np.trace(a @ a) + d - 2.0 * np.trace(a))


def split_prompt(samples):
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] % 2 or samples.shape[0] == 0:
        raise ValueError(f"loss needs an even, nonzero number of samples, got {samples.shape[0]}")
    n = samples.shape[0] // 2
    tail = samples[n:]
    return samples[:n], tail.T @ tail / n


def loss(params, target_samples, lam=None):
    lam = params.lam if lam is None else lam
    context, sigma_n = split_prompt(target_samples)
    a = forward_matrix(params, context)
    gap = a @ a - sigma_n
    return transport_cost(a) + lam * float(np.sum(gap * gap))


def empirical_risk(params, prompts, lam=None):
    """Mean per-task loss; ``prompts`` holds one 2n x d sample array per task."""
    if len(prompts) == 0:
        raise ValueError("need at least one task")
    return float(np.mean([loss(params, s, lam) for s in prompts]))


# --------------------------------------------------------------------------
# differentiable path


def loss_graph(tape, nodes, context, sigma_n, lam):
    """Build the loss on ``tape`` from parameter nodes keyed like PARAM_KEYS."""
    n, d = context.shape
    m = nodes["c"].shape[0]
    z = ad.matmul(tape.const(context), nodes["w_inner"].T)
    pre = ad.reshape(z, (n * d, 1)) @ ad.reshape(nodes["w"], (1, m)) + ad.reshape(nodes["b"], (1, m))
    phi = ad.reshape(ad.relu(pre) @ nodes["c"], (n, d))
    moment = (phi.T @ phi) * (1.0 / n)
    a = nodes["q"] @ moment @ nodes["q"].T
    a = (a + a.T) * 0.5
    a2 = a @ a
    cost = ad.trace(a2) + float(d) - ad.trace(a) * 2.0
    return cost + ad.frob_sq(a2 - sigma_n) * float(lam)


def loss_and_grad(params, target_samples, lam=None):
    lam = params.lam if lam is None else lam
    context, sigma_n = split_prompt(target_samples)
    tape = ad.Tape()
    arrays = params.arrays()
    nodes = {k: tape.param(arrays[k], name=k) for k in PARAM_KEYS}
    out = loss_graph(tape, nodes, context, sigma_n, lam)
    tape.backward(out)
    return float(out.value), {k: nodes[k].grad for k in PARAM_KEYS}


def grad_loss(params, target_samples, lam=None):
    return loss_and_grad(params, target_samples, lam)[1]


def project(arrays, c_theta, capacity=math.inf):
    """Scale Q, W and the output weights back inside the admissible class."""
    out = dict(arrays)
    qn = frob_norm(out["q"])
    if qn > c_theta:
        out["q"] = out["q"] * (c_theta / qn)
    wn = spectral_norm(out["w_inner"])
    if wn > c_theta:
        out["w_inner"] = out["w_inner"] * (c_theta / wn)
    pn = path_norm(out["c"], out["w"], out["b"])
    if pn > capacity:
        out["c"] = out["c"] * (capacity / pn)
    return out


# --------------------------------------------------------------------------
# square-root construction


def g_sq(z):
    """Odd extension of the square root: sign(z) sqrt(|z|)."""
    z = np.asarray(z, dtype=np.float64)
    return np.sign(z) * np.sqrt(np.abs(z))


def g_eps(z, eps):
    """g_sq with the cusp at 0 replaced by the line z / sqrt(eps) on [-eps, eps]."""
    z = np.asarray(z, dtype=np.float64)
    return np.where(np.abs(z) >= eps, g_sq(z), z / math.sqrt(eps))


class SqrtNetwork(NamedTuple):
    c: np.ndarray
    w: np.ndarray
    b: np.ndarray
    knots: np.ndarray  # nonnegative knots t_0 = 0 < ... < t_K = r
    path_norm: float
    sup_error: float  # exact sup over [-r, r] of |psi - g_sq|
    grid_error: float  # max over the verification grid


def _chord_sup_error(t):
    """Exact max of sqrt(x) minus its chord on each interval [t_k, t_{k+1}]."""
    f = np.sqrt(t)
    slope = np.diff(f) / np.diff(t)
    # sqrt is concave; the gap peaks where 1 / (2 sqrt(x)) equals the chord slope
    xs = np.clip(1.0 / (4.0 * slope**2), t[:-1], t[1:])
    return float(np.max(np.sqrt(xs) - (f[:-1] + slope * (xs - t[:-1]))))


def build_gsq_network(eps, r, capacity=math.inf, grid_points=10_000, max_doublings=20):
    """ReLU units realising a uniform-knot interpolant of g_sq on [-r, r].

    Starts from ceil(4 r / eps) knots across [-r, r] and doubles the knot
    count until the interpolation error is at most ``eps``. The first segment
    [0, h] is the chord of the root, i.e. the interpolant coincides with that
    of g_eps at width h. The network is odd by construction: each knot t_k
    carries the pair c_k relu(z - t_k) - c_k relu(-z - t_k).
    """
    if not 0 < eps < r:
        raise ValueError(f"need 0 < eps < r, got eps={eps}, r={r}")
    segments = max(1, math.ceil(math.ceil(4.0 * r / eps) / 2))
    for _ in range(max_doublings):
        t = np.linspace(0.0, r, segments + 1)
        sup = _chord_sup_error(t)
        if sup <= eps:
            break
        segments *= 2
    else:
        raise RuntimeError(f"no knot count reached eps={eps} after {max_doublings} doublings")
    slopes = np.diff(np.sqrt(t)) / np.diff(t)
    jumps = np.concatenate([slopes[:1], np.diff(slopes)])
    knots = t[:-1]
    c = np.concatenate([jumps, -jumps])
    w = np.concatenate([np.ones_like(knots), -np.ones_like(knots)])
    b = np.concatenate([-knots, -knots])
    pn = path_norm(c, w, b)
    if pn > capacity:
        raise CapacityError(pn, capacity)
    grid = np.linspace(-r, r, grid_points)
    grid_err = float(np.max(np.abs(kernels.relu_sum(grid, c, w, b) - g_sq(grid))))
    return SqrtNetwork(c, w, b, t, pn, sup, grid_err)


def oracle_params(frame, eps, r, lam=0.0, capacity=math.inf, q_scale=Q_SCALE):
    """Parameters whose in-context matrix approximates Sigma^{1/2}.

    Q = (pi/2)^{1/4} U, W = U^T and psi ~ g_sq, so that A ~ U Lambda^{1/2} U^T
    for targets N(0, U Lambda U^T). ``q_scale`` exists for mutation tests.
    """
    u = np.asarray(frame, dtype=np.float64)
    if not is_orthogonal(u):
        raise ValueError("frame must be orthogonal")
    net = build_gsq_network(eps, r, capacity)
    q = q_scale * u
    c_theta = max(math.sqrt(u.shape[0]), frob_norm(q))
    feat = FeatureNet(u.T, net.c, net.w, net.b, capacity, c_theta)
    return ParametricParams(q, feat, lam, c_theta)


# --------------------------------------------------------------------------
# training support


def init_params(dim, units=16, seed=0, lam=0.0, capacity=100.0):
    """Q = W = I and a random shallow psi; output weights scaled into the capacity."""
    from .tasks import box_muller, stream

    rng = stream(seed, "init", 0)
    w = np.where(rng.random(units) < 0.5, -1.0, 1.0)
    b = rng.uniform(-2.0, 2.0, size=units)
    c = box_muller(rng, units) / math.sqrt(units)
    pn = path_norm(c, w, b)
    if pn > capacity:
        c *= capacity / pn
    feat = FeatureNet(np.eye(dim), c, w, b, capacity)
    return ParametricParams(np.eye(dim), feat, lam)


class Objective:
    """Adapter for the generic trainer; batches are 2n x d target-sample arrays."""

    def __init__(self, template, lam):
        self.template = template
        self.lam = lam

    def loss_and_grad(self, arrays, batch):
        context, sigma_n = split_prompt(batch)
        tape = ad.Tape()
        nodes = {k: tape.param(arrays[k], name=k) for k in PARAM_KEYS}
        out = loss_graph(tape, nodes, context, sigma_n, self.lam)
        tape.backward(out)
        # a separate pass for the parts is cheap and keeps the graph minimal
        p = self.template.with_arrays(arrays, check=False)
        a = forward_matrix(p, context)
        cost = transport_cost(a)
        return float(out.value), {k: nodes[k].grad for k in PARAM_KEYS}, {
            "transport": cost, "penalty": float(out.value) - cost}

    def project(self, arrays):
        t = self.template
        return project(arrays, t.c_theta, t.feature.capacity)
