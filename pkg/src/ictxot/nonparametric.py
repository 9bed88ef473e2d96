"""Cross-attention transport model.

Prompt source and target samples are embedded by separate pointwise MLPs,
mixed by one multi-head self-attention block over all prompt tokens, and
read by the query tokens through one multi-head cross-attention block.
A pointwise MLP maps each query token back to R^d. Both attention blocks use
scaled dot products (divisor sqrt(h / heads)) and a residual connection; there
is no normalisation layer. Queries are embedded with the source MLP and
never attend to each other.
"""

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import mmd
from .tasks import Prompt, stream, box_muller

EMBED = ("w1", "b1", "w2", "b2")
ATTN = ("wq", "wk", "wv", "wo")


@dataclass(frozen=True)
class CrossAttnConfig:
    dim: int = 2
    hidden: int = 128
    heads: int = 4
    prompt_len: int = 64

    def __post_init__(self):
        for name in ("dim", "hidden", "heads", "prompt_len"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.hidden % self.heads:
            raise ValueError(f"hidden width {self.hidden} is not divisible by {self.heads} heads")

    @property
    def head_dim(self):
        return self.hidden // self.heads

    def shapes(self):
        d, h = self.dim, self.hidden
        out = {}
        for pre in ("src", "tgt"):
            out.update({f"{pre}_w1": (d, h), f"{pre}_b1": (h,), f"{pre}_w2": (h, h), f"{pre}_b2": (h,)})
        for pre in ("sa", "ca"):
            out.update({f"{pre}_{k}": (h, h) for k in ATTN})
        out.update({"out_w1": (h, h), "out_b1": (h,), "out_w2": (h, d), "out_b2": (d,)})
        return out

    def keys(self):
        return tuple(self.shapes())


class NonparametricWeights:
    def __init__(self, config, arrays):
        self.config = config
        shapes = config.shapes()
        missing = set(shapes) - set(arrays)
        if missing:
            raise ValueError(f"missing weight arrays: {sorted(missing)}")
        self.arrays = {}
        for k, shape in shapes.items():
            a = np.array(arrays[k], dtype=np.float64)
            if a.shape != shape:
                raise ValueError(f"{k} has shape {a.shape}, expected {shape}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{k} has non-finite entries")
            self.arrays[k] = a

    def __getitem__(self, k):
        return self.arrays[k]

    def with_arrays(self, arrays):
        return NonparametricWeights(self.config, arrays)

    def n_params(self):
        return sum(a.size for a in self.arrays.values())

    def to_dict(self):
        return {
            "config": asdict(self.config),
            "arrays": {k: {"shape": list(a.shape), "data": a.reshape(-1).tolist()} for k, a in self.arrays.items()},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        cfg = CrossAttnConfig(**d["config"])
        arrays = {k: np.reshape(v["data"], v["shape"]) for k, v in d["arrays"].items()}
        return cls(cfg, arrays)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def init_weights(config, seed=0):
    """Gaussian weights with variance 1/fan_in, zero biases, one stream per array."""
    arrays = {}
    for i, (k, shape) in enumerate(config.shapes().items()):
        if len(shape) == 1:
            arrays[k] = np.zeros(shape)
        else:
            arrays[k] = box_muller(stream(seed, "init", i), shape) / math.sqrt(shape[0])
    return NonparametricWeights(config, arrays)


# --------------------------------------------------------------------------
# numeric forward


def _mlp(x, w, pre):
    hid = np.maximum(x @ w[f"{pre}_w1"] + w[f"{pre}_b1"], 0.0)
    return hid @ w[f"{pre}_w2"] + w[f"{pre}_b2"]


def _softmax_rows(s):
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=1, keepdims=True)


def _attend(xq, xc, w, pre, cfg):
    q, k, v = xq @ w[f"{pre}_wq"], xc @ w[f"{pre}_wk"], xc @ w[f"{pre}_wv"]
    hd, scale = cfg.head_dim, 1.0 / math.sqrt(cfg.head_dim)
    heads = []
    for j in range(cfg.heads):
        cols = slice(j * hd, (j + 1) * hd)
        att = _softmax_rows(q[:, cols] @ k[:, cols].T * scale)
        heads.append(att @ v[:, cols])
    return np.concatenate(heads, axis=1) @ w[f"{pre}_wo"]


def _check_inputs(weights, prompt, queries):
    d = weights.config.dim
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if prompt.length < 1:
        raise ValueError("prompt must be nonempty")
    if prompt.source_samples.shape[1] != d or queries.shape[1] != d:
        raise ad.ShapeError("np_forward", prompt.source_samples.shape, queries.shape)
    return queries


def np_forward(weights, prompt, queries):
    """Predicted transport of each query row given the prompt."""
    queries = _check_inputs(weights, prompt, queries)
    w, cfg = weights.arrays, weights.config
    ctx = np.concatenate([_mlp(prompt.source_samples, w, "src"), _mlp(prompt.target_samples, w, "tgt")])
    ctx = ctx + _attend(ctx, ctx, w, "sa", cfg)
    tok = _mlp(queries, w, "src")
    tok = tok + _attend(tok, ctx, w, "ca", cfg)
    return _mlp(tok, w, "out")


def _check_train(train_sources, train_targets):
    xs = np.atleast_2d(np.asarray(train_sources, dtype=np.float64))
    ys = np.atleast_2d(np.asarray(train_targets, dtype=np.float64))
    if xs.shape[0] != ys.shape[0]:
        raise mmd.SampleSizeError(f"train sets differ in size: {xs.shape[0]} vs {ys.shape[0]}")
    if xs.shape[0] < 2:
        raise mmd.SampleSizeError("need at least 2 training pairs for the MMD term")
    return xs, ys


def np_loss_parts(weights, prompt, train_sources, train_targets, lam, kernel=mmd.RBF5):
    xs, ys = _check_train(train_sources, train_targets)
    pred = np_forward(weights, prompt, xs)
    transport = float(np.mean(np.sum((pred - xs) ** 2, axis=1)))
    penalty = mmd.mmd2_u(pred, ys, kernel) if lam else 0.0
    return transport + lam * penalty, transport, penalty


def np_loss(weights, prompt, train_sources, train_targets, lam, kernel=mmd.RBF5):
    """Mean squared displacement plus lam times the unbiased MMD^2 to the train targets."""
    return np_loss_parts(weights, prompt, train_sources, train_targets, lam, kernel)[0]


# --------------------------------------------------------------------------
# differentiable path


def _g_mlp(x, n, pre):
    hid = ad.relu(x @ n[f"{pre}_w1"] + n[f"{pre}_b1"])
    return hid @ n[f"{pre}_w2"] + n[f"{pre}_b2"]


def _g_attend(xq, xc, n, pre, cfg):
    q, k, v = xq @ n[f"{pre}_wq"], xc @ n[f"{pre}_wk"], xc @ n[f"{pre}_wv"]
    hd, scale = cfg.head_dim, 1.0 / math.sqrt(cfg.head_dim)
    heads = []
    for j in range(cfg.heads):
        lo, hi = j * hd, (j + 1) * hd
        qj, kj, vj = (ad.take(t, lo, hi, axis=1) for t in (q, k, v))
        att = ad.softmax((qj @ kj.T) * scale, axis=1)
        heads.append(att @ vj)
    return ad.concat(heads, axis=1) @ n[f"{pre}_wo"]


def mmd2_u_graph(pred, truth, kernel=mmd.RBF5):
    """Unbiased MMD^2 on the tape; the adaptive base bandwidth is differentiated through."""
    tape = pred.tape
    truth = ad._lift(tape, truth)
    m = pred.shape[0]
    if kernel.kind == mmd.QUADRATIC:
        kxx, kyy, kxy = ((a @ b.T) * (a @ b.T) for a, b in ((pred, pred), (truth, truth), (pred, truth)))
    else:
        dxx, dyy, dxy = ad.sq_dists(pred, pred), ad.sq_dists(truth, truth), ad.sq_dists(pred, truth)
        if kernel.bandwidth is not None:
            sigma0 = tape.const(kernel.bandwidth)
        else:
            pooled = ad.concat([pred, truth], axis=0)
            zc = pooled - ad.mean_rows(pooled)
            sigma0 = ad.frob_sq(zc) * (2.0 / (2 * m - 1))
        inv = ad.reciprocal(sigma0)
        ratios = kernel.scales(1.0)
        kxx = kyy = kxy = None
        for wt, r in zip(kernel.weights, ratios):
            terms = [ad.exp(dist * inv * (-1.0 / r)) * wt for dist in (dxx, dyy, dxy)]
            kxx = terms[0] if kxx is None else kxx + terms[0]
            kyy = terms[1] if kyy is None else kyy + terms[1]
            kxy = terms[2] if kxy is None else kxy + terms[2]
    off = 1.0 - np.eye(m)
    total = ad.sum(kxx * off) + ad.sum(kyy * off) - ad.sum(kxy * off) * 2.0
    return total * (1.0 / (m * (m - 1)))


def loss_graph(tape, nodes, config, prompt, xs, ys, lam, kernel=mmd.RBF5):
    ctx = ad.concat([_g_mlp(tape.const(prompt.source_samples), nodes, "src"),
                     _g_mlp(tape.const(prompt.target_samples), nodes, "tgt")], axis=0)
    ctx = ctx + _g_attend(ctx, ctx, nodes, "sa", config)
    tok = _g_mlp(tape.const(xs), nodes, "src")
    tok = tok + _g_attend(tok, ctx, nodes, "ca", config)
    pred = _g_mlp(tok, nodes, "out")
    transport = ad.frob_sq(pred - xs) * (1.0 / xs.shape[0])
    if not lam:
        return transport, transport, None
    penalty = mmd2_u_graph(pred, ys, kernel)
    return transport + penalty * float(lam), transport, penalty


def loss_and_grad(weights, prompt, train_sources, train_targets, lam, kernel=mmd.RBF5):
    """(loss, grads keyed like weights.arrays, (transport, penalty))."""
    xs, ys = _check_train(train_sources, train_targets)
    _check_inputs(weights, prompt, xs)
    tape = ad.Tape()
    nodes = {k: tape.param(v, name=k) for k, v in weights.arrays.items()}
    out, transport, penalty = loss_graph(tape, nodes, weights.config, prompt, xs, ys, lam, kernel)
    tape.backward(out)
    grads = {k: n.grad if n.grad is not None else np.zeros_like(n.value) for k, n in nodes.items()}
    pen = float(penalty.value) if penalty is not None else 0.0
    return float(out.value), grads, (float(transport.value), pen)


# --------------------------------------------------------------------------
# training data and evaluation


@dataclass(eq=False)
class TaskBatch:
    """One task's frozen training material: prompt plus fresh (x, y) draws for the loss."""

    prompt: Prompt
    sources: np.ndarray
    targets: np.ndarray


def make_batch(task, prompt_len, n_train, seed):
    from .tasks import make_prompt, sample_points, sample_source

    i = task.seed_id
    prompt = make_prompt(task, prompt_len, stream(seed, "prompt", i))
    xs = sample_source(task.dim, n_train, stream(seed, "train_source", i))
    ys = sample_points(task, n_train, stream(seed, "train_target", i))
    return TaskBatch(prompt, xs, ys)


class Objective:
    """Adapter exposing the loss to the generic trainer."""

    def __init__(self, config, lam, kernel=mmd.RBF5):
        self.config = config
        self.lam = lam
        self.kernel = kernel

    def loss_and_grad(self, arrays, batch):
        w = NonparametricWeights.__new__(NonparametricWeights)
        w.config, w.arrays = self.config, arrays
        value, grads, (transport, penalty) = loss_and_grad(w, batch.prompt, batch.sources, batch.targets,
                                                          self.lam, self.kernel)
        return value, grads, {"transport": transport, "mmd": penalty}

    def project(self, arrays):
        return arrays


def displacement_spread(pred, queries):
    """Root mean squared deviation of y_hat - x from its mean over the queries."""
    disp = np.asarray(pred) - np.asarray(queries)
    dev = disp - disp.mean(axis=0)
    return float(np.sqrt(np.mean(np.sum(dev * dev, axis=1))))
