"""Adam + cosine-annealed learning rate over single-task mini-batches.

Each batch is one task with its frozen prompt; an epoch visits every task
once in a fixed order (optionally shuffled per epoch from a seeded stream).
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .tasks import stream


@dataclass
class TrainConfig:
    base_lr: float = 3e-5
    epochs: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    projection: bool = True
    lam: float = 1.0
    shuffle: bool = False

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ValueError("base_lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if int(self.epochs) < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


def cosine_lr(step, total_steps, base_lr):
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return base_lr
    return base_lr * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update. Returns (new params, new state); inputs are untouched."""
    t = state.t + 1
    new_params, m_new, v_new = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if np.shape(g) != np.shape(p):
            raise ValueError(f"gradient for {k!r} has shape {np.shape(g)}, parameter has {np.shape(p)}")
        m = beta1 * state.m.get(k, 0.0) + (1.0 - beta1) * g
        v = beta2 * state.v.get(k, 0.0) + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(m_new, v_new, t)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, step, last_good, history):
        self.epoch = epoch
        self.step = step
        self.last_good = last_good
        self.history = history
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}; last finite parameters kept")


@dataclass
class TrainResult:
    params: dict
    history: list

    def risk_curve(self):
        return np.array([h["risk"] for h in self.history])


def train(objective, batches, config, params, log_every=0, log=print):
    """Minimise ``objective`` over ``batches``.

    ``objective`` must provide ``loss_and_grad(params, batch) -> (loss, grads, parts)``
    where ``parts`` is a dict of named loss components, and ``project(params)``.
    """
    if len(batches) == 0:
        raise ValueError("need a nonempty task set")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    state = AdamState()
    history = []
    order = np.arange(len(batches))
    step = 0
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.base_lr)
        if config.shuffle:
            order = stream(config.seed, "shuffle", epoch).permutation(len(batches))
        total, parts_sum = 0.0, {}
        for i in order:
            value, grads, parts = objective.loss_and_grad(params, batches[i])
            if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(epoch, step, params, history)
            total += value
            for k, v in parts.items():
                parts_sum[k] = parts_sum.get(k, 0.0) + v
            params, state = adam_step(params, grads, state, lr, config.beta1, config.beta2, config.eps_adam)
            if config.projection:
                params = objective.project(params)
            step += 1
        row = {"epoch": epoch, "lr": lr, "risk": total / len(batches)}
        row.update({k: v / len(batches) for k, v in parts_sum.items()})
        history.append(row)
        if log_every and (epoch % log_every == 0 or epoch == config.epochs - 1):
            log(f"epoch {epoch:5d}  lr {lr:.3e}  risk {row['risk']:.6g}")
    return TrainResult(params, history)


def moving_average(values, window):
    values = np.asarray(values, dtype=np.float64)
    window = max(1, min(window, values.size))
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")


def risk_decreased(history, window=50, factor=0.9):
    """Final window average <= factor * initial window average."""
    ma = moving_average([h["risk"] for h in history], window)
    return bool(ma[-1] <= factor * ma[0])
