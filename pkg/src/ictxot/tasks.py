"""Gaussian transport tasks: family specs, seeded sampling, closed-form OT oracles.

Every task pairs the fixed source N(0, I) with a target N(mean, cov). Randomness
comes from counter-based Philox streams keyed by (seed, purpose, index...), so
task draws, prompts and evaluation samples can be varied one at a time.
"""

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .linalg import is_orthogonal, sqrtm_psd

MEAN_SHIFT = "MeanShift"
DIAG_COV = "DiagCov"
ISO_COV = "IsoCov"
COMMON_FRAME = "CommonFrame"
KINDS = (MEAN_SHIFT, DIAG_COV, ISO_COV, COMMON_FRAME)

PURPOSES = {
    "task": 0,
    "prompt": 1,
    "train_source": 2,
    "train_target": 3,
    "query": 4,
    "eval": 5,
    "init": 6,
    "test_task": 7,
    "shuffle": 8,
    "prompt_length": 9,
}


class TaskSpecError(ValueError):
    pass


def stream(seed, purpose, *index):
    """Independent Philox generator for ``(seed, purpose, *index)``."""
    key = (PURPOSES[purpose], *(int(i) for i in index))
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def box_muller(rng, shape):
    """Standard normal draws from pairs of uniforms (Box-Muller transform)."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    size = int(np.prod(shape))
    half = (size + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1]
    u2 = rng.random(half)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
    return z[:size].reshape(shape)


def _interval(x, name):
    lo, hi = (float(v) for v in x)
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise TaskSpecError(f"{name} must be finite, got {x}")
    if lo > hi:
        raise TaskSpecError(f"degenerate {name}: lo={lo} > hi={hi}")
    return (lo, hi)


@dataclass(frozen=True)
class TaskFamilySpec:
    kind: str
    dim: int = 2
    mean_box: tuple = (4.0, 6.0)
    eig_interval: tuple = (1.0, 3.0)
    frame: np.ndarray = None
    sigma2_min: float = 1e-2
    sigma2_max: float = 1e2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise TaskSpecError(f"unknown task family {self.kind!r}; expected one of {KINDS}")
        if int(self.dim) < 1:
            raise TaskSpecError(f"dim must be positive, got {self.dim}")
        object.__setattr__(self, "mean_box", _interval(self.mean_box, "mean_box"))
        lo, hi = _interval(self.eig_interval, "eig_interval")
        object.__setattr__(self, "eig_interval", (lo, hi))
        if not 0 < self.sigma2_min <= self.sigma2_max < np.inf:
            raise TaskSpecError("need 0 < sigma2_min <= sigma2_max < inf")
        if self.kind != MEAN_SHIFT and not (self.sigma2_min <= lo and hi <= self.sigma2_max):
            raise TaskSpecError(
                f"eig_interval {self.eig_interval} outside [{self.sigma2_min}, {self.sigma2_max}]"
            )
        if self.kind == COMMON_FRAME:
            if self.frame is None:
                raise TaskSpecError("CommonFrame family needs a frame")
            frame = np.array(self.frame, dtype=np.float64)
            if frame.shape != (self.dim, self.dim) or not is_orthogonal(frame):
                raise TaskSpecError("frame must be a dim x dim orthogonal matrix")
            object.__setattr__(self, "frame", frame)

    def basis(self):
        return self.frame if self.kind == COMMON_FRAME else np.eye(self.dim)

    def to_dict(self):
        out = {
            "kind": self.kind,
            "dim": int(self.dim),
            "mean_box": list(self.mean_box),
            "eig_interval": list(self.eig_interval),
            "sigma2_min": self.sigma2_min,
            "sigma2_max": self.sigma2_max,
        }
        if self.frame is not None:
            out["frame"] = np.asarray(self.frame).tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("frame") is not None:
            d["frame"] = np.array(d["frame"], dtype=np.float64)
        for key in ("mean_box", "eig_interval"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class GaussianTask:
    mean: np.ndarray
    cov: np.ndarray
    frame: np.ndarray
    eigenvalues: np.ndarray
    seed_id: int = 0

    @property
    def dim(self):
        return self.mean.shape[0]

    @property
    def centered(self):
        return not np.any(self.mean)

    @property
    def sqrt_cov(self):
        """Sigma^{1/2} assembled from the stored frame (exact, no eigensolve)."""
        u = self.frame
        root = (u * np.sqrt(self.eigenvalues)) @ u.T
        return 0.5 * (root + root.T)


def make_task(mean, eigenvalues, frame=None, seed_id=0):
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    eigenvalues = np.asarray(eigenvalues, dtype=np.float64).reshape(-1)
    if eigenvalues.shape != mean.shape:
        raise ValueError("mean and eigenvalues must have the same length")
    if np.any(eigenvalues <= 0):
        raise ValueError("eigenvalues must be positive")
    frame = np.eye(mean.size) if frame is None else np.asarray(frame, dtype=np.float64)
    cov = (frame * eigenvalues) @ frame.T
    cov = 0.5 * (cov + cov.T)
    return GaussianTask(mean, cov, frame, eigenvalues, int(seed_id))


def sample_task(spec, rng, seed_id=0):
    d = spec.dim
    lo, hi = spec.eig_interval
    if spec.kind == MEAN_SHIFT:
        mlo, mhi = spec.mean_box
        mean = rng.uniform(mlo, mhi, size=d)
        return make_task(mean, np.ones(d), seed_id=seed_id)
    if lo > hi:
        raise TaskSpecError(f"degenerate eig_interval {spec.eig_interval}")
    if spec.kind == ISO_COV:
        eig = np.full(d, rng.uniform(lo, hi))
    else:
        eig = rng.uniform(lo, hi, size=d)
    return make_task(np.zeros(d), eig, spec.basis(), seed_id=seed_id)


def sample_points(task, count, rng):
    """``count`` draws from N(mean, cov) as mean + U diag(sigma) z."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    z = box_muller(rng, (count, task.dim))
    scale = task.frame * np.sqrt(task.eigenvalues)
    return task.mean + z @ scale.T


def sample_source(dim, count, rng):
    return box_muller(rng, (count, dim))


class AffineMap(NamedTuple):
    matrix: np.ndarray
    offset: np.ndarray

    def __call__(self, x):
        return np.asarray(x) @ self.matrix.T + self.offset


def ot_map_oracle(task):
    """Brenier map from N(0, I) to the task target: x -> Sigma^{1/2} x + mean."""
    return AffineMap(sqrtm_psd(task.cov), task.mean.copy())


def w2_identity_to_gaussian(task):
    """Squared W2 distance between N(0, I) and a centered N(0, Sigma)."""
    if not task.centered:
        raise ValueError("w2_identity_to_gaussian expects a centered task")
    return float(np.sum((1.0 - np.sqrt(task.eigenvalues)) ** 2))


@dataclass(eq=False)
class Prompt:
    source_samples: np.ndarray
    target_samples: np.ndarray
    task_ref: int = 0

    def __post_init__(self):
        self.source_samples = np.asarray(self.source_samples, dtype=np.float64)
        self.target_samples = np.asarray(self.target_samples, dtype=np.float64)
        if self.source_samples.shape != self.target_samples.shape or self.source_samples.ndim != 2:
            raise ValueError(
                f"prompt sets must be equal-shape 2-D arrays, got "
                f"{self.source_samples.shape} and {self.target_samples.shape}"
            )
        if not (np.all(np.isfinite(self.source_samples)) and np.all(np.isfinite(self.target_samples))):
            raise ValueError("prompt contains non-finite entries")

    @property
    def length(self):
        return self.source_samples.shape[0]


def make_prompt(task, length, rng):
    return Prompt(sample_source(task.dim, length, rng), sample_points(task, length, rng), task.seed_id)


@dataclass
class TaskSet:
    """A reproducible list of tasks: family spec + base seed (+ index offset)."""

    spec: TaskFamilySpec
    seed: int
    count: int
    offset: int = 0
    tasks: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self.tasks:
            self.tasks = [
                sample_task(self.spec, stream(self.seed, "task", i), seed_id=i)
                for i in range(self.offset, self.offset + self.count)
            ]

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, i):
        return self.tasks[i]

    def to_dict(self):
        return {
            "family": self.spec.to_dict(),
            "seed": int(self.seed),
            "count": int(self.count),
            "offset": int(self.offset),
            "tasks": [
                {"seed_id": t.seed_id, "mean": t.mean.tolist(), "eigenvalues": t.eigenvalues.tolist()}
                for t in self.tasks
            ],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        ts = cls(TaskFamilySpec.from_dict(d["family"]), d["seed"], d["count"], d.get("offset", 0))
        for t, rec in zip(ts.tasks, d.get("tasks", [])):
            if t.seed_id != rec["seed_id"] or not np.array_equal(t.eigenvalues, rec["eigenvalues"]):
                raise ValueError(f"task {t.seed_id} does not replay to the recorded parameters")
        return ts

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))
