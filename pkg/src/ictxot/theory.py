"""Brute-force oracles for the Gaussian analysis and the scaling-law fitter.

For symmetric A sharing the eigenframe of Sigma, the penalised transport
objective

    f(A) = |A - I|_F^2 + lam |A^2 - Sigma|_F^2

splits into scalar problems: f(A) = d + sum_i h_i(a_i) with
h_i(x) = x^2 - 2x + lam (x^2 - sigma_i^2)^2. Its minimum tends to
W2^2(N(0, I), N(0, Sigma)) = sum_i (1 - sigma_i)^2 as lam grows.
"""

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import parametric
from .tasks import sample_points, stream, w2_identity_to_gaussian

EXCESS_LOSS = "ExcessLoss"
MAP_ERROR = "MapError"


@dataclass(frozen=True)
class SurrogateSpec:
    sigma: float
    lam: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")


def h_value(x, spec):
    x = np.asarray(x, dtype=np.float64)
    return x * x - 2.0 * x + spec.lam * (x * x - spec.sigma**2) ** 2


def h_prime(x, spec):
    return 2.0 * x - 2.0 + 4.0 * spec.lam * x * (x * x - spec.sigma**2)


def h_second(x, spec):
    return 2.0 + 4.0 * spec.lam * (3.0 * x * x - spec.sigma**2)


class HMin(NamedTuple):
    argmin: float
    value: float


def _newton(x, spec, iters):
    for _ in range(iters):
        curv = h_second(x, spec)
        if curv <= 0:
            break
        step = h_prime(x, spec) / curv
        if step == 0 or not math.isfinite(step):
            break
        x -= step
    return x


def h_min_bruteforce(spec, grid_points=100_000, newton_iters=50):
    """Global minimiser of h: grid search, then Newton polishing of every local minimum.

    The global minimum lies at x >= 0 (h(-x) > h(x) for x > 0), inside
    [0, sigma + |1 - sigma| / sigma^2 + 1]. sigma itself is tried first so the
    stationary case sigma = 1 is returned exactly.
    """
    s = spec.sigma
    hi = s + abs(1.0 - s) / s**2 + 1.0
    grid = np.linspace(0.0, hi, grid_points)
    vals = h_value(grid, spec)
    interior = np.flatnonzero((vals[1:-1] <= vals[:-2]) & (vals[1:-1] <= vals[2:])) + 1
    starts = [s, float(grid[int(np.argmin(vals))])] + [float(grid[i]) for i in interior]
    best_x, best_v = None, math.inf
    for x0 in starts:
        x = _newton(x0, spec, newton_iters)
        v = float(h_value(x, spec))
        if v < best_v:
            best_x, best_v = x, v
    return HMin(float(best_x), best_v)


def h_prime_tolerance(spec):
    """Roundoff-scaled stationarity tolerance: 1e-10 relative to the size of h'."""
    return 1e-10 * (1.0 + 4.0 * spec.lam * (spec.sigma + 1.0) ** 3)


def minimizer_radius(sigma, lam):
    """|1 - sigma| / (sigma^2 lam): the radius the minimiser sits within for large lam."""
    return abs(1.0 - sigma) / (sigma**2 * lam)


def lambda_star(sigma, lams):
    """Smallest lam in the sorted ``lams`` from which the radius bound holds for all larger lam.

    Returns None if it fails at the largest lam.
    """
    lams = sorted(lams)
    ok = [abs(h_min_bruteforce(SurrogateSpec(sigma, lam)).argmin - sigma) <= minimizer_radius(sigma, lam) for lam in lams]
    star = None
    for lam, good in zip(reversed(lams), reversed(ok)):
        if not good:
            break
        star = lam
    return star


def sigmas_of(task_or_cov):
    eig = getattr(task_or_cov, "eigenvalues", None)
    if eig is None:
        eig = np.linalg.eigvalsh(np.asarray(task_or_cov, dtype=np.float64))
    return np.sqrt(np.asarray(eig, dtype=np.float64))


def f_value(a, cov, lam):
    a = np.asarray(a, dtype=np.float64)
    d = a.shape[0]
    gap = a @ a - cov
    diff = a - np.eye(d)
    return float(np.sum(diff * diff) + lam * np.sum(gap * gap))


def f_min(task, lam):
    """min over symmetric A of |A - I|_F^2 + lam |A^2 - Sigma|_F^2, via the scalar split."""
    sig = sigmas_of(task)
    return float(sig.size + sum(h_min_bruteforce(SurrogateSpec(s, lam)).value for s in sig))


def f_minimizer(task, lam):
    """The minimising matrix, assembled in the task's eigenframe."""
    sig = sigmas_of(task)
    a = np.array([h_min_bruteforce(SurrogateSpec(s, lam)).argmin for s in sig])
    u = task.frame
    out = (u * a) @ u.T
    return 0.5 * (out + out.T)


def stability_rhs(task, lam, a):
    """Right side of the one-way stability bound for A in the eigenframe of Sigma."""
    sig = sigmas_of(task)
    gap = f_value(a, task.cov, lam) - f_min(task, lam)
    c1 = float(np.max((1.0 - sig) ** 2 / sig**4))
    return gap / (1.0 + 2.0 * lam * float(np.min(sig**2))) + 2.0 * sig.size * c1 / lam**2


def w2_gap_scaled(task, lam):
    """lam * |min f - W2^2|; bounded in lam when min f converges at rate 1/lam."""
    return lam * abs(f_min(task, lam) - w2_identity_to_gaussian(task))


# --------------------------------------------------------------------------
# generalisation estimates for trained parameters


class ExcessLoss(NamedTuple):
    risk: float
    reference: float  # E_Sigma[min f], standing in for the unobservable min risk
    excess: float
    sigma_n_noise: float  # lam E|Sigma_n - Sigma|_F^2, the O(lam / n) part of risk - reference

    def describe(self):
        return (
            f"excess = risk {self.risk:.6g} - E[min f] {self.reference:.6g} = {self.excess:.6g}; "
            f"reference is E_Sigma[min f(Sigma, lam)], which omits the O(lam/n) Sigma_n noise "
            f"lam E|Sigma_n - Sigma|^2 = {self.sigma_n_noise:.6g}"
        )


def excess_loss_estimate(params, tasks, lam, n_test, seed=0, reps=1, first_rep=0):
    """Monte-Carlo risk of ``params`` on fresh 2n-sample prompts minus E[min f]."""
    risks, refs, noise = [], [], []
    for k, task in enumerate(tasks):
        for rep in range(first_rep, first_rep + reps):
            y = sample_points(task, 2 * n_test, stream(seed, "eval", task.seed_id, n_test, rep))
            risks.append(parametric.loss(params, y, lam))
        refs.append(f_min(task, lam))
        tr = float(np.trace(task.cov))
        noise.append(lam * (tr * tr + float(np.sum(task.cov**2))) / n_test)
    risk, ref = float(np.mean(risks)), float(np.mean(refs))
    return ExcessLoss(risk, ref, risk - ref, float(np.mean(noise)))


def transport_map_error(params, tasks, n_test, seed=0, reps=1, first_rep=0):
    """Mean |A_n - Sigma^{1/2}|_F^2 over tasks with fresh n-sample prompts."""
    errs = []
    for task in tasks:
        root = task.sqrt_cov
        for rep in range(first_rep, first_rep + reps):
            y = sample_points(task, n_test, stream(seed, "eval", task.seed_id, n_test, rep))
            diff = parametric.forward_matrix(params, y) - root
            errs.append(float(np.sum(diff * diff)))
    return float(np.mean(errs))


# --------------------------------------------------------------------------
# scaling-law fit


class FitError(ValueError):
    pass


class ScalingPoint(NamedTuple):
    n: int
    error: float
    kind: str = EXCESS_LOSS


@dataclass
class FitResult:
    a: float
    b: float
    c: float
    r2: float
    n_points: int
    kind: str = EXCESS_LOSS
    model_string: str = field(default="a*n^(-1/2) + b*n^(-1) + c")

    def predict(self, n):
        n = np.asarray(n, dtype=np.float64)
        return self.a / np.sqrt(n) + self.b / n + self.c

    def to_dict(self):
        return {"a": self.a, "b": self.b, "c": self.c, "r2": self.r2, "n_points": self.n_points,
                "kind": self.kind, "model_string": self.model_string}


def fit_scaling_law(points):
    """Least squares of error on the columns (n^-1/2, n^-1, 1)."""
    if len(points) < 4:
        raise FitError(f"need at least 4 points, got {len(points)}")
    n = np.array([p.n for p in points], dtype=np.float64)
    y = np.array([p.error for p in points], dtype=np.float64)
    if np.any(n < 1):
        raise FitError("prompt lengths must be >= 1")
    design = np.column_stack([n**-0.5, 1.0 / n, np.ones_like(n)])
    if np.unique(n).size < 3 or np.linalg.matrix_rank(design) < 3:
        raise FitError("design is rank deficient; need at least 3 distinct prompt lengths")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    scale = float(y @ y) + 1e-300
    if ss_tot > 1e-24 * scale:
        r2 = 1.0 - ss_res / ss_tot
    else:  # constant data: exact fits count as perfect
        r2 = 1.0 if ss_res <= 1e-24 * scale else -math.inf
    kinds = {p.kind for p in points}
    return FitResult(float(coef[0]), float(coef[1]), float(coef[2]), r2, len(points),
                     kinds.pop() if len(kinds) == 1 else "mixed")
