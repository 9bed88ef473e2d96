"""Experiment pipelines shared by the command line and the acceptance suite.

Configs are nested dicts with the sections task_family, model, train, eval.
Each pipeline is a pure function of its config: every random draw comes from
a Philox stream keyed by the configured seed.
"""

import copy
import math
import time
from typing import NamedTuple

import numpy as np

from . import mmd, nonparametric, parametric, theory, trainer
from .linalg import op_norm, rotation2
from .tasks import (
    ISO_COV,
    MEAN_SHIFT,
    TaskFamilySpec,
    TaskSet,
    make_prompt,
    make_task,
    ot_map_oracle,
    sample_points,
    sample_source,
    stream,
)

TRAIN_N_GRID = (600, 800, 1000, 1200, 1400, 1600)


class ConfigError(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


DEFAULTS = {
    "train-parametric": {
        "task_family": {"kind": ISO_COV, "dim": 2, "eig_interval": [1.0, 3.0], "count": 500},
        "model": {"units": 16, "capacity": 100.0},
        "train": {"base_lr": 3e-5, "epochs": 1000, "lam": 1000.0, "seed": 0, "projection": True,
                  "shuffle": False, "n_grid": list(TRAIN_N_GRID)},
        "eval": {},
    },
    "train-nonparametric": {
        "task_family": {"kind": MEAN_SHIFT, "dim": 2, "mean_box": [4.0, 6.0], "eig_interval": [1.0, 3.0],
                        "count": 32},
        "model": {"hidden": 128, "heads": 4, "prompt_len": 64},
        "train": {"base_lr": 1e-3, "epochs": 1000, "lam": 1.0, "seed": 0, "projection": False,
                  "shuffle": False, "n_train": 32},
        "eval": {"held_out": 8, "queries": 256},
    },
    "validate-theory": {
        "task_family": {},
        "model": {},
        "train": {"seed": 0},
        "eval": {
            "sigmas": [0.5, 1.0, 2.0, 3.0],
            "lams": [100.0, 1000.0, 10000.0],
            "lam_grid": [1.0, 3.0, 10.0, 30.0, 100.0, 1000.0, 10000.0],
            "rate_eigs": [2.0, 3.0],
            "prop6_ns": [100, 1000, 10000, 100000],
            "prop6_seeds": 20,
            "prop6_eps": 0.02,
            "prop6_r": 10.0,
            "prop6_angle": 0.4,
            "prop6_eigs": [2.0, 3.0],
            "mmd_resamples": 1000,
            "mmd_m": 200,
            "inject": [],
        },
    },
}
DEFAULTS["scaling-law"] = copy.deepcopy(DEFAULTS["train-parametric"])
DEFAULTS["scaling-law"]["eval"] = {"test_n": [500, 1000, 2000, 4000, 5000], "seeds": 10, "test_tasks": 20,
                                   "checkpoint": None, "train": True, "synthetic": None}
DEFAULTS["scaling-law"]["train"]["epochs"] = 300

SECTIONS = ("task_family", "model", "train", "eval")
INJECTIONS = ("q_scale", "biased_mmd")


def resolve_config(command, user=None, seed=None):
    """Deep-merge ``user`` over the command defaults; unknown keys are config errors."""
    if command not in DEFAULTS:
        raise ConfigError(f"unknown command {command!r}")
    cfg = copy.deepcopy(DEFAULTS[command])
    user = user or {}
    if not isinstance(user, dict):
        raise ConfigError("config must be a JSON object")
    for section, values in user.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}; expected {SECTIONS}")
        if not isinstance(values, dict):
            raise ConfigError(f"section {section!r} must be an object")
        for k, v in values.items():
            if k not in cfg[section]:
                raise ConfigError(f"unknown key {section}.{k}")
            cfg[section][k] = v
    if seed is not None:
        cfg["train"]["seed"] = int(seed)
    _validate(command, cfg)
    return cfg


def _validate(command, cfg):
    try:
        if command != "validate-theory":
            family_spec(cfg)
            train_config(cfg)
            if int(cfg["task_family"]["count"]) < 1:
                raise ConfigError("task_family.count must be >= 1")
        if command == "scaling-law":
            ns = cfg["eval"]["test_n"]
            if len(ns) < 3 or any(int(n) < 1 for n in ns):
                raise ConfigError("eval.test_n needs at least 3 positive prompt lengths")
        if command == "train-nonparametric":
            nonparametric_config(cfg)
        if command == "validate-theory":
            bad = set(cfg["eval"]["inject"]) - set(INJECTIONS)
            if bad:
                raise ConfigError(f"unknown injections {sorted(bad)}; expected {INJECTIONS}")
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def family_spec(cfg):
    f = {k: v for k, v in cfg["task_family"].items() if k != "count"}
    return TaskFamilySpec(**{k: tuple(v) if isinstance(v, list) and k != "frame" else v for k, v in f.items()})


def train_config(cfg):
    t = cfg["train"]
    return trainer.TrainConfig(base_lr=float(t["base_lr"]), epochs=int(t["epochs"]), seed=int(t["seed"]),
                               projection=bool(t["projection"]), lam=float(t["lam"]), shuffle=bool(t["shuffle"]))


def nonparametric_config(cfg):
    m = cfg["model"]
    return nonparametric.CrossAttnConfig(int(cfg["task_family"].get("dim", 2)), int(m["hidden"]),
                                         int(m["heads"]), int(m["prompt_len"]))


# --------------------------------------------------------------------------
# parametric model


def parametric_batches(tasks, seed, n_grid=TRAIN_N_GRID):
    """One frozen 2n-sample prompt per task, n drawn from ``n_grid``."""
    out = []
    for task in tasks:
        n = int(stream(seed, "prompt_length", task.seed_id).choice(np.asarray(n_grid)))
        out.append(sample_points(task, 2 * n, stream(seed, "prompt", task.seed_id)))
    return out


def run_train_parametric(cfg, log=print, log_every=0):
    seed = int(cfg["train"]["seed"])
    tcfg = train_config(cfg)
    tasks = TaskSet(family_spec(cfg), seed, int(cfg["task_family"]["count"]))
    batches = parametric_batches(tasks, seed, cfg["train"]["n_grid"])
    init = parametric.init_params(tasks.spec.dim, int(cfg["model"]["units"]), seed, tcfg.lam,
                                  float(cfg["model"]["capacity"]))
    result = trainer.train(parametric.Objective(init, tcfg.lam), batches, tcfg, init.arrays(),
                           log_every=log_every, log=log)
    return init.with_arrays(result.params), result.history


class ScalingSweep(NamedTuple):
    rows: list  # dicts with n, seed, excess_loss, map_error, risk, reference
    excess_fit: theory.FitResult
    map_fit: theory.FitResult


def eval_tasks(cfg):
    seed = int(cfg["train"]["seed"])
    offset = int(cfg["task_family"]["count"])
    return TaskSet(family_spec(cfg), seed, int(cfg["eval"]["test_tasks"]), offset=offset)


def run_scaling_sweep(params, cfg):
    """Excess loss and map error on a fixed test-task pool, per (n, seed)."""
    seed = int(cfg["train"]["seed"])
    lam = float(cfg["train"]["lam"])
    tasks = eval_tasks(cfg)
    rows, excess_pts, map_pts = [], [], []
    for n in cfg["eval"]["test_n"]:
        for s in range(int(cfg["eval"]["seeds"])):
            ex = theory.excess_loss_estimate(params, tasks, lam, int(n), seed=seed, first_rep=s)
            me = theory.transport_map_error(params, tasks, int(n), seed=seed, first_rep=s)
            rows.append({"n": int(n), "seed": s, "excess_loss": ex.excess, "map_error": me,
                         "risk": ex.risk, "reference": ex.reference, "sigma_n_noise": ex.sigma_n_noise})
            excess_pts.append(theory.ScalingPoint(int(n), ex.excess, theory.EXCESS_LOSS))
            map_pts.append(theory.ScalingPoint(int(n), me, theory.MAP_ERROR))
    return ScalingSweep(rows, theory.fit_scaling_law(excess_pts), theory.fit_scaling_law(map_pts))


def synthetic_sweep(cfg):
    """Exact a n^-1/2 + b n^-1 + c data for both quantities (checks the fitting plumbing)."""
    syn = cfg["eval"]["synthetic"]
    a, b, c = (float(syn[k]) for k in ("a", "b", "c"))
    rows, pts = [], []
    for n in cfg["eval"]["test_n"]:
        for s in range(int(cfg["eval"]["seeds"])):
            v = a / math.sqrt(n) + b / n + c
            rows.append({"n": int(n), "seed": s, "excess_loss": v, "map_error": v,
                         "risk": v, "reference": 0.0, "sigma_n_noise": 0.0})
            pts.append(theory.ScalingPoint(int(n), v))
    fit = theory.fit_scaling_law(pts)
    return ScalingSweep(rows, fit, theory.FitResult(fit.a, fit.b, fit.c, fit.r2, fit.n_points, theory.MAP_ERROR))


# --------------------------------------------------------------------------
# nonparametric model


def run_train_nonparametric(cfg, log=print, log_every=0):
    seed = int(cfg["train"]["seed"])
    tcfg = train_config(cfg)
    ncfg = nonparametric_config(cfg)
    tasks = TaskSet(family_spec(cfg), seed, int(cfg["task_family"]["count"]))
    batches = [nonparametric.make_batch(t, ncfg.prompt_len, int(cfg["train"]["n_train"]), seed) for t in tasks]
    init = nonparametric.init_weights(ncfg, seed)
    result = trainer.train(nonparametric.Objective(ncfg, tcfg.lam), batches, tcfg, init.arrays,
                           log_every=log_every, log=log)
    return init.with_arrays(result.params), result.history


def evaluate_nonparametric(weights, cfg):
    """Held-out metrics and (x, y_hat, T(x)) triples."""
    seed = int(cfg["train"]["seed"])
    held = TaskSet(family_spec(cfg), seed, int(cfg["eval"]["held_out"]), offset=int(cfg["task_family"]["count"]))
    m = int(cfg["eval"]["queries"])
    metrics, points = [], []
    for task in held:
        i = task.seed_id
        prompt = make_prompt(task, weights.config.prompt_len, stream(seed, "eval", i, 0))
        xq = sample_source(task.dim, m, stream(seed, "eval", i, 1))
        y_true = sample_points(task, m, stream(seed, "eval", i, 2))
        pred = nonparametric.np_forward(weights, prompt, xq)
        t_x = ot_map_oracle(task)(xq)
        mu = float(np.linalg.norm(task.mean))
        spread = nonparametric.displacement_spread(pred, xq)
        metrics.append({
            "task": i, "mmd2_u": mmd.mmd2_u(pred, y_true), "spread": spread, "mean_norm": mu,
            "spread_ratio": spread / mu if mu > 0 else math.inf,
            "map_mse": float(np.mean(np.sum((pred - t_x) ** 2, axis=1))),
        })
        for x, yh, tx in zip(xq, pred, t_x):
            points.append([i, *x, *yh, *tx])
    return metrics, points


# --------------------------------------------------------------------------
# theory checks


class Check(NamedTuple):
    name: str
    passed: bool
    metrics: dict

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}"


def check_minimizer_bound(sigmas, lams, lam_grid):
    rows, ok = [], True
    for s in sigmas:
        star = theory.lambda_star(s, lam_grid)
        for lam in lams:
            hm = theory.h_min_bruteforce(theory.SurrogateSpec(s, lam))
            dev = abs(hm.argmin - s)
            bound = theory.minimizer_radius(s, lam)
            exact = hm.argmin == 1.0 if s == 1.0 else True
            applies = star is not None and lam >= star
            good = exact and (dev <= bound if applies else True) and star is not None
            ok &= good
            rows.append({"sigma": s, "lam": lam, "argmin": hm.argmin, "deviation": dev, "radius": bound,
                         "lambda_star": star, "passed": good})
    return Check("surrogate minimiser radius", bool(ok), {"rows": rows})


def check_rate(eigs, lams):
    task = make_task(np.zeros(len(eigs)), eigs)
    scaled = [theory.w2_gap_scaled(task, lam) for lam in lams]
    ratio = max(scaled) / min(scaled) if min(scaled) > 0 else math.inf
    return Check("f_min to W2^2 rate", bool(ratio < 3.0), {"lams": list(lams), "scaled_gap": scaled, "ratio": ratio})


def prop6_errors(ns, seeds, eps=0.02, r=10.0, angle=0.4, eigs=(2.0, 3.0), q_scale=parametric.Q_SCALE, seed=0):
    frame = rotation2(angle)
    task = make_task(np.zeros(2), eigs, frame)
    params = parametric.oracle_params(frame, eps, r, q_scale=q_scale)
    root = task.sqrt_cov
    errs = {}
    for n in ns:
        vals = []
        for s in range(seeds):
            y = sample_points(task, int(n), stream(seed, "eval", 0, int(n), s))
            vals.append(op_norm(parametric.forward_matrix(params, y) - root))
        errs[int(n)] = float(np.mean(vals))
    return errs


def loglog_slope(errs):
    n = np.log(np.array(list(errs), dtype=np.float64))
    e = np.log(np.array(list(errs.values())))
    return float(np.polyfit(n, e, 1)[0])


def check_prop6(ev, q_scale=parametric.Q_SCALE, seed=0):
    errs = prop6_errors(ev["prop6_ns"], int(ev["prop6_seeds"]), ev["prop6_eps"], ev["prop6_r"],
                        ev["prop6_angle"], ev["prop6_eigs"], q_scale, seed)
    slope = loglog_slope(errs)
    at = errs.get(10000, min(errs.values()))
    ok = at <= 0.08 and -0.65 <= slope <= -0.35
    return Check("constructed square-root transport", bool(ok),
                 {"mean_op_error": {str(k): v for k, v in errs.items()}, "error_at_1e4": at, "slope": slope})


def mmd_resample_stats(resamples, m, estimator=mmd.mmd2_u, seed=0, dim=2):
    vals = np.empty(resamples)
    for k in range(resamples):
        x = sample_source(dim, m, stream(seed, "eval", 1, k, 0))
        y = np.sqrt(2.0) * sample_source(dim, m, stream(seed, "eval", 1, k, 1))
        vals[k] = estimator(x, y, mmd.QUADRATIC_KERNEL)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(resamples))


def check_mmd_unbiased(resamples, m, biased=False, seed=0):
    est = mmd.mmd2_biased if biased else mmd.mmd2_u
    mean, se = mmd_resample_stats(resamples, m, est, seed)
    target = 2.0  # |I - 2I|_F^2 in d = 2
    return Check("unbiased MMD estimator", bool(abs(mean - target) <= 3.0 * se),
                 {"mean": mean, "standard_error": se, "target": target, "z": (mean - target) / se})


def run_validate_theory(cfg, log=print):
    ev = cfg["eval"]
    seed = int(cfg["train"]["seed"])
    inject = set(ev["inject"])
    checks = []
    for fn in (
        lambda: check_minimizer_bound(ev["sigmas"], ev["lams"], ev["lam_grid"]),
        lambda: check_rate(ev["rate_eigs"], ev["lams"]),
        lambda: check_prop6(ev, 1.0 if "q_scale" in inject else parametric.Q_SCALE, seed),
        lambda: check_mmd_unbiased(int(ev["mmd_resamples"]), int(ev["mmd_m"]), "biased_mmd" in inject, seed),
    ):
        t0 = time.perf_counter()
        c = fn()
        log(f"{c.line()}  ({time.perf_counter() - t0:.1f} s)")
        checks.append(c)
    return checks
