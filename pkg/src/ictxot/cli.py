"""Command line: ``ictxot <command> [--config PATH] [--seed INT] [--out DIR] [--threads INT]``.

Exit codes: 0 success, 1 check failure (or diverged training),
2 configuration error, 3 missing artifact.
"""

import argparse
import json
import logging
import os
import sys

from . import _accel, artifacts, experiments, parametric, trainer
from .experiments import ConfigError, MissingArtifact

log = logging.getLogger("ictxot")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3

HISTORY_PARAMETRIC = ["epoch", "lr", "risk", "transport", "penalty"]
HISTORY_NONPARAMETRIC = ["epoch", "lr", "risk", "transport", "mmd"]
SWEEP_COLUMNS = ["n", "seed", "excess_loss", "map_error", "risk", "reference", "sigma_n_noise"]


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None


def _start(command, args):
    cfg = experiments.resolve_config(command, _load_config(args.config), args.seed)
    out = args.out or os.path.join("out", command)
    os.makedirs(out, exist_ok=True)
    manifest = artifacts.RunManifest(command, cfg, int(cfg["train"]["seed"]))
    return cfg, out, manifest


def _outputs(manifest, out, **paths):
    # relative names keep the manifest identical across output directories
    manifest.outputs = dict(paths)
    manifest.write(out)
    return {k: os.path.join(out, v) for k, v in paths.items()}


def _log_every(cfg):
    return max(1, int(cfg["train"]["epochs"]) // 20)


def cmd_train_parametric(args):
    cfg, out, manifest = _start("train-parametric", args)
    paths = _outputs(manifest, out, config="config.json", checkpoint="checkpoint.json",
                     history="history.csv", plot="history.gp")
    artifacts.write_json(paths["config"], cfg)
    params, history = experiments.run_train_parametric(cfg, log=log.info, log_every=_log_every(cfg))
    artifacts.write_json(paths["checkpoint"], params.to_dict())
    artifacts.write_csv(paths["history"], HISTORY_PARAMETRIC, history)
    artifacts.gnuplot_recipe(paths["plot"], "history.csv", "training risk", "epoch", "risk",
                             [(1, 3, "risk"), (1, 4, "transport"), (1, 5, "penalty")], logscale="y")
    log.info("final risk %.6g; wrote %s", history[-1]["risk"], out)
    return EXIT_OK


def cmd_scaling_law(args):
    cfg, out, manifest = _start("scaling-law", args)
    ev = cfg["eval"]
    paths = _outputs(manifest, out, config="config.json", sweep="sweep.csv", fit="fit.json",
                     checkpoint="checkpoint.json", plot="scaling.gp")
    artifacts.write_json(paths["config"], cfg)
    if ev["synthetic"] is not None:
        sweep = experiments.synthetic_sweep(cfg)
    else:
        if ev["checkpoint"]:
            if not os.path.exists(ev["checkpoint"]):
                raise MissingArtifact(f"checkpoint not found: {ev['checkpoint']}")
            params = parametric.ParametricParams.from_dict(artifacts.read_json(ev["checkpoint"]))
        elif ev["train"]:
            params, history = experiments.run_train_parametric(cfg, log=log.info, log_every=_log_every(cfg))
            artifacts.write_csv(os.path.join(out, "history.csv"), HISTORY_PARAMETRIC, history)
        else:
            raise MissingArtifact("no checkpoint given and training disabled (eval.train = false)")
        artifacts.write_json(paths["checkpoint"], params.to_dict())
        sweep = experiments.run_scaling_sweep(params, cfg)
    artifacts.write_csv(paths["sweep"], SWEEP_COLUMNS, sweep.rows)
    fit = {
        "excess_loss": sweep.excess_fit.to_dict(),
        "map_error": sweep.map_fit.to_dict(),
        "reference": "E over test tasks of min f(Sigma, lam); omits the O(lam/n) Sigma_n noise "
                     "reported per row as sigma_n_noise",
    }
    artifacts.write_json(paths["fit"], fit)
    artifacts.gnuplot_recipe(paths["plot"], "sweep.csv", "error versus prompt length", "n", "error",
                             [(1, 3, "excess loss"), (1, 4, "map error")], logscale="xy")
    for name, f in (("excess loss", sweep.excess_fit), ("map error", sweep.map_fit)):
        log.info("%s: a=%.6g b=%.6g c=%.6g R^2=%.4f", name, f.a, f.b, f.c, f.r2)
    return EXIT_OK


def cmd_train_nonparametric(args):
    cfg, out, manifest = _start("train-nonparametric", args)
    paths = _outputs(manifest, out, config="config.json", checkpoint="checkpoint.json", history="history.csv",
                     predictions="predictions.csv", metrics="metrics.json", plot="transport.gp")
    artifacts.write_json(paths["config"], cfg)
    weights, history = experiments.run_train_nonparametric(cfg, log=log.info, log_every=_log_every(cfg))
    artifacts.write_json(paths["checkpoint"], weights.to_dict())
    artifacts.write_csv(paths["history"], HISTORY_NONPARAMETRIC, history)
    metrics, points = experiments.evaluate_nonparametric(weights, cfg)
    d = weights.config.dim
    header = ["task"] + [f"x{i}" for i in range(d)] + [f"yhat{i}" for i in range(d)] + [f"t{i}" for i in range(d)]
    artifacts.write_csv(paths["predictions"], header, points)
    artifacts.write_json(paths["metrics"], {"tasks": metrics})
    if d == 2:
        artifacts.gnuplot_recipe(paths["plot"], "predictions.csv", "learned transport", "x0", "x1",
                                 [(2, 3, "source"), (4, 5, "predicted"), (6, 7, "OT map")])
    for m in metrics:
        log.info("task %d: mmd2_u=%.4g spread/|mu|=%.4g", m["task"], m["mmd2_u"], m["spread_ratio"])
    return EXIT_OK


def cmd_validate_theory(args):
    user = _load_config(args.config)
    if args.inject:
        user = dict(user)
        ev = dict(user.get("eval", {}))
        ev["inject"] = sorted(set(ev.get("inject", [])) | set(args.inject))
        user["eval"] = ev
    cfg = experiments.resolve_config("validate-theory", user, args.seed)
    out = args.out or os.path.join("out", "validate-theory")
    os.makedirs(out, exist_ok=True)
    manifest = artifacts.RunManifest("validate-theory", cfg, int(cfg["train"]["seed"]))
    paths = _outputs(manifest, out, report="report.json")
    checks = experiments.run_validate_theory(cfg, log=log.info)
    failed = [c.name for c in checks if not c.passed]
    artifacts.write_json(paths["report"], {
        "checks": [{"name": c.name, "passed": c.passed, "metrics": c.metrics} for c in checks],
        "failed": failed,
    })
    if failed:
        log.error("failed checks: %s", ", ".join(failed))
        return EXIT_CHECK
    return EXIT_OK


COMMANDS = {
    "train-parametric": cmd_train_parametric,
    "scaling-law": cmd_scaling_law,
    "train-nonparametric": cmd_train_nonparametric,
    "validate-theory": cmd_validate_theory,
}


def build_parser():
    p = argparse.ArgumentParser(prog="ictxot", description="In-context Gaussian transport experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", metavar="PATH", help="JSON config with sections task_family/model/train/eval")
        s.add_argument("--seed", type=int, help="overrides train.seed")
        s.add_argument("--out", metavar="DIR", help="output directory (default out/<command>)")
        s.add_argument("--threads", type=int, help="numba threads (fallback: ICTXOT_THREADS)")
        s.add_argument("-q", "--quiet", action="store_true")
        if name == "validate-theory":
            s.add_argument("--inject", action="append", choices=experiments.INJECTIONS,
                           help="deliberately break one ingredient (mutation test)")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stderr)
    threads = args.threads if args.threads is not None else _accel.thread_count_from_env()
    if threads is not None and threads < 1:
        log.error("--threads must be >= 1")
        return EXIT_CONFIG
    _accel.set_threads(threads)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        log.error("missing artifact: %s", exc)
        return EXIT_MISSING
    except trainer.TrainingDiverged as exc:
        log.error("%s", exc)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
