"""``hopelab`` command line.

Commands: ``decay``, ``props``, ``sweep``, ``train``, ``eval``, ``report``.

Configs are JSON. ``--config`` takes either an encoder config object
(``EncodingConfig`` fields) or a run config with any of the keys
``encoder``, ``model``, ``recipe`` and ``task``. Every command that writes
files also writes ``manifest-<command>.json`` next to them.

Exit codes: 0 success, 1 invalid input, 2 property failure, 3 runtime error.
The default output directory is ``$HOPELAB_OUT`` (or ``hopelab-out``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    decay_curve_fixed, decay_curve_gaussian, default_filename, env_output_dir, export_csv,
    oscillation_index,
)
from .encodings import VARIANTS, ConfigError, EncodingConfig, make_encoder
from .properties import PropertyResult, run_all
from .toylm import (
    ModelConfig, ModelFileError, TaskSpec, TrainingDiverged, TrainRecipe, build_model,
    eval_perplexity, extrapolation_report, load_model, save_model, train,
)

log = logging.getLogger("hopelab")

EXIT_OK, EXIT_INVALID, EXIT_PROPERTY, EXIT_RUNTIME = 0, 1, 2, 3
DEFAULT_OUT = "hopelab-out"


class UsageError(ValueError):
    """Bad flag values detected after argparse."""


# ----------------------------------------------------------------- helpers

def _csv_list(text: str, cast=str) -> list:
    try:
        return [cast(t.strip()) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse list {text!r}: {exc}") from exc


def _read_config(path) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if not {"encoder", "model", "recipe", "task"} & set(data):
        data = {"encoder": data}
    unknown = set(data) - {"encoder", "model", "recipe", "task"}
    if unknown:
        raise ConfigError(f"{path}: unknown config sections {sorted(unknown)}")
    return data


def _encoder_config(raw: dict, variant: str | None, head_dim: int | None = None,
                    validate: bool = True) -> EncodingConfig:
    d = dict(raw.get("encoder", {}))
    if variant is not None:
        if d.get("variant", variant) != variant:
            # scale settings in a config for another variant do not carry over
            d = {k: v for k, v in d.items() if k not in ("freq_scale", "theta_prime")}
        d["variant"] = variant
    if head_dim is not None:
        d["head_dim"] = head_dim
    return EncodingConfig.from_dict(d, validate=validate)


def _toy_encoder(raw: dict, variant: str | None, head_dim: int | None = None,
                 validate: bool = True) -> EncodingConfig:
    """Encoder config for the toy model: head_dim follows the model, not the encoder default."""
    if head_dim is None:
        head_dim = raw.get("encoder", {}).get("head_dim") or raw.get("model", {}).get("head_dim") \
            or ModelConfig.head_dim
    return _encoder_config(raw, variant, head_dim, validate)


def _model_config(raw: dict, encoder: EncodingConfig) -> ModelConfig:
    d = dict(raw.get("model", {}))
    d.pop("encoder", None)
    d["head_dim"] = encoder.head_dim
    try:
        return ModelConfig(encoder=encoder, **d)
    except TypeError as exc:
        raise ConfigError(f"model config: {exc}") from exc


def _recipe(raw: dict, args) -> TrainRecipe:
    d = dict(raw.get("recipe", {}))
    for flag, key in (("steps", "total_steps"), ("lr", "learning_rate"),
                      ("batch_size", "batch_size"), ("precision", "precision")):
        value = getattr(args, flag, None)
        if value is not None:
            d[key] = value
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    try:
        return TrainRecipe.from_dict(d)
    except TypeError as exc:
        raise ConfigError(f"recipe config: {exc}") from exc


def _task(raw: dict, args) -> TaskSpec:
    d = dict(raw.get("task", {}))
    if getattr(args, "task", None):
        d["kind"] = args.task
    if getattr(args, "n_train", None):
        d["n_train"] = args.n_train
    try:
        task = TaskSpec(**d)
    except TypeError as exc:
        raise ConfigError(f"task config: {exc}") from exc
    if task.kind not in ("copy", "recall"):
        raise UsageError(f"unknown task {task.kind!r}; expected copy or recall")
    return task


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else env_output_dir(DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _multipliers(text: str) -> list[int]:
    mult = _csv_list(text, int)
    if not mult or any(m < 1 for m in mult) or sorted(set(mult)) != mult:
        raise UsageError(f"--lengths must be strictly increasing positive multiples, got {text!r}")
    return mult


def write_manifest(args, out: Path, command: str, config: dict, seed, outputs: list) -> Path:
    """Record what produced the files in ``out`` (no timestamps, so reruns match)."""
    manifest = {
        "command": command,
        "argv": getattr(args, "argv", None),
        "config": config,
        "seed": seed,
        "version": __version__,
        "outputs": sorted(str(Path(p).name) if Path(p).parent == out else str(p)
                          for p in outputs),
    }
    path = out / f"manifest-{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------- commands

def cmd_decay(args) -> int:
    raw = _read_config(args.config)
    variants = args.variant or ["hope"]
    out = _out_dir(args)
    configs, written = {}, []
    encoders = []
    for v in variants:      # validate everything before writing anything
        cfg = _encoder_config(raw, v)
        enc = make_encoder(cfg, slope=args.alibi_slope) if v == "alibi" else make_encoder(cfg)
        encoders.append(enc)
    for enc in encoders:
        d = enc.head_dim
        if args.mode == "fixed":
            curve = decay_curve_fixed(np.ones(d), np.ones(d), enc, args.max_dist)
        else:
            curve = decay_curve_gaussian(enc, args.samples, args.seed, args.max_dist)
        path = export_csv(curve, out / default_filename(curve))
        written.append(path)
        configs[enc.variant] = curve.meta
        print(f"{enc.variant:11s} {path}  oscillation_index={oscillation_index(curve):.4f}")
    write_manifest(args, out, "decay", {"mode": args.mode, "max_dist": args.max_dist,
                                  "samples": args.samples if args.mode == "gaussian" else None,
                                  "curves": configs}, args.seed, written)
    return EXIT_OK


def _format_table(results: list[PropertyResult]) -> str:
    lines = [f"{'property':24s} {'measured':>12s} {'tolerance':>10s}  status"]
    for r in results:
        measured = "-" if r.measured is None else f"{r.measured:.3e}"
        status = "n/a" if not r.applicable else ("PASS" if r.passed else "FAIL")
        lines.append(f"{r.name:24s} {measured:>12s} {r.tolerance:>10.0e}  {status}")
    return "\n".join(lines)


def cmd_props(args) -> int:
    raw = _read_config(args.config)
    cfg = _encoder_config(raw, "hope", validate=False)
    results = run_all(cfg, seed=args.seed)
    print(_format_table(results))
    report = {"config": cfg.to_dict(), "seed": args.seed,
              "results": [r.to_dict() for r in results]}
    out = _out_dir(args)
    path = out / "props.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    write_manifest(args, out, "props", report["config"], args.seed, [path])
    failed = [r.name for r in results if r.applicable and not r.passed]
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_PROPERTY
    return EXIT_OK


def _sweep_job(job):
    mc, recipe, task, run_dir = job
    from .toylm import run_single
    try:
        result, report = run_single(mc, recipe, task, (1, 2))
    except TrainingDiverged as exc:
        Path(run_dir, "diverged.json").write_text(json.dumps(
            {"step": exc.step, "loss_trace": exc.trace}) + "\n")
        return "diverged", float("nan"), float("nan")
    Path(run_dir, "eval.json").write_text(report.to_json() + "\n")
    return "ok", report.ppl[1], result.final_loss


def cmd_sweep(args) -> int:
    raw = _read_config(args.config)
    grid = _csv_list(args.grid, float)
    seeds = _csv_list(args.seeds, int)
    if not grid or not seeds:
        raise UsageError("--grid and --seeds need at least one value")
    base = _toy_encoder(raw, args.variant, validate=False)
    task = _task(raw, args)
    out = _out_dir(args)
    jobs, points = [], []
    for value in grid:
        try:
            change = {args.param: value}
            if args.param == "freq_scale" and "theta_prime" not in raw.get("encoder", {}):
                change["theta_prime"] = None     # keep the default damping ratio
            cfg = base.replace(**change)
        except ConfigError as exc:
            points.append((value, None, str(exc)))
            continue
        mc = _model_config(raw, cfg)
        points.append((value, mc, ""))
        for s in seeds:
            run_dir = out / "runs" / f"{args.param}={value:g}" / f"seed{s}"
            run_dir.mkdir(parents=True, exist_ok=True)
            jobs.append((mc, replace(_recipe(raw, args), seed=s), task, str(run_dir)))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    rows, it = [], iter(results)
    header = ["param", "value", "ppl_2x_mean", "ppl_2x_std"] + [f"ppl_2x_seed{s}" for s in seeds] \
        + ["status"]
    for value, mc, err in points:
        if mc is None:
            rows.append([args.param, f"{value:g}", "nan", "nan"] + ["nan"] * len(seeds)
                        + [f"invalid: {err}"])
            continue
        runs = [next(it) for _ in seeds]
        ppl = np.array([r[1] for r in runs])
        ok = ppl[np.isfinite(ppl)]
        mean = float(ok.mean()) if ok.size else float("nan")
        std = float(ok.std(ddof=1)) if ok.size > 1 else float("nan")
        statuses = sorted({r[0] for r in runs})
        rows.append([args.param, f"{value:g}", f"{mean:.17g}", f"{std:.17g}"]
                    + [f"{p:.17g}" for p in ppl] + ["/".join(statuses)])
    path = out / f"sweep_{args.param}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    for r in rows:
        print(f"{r[0]}={r[1]:>8s}  ppl@2x={r[2]}  [{r[-1]}]")
    write_manifest(args, out, "sweep", {"param": args.param, "grid": grid, "base": base.to_dict(),
                                  "task": vars(task), "recipe": _recipe(raw, args).to_dict()},
                   seeds, [path])
    return EXIT_OK


def cmd_train(args) -> int:
    raw = _read_config(args.config)
    enc = _toy_encoder(raw, args.variant, args.head_dim)
    mc = _model_config(raw, enc)
    recipe = _recipe(raw, args)
    task = _task(raw, args)
    out = _out_dir(args)
    model = build_model(mc, recipe.seed)
    result = train(model, task.train_data(mc, recipe.seed), recipe,
                   log_every=args.log_every)
    model_path = save_model(result.model, out / "model.bin",
                            extra={"seed": recipe.seed, "recipe": recipe.to_dict(),
                                   "task": vars(task)})
    loss_path = out / "losses.csv"
    loss_path.write_text("step,loss\n" + "".join(f"{i},{v:.17g}\n"
                                                 for i, v in enumerate(result.losses)))
    print(f"final train loss {result.final_loss:.4f} -> {model_path}")
    write_manifest(args, out, "train", {"model": mc.to_dict(), "recipe": recipe.to_dict(),
                                  "task": vars(task)}, recipe.seed, [model_path, loss_path])
    return EXIT_OK


def cmd_eval(args) -> int:
    model, extra = load_model(args.model)
    raw = {"task": extra.get("task", {})}
    task = _task(raw, args)
    seed = extra.get("seed", 0) if args.seed is None else args.seed
    mult = _multipliers(args.lengths)
    lengths = [m * model.config.train_len for m in mult]
    report = eval_perplexity(model, task.eval_data(model.config, seed, max(lengths)), lengths)
    out = _out_dir(args)
    c, j = out / "eval.csv", out / "eval.json"
    c.write_text(report.to_csv())
    j.write_text(report.to_json() + "\n")
    print("length " + " ".join(f"{L:>9d}" for L in report.lengths))
    print("ppl    " + " ".join(f"{p:>9.4f}" for p in report.ppl))
    write_manifest(args, out, "eval", {"model": model.config.to_dict(), "task": vars(task),
                                 "model_file": str(args.model), "multipliers": mult}, seed, [c, j])
    return EXIT_OK


def cmd_report(args) -> int:
    raw = _read_config(args.config)
    variants = _csv_list(args.variants)
    bad = [v for v in variants if v not in VARIANTS]
    if bad or not variants:
        raise UsageError(f"unknown variants {bad}; choose from {VARIANTS}")
    configs = [_toy_encoder(raw, v, args.head_dim) for v in variants]
    seeds = _csv_list(args.seeds, int)
    mult = _multipliers(args.lengths)
    recipe = _recipe(raw, args)
    task = _task(raw, args)
    mc = _model_config(raw, configs[0])
    rep = extrapolation_report(configs, recipe, task, seeds, mc, mult, jobs=args.jobs)
    out = _out_dir(args)
    c, j = rep.write(out)
    print(rep.to_csv(), end="")
    if len(mult) > 1:
        g = rep.growth(rep.lengths[min(2, len(mult) - 1)], rep.lengths[0])
        for lab, row in zip(rep.labels, g):
            print(f"growth {rep.lengths[min(2, len(mult) - 1)]}/{rep.lengths[0]} {lab}: "
                  + " ".join(f"{x:.4f}" for x in row))
    write_manifest(args, out, "report", {"configs": [cf.to_dict() for cf in configs],
                                   "model": mc.to_dict(), "recipe": recipe.to_dict(),
                                   "task": vars(task), "multipliers": mult}, seeds, [c, j])
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _add_run_flags(p, steps_default=None):
    p.add_argument("--task", choices=["copy", "recall"], default=None)
    p.add_argument("--steps", type=int, default=steps_default,
                   help="training steps (default: recipe default, 2000)")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--n-train", type=int, default=None, help="training sequences")
    p.add_argument("--precision", choices=["float32", "float64"], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hopelab", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"hopelab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help=f"output directory (default $HOPELAB_OUT or {DEFAULT_OUT})")

    p = sub.add_parser("decay", help="export attention-logit decay curves")
    common(p)
    p.add_argument("--variant", action="append", choices=VARIANTS,
                   help="repeat for several variants (default hope)")
    p.add_argument("--mode", choices=["fixed", "gaussian"], default="fixed")
    p.add_argument("--max-dist", type=int, default=256)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alibi-slope", type=float, default=None)
    p.set_defaults(func=cmd_decay)

    p = sub.add_parser("props", help="run the invariant suite")
    common(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_props)

    p = sub.add_parser("sweep", help="train/eval over a grid of one scale parameter")
    common(p)
    p.add_argument("--param", choices=["freq_scale", "theta_prime"], required=True)
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--variant", choices=VARIANTS, default="hope")
    p.add_argument("--seeds", default="0")
    p.add_argument("--jobs", type=int, default=1)
    _add_run_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train one toy model")
    common(p)
    p.add_argument("--variant", choices=VARIANTS, default="hope")
    p.add_argument("--head-dim", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=0)
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="perplexity vs context length for a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.add_argument("--task", choices=["copy", "recall"], default=None)
    p.add_argument("--seed", type=int, default=None, help="eval data seed (default: training seed)")
    p.add_argument("--lengths", default="1,2,3,4,5,6", help="multiples of train_len")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="multi-variant, multi-seed extrapolation table")
    common(p)
    p.add_argument("--variants", default="hope,rope")
    p.add_argument("--head-dim", type=int, default=None)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--lengths", default="1,2,3,4,5,6", help="multiples of train_len")
    _add_run_flags(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ModelFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, UsageError, ValueError) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
