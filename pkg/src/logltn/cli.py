"""Command-line entry point.

Commands::

    logltn check FILE.kb [--semantics KIND]
    logltn train --task {clustering,digitadd,kbfile} --semantics KIND --seed N [--config FILE.json]
    logltn analyze {stability,demorgan,lme-bounds} [flags]
    logltn gradcheck --task {clustering,digitadd} --semantics KIND

Exit codes: 0 success, 1 validation error, 2 numerical failure. Training
outputs go to ``--out`` or, failing that, to a directory under
``$LOGLTN_OUT`` (default ``runs``).
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis, experiments
from . import graph as G
from .errors import LogicError, NonFiniteLossError, SpaceMixingError
from .formula import atoms, free_variables, load_kb, pretty_print, symbols, VariableRef
from .nnf import to_nnf
from .predicates import Sigmoid, Softmax, init_model, save_model
from .semantics import Constant, Guard, GroundingEnv, Kind, Linear, SemanticsConfig, infer_space
from .training import TrainConfig, loss, loss_grad_check, max_gradient_support, train

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
OUT_ENV = "LOGLTN_OUT"


class ValidationError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def default_config(task: str) -> dict:
    steps = experiments.DEFAULT_STEPS.get(task, 1000)
    alpha = {"start": 1.0, "end": 4.0}
    if task == "digitadd":
        alpha = experiments.DIGITADD_ALPHA
    return {
        "task": task,
        "semantics": {"kind": "logltn", "alpha": alpha, "p": {"start": 1.0, "end": 6.0}, "epsilon": 1e-7},
        "train": {
            "steps": steps,
            "learning_rate": experiments.DEFAULT_LR.get(task, 0.001),
            "batch_size": 32 if task == "digitadd" else None,
            "seed": 0,
        },
        "data": {},
    }


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _schedule(spec, steps):
    if isinstance(spec, (int, float)):
        return Constant(float(spec))
    if isinstance(spec, dict):
        if "value" in spec:
            return Constant(float(spec["value"]))
        return Linear(float(spec["start"]), float(spec["end"]), int(spec.get("steps", steps)))
    raise ValidationError(f"bad schedule {spec!r}: use a number or {{start, end[, steps]}}")


def semantics_from(cfg: dict) -> SemanticsConfig:
    s = cfg["semantics"]
    steps = cfg["train"]["steps"]
    try:
        return SemanticsConfig(
            Kind(s["kind"]),
            alpha=_schedule(s["alpha"], steps),
            p=_schedule(s["p"], steps),
            epsilon=float(s["epsilon"]),
        )
    except ValueError as e:
        raise ValidationError(str(e)) from None


def train_config_from(cfg: dict, seed: int) -> TrainConfig:
    t = cfg["train"]
    try:
        return TrainConfig(
            steps=int(t["steps"]),
            learning_rate=float(t["learning_rate"]),
            batch_size=t.get("batch_size"),
            seed=seed,
        )
    except ValueError as e:
        raise ValidationError(str(e)) from None


def effective_config(args) -> dict:
    cfg = default_config(args.task)
    if args.config:
        try:
            cfg = merge(cfg, json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ValidationError(f"cannot read config {args.config}: {e}") from None
    flags = {"semantics": {}, "train": {}}
    if args.semantics is not None:
        flags["semantics"]["kind"] = args.semantics
    if args.seed is not None:
        flags["train"]["seed"] = args.seed
    if args.steps is not None:
        flags["train"]["steps"] = args.steps
    if args.lr is not None:
        flags["train"]["learning_rate"] = args.lr
    if args.batch_size is not None:
        flags["train"]["batch_size"] = args.batch_size
    cfg = merge(cfg, flags)
    cfg["task"] = args.task
    return cfg


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


def _dataclass_kwargs(cls, data: dict) -> dict:
    known = set(cls.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}


def run_clustering(cfg, sem, tcfg, log):
    ccfg = experiments.ClusterConfig(**_dataclass_kwargs(experiments.ClusterConfig, cfg["data"]))
    task = experiments.ClusterTask.generate(ccfg, seed=tcfg.seed)
    kb, env = experiments.build_cluster_kb(task, seed=tcfg.seed)
    record = train(kb, env, sem, tcfg)
    model = env.predicates["C"]
    record.metrics["ari"] = experiments.evaluate_cluster(model, task)
    return record, model, task.to_csv()


def run_digitadd(cfg, sem, tcfg, log):
    dcfg = experiments.DigitAddConfig(**_dataclass_kwargs(experiments.DigitAddConfig, cfg["data"]))
    task = experiments.DigitAddTask.generate(dcfg, seed=tcfg.seed)
    model = experiments.digit_model(task, seed=tcfg.seed)
    kb = experiments.parse_kb(experiments.DIGITADD_KB)
    support = []

    def on_step(step, tape, truths):
        if sem.kind is Kind.LOGLTN_MAX:
            support.append(max_gradient_support(tape))

    record = train(kb, experiments.digitadd_batches(task, model, tcfg.batch_size), sem, tcfg, on_step)
    digit_acc, sum_acc = experiments.evaluate_digitadd(model, task)
    record.metrics["digit_accuracy"] = digit_acc
    record.metrics["sum_accuracy"] = sum_acc
    if support:
        record.metrics["max_gradient_entries_per_group"] = max(support)
        log(f"one-hot gradient check: at most {max(support)} entry per existential group over {len(support)} steps")
    return record, model, task.to_csv(200, seed=tcfg.seed)


def _load_env(cfg, kb, seed):
    """Environment for a user knowledgebase: arrays from an .npz, models from the config."""
    data = cfg["data"]
    if "arrays" not in data:
        raise ValidationError("kbfile task needs data.arrays (an .npz with var.*, const.*, guard.* keys)")
    try:
        arrays = dict(np.load(data["arrays"], allow_pickle=False))
    except OSError as e:
        raise ValidationError(f"cannot read {data['arrays']}: {e}") from None
    variables = {k[4:]: v for k, v in arrays.items() if k.startswith("var.")}
    constants = {k[6:]: v for k, v in arrays.items() if k.startswith("const.")}
    guards = {}
    for name, vars_ in data.get("guards", {}).items():
        if f"guard.{name}" not in arrays:
            raise ValidationError(f"no array guard.{name} for guard '{name}'")
        guards[name] = Guard(tuple(vars_), arrays[f"guard.{name}"])
    predicates = {}
    specs = data.get("predicates", {})
    for f in kb.formulas:
        for a in atoms(f):
            if a.predicate in predicates:
                continue
            spec = specs.get(a.predicate)
            if spec is None:
                raise ValidationError(f"no model declared for predicate '{a.predicate}' (data.predicates)")
            softmax = spec.get("head", "sigmoid") == "softmax"
            args = a.args[:-1] if softmax else a.args
            width = 0
            for t in args:
                src = variables if isinstance(t, VariableRef) else constants
                if t.name not in src:
                    raise ValidationError(f"no data for '{t.name}'")
                arr = np.asarray(src[t.name])
                width += 1 if arr.ndim <= 1 else arr.shape[-1]
            head = Softmax(int(spec["classes"])) if softmax else Sigmoid()
            out = head.k if softmax else 1
            sizes = [width, *spec.get("hidden", [16]), out]
            predicates[a.predicate] = init_model(sizes, head, seed=seed, name=a.predicate)
    return GroundingEnv(constants, variables, guards, predicates)


def run_kbfile(cfg, sem, tcfg, log):
    path = cfg["data"].get("kb")
    if not path:
        raise ValidationError("kbfile task needs --kb FILE or data.kb in the config")
    kb = load_kb(path)
    env = _load_env(cfg, kb, tcfg.seed)
    record = train(kb, env, sem, tcfg)
    return record, None, None


TASKS = {"clustering": run_clustering, "digitadd": run_digitadd, "kbfile": run_kbfile}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_check(args, out, err) -> int:
    try:
        kb = load_kb(args.kb_file)
    except OSError as e:
        err(f"error: {e}")
        return EXIT_INVALID
    except (LogicError, ValueError) as e:
        err(f"error: {e}")
        return EXIT_INVALID
    kind = Kind(args.semantics) if args.semantics else None
    for label, f in zip(kb.labels(), kb.formulas):
        nnf = to_nnf(f)
        out(f"{label}: {pretty_print(f)}")
        out(f"  nnf: {pretty_print(nnf)}")
        out(f"  free variables: {', '.join(sorted(free_variables(f))) or '-'}")
        syms = symbols(f)
        for key in ("predicates", "constants", "variables", "guards"):
            out(f"  {key}: {', '.join(sorted(syms[key])) or '-'}")
        if kind is not None:
            target = nnf if kind.is_log else f
            try:
                space = infer_space(target, kind)
                out(f"  {kind.value}: grounds to a {space.value} truth degree")
            except SpaceMixingError as e:
                err(f"warning: {label}: {e}")
    return EXIT_OK


def _out_dir(args, cfg, seed) -> Path:
    if args.out:
        base = Path(args.out)
    else:
        root = Path(os.environ.get(OUT_ENV, "runs"))
        base = root / f"{cfg['task']}-{cfg['semantics']['kind']}"
    if args.repeats > 1 or not args.out:
        base = base / f"seed{seed}"
    return base


def _run_one(args, cfg, seed, log):
    sem = semantics_from(cfg)
    tcfg = train_config_from(cfg, seed)
    record, model, data_csv = TASKS[cfg["task"]](cfg, sem, tcfg, log)
    last = record.rows[-1]
    record.metrics.update({"final_loss": last[1], "final_sat": last[2], "steps": tcfg.steps, "seed": seed})
    outdir = _out_dir(args, cfg, seed)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "run.csv").write_text(record.to_csv())
    (outdir / "metrics.txt").write_text(record.metrics_text())
    manifest = {"version": __version__, "seed": seed, "config": dict(cfg, train=dict(cfg["train"], seed=seed)),
                "argv": args.argv}
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if model is not None and args.save_model:
        save_model(model, outdir / "model.npz")
    if data_csv is not None and args.dump_data:
        (outdir / "data.csv").write_text(data_csv)
    return outdir, record


def cmd_train(args, out, err) -> int:
    try:
        cfg = effective_config(args)
        if args.kb:
            cfg["data"]["kb"] = args.kb
        if args.data:
            cfg["data"]["arrays"] = args.data
        semantics_from(cfg)
        train_config_from(cfg, cfg["train"]["seed"])
    except (ValidationError, ValueError) as e:
        err(f"error: {e}")
        return EXIT_INVALID
    seeds = [int(cfg["train"]["seed"]) + i for i in range(args.repeats)]

    def job(seed):
        return _run_one(args, cfg, seed, lambda m: err(f"[seed {seed}] {m}"))

    try:
        if len(seeds) == 1:
            results = [job(seeds[0])]
        else:
            with ThreadPoolExecutor(max_workers=min(len(seeds), os.cpu_count() or 1)) as pool:
                results = list(pool.map(job, seeds))
    except NonFiniteLossError as e:
        err(f"numerical failure: {e}")
        return EXIT_NUMERIC
    except (ValidationError, LogicError, ValueError, OSError) as e:
        err(f"error: {e}")
        return EXIT_INVALID
    for outdir, record in results:
        out(f"{outdir}")
        for line in record.metrics_text().splitlines():
            out(f"  {line}")
    return EXIT_OK


def _write(args, name, text):
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / name).write_text(text)


def cmd_analyze(args, out, err) -> int:
    if args.what == "stability":
        rows = analysis.stability_table(args.inputs, args.precision)
        text = analysis.stability_csv(rows)
        out(text.rstrip("\n"))
        _write(args, "stability.csv", text)
        return EXIT_OK
    if args.what == "demorgan":
        n = args.n
        peak = analysis.demorgan_peak(n, args.variant)
        if args.samples is None and n == 2:
            avg = analysis.demorgan_average(n, args.points_per_axis or 4000, variant=args.variant)
            method = f"grid {args.points_per_axis or 4000}^2"
        else:
            ppa = args.points_per_axis or 10
            samples = args.samples or 1_000_000
            avg = analysis.demorgan_average(n, ppa, samples, seed=args.seed, variant=args.variant)
            method = f"{samples} samples from the {ppa}-point lattice"
        lines = [
            f"n={n}", f"variant={args.variant}", f"x_star={peak.x_star:.6f}", f"peak_gap={peak.gap:.6f}",
            f"grid_x_star={peak.grid_x_star:.6f}", f"average_gap={avg:.6f}", f"method={method}",
        ]
        text = "\n".join(lines) + "\n"
        out(text.rstrip("\n"))
        _write(args, "demorgan.txt", text)
        if args.out and n == 2:
            _write(args, "demorgan_grid.csv", analysis.demorgan_grid_csv(101, args.variant))
        return EXIT_OK
    rep = analysis.verify_lme_bounds(args.trials, args.n_max, (args.alpha_min, args.alpha_max), seed=args.seed)
    out(rep.summary().rstrip("\n"))
    _write(args, "lme_bounds.txt", rep.summary())
    return EXIT_OK if rep.ok else EXIT_NUMERIC


def _has_tie(tape, tol=1e-9) -> bool:
    for node in tape.nodes:
        if node.op != "max":
            continue
        axes, _ = node.info
        v = np.moveaxis(node.parents[0].value, axes, range(-len(axes), 0))
        flat = v.reshape(v.shape[: v.ndim - len(axes)] + (-1,))
        if flat.shape[-1] < 2:
            continue
        top2 = np.sort(flat, axis=-1)[..., -2:]
        if np.any(np.abs(top2[..., 1] - top2[..., 0]) < tol):
            return True
    return False


def gradcheck_instance(task: str, kind, seed: int = 0):
    """Small knowledgebase/environment pair for finite-difference checks."""
    if task == "clustering":
        t = experiments.ClusterTask.generate(experiments.ClusterConfig(n_points=20, hidden=(4,)), seed=seed)
        kb, env = experiments.build_cluster_kb(t, seed=seed + 1)
        return kb, env
    if task == "digitadd":
        t = experiments.DigitAddTask.generate(experiments.DigitAddConfig(hidden=(6,)), seed=seed)
        model = experiments.digit_model(t, seed=seed + 1)
        feats, _, sums = t.samples(3, np.random.default_rng(seed))
        return experiments.build_digitadd_kb(feats, sums, model)
    raise ValidationError(f"gradcheck supports clustering and digitadd, not {task!r}")


def cmd_gradcheck(args, out, err) -> int:
    kind = Kind(args.semantics)
    sem = experiments.task_semantics(args.task, kind, 10)
    try:
        for attempt in range(10):
            kb, env = gradcheck_instance(args.task, kind, args.seed + 100 * attempt)
            tape = G.Tape()
            loss(kb, env, sem, 5, tape)
            if not _has_tie(tape):
                break
            err(f"instance with seed {args.seed + 100 * attempt} has a max tie; excluded")
        else:
            err("could not find an instance without max ties")
            return EXIT_NUMERIC
    except ValidationError as e:
        err(f"error: {e}")
        return EXIT_INVALID
    worst = loss_grad_check(kb, env, sem, step=5)
    out(f"max_relative_error={worst:.3e}")
    return EXIT_OK if worst <= args.tolerance else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    kinds = [k.value for k in Kind]
    p = argparse.ArgumentParser(prog="logltn", description="Log-space fuzzy logic training and analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="parse a knowledgebase and report its NNF and symbols")
    c.add_argument("kb_file")
    c.add_argument("--semantics", choices=kinds, help="also check groundability under this configuration")

    t = sub.add_parser("train", help="train on a task and write run.csv, metrics.txt, manifest.json")
    t.add_argument("--task", choices=sorted(TASKS), required=True)
    t.add_argument("--semantics", choices=kinds)
    t.add_argument("--seed", type=int)
    t.add_argument("--config", help="JSON file; CLI flags override its values")
    t.add_argument("--steps", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--kb", help="knowledgebase file (task kbfile)")
    t.add_argument("--data", help=".npz with var.*, const.*, guard.* arrays (task kbfile)")
    t.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
    t.add_argument("--repeats", type=int, default=1, help="consecutive seeds run on a thread pool")
    t.add_argument("--save-model", action="store_true")
    t.add_argument("--dump-data", action="store_true", help="write the generated dataset as data.csv")

    a = sub.add_parser("analyze", help="numerical checks")
    asub = a.add_subparsers(dest="what", required=True)
    s = asub.add_parser("stability", help="log(1 - sigmoid) naive vs fused")
    s.add_argument("--precision", type=int, choices=(32, 64), default=32)
    s.add_argument("--inputs", type=float, nargs="+", default=list(analysis.STABILITY_INPUTS))
    s.add_argument("--out")
    d = asub.add_parser("demorgan", help="De Morgan gap peak and average")
    d.add_argument("--n", type=int, default=2)
    d.add_argument("--variant", choices=("and", "or"), default="and")
    d.add_argument("--points-per-axis", type=int)
    d.add_argument("--samples", type=int)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out")
    b = asub.add_parser("lme-bounds", help="random checks of the LogMeanExp bounds")
    b.add_argument("--trials", type=int, default=10_000)
    b.add_argument("--n-max", type=int, default=50)
    b.add_argument("--alpha-min", type=float, default=0.1)
    b.add_argument("--alpha-max", type=float, default=10.0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")

    g = sub.add_parser("gradcheck", help="finite-difference check of a full task loss")
    g.add_argument("--task", choices=("clustering", "digitadd"), required=True)
    g.add_argument("--semantics", choices=kinds, default="logltn")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tolerance", type=float, default=1e-3)
    return p


COMMANDS = {"check": cmd_check, "train": cmd_train, "analyze": cmd_analyze, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.argv = argv
    if getattr(args, "repeats", 1) < 1:
        parser.error("--repeats must be positive")

    def out(msg):
        print(msg, file=sys.stdout)

    def err(msg):
        print(msg, file=sys.stderr)

    return COMMANDS[args.command](args, out, err)


if __name__ == "__main__":
    sys.exit(main())
