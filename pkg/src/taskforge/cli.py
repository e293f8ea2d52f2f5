"""Command-line interface.

Exit codes: 0 success, 2 algorithmic failure (repair Failure, oracle
violation), 1 input/output or configuration error. Every option can also be set
through an environment variable TASKFORGE_<OPTION>, e.g. TASKFORGE_SEED=3.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

ENV_PREFIX = "TASKFORGE_"
EXIT_OK, EXIT_IO, EXIT_FAILURE = 0, 1, 2


def _env(name, default, cast=str):
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    return default if raw is None else cast(raw)


def _emit(text, out=None):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_task(path):
    from .task import load_task_file

    return load_task_file(json.loads(Path(path).read_text()))


def _catalog(args):
    from .catalog import default_catalog, load_catalog

    return load_catalog(args.catalog).check() if args.catalog else default_catalog()


def cmd_generate(args):
    from .generator import defect_task, derive_seed, sample_clean_task, sample_task
    from .task import dumps, task_file_dict

    catalog = _catalog(args)
    docs = []
    for i in range(args.n):
        s = args.seed if args.n == 1 else derive_seed(args.seed, i)
        if args.raw:
            task = sample_task(catalog, s)
        elif args.defect:
            task = defect_task(args.defect, s, catalog)
        else:
            task = sample_clean_task(catalog, s)
        d = task_file_dict(task)
        d["label"] = args.defect
        docs.append(d)
    if args.n == 1:
        _emit(dumps(docs[0]) + "\n", args.out)
    else:
        out = Path(args.out or "tasks")
        out.mkdir(parents=True, exist_ok=True)
        for i, d in enumerate(docs):
            (out / f"task_{i:04d}.json").write_text(dumps(d) + "\n")
        print(f"wrote {args.n} tasks to {out}")
    return EXIT_OK


def cmd_audit(args):
    from .audit import check_static
    from .task import dumps

    task, _ = _load_task(args.task)
    report = check_static(task)
    _emit(dumps(report.to_dict()) + "\n", args.out)
    return EXIT_OK if report.valid else EXIT_FAILURE


def cmd_repair(args):
    from .errors import RepairFailure
    from .repair import run_static_loop
    from .task import RepairLedger, dumps, task_file_dict

    task, ledger = _load_task(args.task)
    ledger = RepairLedger(ledger.ops, args.budget)
    try:
        res = run_static_loop(task, args.budget, args.max_iter, ledger, _catalog(args))
    except RepairFailure as exc:
        doc = {"failure": exc.kind, "message": str(exc),
               "report": exc.report.to_dict() if exc.report is not None else None,
               "ledger": exc.ledger.to_dict() if exc.ledger is not None else None}
        sys.stdout.write(dumps(doc) + "\n")
        return EXIT_FAILURE
    _emit(dumps(task_file_dict(res.task, res.ledger)) + "\n", args.out)
    return EXIT_OK


def cmd_execute(args):
    from .executor import execute, nominal_theta
    from .feasibility import sample_thetas

    task, _ = _load_task(args.task)
    if args.theta == "nominal":
        theta = nominal_theta(task)
    else:
        theta = sample_thetas(task, 1, args.seed)[0]
    trace = execute(task, theta, seed=args.seed)
    _emit(trace.to_jsonl(), args.out)
    return EXIT_OK


def _config(args, ablation=None):
    from .pipeline import PipelineConfig

    return PipelineConfig(args.catalog, args.seed, args.budget, args.delta_min, args.mu_samples,
                          args.max_iter, args.max_rounds, ablation or args.ablation, args.out)


def cmd_pipeline(args):
    from .pipeline import run_pipeline
    from .task import dumps

    task, _ = _load_task(args.task)
    label = json.loads(Path(args.task).read_text()).get("label")
    cfg = _config(args)
    rec = run_pipeline(cfg, task, label, catalog=_catalog(args))
    doc = {"config": cfg.to_dict(), "record": rec.to_dict()}
    text = dumps(doc) + "\n"
    if args.out:
        _emit(text, Path(args.out) / "record.json")
    else:
        sys.stdout.write(text)
    return EXIT_FAILURE if rec.failure else EXIT_OK


def cmd_eval(args):
    from .pipeline import MODES, evaluate, write_outputs

    modes = MODES if args.ablation == "all" else (args.ablation,)
    cfg = _config(args, modes[0])
    t0 = time.time()
    reports, by_mode, _ = evaluate(cfg, args.n_tasks, modes, args.defect_mix, args.workers)
    out = write_outputs(args.out or "eval_out", cfg, args.n_tasks, args.defect_mix, reports, by_mode)
    # wall-clock data lives only in this sidecar
    (out / "run.log").write_text(f"finished {time.strftime('%Y-%m-%dT%H:%M:%S')} "
                                 f"elapsed {time.time() - t0:.1f}s workers {args.workers}\n")
    sys.stdout.write((out / "report.md").read_text())
    return EXIT_OK


def cmd_converge(args):
    from .convergence import estimate_rate, exact_gradient, potential, run_descent, scaled_gradient
    from .errors import InsufficientIterations, OracleViolation

    pot = potential(args.potential)
    oracle = exact_gradient() if args.oracle == "exact" else scaled_gradient(
        np.linspace(0.5, 1.0, pot.dim))
    try:
        rep = run_descent(pot, oracle, eta=args.eta, K=args.steps)
    except OracleViolation as exc:
        print(f"oracle violation: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    doc = rep.to_dict()
    try:
        doc["rho_hat"] = estimate_rate(rep)
    except InsufficientIterations:
        doc["rho_hat"] = None
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text)
        (out / "J.csv").write_text(rep.to_csv())
    sys.stdout.write(text)
    return EXIT_OK


def cmd_diversity(args):
    from .generator import derive_seed, sample_clean_task
    from .metrics import self_bleu4

    if args.corpus:
        sents = [s for s in Path(args.corpus).read_text().splitlines() if s.strip()]
    else:
        catalog = _catalog(args)
        sents = [sample_clean_task(catalog, derive_seed(args.seed, i)).instruction.text
                 for i in range(args.n_tasks)]
    doc = {"n": len(sents), "self_bleu4": self_bleu4(sents), "reference": 0.276}
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="taskforge", description="Generate, audit, repair and evaluate embodied task specifications.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help="output path (default stdout)"):
        sp.add_argument("--catalog", default=_env("catalog", None), help="asset catalog JSON")
        sp.add_argument("--seed", type=int, default=_env("seed", 0, int))
        sp.add_argument("--out", default=_env("out", None), help=out_help)

    def pipeline_opts(sp):
        sp.add_argument("--budget", type=float, default=_env("budget", 4.0, float))
        sp.add_argument("--delta-min", type=float, default=_env("delta_min", 0.1, float))
        sp.add_argument("--mu-samples", type=int, default=_env("mu_samples", 256, int))
        sp.add_argument("--max-iter", type=int, default=_env("max_iter", 8, int))
        sp.add_argument("--max-rounds", type=int, default=_env("max_rounds", 5, int))

    sp = sub.add_parser("generate", help="sample a task file")
    common(sp, "output file (n = 1) or directory")
    sp.add_argument("--n", type=int, default=_env("n", 1, int))
    sp.add_argument("--defect", default=_env("defect", None), help="inject one defect code")
    sp.add_argument("--raw", action="store_true", help="skip the clean-task filter")
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("audit", help="static audit of a task file")
    common(sp)
    sp.add_argument("task")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("repair", help="run the static repair loop")
    common(sp)
    sp.add_argument("task")
    sp.add_argument("--budget", type=float, default=_env("budget", 4.0, float))
    sp.add_argument("--max-iter", type=int, default=_env("max_iter", 8, int))
    sp.set_defaults(func=cmd_repair)

    sp = sub.add_parser("execute", help="roll out a task and write its trace")
    common(sp)
    sp.add_argument("task")
    sp.add_argument("--theta", choices=("nominal", "sample"), default=_env("theta", "nominal"))
    sp.set_defaults(func=cmd_execute)

    sp = sub.add_parser("pipeline", help="run one task through the pipeline")
    common(sp, "output directory")
    sp.add_argument("task")
    pipeline_opts(sp)
    sp.add_argument("--ablation", choices=("vanilla", "static-only", "full"), default=_env("ablation", "full"))
    sp.set_defaults(func=cmd_pipeline)

    sp = sub.add_parser("eval", help="seeded batch evaluation")
    common(sp, "output directory")
    pipeline_opts(sp)
    sp.add_argument("--n-tasks", type=int, default=_env("n_tasks", 500, int))
    sp.add_argument("--defect-mix", default=_env("defect_mix", "standard"))
    sp.add_argument("--ablation", choices=("vanilla", "static-only", "full", "all"), default=_env("ablation", "all"))
    sp.add_argument("--workers", type=int, default=_env("workers", 1, int))
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("converge", help="descent certificate on a bundled potential")
    sp.add_argument("--potential", default=_env("potential", "quadratic"))
    sp.add_argument("--oracle", choices=("exact", "scaled"), default=_env("oracle", "exact"))
    sp.add_argument("--eta", type=float, default=_env("eta", 0.25, float))
    sp.add_argument("--steps", type=int, default=_env("steps", 50, int))
    sp.add_argument("--out", default=_env("out", None), help="directory for report.json and J.csv")
    sp.set_defaults(func=cmd_converge)

    sp = sub.add_parser("diversity", help="Self-BLEU-4 of generated instructions")
    common(sp)
    sp.add_argument("--n-tasks", type=int, default=_env("n_tasks", 352, int))
    sp.add_argument("--corpus", default=None, help="text file, one sentence per line")
    sp.set_defaults(func=cmd_diversity)
    return p


def main(argv=None):
    from .errors import TaskforgeError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_IO
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except TaskforgeError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
