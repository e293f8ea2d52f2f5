"""End-to-end alignment pipeline (static phase, then dynamic phase) and seeded
batch evaluation across ablation modes."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .audit import DEFECT_CODES, check_static
from .catalog import default_catalog, load_catalog
from .errors import RepairFailure
from .executor import STAGE, execute, nominal_theta, run_dynamic_loop
from .feasibility import MuCache
from .generator import derive_seed, make_batch_task
from .metrics import PipelineRecord, compute_metrics, to_csv, to_markdown
from .repair import run_static_loop
from .task import RepairLedger, Task, dumps

MODES = ("vanilla", "static-only", "full")
STANDARD_MIX = "standard"


@dataclass(frozen=True)
class PipelineConfig:
    catalog: Optional[str] = None
    seed: int = 0
    budget: float = 4.0
    delta_min: float = 0.1
    mu_samples: int = 256
    max_static_iter: int = 8
    max_dynamic_rounds: int = 5
    ablation: str = "full"
    out: Optional[str] = None
    measure_initial: bool = True

    def __post_init__(self):
        if self.ablation not in MODES:
            raise ValueError(f"ablation must be one of {MODES}")
        if not self.budget >= 0:
            raise ValueError("budget must be >= 0")
        if not 0 < self.delta_min < 1:
            raise ValueError("delta_min must lie in (0, 1)")
        if self.mu_samples < 1 or self.max_static_iter < 1 or self.max_dynamic_rounds < 1:
            raise ValueError("mu_samples, max_static_iter and max_dynamic_rounds must be >= 1")

    def to_dict(self):
        return asdict(self)


def mu_seed(task: Task) -> int:
    """Sample seed shared by the initial and final estimate of one task."""
    return derive_seed(task.seed, 17)


def _mark(stages, reports, ok):
    seen = []
    for rep in reports:
        s = STAGE[rep.cls]
        if s not in seen:
            seen.append(s)
    for s in seen:
        stages[s][0] += 1
        stages[s][1] += int(ok)


def run_pipeline(config: PipelineConfig, task: Task, label=None, task_id: int = 0, mu=None,
                 catalog=None) -> PipelineRecord:
    """Run one task through the configured ablation; algorithmic failures are
    recorded, never raised."""
    mu = mu or MuCache()
    catalog = catalog or (load_catalog(config.catalog) if config.catalog else default_catalog())
    mode = config.ablation
    rec = PipelineRecord(task_id, label, mode, task.template, budget=config.budget, initial_task=task)
    init_report = check_static(task)
    rec.ante_codes = init_report.codes
    ledger = RepairLedger(budget=config.budget)
    final = task

    if mode != "vanilla":
        ok = True
        if not init_report.valid:
            rec.stages["ANTE"][0] += 1
            try:
                res = run_static_loop(task, config.budget, config.max_static_iter, ledger, catalog)
                final, ledger = res.task, res.ledger
                rec.stages["ANTE"][1] += 1
            except RepairFailure as exc:
                rec.failure = f"static:{exc.kind}"
                ok = False
        if ok:
            tr = execute(final, nominal_theta(final), seed=final.seed)
            rec.instep_run = True
            rec.nominal_class = None if tr.success else tr.report.cls
            rec.instep_code = None if tr.success else tr.report.instep_code
            if mode == "full" and not tr.success:
                try:
                    dyn = run_dynamic_loop(final, ledger=ledger, max_rounds=config.max_dynamic_rounds,
                                           seed=final.seed)
                    _mark(rec.stages, dyn.reports, True)
                    final, ledger = dyn.task, dyn.ledger
                except RepairFailure as exc:
                    reports = [tr.report] if exc.report is None else [tr.report, exc.report]
                    _mark(rec.stages, reports, False)
                    rec.failure = f"dynamic:{exc.kind}"
        if rec.failure is not None:
            final, ledger = task, RepairLedger(budget=config.budget)
    else:
        if init_report.valid:
            tr = execute(task, nominal_theta(task), seed=task.seed)
            rec.instep_run = True
            rec.nominal_class = None if tr.success else tr.report.cls
            rec.instep_code = None if tr.success else tr.report.instep_code

    rec.final_task = final
    rec.ledger = ledger.to_dict()
    rec.semantic_cost = ledger.semantic_cost
    rec.static_pass = check_static(final).valid
    seed = mu_seed(task)
    if config.measure_initial:
        rec.mu_initial = mu(task, config.mu_samples, seed, config.delta_min).to_dict()
    if rec.static_pass:
        est = mu(final, config.mu_samples, seed, config.delta_min)
        rec.mu_final = est.to_dict()
        rec.exec_pass = est.feasible
    rec.feasible = rec.static_pass and bool(rec.exec_pass)
    return rec.check()


# --------------------------------------------------------------------------
# Batches


def parse_defect_mix(spec: str = STANDARD_MIX):
    """'standard' (30% clean, rest uniform over the ten codes) or a comma list
    like 'clean=0.5,D-G3=0.5'. Returns {label_or_None: weight}."""
    if spec in (None, "", STANDARD_MIX):
        w = {None: 0.3}
        w.update({c: 0.07 for c in DEFECT_CODES})
        return w
    out = {}
    for part in spec.split(","):
        name, _, val = part.partition("=")
        name = name.strip()
        key = None if name == "clean" else name
        if key is not None and key not in DEFECT_CODES:
            raise ValueError(f"unknown defect code {name!r} in mix")
        out[key] = float(val) if val else 1.0
    if any(v < 0 for v in out.values()) or sum(out.values()) <= 0:
        raise ValueError("mix weights must be non-negative with a positive sum")
    return out


def mix_labels(n: int, seed: int, weights):
    """Largest-remainder allocation of n labels, then a seeded shuffle."""
    keys = list(weights)
    tot = sum(weights.values())
    raw = [n * weights[k] / tot for k in keys]
    counts = [int(math.floor(r + 1e-9)) for r in raw]
    order = sorted(range(len(keys)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    labels = [k for k, c in zip(keys, counts) for _ in range(c)]
    perm = np.random.default_rng(derive_seed(seed, 99)).permutation(n)
    return [labels[i] for i in perm]


def _job(args):
    index, label, config, modes = args
    catalog = load_catalog(config.catalog) if config.catalog else default_catalog()
    mu = _job.cache
    task = make_batch_task(index, label, config.seed, catalog)
    out = []
    for m in modes:
        rec = run_pipeline(replace(config, ablation=m), task, label, index, mu, catalog)
        if _job.strip:  # tasks do not need to cross the process boundary
            rec.initial_task = rec.final_task = None
        out.append(rec)
    return index, task.instruction.text, out


_job.cache = MuCache()
_job.strip = False


def _init_worker():
    _job.cache = MuCache()
    _job.strip = True


def run_batch(config: PipelineConfig, n_tasks: int, modes=MODES, mix: str = STANDARD_MIX, workers: int = 1):
    """Generate n_tasks seeded tasks and run each through every mode.

    Returns ({mode: [records in index order]}, [instruction texts]).
    """
    if n_tasks < 1:
        raise ValueError("n_tasks must be >= 1")
    labels = mix_labels(n_tasks, config.seed, parse_defect_mix(mix))
    jobs = [(i, labels[i], config, tuple(modes)) for i in range(n_tasks)]
    if workers <= 1:
        _job.cache = MuCache()
        results = [_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker) as pool:
            results = list(pool.map(_job, jobs, chunksize=max(1, n_tasks // (4 * workers))))
    results.sort(key=lambda r: r[0])
    by_mode = {m: [] for m in modes}
    texts = []
    for _, text, recs in results:
        texts.append(text)
        for m, r in zip(modes, recs):
            by_mode[m].append(r)
    return by_mode, texts


def evaluate(config: PipelineConfig, n_tasks: int, modes=MODES, mix: str = STANDARD_MIX, workers: int = 1):
    """Run a batch and compute one MetricsReport per mode."""
    by_mode, texts = run_batch(config, n_tasks, modes, mix, workers)
    reports = {}
    for i, m in enumerate(modes):
        reports[m] = compute_metrics(by_mode[m], corpus=texts if i == 0 and len(texts) >= 2 else None)
    return reports, by_mode, texts


def write_outputs(out_dir, config: PipelineConfig, n_tasks: int, mix: str, reports, by_mode):
    """Deterministic report files; nothing time-dependent is written here."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = config.to_dict()
    cfg.pop("out")  # where the files land is not part of their content
    header = {"config": cfg, "n_tasks": n_tasks, "defect_mix": mix, "modes": list(reports)}
    (out / "config.json").write_text(dumps(header) + "\n")
    (out / "metrics.csv").write_text(to_csv(reports))
    title = f"Batch of {n_tasks} tasks, seed {config.seed}, mix {mix}"
    (out / "report.md").write_text(to_markdown(reports, title))
    for m, recs in by_mode.items():
        lines = [json.dumps(r.to_dict(), sort_keys=True) for r in recs]
        (out / f"records_{m}.jsonl").write_text("\n".join(lines) + "\n")
    return out
