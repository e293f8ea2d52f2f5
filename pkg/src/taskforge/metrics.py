"""Batch metrics: validity rates, repair success per stage, auditor
precision/recall against injected labels, and Self-BLEU-4."""
from __future__ import annotations

import csv
import io
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .audit import CATEGORY
from .errors import CorpusTooSmall, InconsistentRecord

STAGES = ("ANTE", "PRIMITIVE", "SEARCH")
CATEGORIES = ("SEMANTIC", "GEOMETRIC", "DYNAMIC")

# directional reference from the original study, in percent (SVR, EVR, FTR)
REFERENCE_ROWS = (
    ("reference: vanilla", 41.5, 30.4, 12.6),
    ("reference: full pipeline", 97.5, 94.5, 92.1),
)


@dataclass
class PipelineRecord:
    task_id: int
    label: Optional[str]  # injected defect code, None for clean
    mode: str
    template: str = ""
    ante_codes: tuple = ()
    instep_code: Optional[str] = None
    instep_run: bool = False  # did the in-step auditor observe a rollout?
    static_pass: bool = False
    exec_pass: Optional[bool] = None  # None when execution was not attempted
    feasible: bool = False
    stages: dict = field(default_factory=lambda: {s: [0, 0] for s in STAGES})  # [attempted, succeeded]
    ledger: dict = field(default_factory=dict)
    semantic_cost: int = 0
    budget: float = 4.0
    mu_initial: Optional[dict] = None
    mu_final: Optional[dict] = None
    failure: Optional[str] = None
    nominal_class: Optional[str] = None
    initial_task: object = None  # kept in memory for replay checks, never serialized
    final_task: object = None

    def check(self):
        if self.exec_pass is not None and not self.static_pass:
            raise InconsistentRecord(f"task {self.task_id}: execution attempted without static pass")
        if self.feasible and not self.exec_pass:
            raise InconsistentRecord(f"task {self.task_id}: feasible without execution pass")
        if self.feasible != (self.static_pass and bool(self.exec_pass)):
            raise InconsistentRecord(f"task {self.task_id}: feasible flag disagrees with stage outcomes")
        for s, (a, ok) in self.stages.items():
            if s not in STAGES or not 0 <= ok <= a:
                raise InconsistentRecord(f"task {self.task_id}: bad stage counts for {s}")
        return self

    def to_dict(self):
        return {
            "task_id": self.task_id, "label": self.label, "mode": self.mode, "template": self.template,
            "ante_codes": list(self.ante_codes), "instep_code": self.instep_code, "instep_run": self.instep_run,
            "static_pass": self.static_pass, "exec_pass": self.exec_pass, "feasible": self.feasible,
            "stages": {s: list(self.stages[s]) for s in STAGES}, "ledger": self.ledger,
            "semantic_cost": self.semantic_cost, "budget": self.budget,
            "mu_initial": self.mu_initial, "mu_final": self.mu_final,
            "failure": self.failure, "nominal_class": self.nominal_class,
        }

    @classmethod
    def from_dict(cls, d):
        r = cls(d["task_id"], d["label"], d["mode"], d.get("template", ""), tuple(d["ante_codes"]),
                d.get("instep_code"), d.get("instep_run", False), d["static_pass"], d["exec_pass"],
                d["feasible"], {s: list(v) for s, v in d["stages"].items()}, d.get("ledger", {}),
                d.get("semantic_cost", 0), d.get("budget", 4.0), d.get("mu_initial"), d.get("mu_final"),
                d.get("failure"), d.get("nominal_class"))
        return r


@dataclass(frozen=True)
class PRF:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self):
        return None if self.tp + self.fp == 0 else self.tp / (self.tp + self.fp)

    @property
    def recall(self):
        return None if self.tp + self.fn == 0 else self.tp / (self.tp + self.fn)

    @property
    def f1(self):
        p, r = self.precision, self.recall
        if p is None or r is None:
            return None
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass
class MetricsReport:
    n: int
    svr: Fraction
    evr: Fraction
    ftr: Fraction
    rsr: dict  # stage -> Fraction or None
    auditor: dict  # (stage, category) -> PRF
    counts: dict
    self_bleu4: Optional[float] = None

    def rows(self):
        f = lambda x: "" if x is None else repr(float(x))
        out = [("n", str(self.n)), ("svr", f(self.svr)), ("evr", f(self.evr)), ("ftr", f(self.ftr))]
        for s in STAGES:
            out.append((f"rsr_{s.lower()}", f(self.rsr[s])))
        for (stage, cat), prf in sorted(self.auditor.items()):
            key = f"{stage.lower()}_{cat.lower()}"
            out += [(f"{key}_precision", f(prf.precision)), (f"{key}_recall", f(prf.recall)),
                    (f"{key}_f1", f(prf.f1))]
        for k in sorted(self.counts):
            out.append((k, str(self.counts[k])))
        if self.self_bleu4 is not None:
            out.append(("self_bleu4", repr(self.self_bleu4)))
        return out

    def to_dict(self):
        return dict(self.rows())


def _frac(a, b):
    return None if b == 0 else Fraction(a, b)


def _auditor(records, stage):
    """Exact-code matching of predicted codes against the injected label."""
    tally = {c: [0, 0, 0] for c in CATEGORIES}
    for r in records:
        if stage == "ANTE":
            pred = set(r.ante_codes)
        else:
            # the in-step auditor only speaks to runtime defects
            if not r.instep_run or (r.label is not None and CATEGORY[r.label] != "DYNAMIC"):
                continue
            pred = {r.instep_code} if r.instep_code else set()
        if r.label is not None:
            t = tally[CATEGORY[r.label]]
            if r.label in pred:
                t[0] += 1
            else:
                t[2] += 1
        for code in pred:
            if code != r.label:
                tally[CATEGORY[code]][1] += 1
    return {(stage, c): PRF(*tally[c]) for c in CATEGORIES}


def compute_metrics(records, corpus=None) -> MetricsReport:
    records = list(records)
    if not records:
        raise ValueError("no records")
    for r in records:
        r.check()
    n = len(records)
    n_static = sum(r.static_pass for r in records)
    n_exec = sum(bool(r.exec_pass) for r in records)
    n_feasible = sum(r.feasible for r in records)
    svr = Fraction(n_static, n)
    evr = Fraction(n_exec, n_static) if n_static else Fraction(0)
    ftr = Fraction(n_feasible, n)
    rsr = {}
    for s in STAGES:
        att = sum(r.stages[s][0] for r in records)
        ok = sum(r.stages[s][1] for r in records)
        rsr[s] = _frac(ok, att)
    auditor = {}
    auditor.update(_auditor(records, "ANTE"))
    auditor[("INSTEP", "DYNAMIC")] = _auditor(records, "INSTEP")[("INSTEP", "DYNAMIC")]
    counts = {"n_static_pass": n_static, "n_exec_pass": n_exec, "n_feasible": n_feasible,
              "n_failures": sum(r.failure is not None for r in records),
              "n_clean": sum(r.label is None for r in records)}
    for s in STAGES:
        counts[f"attempted_{s.lower()}"] = sum(r.stages[s][0] for r in records)
        counts[f"succeeded_{s.lower()}"] = sum(r.stages[s][1] for r in records)
    bleu = self_bleu4(corpus) if corpus is not None else None
    return MetricsReport(n, svr, evr, ftr, rsr, auditor, counts, bleu)


def to_csv(reports: dict) -> str:
    """One column per ablation mode, one row per metric."""
    modes = list(reports)
    keys = [k for k, _ in reports[modes[0]].rows()]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric"] + modes)
    for k in keys:
        w.writerow([k] + [reports[m].to_dict().get(k, "") for m in modes])
    return buf.getvalue()


def to_markdown(reports: dict, header: str = "") -> str:
    pct = lambda x: "n/a" if x is None else f"{100 * float(x):.1f}"
    lines = []
    if header:
        lines += [header, ""]
    lines += ["| Method | SVR (%) | EVR (%) | FTR (%) | RSR ante (%) | RSR primitive (%) | RSR search (%) |",
              "|---|---|---|---|---|---|---|"]
    for mode, r in reports.items():
        lines.append(f"| {mode} | {pct(r.svr)} | {pct(r.evr)} | {pct(r.ftr)} | {pct(r.rsr['ANTE'])} | "
                     f"{pct(r.rsr['PRIMITIVE'])} | {pct(r.rsr['SEARCH'])} |")
    for name, s, e, f in REFERENCE_ROWS:
        lines.append(f"| {name} | {s:.1f} | {e:.1f} | {f:.1f} | | | |")
    lines.append("")
    lines.append("Reference rows come from a simulator-scale study and are directional only.")
    lines.append("")
    first = next(iter(reports.values()))
    lines += ["| Stage | Category | Precision | Recall | F1 |", "|---|---|---|---|---|"]
    fmt = lambda x: "n/a" if x is None else f"{x:.3f}"
    for (stage, cat), prf in sorted(first.auditor.items()):
        lines.append(f"| {stage} | {cat} | {fmt(prf.precision)} | {fmt(prf.recall)} | {fmt(prf.f1)} |")
    if first.self_bleu4 is not None:
        lines += ["", f"Self-BLEU-4 of the instruction corpus: {first.self_bleu4:.4f}"]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Self-BLEU-4

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str):
    return _TOKEN.findall(text.lower())


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _bleu_from_counts(hyp_len, grams, best_of, ref_len, max_n):
    logs = []
    for n in range(1, max_n + 1):
        h = grams[n - 1]
        total = sum(h.values())
        match = sum(min(c, best_of(n, g)) for g, c in h.items())
        if match == 0:
            if n == 1:
                return 0.0
            p = 1.0 / (total + 1)
        else:
            p = match / total
        logs.append(math.log(p))
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(math.fsum(logs) / max_n)


def _closest(lengths, c):
    return min(lengths, key=lambda L: (abs(L - c), L))


def sentence_bleu(hyp, refs, max_n: int = 4) -> float:
    """BLEU of a token list against references, uniform weights.

    Unigram precision is unsmoothed; for n >= 2 a zero match count becomes
    1 / (total + 1). Brevity penalty uses the closest reference length
    (shorter on ties).
    """
    if not hyp:
        return 0.0
    ref_grams = [[_ngrams(r, n) for n in range(1, max_n + 1)] for r in refs]
    best_of = lambda n, g: max((rg[n - 1][g] for rg in ref_grams), default=0)
    grams = [_ngrams(hyp, n) for n in range(1, max_n + 1)]
    return _bleu_from_counts(len(hyp), grams, best_of, _closest([len(r) for r in refs], len(hyp)), max_n)


def self_bleu4(corpus) -> float:
    """Mean BLEU-4 of each sentence against all the others."""
    sents = [tokenize(s) if isinstance(s, str) else [t.lower() for t in s] for s in corpus]
    if len(sents) < 2:
        raise CorpusTooSmall("self-BLEU needs at least two sentences")
    max_n = 4
    grams = [[_ngrams(s, n) for n in range(1, max_n + 1)] for s in sents]
    # per n-gram: the two largest counts and who holds the largest
    top = {}
    for i, gs in enumerate(grams):
        for n, cnt in enumerate(gs, 1):
            for g, c in cnt.items():
                key = (n, g)
                c1, who, c2 = top.get(key, (0, -1, 0))
                if c > c1:
                    top[key] = (c, i, c1)
                elif c > c2:
                    top[key] = (c1, who, c)
    lengths = Counter(len(s) for s in sents)
    scores = []
    for i, s in enumerate(sents):
        if not s:
            scores.append(0.0)
            continue

        def best_of(n, g, i=i):
            c1, who, c2 = top[(n, g)]
            return c2 if who == i else c1

        others = lengths.copy()
        others[len(s)] -= 1
        ref_len = _closest([L for L, k in others.items() if k > 0], len(s))
        scores.append(_bleu_from_counts(len(s), grams[i], best_of, ref_len, max_n))
    return math.fsum(scores) / len(scores)
