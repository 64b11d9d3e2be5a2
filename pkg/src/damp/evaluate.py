"""Robustness and accuracy metrics, experiment orchestration and reports.

An experiment crosses attack configurations with defenses. For each
defense the test split is filtered to methods that have variables and
that both the attacked model and the defended model classify correctly at
the attack's starting point. Plug-in defenses are invisible to the
attacker, who differentiates the undefended model; the defended model
then judges the perturbed method.
"""
from __future__ import annotations

import dataclasses
import json
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import minilang as ml
from .attack import (
    BASELINES,
    DEADCODE,
    NON_TARGETED,
    TARGETED,
    VARNAME,
    AttackConfig,
    AttackResult,
    CooccurrenceTable,
    NoCandidates,
    attack,
    attack_start,
    baseline_attack,
    build_tfidf_table,
)
from .defense import (
    NO_DEFENSE,
    OUTLIER,
    DefenseConfig,
    TooFewSymbols,
    build_defense,
    find_outlier,
)
from .model import Classifier, TrainConfig

Corpus = Sequence[tuple[ml.MethodAst, str]]

DEFAULT_TARGET_FLOOR = 50
DEFAULT_N_TARGETS = 10


class EmptyInput(ValueError):
    pass


class EmptyFilteredSet(RuntimeError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


# ---------------------------------------------------------------- metrics


def robustness_targeted(results: Sequence[AttackResult]) -> float:
    """Percentage of results whose final label is not the adversarial target."""
    if not results:
        raise EmptyInput("no attack results")
    robust = sum(r.final_prediction[0] != r.target for r in results)
    return 100.0 * robust / len(results)


def robustness_nontargeted(results: Sequence[AttackResult]) -> float:
    """Percentage of results whose final label is still the original one."""
    if not results:
        raise EmptyInput("no attack results")
    robust = sum(r.final_prediction[0] == r.original_prediction[0] for r in results)
    return 100.0 * robust / len(results)


def subtokens(label: str) -> list[str]:
    """``indexOf`` -> [index, of]; ``is_empty`` -> [is, empty]."""
    parts = re.findall(r"[A-Z]+(?![a-z])|[A-Z]?[a-z]+|[0-9]+", label)
    return [p.lower() for p in parts]


def subtoken_f1(pairs: Sequence[tuple[str, str]]) -> float:
    """Micro-averaged F1 (percent) of predicted vs true label subtokens."""
    tp = n_pred = n_true = 0
    for predicted, true in pairs:
        p, t = Counter(subtokens(predicted)), Counter(subtokens(true))
        tp += sum((p & t).values())
        n_pred += sum(p.values())
        n_true += sum(t.values())
    if tp == 0:
        return 0.0
    precision, recall = tp / n_pred, tp / n_true
    return 100.0 * 2 * precision * recall / (precision + recall)


def clean_metrics(model: Classifier, data: Corpus) -> dict:
    preds = model.predict_many([a for a, _ in data])
    pairs = [(p, label) for (p, _), (_, label) in zip(preds, data)]
    return {
        "n": len(data),
        "accuracy": 100.0 * sum(p == t for p, t in pairs) / len(pairs) if pairs else 0.0,
        "f1": subtoken_f1(pairs),
    }


# ---------------------------------------------------------------- experiment description


@dataclass(frozen=True)
class AttackSpec:
    """One attack column: DAMP or a baseline, with a mode and a strategy.

    Targeted columns expand into one cell per sampled target.
    """

    attack: str = "DAMP"
    mode: str = NON_TARGETED
    strategy: str = VARNAME
    width: int = 2
    depth: int = 2
    budget: Optional[int] = None

    def __post_init__(self):
        if self.attack != "DAMP" and self.attack not in BASELINES:
            raise ValueError(f"unknown attack {self.attack!r}")
        AttackConfig(self.mode, self.strategy, "x" if self.mode == TARGETED else None,
                     self.width, self.depth, budget=self.budget)

    def config(self, target: Optional[str], seed: int) -> AttackConfig:
        return AttackConfig(self.mode, self.strategy, target, self.width, self.depth, seed=seed,
                            budget=self.budget)

    @property
    def name(self) -> str:
        return f"{self.attack}/{self.mode}/{self.strategy}"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "AttackSpec":
        return cls(**doc)


@dataclass
class ExperimentSpec:
    """Everything ``run_experiment`` needs besides the data itself."""

    attacks: Sequence[AttackSpec] = (AttackSpec(),)
    defenses: Sequence[DefenseConfig] = (DefenseConfig(),)
    targets: Optional[Sequence[str]] = None  # None: sample from frequent labels
    n_targets: int = DEFAULT_N_TARGETS
    target_floor: int = DEFAULT_TARGET_FLOOR
    seed: int = 0
    max_examples: Optional[int] = None
    workers: int = 1

    def to_dict(self) -> dict:
        return {
            "attacks": [a.to_dict() for a in self.attacks],
            "defenses": [d.to_dict() for d in self.defenses],
            "targets": None if self.targets is None else list(self.targets),
            "n_targets": self.n_targets,
            "target_floor": self.target_floor,
            "seed": self.seed,
            "max_examples": self.max_examples,
        }


def sample_targets(train: Corpus, n: int, floor: int, seed: int) -> list[str]:
    """Up to ``n`` distinct labels seen at least ``floor`` times, sorted."""
    freq = Counter(label for _, label in train)
    eligible = sorted(l for l, c in freq.items() if c >= floor)
    if len(eligible) <= n:
        return eligible
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 5])))
    picked = rng.choice(len(eligible), size=n, replace=False)
    return sorted(eligible[i] for i in picked)


# ---------------------------------------------------------------- cells


@dataclass
class Cell:
    attack: str
    mode: str
    strategy: str
    target: Optional[str]
    defense: str
    n: int
    robust: int

    @property
    def success(self) -> int:
        return self.n - self.robust

    @property
    def robustness(self) -> float:
        return 100.0 * self.robust / self.n

    @property
    def success_rate(self) -> float:
        return 100.0 * self.success / self.n

    def to_dict(self) -> dict:
        return {
            "attack": self.attack,
            "mode": self.mode,
            "strategy": self.strategy,
            "target": self.target,
            "defense": self.defense,
            "n": self.n,
            "robust": self.robust,
            "success": self.success,
            "robustness": round(self.robustness, 6),
            "success_rate": round(self.success_rate, 6),
        }


def _starts(attacker: Classifier, data: Corpus, strategy: str, seed: int) -> list:
    """Attack starting point per example (None when the strategy cannot start)."""
    cfg = AttackConfig(NON_TARGETED, strategy, seed=seed)
    out = []
    for i, (ast, _) in enumerate(data):
        if not ml.variable_names(ast):
            out.append(None)
            continue
        try:
            out.append(attack_start(attacker, ast, cfg, key=i)[0])
        except NoCandidates:
            out.append(None)
    return out


def filter_examples(attacker: Classifier, defended: Classifier, data: Corpus, strategy: str,
                    seed: int) -> list[int]:
    """Indices of variable-bearing examples both models get right at the start point."""
    starts = _starts(attacker, data, strategy, seed)
    keep = [i for i, s in enumerate(starts) if s is not None]
    if not keep:
        return []
    asts = [starts[i] for i in keep]
    a_pred = attacker.predict_many(asts)
    d_pred = a_pred if defended is attacker else defended.predict_many(asts)
    return [i for i, (p, _), (q, _) in zip(keep, a_pred, d_pred)
            if p == data[i][1] and q == data[i][1]]


def run_attack(spec: AttackSpec, model: Classifier, ast: ml.MethodAst, config: AttackConfig, key: int,
               table: Optional[CooccurrenceTable] = None) -> AttackResult:
    if spec.attack == "DAMP":
        return attack(model, ast, config, key)
    return baseline_attack(spec.attack, model, ast, config, key, table)


def judge(result: AttackResult, defended: Classifier, true_label: str) -> AttackResult:
    """The result as seen through the defended model."""
    final = defended.predict(result.perturbed)
    if result.mode == TARGETED:
        success = final[0] == result.target
    else:
        success = final[0] != true_label
    return dataclasses.replace(result, original_prediction=(true_label, result.original_prediction[1]),
                               final_prediction=final, success=success)


def evaluate_cell(
    spec: AttackSpec,
    attacker: Classifier,
    defended: Classifier,
    defense_name: str,
    data: Corpus,
    indices: Sequence[int],
    target: Optional[str],
    seed: int,
    table: Optional[CooccurrenceTable] = None,
) -> tuple[Cell, list[dict]]:
    """Attack every selected example; robustness is judged by ``defended``."""
    config = spec.config(target, seed)
    if target is not None:
        indices = [i for i in indices if data[i][1] != target]
    if not indices:
        raise EmptyFilteredSet(f"{spec.name} under {defense_name}: no example to attack")
    judged = []
    records = []
    for i in indices:
        ast, label = data[i]
        raw = run_attack(spec, attacker, ast, config, i, table)
        res = judge(raw, defended, label)
        judged.append(res)
        rec = res.to_record()
        rec.update(example=i, defense=defense_name, attacker_success=raw.success)
        records.append(rec)
    robust = sum(not r.success for r in judged)
    cell = Cell(spec.attack, spec.mode, spec.strategy, target, defense_name, len(judged), robust)
    return cell, records


# ---------------------------------------------------------------- reports


@dataclass
class RobustnessReport:
    cells: list[Cell]
    clean: dict  # defense name -> clean metrics
    spec: dict = field(default_factory=dict)
    sweep: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec,
            "clean": self.clean,
            "cells": [c.to_dict() for c in self.cells],
            "sweep": self.sweep,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "RobustnessReport":
        cells = [Cell(c["attack"], c["mode"], c["strategy"], c["target"], c["defense"], c["n"], c["robust"])
                 for c in doc["cells"]]
        return cls(cells, doc["clean"], doc.get("spec", {}), doc.get("sweep", []))

    def cell(self, attack: str = "DAMP", mode: str = NON_TARGETED, strategy: str = VARNAME,
             defense: str = NO_DEFENSE, target: Optional[str] = None) -> Cell:
        for c in self.cells:
            if (c.attack, c.mode, c.strategy, c.defense, c.target) == (attack, mode, strategy, defense, target):
                return c
        raise KeyError((attack, mode, strategy, defense, target))

    def to_text(self) -> str:
        return format_report(self)


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    line = lambda r: "  ".join(str(x).ljust(w) for x, w in zip(r, widths)).rstrip()
    return [line(header), line(["-" * w for w in widths])] + [line(r) for r in rows]


def format_report(report: RobustnessReport) -> str:
    out = ["Clean performance (not under attack)"]
    rows = [[name, m["n"], f"{m['accuracy']:.2f}", f"{m['f1']:.2f}"] for name, m in report.clean.items()]
    out += _table(["defense", "n", "accuracy%", "F1%"], rows)
    if report.cells:
        out += ["", "Robustness under attack"]
        rows = [[c.defense, c.attack, c.mode, c.strategy, c.target or "-", c.n,
                 f"{c.robustness:.2f}", f"{c.success_rate:.2f}"] for c in report.cells]
        out += _table(["defense", "attack", "mode", "strategy", "target", "n", "robust%", "success%"], rows)
    if report.sweep:
        out += ["", "Outlier detection sigma sweep"]
        rows = [["inf" if r["sigma"] is None else f"{r['sigma']:g}", r["n"], f"{r['robustness']:.2f}", f"{r['accuracy']:.2f}", f"{r['f1']:.2f}"]
                for r in report.sweep]
        out += _table(["sigma", "n", "robust%", "accuracy%", "F1%"], rows)
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------- orchestration


def run_experiment(
    spec: ExperimentSpec,
    base: Classifier,
    test: Corpus,
    train: Optional[Corpus] = None,
    train_config: Optional[TrainConfig] = None,
    progress: Optional[Callable[[Cell], None]] = None,
) -> tuple[RobustnessReport, list[dict]]:
    """Run every (attack x defense x target) cell; returns the report and raw records.

    ``train`` is needed for retraining defenses, target sampling and TFIDF.
    """
    if spec.max_examples is not None:
        test = list(test)[: spec.max_examples]
    if spec.targets is not None:
        targets = list(spec.targets)
    elif any(a.mode == TARGETED for a in spec.attacks):
        if train is None:
            raise MissingArtifact("targets must be given or sampled from a training split")
        targets = sample_targets(train, spec.n_targets, spec.target_floor, spec.seed)
    else:
        targets = []
    table = build_tfidf_table(train) if train is not None and any(a.attack == "TFIDF" for a in spec.attacks) \
        else None

    jobs = []
    clean = {}
    for dcfg in spec.defenses:
        attacker, defended = build_defense(dcfg, base, train, train_config)
        clean[dcfg.name] = clean_metrics(defended, test)
        kept = {}
        for a in spec.attacks:
            if a.strategy not in kept:
                kept[a.strategy] = filter_examples(attacker, defended, test, a.strategy, spec.seed)
            for t in (targets if a.mode == TARGETED else [None]):
                jobs.append((a, attacker, defended, dcfg.name, kept[a.strategy], t))

    def run(job):
        a, attacker, defended, name, idx, t = job
        return evaluate_cell(a, attacker, defended, name, test, idx, t, spec.seed, table)

    cells, records = [], []
    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = []
        for job in jobs:
            outcomes.append(run(job))
            if progress is not None:
                progress(outcomes[-1][0])
    for cell, recs in outcomes:
        cells.append(cell)
        records += recs
    doc = spec.to_dict()
    doc["targets"] = targets
    return RobustnessReport(cells, clean, doc), records


def outlier_distances_quantiles(model: Classifier, data: Corpus, quantiles: Sequence[float]) -> list[float]:
    """Quantiles of the largest outlier distance per method (grid for a sigma sweep)."""
    dists = []
    for ast, _ in data:
        try:
            dists.append(find_outlier(ast, model.params, model.vocab)[1])
        except TooFewSymbols:
            pass
    if not dists:
        raise EmptyInput("no method with variables")
    return [float(q) for q in np.quantile(dists, quantiles)]


def sigma_sweep(
    base: Classifier,
    test: Corpus,
    sigmas: Sequence[float],
    attack_spec: AttackSpec = AttackSpec(),
    seed: int = 0,
    target: Optional[str] = None,
) -> list[dict]:
    """Robustness and clean F1 of outlier detection for each sigma.

    The attacker never sees the defense, so every sigma is scored on the
    same perturbed methods: those from examples the undefended model gets
    right. A row with sigma = inf is the undefended model.
    """
    idx = filter_examples(base, base, test, attack_spec.strategy, seed)
    if target is not None:
        idx = [i for i in idx if test[i][1] != target]
    if not idx:
        raise EmptyFilteredSet("no example to attack")
    config = attack_spec.config(target, seed)
    raw = [run_attack(attack_spec, base, test[i][0], config, i) for i in idx]
    rows = []
    for sigma in sorted(sigmas) + [float("inf")]:
        if np.isinf(sigma):
            defended = base
        else:
            defended = build_defense(DefenseConfig(OUTLIER, sigma=float(sigma)), base)[1]
        judged = [judge(r, defended, test[i][1]) for r, i in zip(raw, idx)]
        rob = robustness_targeted(judged) if target is not None else robustness_nontargeted(judged)
        m = clean_metrics(defended, test)
        rows.append({"sigma": None if np.isinf(sigma) else float(sigma), "n": len(judged), "robustness": rob,
                     "accuracy": m["accuracy"], "f1": m["f1"]})
    return rows
