"""End-to-end acceptance criteria on the default 2000-method corpus.

Each test prints one ``PASS`` or ``FAIL`` line. The models are trained once
per session and shared.
"""
import hashlib
import time

import numpy as np
import pytest

from damp import minilang as ml
from damp.attack import DEADCODE, NON_TARGETED, TARGETED, VARNAME, AttackConfig, attack
from damp.cli import run_command
from damp.corpus import GeneratorConfig, generate_corpus, split_dataset
from damp.defense import (
    ADV_TRAINING,
    NO_DEFENSE,
    NO_VARS,
    TRAIN_WITHOUT_VARS,
    DefenseConfig,
    build_defense,
    fit,
)
from damp.evaluate import (
    AttackSpec,
    ExperimentSpec,
    clean_metrics,
    outlier_distances_quantiles,
    run_experiment,
    sample_targets,
    sigma_sweep,
)
from damp.model import FIELDS, TrainConfig, input_gradient, loss_and_grads

from oracles import exhaustive_rename_labels, finite_difference_input_grad, finite_difference_param_grads, \
    relative_error
from test_model import random_instance

pytestmark = pytest.mark.slow


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line for the criterion, then assert."""

    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail

    return report


@pytest.fixture(scope="session")
def full():
    corpus = generate_corpus(GeneratorConfig())
    train, valid, test = split_dataset(corpus, (0.8, 0.1, 0.1), 0)
    config = TrainConfig()
    base, _ = fit(train, config)
    return {"train": train, "valid": valid, "test": test, "config": config, "base": base}


@pytest.fixture(scope="session")
def baseline_report(full):
    train = full["train"]
    targets = sample_targets(train, 10, 50, 0)
    spec = ExperimentSpec(
        attacks=(AttackSpec(), AttackSpec("RandomVar"), AttackSpec(strategy=DEADCODE),
                 AttackSpec(mode=TARGETED), AttackSpec("CopyTarget", mode=TARGETED)),
        targets=targets,
    )
    start = time.perf_counter()
    report, records = run_experiment(spec, full["base"], full["test"], train)
    return report, records, targets, time.perf_counter() - start


@pytest.fixture(scope="session")
def retrained(full):
    out = {}
    for kind in (TRAIN_WITHOUT_VARS, ADV_TRAINING):
        out[kind] = build_defense(DefenseConfig(kind), full["base"], full["train"], full["config"])
    return out


def test_criterion_1_gradients_match_finite_differences(verdict):
    start = time.perf_counter()
    worst = 0.0
    for mode in ("token", "char"):
        for seed in range(100):
            _, params, ex, one_hot = random_instance(seed, mode)
            _, grads = loss_and_grads(params, [ex], np.ones(1))
            numeric = finite_difference_param_grads(params, ex, ex.label, 1e-4)
            worst = max([worst] + [relative_error(getattr(grads, f), numeric[f]) for f in FIELDS])
            g = input_gradient(params, ex, ex.label, "v")
            worst = max(worst, relative_error(g, finite_difference_input_grad(params, ex, ex.label, "v", one_hot)))
    elapsed = time.perf_counter() - start
    verdict(1, worst < 1e-4 and elapsed < 60,
            f"max relative error {worst:.2e} over 200 instances, {elapsed:.1f}s")


def test_criterion_2_full_width_bfs_equals_exhaustive_search(full, verdict):
    start = time.perf_counter()
    model, _ = fit(full["train"], full["config"], vocab_size=50)
    labels = model.vocab.labels[1:]
    agree = 0
    for i, (ast, label) in enumerate(full["test"][:100]):
        var = ml.variable_names(ast)[i % len(ml.variable_names(ast))]
        target = [l for l in labels if l != label][i % (len(labels) - 1)]
        cfg = AttackConfig(TARGETED, VARNAME, target, width=len(model.vocab.tokens), depth=1, variable=var)
        expected = model.predict(ast)[0] == target or target in exhaustive_rename_labels(model, ast, var).values()
        agree += attack(model, ast, cfg).success == expected
    elapsed = time.perf_counter() - start
    verdict(2, agree == 100 and len(model.vocab.tokens) <= 50 and elapsed < 300,
            f"{agree}/100 examples agree, vocabulary {len(model.vocab.tokens)}, {elapsed:.1f}s")


def test_criterion_3_successes_are_semantically_equivalent(full, baseline_report, verdict):
    _, records, _, _ = baseline_report
    wins = [r for r in records if r["success"]]
    ok = sum(ml.check_semantic_equivalence(ml.parse(r["original"]["source"]), ml.parse(r["perturbed"]["source"]))
             for r in wins)
    verdict(3, wins and ok == len(wins), f"{ok}/{len(wins)} successful attacks preserve semantics")


def test_criterion_4_clean_accuracy(full, verdict):
    acc = clean_metrics(full["base"], full["test"])["accuracy"]
    verdict(4, acc >= 90.0, f"token-mode test accuracy {acc:.2f}%")


def test_criterion_5_damp_beats_baselines(baseline_report, verdict):
    report, _, targets, elapsed = baseline_report
    damp = report.cell().success_rate
    rand = report.cell("RandomVar").success_rate
    wins = sum(report.cell(mode=TARGETED, target=t).success_rate
               >= report.cell("CopyTarget", mode=TARGETED, target=t).success_rate for t in targets)
    ok = damp - rand >= 10.0 and wins / len(targets) >= 0.6 and elapsed < 900
    verdict(5, ok, f"DAMP {damp:.1f}% vs RandomVar {rand:.1f}%; DAMP >= CopyTarget on {wins}/{len(targets)} "
                   f"targets; {elapsed:.0f}s")


def test_criterion_6_varname_at_least_deadcode(baseline_report, verdict):
    report = baseline_report[0]
    var = report.cell().success_rate
    dead = report.cell(strategy=DEADCODE).success_rate
    verdict(6, var >= dead - 3.0, f"VarName {var:.1f}% vs DeadCode {dead:.1f}%")


def test_criterion_7_masking_defenses_are_fully_robust(full, retrained, verdict):
    spec = ExperimentSpec(attacks=(AttackSpec(), AttackSpec(strategy=DEADCODE)), defenses=(DefenseConfig(NO_VARS),))
    report, _ = run_experiment(spec, full["base"], full["test"])
    twv, _ = retrained[TRAIN_WITHOUT_VARS]
    spec.defenses = (DefenseConfig(),)
    twv_report, _ = run_experiment(spec, twv, full["test"])
    rates = [c.robustness for c in report.cells + twv_report.cells]
    verdict(7, all(r == 100.0 for r in rates), f"robustness {rates}")


def test_criterion_8_outlier_sigma_tradeoff(full, verdict):
    base = full["base"]
    sigmas = outlier_distances_quantiles(base, full["valid"], [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99])
    rows = sigma_sweep(base, full["test"], sigmas)
    monotone = all(lo["robustness"] >= hi["robustness"] - 1.0 and lo["f1"] <= hi["f1"] + 1.0
                   for lo, hi in zip(rows, rows[1:]))
    none = rows[-1]
    good = [r for r in rows[:-1] if r["robustness"] - none["robustness"] >= 20.0 and none["f1"] - r["f1"] <= 5.0]
    table = ", ".join(f"{r['sigma'] or float('inf'):.3g}: {r['robustness']:.1f}/{r['f1']:.1f}" for r in rows)
    verdict(8, monotone and bool(good), f"monotone={monotone}; sigma: robust/F1 {table}")


def test_criterion_9_adversarial_training(full, retrained, verdict):
    adv, _ = retrained[ADV_TRAINING]
    base_report, _ = run_experiment(ExperimentSpec(), full["base"], full["test"])
    adv_report, _ = run_experiment(ExperimentSpec(), adv, full["test"])
    gain = adv_report.cell().robustness - base_report.cell().robustness
    drop = base_report.clean[NO_DEFENSE]["f1"] - adv_report.clean[NO_DEFENSE]["f1"]
    verdict(9, gain >= 15.0 and drop <= 10.0, f"robustness gain {gain:.1f}pp, F1 drop {drop:.1f}pp")


def test_criterion_10_pipeline_is_reproducible(tmp_path, verdict):
    digests = []
    for run in ("a", "b"):
        root = tmp_path / run
        corpus = root / "corpus.jsonl"
        assert run_command(["gen-corpus", "--seed", "7", "--out", str(corpus)]) == 0
        assert run_command(["train", "--corpus", str(corpus), "--out", str(root / "model")]) == 0
        assert run_command(["attack", "--model-dir", str(root / "model"), "--max-examples", "60",
                            "--out", str(root / "attack")]) == 0
        assert run_command(["report", "--input", str(root / "attack")]) == 0
        digests.append(hashlib.sha256((root / "attack" / "report.json").read_bytes()).hexdigest())
    verdict(10, digests[0] == digests[1], f"report.json sha256 {digests[0][:16]} / {digests[1][:16]}")
