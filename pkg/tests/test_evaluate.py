import json

import pytest
from hypothesis import given, strategies as st

from damp import minilang as ml
from damp.attack import DEADCODE, NON_TARGETED, TARGETED, VARNAME, AttackResult
from damp.defense import NO_DEFENSE, NO_VARS, DefenseConfig
from damp.evaluate import (
    AttackSpec,
    Cell,
    EmptyFilteredSet,
    EmptyInput,
    ExperimentSpec,
    RobustnessReport,
    clean_metrics,
    filter_examples,
    robustness_nontargeted,
    robustness_targeted,
    run_experiment,
    sample_targets,
    sigma_sweep,
    subtoken_f1,
    subtokens,
)

AST = ml.parse("int f(int a) { return a; }")


def result(final, original="count", target=None):
    mode = TARGETED if target else NON_TARGETED
    return AttackResult(final == target if target else final != original, mode, VARNAME, target, AST, AST,
                        (original, 0.9), (final, 0.8), "a", None, 1, 1, 6)


# ---------------------------------------------------------------- metrics


def test_targeted_robustness_examples():
    assert robustness_targeted([result("count", target="sum")] * 10) == 100.0
    assert robustness_targeted([result("sum", target="sum")] * 10) == 0.0
    mixed = [result("sum", target="sum")] * 3 + [result("max", target="sum")] * 2 + \
        [result("count", target="sum")] * 5
    assert robustness_targeted(mixed) == 70.0


def test_nontargeted_robustness_examples():
    assert robustness_nontargeted([result("count")] * 10) == 100.0
    assert robustness_nontargeted([result("sum")] * 10) == 0.0
    assert robustness_nontargeted([result("sum")] * 4 + [result("count")] * 6) == 60.0


def test_empty_results():
    with pytest.raises(EmptyInput):
        robustness_targeted([])
    with pytest.raises(EmptyInput):
        robustness_nontargeted([])


def test_subtokens():
    assert subtokens("indexOf") == ["index", "of"]
    assert subtokens("is_empty") == ["is", "empty"]
    assert subtokens("parseHTTPHeader") == ["parse", "http", "header"]


def test_f1_examples():
    assert subtoken_f1([("indexOf", "indexOf")]) == 100.0
    # P = 1/1, R = 1/2
    assert subtoken_f1([("index", "indexOf")]) == pytest.approx(200 / 3)
    assert subtoken_f1([("sum", "count")]) == 0.0


@given(st.lists(st.tuples(st.sampled_from(["count", "indexOf", "isEmpty", "sum"]),
                          st.sampled_from(["count", "indexOf", "isEmpty", "sum"])), min_size=1))
def test_f1_bounds(pairs):
    f1 = subtoken_f1(pairs)
    assert 0.0 <= f1 <= 100.0
    if all(p == t for p, t in pairs):
        assert f1 == 100.0


def test_cell_invariants():
    cell = Cell("DAMP", NON_TARGETED, VARNAME, None, NO_DEFENSE, 7, 3)
    assert cell.robustness + cell.success_rate == pytest.approx(100.0)
    doc = cell.to_dict()
    assert doc["robust"] + doc["success"] == doc["n"]


def test_sample_targets(small_splits):
    train = small_splits[0]
    all_labels = sample_targets(train, 10, 1, 0)
    assert all_labels == sorted({l for _, l in train})
    picked = sample_targets(train, 3, 1, 0)
    assert len(picked) == 3 and set(picked) <= set(all_labels)
    assert picked == sample_targets(train, 3, 1, 0)
    assert sample_targets(train, 10, 10_000, 0) == []


# ---------------------------------------------------------------- filtering and experiments


def test_filter_keeps_correct_variable_bearing_examples(small_model, small_splits):
    test = small_splits[2]
    for strategy in (VARNAME, DEADCODE):
        for i in filter_examples(small_model, small_model, test, strategy, 0):
            assert ml.variable_names(test[i][0])
            assert small_model.predict(test[i][0])[0] == test[i][1] or strategy == DEADCODE


@pytest.fixture(scope="module")
def experiment(small_model, small_splits):
    train, _, test = small_splits
    spec = ExperimentSpec(
        attacks=(AttackSpec(), AttackSpec(strategy=DEADCODE), AttackSpec(mode=TARGETED),
                 AttackSpec("RandomVar"), AttackSpec("CopyTarget", mode=TARGETED)),
        defenses=(DefenseConfig(), DefenseConfig(NO_VARS)),
        targets=["sum", "max"],
    )
    return spec, run_experiment(spec, small_model, test, train)


def test_novars_rows_are_fully_robust(experiment):
    _, (report, _) = experiment
    rows = [c for c in report.cells if c.defense == NO_VARS]
    assert rows and all(c.robustness == 100.0 for c in rows)


def test_report_structure(experiment, small_model, small_splits):
    spec, (report, records) = experiment
    # 2 defenses x (3 untargeted columns + 2 targeted columns x 2 targets)
    assert len(report.cells) == 2 * (3 + 2 * 2)
    assert set(report.clean) == {NO_DEFENSE, NO_VARS}
    assert report.clean[NO_DEFENSE] == clean_metrics(small_model, small_splits[2])
    assert sum(c.n for c in report.cells) == len(records)
    for c in report.cells:
        assert c.robust + c.success == c.n
        mine = [r for r in records if (r["attack"], r["mode"], r["strategy"], r.get("target"), r["defense"])
                == (c.attack, c.mode, c.strategy, c.target, c.defense)]
        assert len(mine) == c.n and sum(not r["success"] for r in mine) == c.robust
        if c.target is not None:
            assert all(small_splits[2][r["example"]][1] != c.target for r in mine)


def test_report_serialization(experiment):
    _, (report, _) = experiment
    text = report.to_json()
    again = RobustnessReport.from_dict(json.loads(text))
    assert again.to_json() == text
    table = report.to_text()
    assert "Robustness under attack" in table and NO_VARS in table
    assert report.cell(defense=NO_VARS).n > 0


def test_clean_only_report_has_no_attack_table(small_model, small_splits):
    report, records = run_experiment(ExperimentSpec(attacks=()), small_model, small_splits[2])
    assert report.cells == [] and records == []
    assert "f1" in report.clean[NO_DEFENSE]
    assert "Robustness under attack" not in report.to_text()


def test_experiment_is_reproducible(experiment, small_model, small_splits):
    spec, (report, records) = experiment
    again, again_records = run_experiment(spec, small_model, small_splits[2], small_splits[0])
    assert again.to_json() == report.to_json()
    assert again_records == records


def test_parallel_cells_match_sequential(experiment, small_model, small_splits):
    spec, (report, _) = experiment
    spec.workers = 3
    try:
        again, _ = run_experiment(spec, small_model, small_splits[2], small_splits[0])
    finally:
        spec.workers = 1
    assert again.to_json() == report.to_json()


def test_empty_filtered_set(small_model):
    data = [(ml.parse("int sum() { return 1 + 2; }"), "sum")]
    spec = ExperimentSpec(attacks=(AttackSpec(mode=TARGETED),), targets=["max"])
    with pytest.raises(EmptyFilteredSet):
        run_experiment(spec, small_model, data)


def test_sigma_sweep_is_monotone(small_model, small_splits):
    rows = sigma_sweep(small_model, small_splits[2], [0.5, 1.0, 1.5, 2.0, 3.0])
    assert rows[-1]["sigma"] is None
    for lo, hi in zip(rows, rows[1:]):
        assert lo["robustness"] >= hi["robustness"] - 1.0
        assert lo["f1"] <= hi["f1"] + 1.0
    assert len({r["n"] for r in rows}) == 1
