"""Command-line pipelines: gen-corpus, train, attack, defend-eval, sweep-sigma, report.

Every option can also be given in a JSON file passed with ``--config``;
keys are the option names with dashes replaced by underscores, and flags
given on the command line win over the file. Outputs go to ``--out``,
or to ``$DAMP_OUT`` when the flag is absent.

Exit codes: 0 success, 1 usage error, 2 empty filtered set, 3 I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import corpus as corpus_mod
from .attack import BASELINES, DEADCODE, NON_TARGETED, TARGETED, VARNAME, UnknownLabel
from .defense import KINDS, OUTLIER, VOCAB_REDUCTION, DefenseConfig, fit
from .evaluate import (
    AttackSpec,
    EmptyFilteredSet,
    ExperimentSpec,
    MissingArtifact,
    RobustnessReport,
    clean_metrics,
    format_report,
    outlier_distances_quantiles,
    run_experiment,
    sigma_sweep,
)
from .model import Classifier, Featurizer, TrainConfig, load_checkpoint, save_checkpoint
from .pathctx import Vocabulary

log = logging.getLogger("damp")

EXIT_OK, EXIT_USAGE, EXIT_EMPTY, EXIT_IO = 0, 1, 2, 3
SPLITS = ("train", "valid", "test")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- model directories


def save_model_dir(out: Path, model: Classifier, train_config: TrainConfig, splits: dict, meta: dict) -> None:
    """model.damp, vocab.json, model.json and the split files."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "model.damp").write_bytes(save_checkpoint(model.params))
    (out / "vocab.json").write_text(model.vocab.to_json() + "\n", encoding="utf-8")
    doc = dict(meta, train=dataclasses.asdict(train_config),
               max_path_length=model.featurizer.max_path_length,
               max_contexts=model.featurizer.max_contexts)
    (out / "model.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    for name, data in splits.items():
        (out / f"{name}.jsonl").write_text(corpus_mod.dump_jsonl(data), encoding="utf-8")


def load_model_dir(path: Path) -> tuple[Classifier, TrainConfig]:
    for name in ("model.damp", "vocab.json", "model.json"):
        if not (path / name).is_file():
            raise MissingArtifact(f"{path / name} not found")
    meta = json.loads((path / "model.json").read_text(encoding="utf-8"))
    vocab = Vocabulary.from_json((path / "vocab.json").read_text(encoding="utf-8"))
    params = load_checkpoint((path / "model.damp").read_bytes(), vocab)
    cfg = TrainConfig(**meta["train"])
    featurizer = Featurizer(vocab, params.mode, meta["max_path_length"], meta["max_contexts"])
    return Classifier(params, featurizer), cfg


def load_split(path: Path) -> list:
    if not path.is_file():
        raise MissingArtifact(f"{path} not found")
    return corpus_mod.load_jsonl(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------- option plumbing


def _out_dir(opts: dict) -> Path:
    return Path(opts.get("out") or os.environ.get("DAMP_OUT") or "damp_out")


def _csv(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _floats(value) -> list[float]:
    try:
        return [float(v) for v in _csv(value)]
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _merge(args: argparse.Namespace) -> dict:
    """Flag values override the (optional) JSON config file."""
    opts: dict = {}
    if args.config:
        text = Path(args.config).read_text(encoding="utf-8")
        try:
            opts.update(json.loads(text))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: {exc}") from None
    for key, value in vars(args).items():
        if key in ("command", "config", "handler"):
            continue
        if value is not None:
            opts[key] = value
    return opts


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# ---------------------------------------------------------------- commands


def cmd_gen_corpus(opts: dict) -> int:
    d = corpus_mod.GeneratorConfig()
    cfg = corpus_mod.GeneratorConfig(
        seed=int(opts.get("seed", d.seed)),
        methods_per_label=int(opts.get("methods_per_label", d.methods_per_label)),
        labels=tuple(_csv(opts.get("labels"))) or d.labels,
        signal=float(opts.get("signal", d.signal)),
        extra_prob=float(opts.get("extra_prob", d.extra_prob)),
        dead_prob=float(opts.get("dead_prob", d.dead_prob)),
        mirror_prob=float(opts.get("mirror_prob", d.mirror_prob)),
    )
    data = corpus_mod.generate_corpus(cfg)
    out = Path(opts["out"]) if opts.get("out") else _out_dir({}) / "corpus.jsonl"
    _write(out, corpus_mod.dump_jsonl(data))
    print(f"gen-corpus: {len(data)} methods, {len(cfg.labels)} labels -> {out}")
    return EXIT_OK


def cmd_train(opts: dict) -> int:
    if not opts.get("corpus"):
        raise UsageError("train needs --corpus")
    data = load_split(Path(opts["corpus"]))
    ratios = tuple(_floats(opts.get("ratios", "0.8,0.1,0.1")))
    train, valid, test = corpus_mod.split_dataset(data, ratios, int(opts.get("split_seed", 0)))
    d = TrainConfig()
    cfg = TrainConfig(
        lr=float(opts.get("lr", d.lr)),
        epochs=int(opts.get("epochs", d.epochs)),
        batch_size=int(opts.get("batch_size", d.batch_size)),
        seed=int(opts.get("seed", d.seed)),
        d=int(opts.get("d", d.d)),
        h=int(opts.get("h", d.h)),
        mode=opts.get("mode", d.mode),
    )
    vocab_size = int(opts.get("vocab_size", 1024))
    max_paths = int(opts.get("max_paths", 4096))
    model, curve = fit(train, cfg, vocab_size, max_paths, int(opts.get("max_path_length", 8)),
                       int(opts.get("max_contexts", 200)))
    out = _out_dir(opts)
    save_model_dir(out, model, cfg, {"train": train, "valid": valid, "test": test},
                   {"vocab_size": vocab_size, "max_paths": max_paths})
    metrics = {name: clean_metrics(model, split) for name, split in (("valid", valid), ("test", test))}
    metrics["loss_curve"] = curve
    _write(out / "clean_metrics.json", json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    print(f"train: {len(train)} methods, final loss {curve[-1]:.4f}, "
          f"test accuracy {metrics['test']['accuracy']:.2f}% -> {out}")
    return EXIT_OK


def _attack_specs(opts: dict) -> list[AttackSpec]:
    names = _csv(opts.get("attack", "DAMP"))
    modes = _csv(opts.get("mode", NON_TARGETED))
    strategies = _csv(opts.get("strategy", VARNAME))
    for m in modes:
        if m not in (TARGETED, NON_TARGETED):
            raise UsageError(f"unknown mode {m!r}")
    for s in strategies:
        if s not in (VARNAME, DEADCODE):
            raise UsageError(f"unknown strategy {s!r}")
    specs = []
    for name in names:
        if name != "DAMP" and name not in BASELINES:
            raise UsageError(f"unknown attack {name!r}")
        for m in modes:
            if name == "CopyTarget" and m == NON_TARGETED:
                continue
            for s in strategies:
                specs.append(AttackSpec(name, m, s, int(opts.get("width", 2)), int(opts.get("depth", 2)),
                                        None if opts.get("budget") is None else int(opts["budget"])))
    if not specs:
        raise UsageError("no attack configuration selected")
    return specs


def _defense_configs(opts: dict) -> list[DefenseConfig]:
    raw = opts.get("defenses")
    if isinstance(raw, list) and raw and isinstance(raw[0], dict):
        return [DefenseConfig.from_dict(d) for d in raw]
    kinds = _csv(opts.get("defense"))
    out = []
    for kind in kinds or ["NoDefense"]:
        if kind not in KINDS:
            raise UsageError(f"unknown defense {kind!r}")
        if kind == OUTLIER:
            out.append(DefenseConfig(kind, sigma=float(opts.get("sigma", 2.7))))
        elif kind == VOCAB_REDUCTION:
            out.append(DefenseConfig(kind, vocab_size=int(opts.get("reduced_vocab_size", 64))))
        else:
            out.append(DefenseConfig(kind))
    return out


def _eval_data(opts: dict) -> tuple[Classifier, TrainConfig, list, list]:
    model_dir = Path(opts.get("model_dir") or _out_dir(opts))
    model, cfg = load_model_dir(model_dir)
    data_path = Path(opts["data"]) if opts.get("data") else model_dir / f"{opts.get('split', 'test')}.jsonl"
    data = load_split(data_path)
    train = load_split(model_dir / "train.jsonl")
    return model, cfg, train, data


def _write_report(out: Path, report: RobustnessReport, records: Sequence[dict]) -> None:
    _write(out / "report.json", report.to_json())
    _write(out / "report.txt", format_report(report))
    _write(out / "raw_results.jsonl", "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def _summary(cell) -> None:
    target = f" target={cell.target}" if cell.target else ""
    print(f"{cell.defense} {cell.attack} {cell.mode} {cell.strategy}{target}: "
          f"n={cell.n} robustness={cell.robustness:.2f}% success={cell.success_rate:.2f}%")


def _experiment(opts: dict, defenses: list[DefenseConfig]) -> int:
    base, cfg, train, data = _eval_data(opts)
    targets = _csv(opts.get("target")) or None
    spec = ExperimentSpec(
        attacks=_attack_specs(opts),
        defenses=defenses,
        targets=targets,
        n_targets=int(opts.get("n_targets", 10)),
        target_floor=int(opts.get("target_floor", 50)),
        seed=int(opts.get("seed", 0)),
        max_examples=None if opts.get("max_examples") is None else int(opts["max_examples"]),
        workers=int(opts.get("workers", 1)),
    )
    report, records = run_experiment(spec, base, data, train, cfg)
    for cell in report.cells:
        _summary(cell)
    out = _out_dir(opts)
    _write_report(out, report, records)
    print(f"report -> {out / 'report.json'}")
    return EXIT_OK


def cmd_attack(opts: dict) -> int:
    return _experiment(opts, [DefenseConfig()])


def cmd_defend_eval(opts: dict) -> int:
    return _experiment(opts, _defense_configs(opts))


def cmd_sweep_sigma(opts: dict) -> int:
    base, _, _, data = _eval_data(opts)
    sigmas = _floats(opts.get("sigmas"))
    if not sigmas:
        model_dir = Path(opts.get("model_dir") or _out_dir(opts))
        valid = load_split(model_dir / "valid.jsonl")
        quantiles = _floats(opts.get("quantiles", "0.5,0.6,0.7,0.8,0.9,0.95,0.99"))
        sigmas = sorted(set(outlier_distances_quantiles(base, valid, quantiles)))
    specs = _attack_specs(opts)
    targets = _csv(opts.get("target"))
    if len(specs) != 1 or len(targets) > 1:
        raise UsageError("sweep-sigma takes one attack configuration and at most one target")
    if (specs[0].mode == TARGETED) != bool(targets):
        raise UsageError("a targeted sweep needs --target, a non-targeted one must not have it")
    rows = sigma_sweep(base, data, sigmas, specs[0], int(opts.get("seed", 0)), targets[0] if targets else None)
    for r in rows:
        sigma = "inf" if r["sigma"] is None else f"{r['sigma']:g}"
        print(f"sigma={sigma}: robustness={r['robustness']:.2f}% F1={r['f1']:.2f}%")
    report = RobustnessReport([], {}, {"attack": specs[0].to_dict(), "sigmas": sigmas}, rows)
    out = _out_dir(opts)
    _write(out / "report.json", report.to_json())
    _write(out / "report.txt", format_report(report))
    return EXIT_OK


def cmd_report(opts: dict) -> int:
    src = Path(opts.get("input") or _out_dir(opts))
    path = src / "report.json" if src.is_dir() else src
    if not path.is_file():
        raise MissingArtifact(f"{path} not found")
    try:
        report = RobustnessReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"{path}: not a report ({exc})") from None
    text = format_report(report)
    _write(path.parent / "report.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--out", help="output directory (default $DAMP_OUT)")


def _attack_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model-dir", help="directory written by train (default: the output directory)")
    p.add_argument("--split", choices=SPLITS, help="split to attack (default test)")
    p.add_argument("--data", help="JSONL file to attack instead of a split")
    p.add_argument("--attack", help="comma list of DAMP," + ",".join(BASELINES))
    p.add_argument("--mode", help="comma list of targeted,non_targeted")
    p.add_argument("--strategy", help="comma list of varname,deadcode")
    p.add_argument("--target", help="comma list of target labels (default: sampled)")
    p.add_argument("--n-targets", type=int)
    p.add_argument("--target-floor", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--budget", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-examples", type=int)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="damp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("gen-corpus", help="generate a labelled MiniLang corpus")
    _common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--methods-per-label", type=int)
    p.add_argument("--labels", help="comma list of template labels")
    p.add_argument("--signal", type=float)
    p.add_argument("--extra-prob", type=float)
    p.add_argument("--dead-prob", type=float)
    p.add_argument("--mirror-prob", type=float)
    p.set_defaults(handler=cmd_gen_corpus)

    p = sub.add_parser("train", help="split a corpus and train a classifier")
    _common(p)
    p.add_argument("--corpus")
    p.add_argument("--ratios", help="train,valid,test fractions")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--mode", choices=("token", "char"))
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--max-paths", type=int)
    p.add_argument("--max-path-length", type=int)
    p.add_argument("--max-contexts", type=int)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("attack", help="attack the undefended model")
    _common(p)
    _attack_options(p)
    p.set_defaults(handler=cmd_attack)

    p = sub.add_parser("defend-eval", help="attack under one or more defenses")
    _common(p)
    _attack_options(p)
    p.add_argument("--defense", help="comma list of " + ",".join(KINDS))
    p.add_argument("--sigma", type=float, help="outlier threshold")
    p.add_argument("--reduced-vocab-size", type=int)
    p.set_defaults(handler=cmd_defend_eval)

    p = sub.add_parser("sweep-sigma", help="robustness vs clean F1 over outlier thresholds")
    _common(p)
    _attack_options(p)
    p.add_argument("--sigmas", help="comma list of thresholds")
    p.add_argument("--quantiles", help="thresholds as quantiles of validation outlier distances")
    p.set_defaults(handler=cmd_sweep_sigma)

    p = sub.add_parser("report", help="render report.txt from report.json")
    _common(p)
    p.add_argument("--input", help="report.json or the directory holding it")
    p.set_defaults(handler=cmd_report)
    return parser


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        opts = _merge(args)
        opts.pop("verbose", None)
        return args.handler(opts)
    except UsageError as exc:
        print(f"damp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EmptyFilteredSet as exc:
        print(f"damp: empty filtered set: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except OSError as exc:
        print(f"damp: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UnknownLabel, ValueError) as exc:
        print(f"damp: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
