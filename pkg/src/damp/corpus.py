"""Seeded template generator for labelled MiniLang methods.

Each label has one or more code templates. Variable names are drawn per
semantic role: with probability ``signal`` from a label-specific pool,
otherwise from a pool shared by every label, so names carry a learnable but
imperfect hint about the label. Comparisons are randomly mirrored
(``a[i] > m`` vs ``m < a[i]``), so that some labels (``max``/``min``) are
hard to tell apart by structure alone.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import minilang as ml

DEFAULT_LABELS = ("count", "contains", "indexOf", "sum", "max", "min", "reverse", "isEmpty")

SHARED_POOLS = {
    "array": ("array", "arr", "a", "values", "data", "items", "nums", "xs", "elems", "input", "vec", "seq"),
    "target": ("target", "key", "x", "value", "needle", "query", "item", "elem", "probe", "wanted"),
    "index": ("i", "j", "k", "idx", "p", "q"),
    "result": ("result", "res", "ret", "ans", "tmp", "val", "r", "out_val", "var1", "acc_val"),
    "extra": ("limit", "bound", "n_items", "stop", "size_", "hi_idx", "last", "end", "cap", "upto"),
    "dead": ("unused", "spare", "scratch", "debug", "flag", "marker", "dummy", "pad", "tick", "aux"),
}

LABEL_POOLS = {
    "count": {"result": ("count", "cnt", "hits", "matches", "tally", "occurrences", "freq", "num_found"),
              "array": ("haystack", "pool", "samples")},
    "contains": {"result": ("found", "present", "exists", "seen", "has_it", "contained"),
                 "array": ("candidates", "members", "set_items")},
    "indexOf": {"result": ("index", "pos", "position", "location", "where", "loc", "found_at", "slot"),
                "array": ("list", "entries", "elements")},
    "sum": {"result": ("sum", "total", "acc", "accum", "subtotal", "running", "sigma"),
            "array": ("numbers", "amounts", "costs", "weights")},
    "max": {"result": ("max", "maximum", "best", "largest", "biggest", "highest", "top", "mx"),
            "array": ("scores", "heights", "ratings")},
    "min": {"result": ("min", "minimum", "smallest", "lowest", "least", "mn", "bottom", "cheapest"),
            "array": ("prices", "distances", "depths")},
    "reverse": {"result": ("reversed", "rev", "flipped", "mirrored", "backwards", "inverted", "out"),
                "array": ("original", "source", "forward")},
    "isEmpty": {"result": ("size", "length", "n", "len_", "count_", "num"),
                "array": ("buffer", "queue", "stack", "bag")},
}


@dataclass
class GeneratorConfig:
    seed: int = 7
    methods_per_label: int = 250
    labels: Sequence[str] = DEFAULT_LABELS
    signal: float = 0.6  # probability a role takes its label-specific name
    extra_prob: float = 0.3  # hoist len(array) into a named bound
    dead_prob: float = 0.15  # append an unused declaration
    mirror_prob: float = 0.25  # mirror the operands of comparisons

    def __post_init__(self):
        if not self.labels:
            raise ValueError("label set must be nonempty")
        unknown = set(self.labels) - set(TEMPLATES)
        if unknown:
            raise ValueError(f"no template for labels {sorted(unknown)}")


class _Namer:
    def __init__(self, rng: np.random.Generator, label: str, signal: float):
        self.rng = rng
        self.label = label
        self.signal = signal
        self.taken: set[str] = set()

    def __call__(self, role: str) -> str:
        specific = LABEL_POOLS[self.label].get(role, ())
        for _ in range(100):
            use_specific = specific and self.rng.random() < self.signal
            pool = specific if use_specific else SHARED_POOLS[role]
            name = pool[int(self.rng.integers(len(pool)))]
            if name not in self.taken:
                self.taken.add(name)
                return name
        raise RuntimeError(f"name pool for {role!r} exhausted")


class _Ctx:
    """Template helpers shared by all labels."""

    def __init__(self, rng, namer, cfg: GeneratorConfig):
        self.rng = rng
        self.name = namer
        self.cfg = cfg
        self.pre: list[str] = []

    def coin(self, p: float) -> bool:
        return bool(self.rng.random() < p)

    def eq(self, x: str, y: str, op: str = "==") -> str:
        mirrored = {"==": "==", "!=": "!=", "<": ">", ">": "<", "<=": ">=", ">=": "<="}
        return f"{y} {mirrored[op]} {x}" if self.coin(self.cfg.mirror_prob) else f"{x} {op} {y}"

    def loop(self, arr: str, idx: str, body: str, start: int = 0) -> str:
        bound = f"len({arr})"
        if self.coin(self.cfg.extra_prob):
            extra = self.name("extra")
            self.pre.append(f"int {extra} = len({arr});")
            bound = extra
        cond = self.eq(idx, bound, "<")
        return f"for (int {idx} = {start}; {cond}; {idx} = {idx} + 1) {{ {body} }}"


def _count(c: _Ctx):
    t, a, r, i = c.name("target"), c.name("array"), c.name("result"), c.name("index")
    loop = c.loop(a, i, f"if ({c.eq(f'{a}[{i}]', t)}) {{ {r} = {r} + 1; }}")
    return f"int count(int {t}, int[] {a})", [f"int {r} = 0;", loop, f"return {r};"]


def _contains(c: _Ctx):
    t, a, i = c.name("target"), c.name("array"), c.name("index")
    if c.coin(0.5):
        loop = c.loop(a, i, f"if ({c.eq(f'{a}[{i}]', t)}) {{ return true; }}")
        return f"bool contains(int {t}, int[] {a})", [loop, "return false;"]
    r = c.name("result")
    loop = c.loop(a, i, f"if ({c.eq(f'{a}[{i}]', t)}) {{ {r} = true; }}")
    return f"bool contains(int {t}, int[] {a})", [f"bool {r} = false;", loop, f"return {r};"]


def _index_of(c: _Ctx):
    t, a, i = c.name("target"), c.name("array"), c.name("index")
    if c.coin(0.5):
        loop = c.loop(a, i, f"if ({c.eq(f'{a}[{i}]', t)}) {{ return {i}; }}")
        return f"int indexOf(int {t}, int[] {a})", [loop, "return -1;"]
    r = c.name("result")
    loop = c.loop(a, i, f"if ({c.eq(f'{a}[{i}]', t)}) {{ {r} = {i}; }}")
    return f"int indexOf(int {t}, int[] {a})", [f"int {r} = -1;", loop, f"return {r};"]


def _sum(c: _Ctx):
    a, r, i = c.name("array"), c.name("result"), c.name("index")
    add = f"{r} + {a}[{i}]" if c.coin(0.5) else f"{a}[{i}] + {r}"
    loop = c.loop(a, i, f"{r} = {add};")
    return f"int sum(int[] {a})", [f"int {r} = 0;", loop, f"return {r};"]


def _extremum(label, op):
    def build(c: _Ctx):
        a, r, i = c.name("array"), c.name("result"), c.name("index")
        loop = c.loop(a, i, f"if ({c.eq(f'{a}[{i}]', r, op)}) {{ {r} = {a}[{i}]; }}", start=1)
        return f"int {label}(int[] {a})", [f"int {r} = {a}[0];", loop, f"return {r};"]

    return build


def _reverse(c: _Ctx):
    a, r, i = c.name("array"), c.name("result"), c.name("index")
    loop = c.loop(a, i, f"{r}[len({a}) - 1 - {i}] = {a}[{i}];")
    return f"int[] reverse(int[] {a})", [f"int[] {r} = alloc(len({a}));", loop, f"return {r};"]


def _is_empty(c: _Ctx):
    a = c.name("array")
    variant = int(c.rng.integers(3))
    if variant == 0:
        return f"bool isEmpty(int[] {a})", [f"return {c.eq(f'len({a})', '0')};"]
    if variant == 1:
        r = c.name("result")
        return f"bool isEmpty(int[] {a})", [f"int {r} = len({a});", f"return {c.eq(r, '0')};"]
    return f"bool isEmpty(int[] {a})", [f"if ({c.eq(f'len({a})', '0')}) {{ return true; }}", "return false;"]


TEMPLATES = {
    "count": _count,
    "contains": _contains,
    "indexOf": _index_of,
    "sum": _sum,
    "max": _extremum("max", ">"),
    "min": _extremum("min", "<"),
    "reverse": _reverse,
    "isEmpty": _is_empty,
}


def _instantiate(label: str, rng: np.random.Generator, cfg: GeneratorConfig) -> ml.MethodAst:
    ctx = _Ctx(rng, _Namer(rng, label, cfg.signal), cfg)
    head, body = TEMPLATES[label](ctx)
    stmts = ctx.pre + body
    if ctx.coin(cfg.dead_prob):
        stmts.append(f"int {ctx.name('dead')} = 0;")
    return ml.parse(head + " { " + " ".join(stmts) + " }")


MAX_REDRAWS = 1000


def generate_corpus(config: GeneratorConfig) -> list[tuple[ml.MethodAst, str]]:
    """Label-major order: ``methods_per_label`` methods for each label in turn.

    Methods are distinct: a draw whose text was already generated is
    discarded and redrawn.
    """
    rng = np.random.Generator(np.random.PCG64(config.seed))
    corpus = []
    seen: set[str] = set()
    for label in config.labels:
        for _ in range(config.methods_per_label):
            for _ in range(MAX_REDRAWS):
                ast = _instantiate(label, rng, config)
                text = ml.pretty_print(ast)
                if text not in seen:
                    break
            else:
                raise RuntimeError(f"cannot generate {config.methods_per_label} distinct {label!r} methods")
            seen.add(text)
            corpus.append((ast, label))
    return corpus


class DegenerateSplit(ValueError):
    pass


def split_dataset(corpus: Sequence, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[list, list, list]:
    """Seeded, label-stratified split.

    Each label's items are shuffled and cut contiguously by ``ratios``; the
    three splits are then reassembled in corpus order.
    """
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    by_label: dict[str, list[int]] = {}
    for i, (_, label) in enumerate(corpus):
        by_label.setdefault(label, []).append(i)
    assignment = {}
    for label in sorted(by_label):
        idx = by_label[label]
        perm = [idx[j] for j in rng.permutation(len(idx))]
        n_train = int(round(ratios[0] * len(idx)))
        n_valid = int(round(ratios[1] * len(idx)))
        parts = (perm[:n_train], perm[n_train:n_train + n_valid], perm[n_train + n_valid:])
        for k, part in enumerate(parts):
            if not part and ratios[k] > 0:
                raise DegenerateSplit(f"label {label!r} missing from split {k}")
            for i in part:
                assignment[i] = k
    splits: tuple[list, list, list] = ([], [], [])
    for i, item in enumerate(corpus):
        splits[assignment[i]].append(item)
    return splits


def dump_jsonl(corpus: Sequence[tuple[ml.MethodAst, str]]) -> str:
    return "".join(
        json.dumps({"source": ml.pretty_print(ast), "label": label}) + "\n" for ast, label in corpus
    )


def load_jsonl(text: str) -> list[tuple[ml.MethodAst, str]]:
    out = []
    for line in text.splitlines():
        if line.strip():
            rec = json.loads(line)
            ast = ml.parse(rec["source"])
            out.append((ast, rec.get("label", ast.label)))
    return out
