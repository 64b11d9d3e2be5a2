"""Gradient-guided renaming attacks (DAMP) and the baseline attacks.

An adversarial step differentiates the loss with respect to the one-hot
name distribution of one variable. Subtracting ``eta * g`` (targeted) or
adding it (non-targeted) and taking the argmax over names other than the
current one picks the most negative (resp. most positive) entry of ``g``
whatever ``eta`` is, so candidates are simply ranked by the gradient.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import minilang as ml
from .model import Classifier, UnknownVariable, embed_name, forward, input_gradient
from .pathctx import ALPHABET, CHAR_PAD, MAX_NAME_LENGTH

TARGETED = "targeted"
NON_TARGETED = "non_targeted"
VARNAME = "varname"
DEADCODE = "deadcode"
BASELINES = ("CopyTarget", "RandomVar", "CharBruteForce", "TFIDF")


class NoCandidates(RuntimeError):
    pass


class NoVariables(ValueError):
    pass


class UnknownLabel(KeyError):
    pass


@dataclass(frozen=True)
class AttackConfig:
    mode: str = NON_TARGETED
    strategy: str = VARNAME
    target: Optional[str] = None
    width: int = 2
    depth: int = 2
    variable: Optional[str] = None  # None: pick uniformly at random
    seed: int = 0
    budget: Optional[int] = None  # None: the full BFS tree, sum of width**level

    def __post_init__(self):
        if self.width < 1 or self.depth < 1:
            raise ValueError("width and depth must be at least 1")
        if self.mode not in (TARGETED, NON_TARGETED):
            raise ValueError(f"unknown attack mode {self.mode!r}")
        if self.strategy not in (VARNAME, DEADCODE):
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if (self.mode == TARGETED) != (self.target is not None):
            raise ValueError("targeted attacks need a target label, non-targeted ones must not have one")

    @property
    def targeted(self) -> bool:
        return self.mode == TARGETED

    @property
    def max_queries(self) -> int:
        if self.budget is not None:
            return self.budget
        return sum(self.width ** level for level in range(1, self.depth + 1))


@dataclass
class AttackResult:
    success: bool
    mode: str
    strategy: str
    target: Optional[str]
    original: ml.MethodAst
    perturbed: ml.MethodAst
    original_prediction: tuple[str, float]
    final_prediction: tuple[str, float]
    variable: str
    new_name: Optional[str]
    steps: int
    candidates: int
    budget: int
    attack: str = "DAMP"
    trace: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        rec = {
            "attack": self.attack,
            "success": self.success,
            "mode": self.mode,
            "strategy": self.strategy,
        }
        if self.target is not None:
            rec["target"] = self.target
        rec.update(
            original={"label": self.original_prediction[0], "p": self.original_prediction[1],
                      "source": ml.pretty_print(self.original)},
            perturbed={"label": self.final_prediction[0], "p": self.final_prediction[1],
                       "source": ml.pretty_print(self.perturbed)},
            variable=self.variable,
            new_name=self.new_name,
            steps=self.steps,
            candidates=self.candidates,
            budget=self.budget,
        )
        return rec


def _rng(*seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(seed))))


def _loss_label(model: Classifier, config: AttackConfig, original_label: str) -> int:
    label = config.target if config.targeted else original_label
    if label not in model.vocab.label_index:
        raise UnknownLabel(label)
    return model.vocab.label_index[label]


def _succeeded(config: AttackConfig, original_label: str, label: str) -> bool:
    return label == config.target if config.targeted else label != original_label


# ---------------------------------------------------------------- one adversarial step


def rank_token_candidates(
    g: np.ndarray, names: Sequence[str], targeted: bool, width: int, exclude: Iterable[str] = ()
) -> list[str]:
    """Top ``width`` names by gradient: ascending for targeted, descending
    otherwise. ``g[i]`` belongs to ``names[i]``; ties keep index order."""
    excluded = set(exclude)
    order = np.argsort(g if targeted else -np.asarray(g), kind="stable")
    out = []
    for i in order:
        name = names[i]
        if name in excluded:
            continue
        out.append(name)
        if len(out) == width:
            break
    if not out:
        raise NoCandidates("every candidate name is excluded")
    return out


def _char_alphabet_ids(position: int) -> list[int]:
    chars = ALPHABET if position else ALPHABET[:26]
    return [ALPHABET.index(c) + 1 for c in chars]


def rank_char_candidates(
    g: np.ndarray, current: str, targeted: bool, width: int, exclude: Iterable[str] = ()
) -> list[str]:
    """Single-cell flips of ``current`` ranked by the first-order loss change.

    Flipping position j from char c to c' moves the loss by about
    ``g[j, c'] - g[j, c]``; a flip at j == len(current) appends a char.
    """
    excluded = set(exclude)
    cells = []
    for j in range(min(len(current) + 1, MAX_NAME_LENGTH)):
        cur = CHAR_PAD if j == len(current) else ALPHABET.index(current[j]) + 1
        for c in _char_alphabet_ids(j):
            if c == cur:
                continue
            cells.append((g[j, c] - g[j, cur], j, c))
    sign = 1.0 if targeted else -1.0
    cells.sort(key=lambda t: (sign * t[0], t[1], t[2]))
    out = []
    for _, j, c in cells:
        name = current[:j] + ALPHABET[c - 1] + current[j + 1:]
        if name in excluded or name in out or not ml.is_valid_identifier(name):
            continue
        out.append(name)
        if len(out) == width:
            break
    if not out:
        raise NoCandidates("no valid single-character flip")
    return out


def adversarial_step(
    model: Classifier,
    example,
    var: str,
    loss_label: int,
    targeted: bool,
    width: int,
    exclude: Iterable[str] = (),
) -> list[str]:
    """Ranked replacement names for ``var`` after one gradient step.

    A variable without slots in ``example`` (masked or cut by the context
    cap) has a zero gradient, which leaves the ranking to index order.
    """
    params = model.params
    try:
        g = input_gradient(params, example, loss_label, var)
    except UnknownVariable:
        shape = len(model.vocab.tokens) if params.mode == "token" else (MAX_NAME_LENGTH, len(ALPHABET) + 2)
        g = np.zeros(shape)
    exclude = set(exclude) | {var}
    if params.mode == "token":
        ids = model.vocab.identifier_ids
        names = [model.vocab.tokens[i] for i in ids]
        return rank_token_candidates(g[ids], names, targeted, width, exclude)
    return rank_char_candidates(g, var, targeted, width, exclude)


# ---------------------------------------------------------------- BFS


def attack_start(model: Classifier, ast: ml.MethodAst, config: AttackConfig, key: int = 0):
    """The AST the search starts from and the variable it renames.

    VarName picks a variable (seeded); DeadCode appends a declaration with a
    random in-vocabulary name and renames that.
    """
    rng = _rng(config.seed, key)
    names = ml.variable_names(ast)
    if config.strategy == VARNAME:
        if not names:
            raise NoVariables(f"{ast.label} has no variables")
        if config.variable is not None:
            if config.variable not in names:
                raise UnknownVariable(config.variable)
            return ast, config.variable
        return ast, names[int(rng.integers(len(names)))]
    pool = [model.vocab.tokens[i] for i in model.vocab.identifier_ids]
    pool = [n for n in pool if n not in names]
    if not pool:
        raise NoCandidates("no free in-vocabulary name for the dead declaration")
    name = pool[int(rng.integers(len(pool)))]
    return ml.insert_dead_code(ast, name), name


def bfs_attack(
    model: Classifier,
    ast: ml.MethodAst,
    var: str,
    config: AttackConfig,
    original: Optional[ml.MethodAst] = None,
    original_prediction: Optional[tuple[str, float]] = None,
) -> AttackResult:
    """Breadth-first search over renames of ``var``.

    Each frontier node is expanded by one adversarial step into ``width``
    children, with gradients recomputed for the node's current name. Names
    already visited are not tried again. Stops at the first child that
    satisfies the attack goal or when the query budget runs out.
    """
    original = ast if original is None else original
    orig = original_prediction or model.predict(original)
    loss_label = _loss_label(model, config, orig[0])
    budget = config.max_queries
    others = set(ml.variable_names(ast)) - {var}

    def result(success, perturbed, pred, new_name, steps, n, trace):
        return AttackResult(success, config.mode, config.strategy, config.target, original, perturbed,
                            orig, pred, var, new_name, steps, n, budget, "DAMP", trace)

    root_pred = model.predict(ast)
    if _succeeded(config, orig[0], root_pred[0]):
        return result(True, ast, root_pred, None, 0, 0, [])
    visited = {var}
    trace: list[str] = []
    frontier = [(ast, var)]
    n = 0
    for level in range(1, config.depth + 1):
        children = []
        for node, name in frontier:
            try:
                cands = adversarial_step(model, model.encode(node), name, loss_label, config.targeted,
                                         config.width, visited | others)
            except NoCandidates:
                continue
            for cand in cands:
                if n >= budget:
                    return result(False, ast, root_pred, None, level, n, trace)
                visited.add(cand)
                trace.append(cand)
                child = ml.rename_variable(node, name, cand)
                n += 1
                pred = model.predict(child)
                if _succeeded(config, orig[0], pred[0]):
                    return result(True, child, pred, cand, level, n, trace)
                children.append((child, cand))
        frontier = children
    return result(False, ast, root_pred, None, config.depth, n, trace)


def attack(model: Classifier, ast: ml.MethodAst, config: AttackConfig, key: int = 0) -> AttackResult:
    """DAMP under the configured strategy; ``key`` decorrelates examples."""
    start, var = attack_start(model, ast, config, key)
    return bfs_attack(model, start, var, config, original=ast)


# ---------------------------------------------------------------- baselines


@dataclass
class CooccurrenceTable:
    counts: dict  # (label, name) -> count
    totals: dict  # name -> count
    labels: frozenset

    def score(self, label: str, name: str) -> float:
        total = self.totals.get(name, 0)
        return self.counts.get((label, name), 0) / total if total else 0.0


def build_tfidf_table(corpus: Sequence[tuple[ml.MethodAst, str]]) -> CooccurrenceTable:
    """Counts each declared variable once per method under the method's label."""
    counts: dict = {}
    totals: dict = {}
    labels = set()
    for ast, label in corpus:
        labels.add(label)
        for name in ml.variable_names(ast):
            counts[(label, name)] = counts.get((label, name), 0) + 1
            totals[name] = totals.get(name, 0) + 1
    return CooccurrenceTable(counts, totals, frozenset(labels))


def tfidf_candidates(table: CooccurrenceTable, y_bad: str, k: int) -> list[str]:
    """The ``k`` names with the highest #(y_bad, v) / #(v), ties lexicographic."""
    if y_bad not in table.labels:
        raise UnknownLabel(y_bad)
    ranked = sorted(table.totals, key=lambda v: (-table.score(y_bad, v), v))
    return ranked[:k]


def label_to_identifier(label: str) -> str:
    """``indexOf`` -> ``indexof``: the closest legal variable name."""
    name = re.sub(r"[^a-z0-9_]", "", label.lower())[:MAX_NAME_LENGTH]
    if not name or not name[0].isalpha():
        name = ("v" + name)[:MAX_NAME_LENGTH]
    return name


def _nearest_names(model: Classifier, name: str, exclude: set[str]) -> Iterator[str]:
    vocab = model.vocab
    centre = embed_name(model.params, vocab, name)
    names = [vocab.tokens[i] for i in vocab.identifier_ids]
    vecs = np.stack([embed_name(model.params, vocab, n) for n in names])
    dist = np.linalg.norm(vecs - centre, axis=1)
    for i in np.argsort(dist, kind="stable"):
        if names[i] != name and names[i] not in exclude:
            yield names[i]


def _query(model: Classifier, ast: ml.MethodAst, loss_label: int):
    res = forward(model.params, model.encode(ast), loss_label)
    best = int(np.argmax(res.probs))
    return model.vocab.labels[best], float(res.probs[best]), res.loss


def baseline_attack(
    kind: str,
    model: Classifier,
    ast: ml.MethodAst,
    config: AttackConfig,
    key: int = 0,
    table: Optional[CooccurrenceTable] = None,
) -> AttackResult:
    """Run a baseline with the same query budget as DAMP under ``config``.

    CopyTarget: the target label as a name, then its nearest embedding
    neighbours. RandomVar: uniformly sampled vocabulary names. TFIDF: names
    most associated with the target (non-targeted: with any other label).
    CharBruteForce: random single-character mutations, kept when the loss
    moves toward the goal.
    """
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}")
    start, var = attack_start(model, ast, config, key)
    orig = model.predict(ast)
    loss_label = _loss_label(model, config, orig[0])
    budget = config.max_queries
    taken = set(ml.variable_names(start)) - {var}
    rng = _rng(config.seed, key, 2)
    root_label, root_p, root_loss = _query(model, start, loss_label)
    trace: list[str] = []

    def result(success, perturbed, pred, new_name, n):
        return AttackResult(success, config.mode, config.strategy, config.target, ast, perturbed, orig,
                            pred, var, new_name, 1 if n else 0, n, budget, kind, trace)

    if _succeeded(config, orig[0], root_label):
        return result(True, start, (root_label, root_p), None, 0)

    if kind == "CharBruteForce":
        current, current_loss = var, root_loss
        cur_ast = start
        for n in range(1, budget + 1):
            j = int(rng.integers(min(len(current) + 1, MAX_NAME_LENGTH)))
            chars = ALPHABET if j else ALPHABET[:26]
            cand = current[:j] + chars[int(rng.integers(len(chars)))] + current[j + 1:]
            if cand == current or cand in taken or not ml.is_valid_identifier(cand):
                trace.append(cand)
                continue
            trace.append(cand)
            cand_ast = ml.rename_variable(cur_ast, current, cand)
            label, p, loss = _query(model, cand_ast, loss_label)
            if _succeeded(config, orig[0], label):
                return result(True, cand_ast, (label, p), cand, n)
            better = loss < current_loss if config.targeted else loss > current_loss
            if better:
                current, current_loss, cur_ast = cand, loss, cand_ast
        return result(False, start, (root_label, root_p), None, budget)

    exclude = taken | {var}
    if kind == "RandomVar":
        pool = [model.vocab.tokens[i] for i in model.vocab.identifier_ids]
        pool = [n for n in pool if n not in exclude]
        order = rng.permutation(len(pool))
        stream: Iterable[str] = (pool[i] for i in order)
    elif kind == "CopyTarget":
        if not config.targeted:
            raise ValueError("CopyTarget is a targeted baseline")
        first = label_to_identifier(config.target)
        head = [] if first in exclude else [first]
        stream = iter(head + list(_nearest_names(model, first, exclude)))
    else:
        if table is None:
            raise ValueError("TFIDF needs a co-occurrence table")
        known = set(model.vocab.tokens)
        if config.targeted:
            ranked = tfidf_candidates(table, config.target, len(table.totals))
        else:
            others = [l for l in sorted(table.labels) if l != orig[0]]
            ranked = sorted(table.totals, key=lambda v: (-max(table.score(l, v) for l in others), v))
        stream = (v for v in ranked if v not in exclude and (v in known or model.params.mode == "char"))

    n = 0
    for cand in stream:
        if n >= budget:
            break
        n += 1
        trace.append(cand)
        cand_ast = ml.rename_variable(start, var, cand)
        label, p = model.predict(cand_ast)
        if _succeeded(config, orig[0], label):
            return result(True, cand_ast, (label, p), cand, n)
    return result(False, start, (root_label, root_p), None, n)


def exhaustive_single_rename(model: Classifier, ast: ml.MethodAst, var: str, config: AttackConfig) -> bool:
    """Reference search: does any in-vocabulary rename of ``var`` succeed?"""
    orig = model.predict(ast)[0]
    if config.targeted and orig == config.target:
        return True
    taken = set(ml.variable_names(ast))
    for i in model.vocab.identifier_ids:
        name = model.vocab.tokens[i]
        if name in taken:
            continue
        if _succeeded(config, orig, model.predict(ml.rename_variable(ast, var, name))[0]):
            return True
    return False
