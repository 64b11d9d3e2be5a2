"""code2vec-style path-contexts over MiniLang ASTs, plus vocabularies."""
from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import minilang as ml

UP = "↑"
DOWN = "↓"
UNK = "UNK"  # reserved name; index 0 of every table
ALPHABET = string.ascii_lowercase + string.digits + "_"
CHAR_PAD = len(ALPHABET) + 1  # char index layout: 0 = UNK, 1..37 = ALPHABET, 38 = padding
N_CHARS = len(ALPHABET) + 2
MAX_NAME_LENGTH = ml.MAX_NAME_LENGTH

DEFAULT_MAX_PATH_LENGTH = 8
DEFAULT_MAX_CONTEXTS = 200

OP_KINDS = {
    "+": "Add", "-": "Sub", "*": "Mul", "/": "Div", "%": "Mod",
    "<": "Lt", "<=": "Le", ">": "Gt", ">=": "Ge", "==": "Eq", "!=": "Ne",
    "&&": "And", "||": "Or",
}


class EmptyBag(ValueError):
    pass


@dataclass(frozen=True, order=True)
class PathContext:
    left: str
    path: str
    right: str


@dataclass(frozen=True)
class PathContextBag:
    contexts: tuple[PathContext, ...]
    label: str
    variables: frozenset[str] = field(default_factory=frozenset)

    def __len__(self):
        return len(self.contexts)


# ---------------------------------------------------------------- extraction


@dataclass
class _TreeNode:
    kind: str
    parent: Optional["_TreeNode"]
    depth: int
    text: Optional[str] = None  # set on terminals


def _flatten(ast: ml.MethodAst) -> list[_TreeNode]:
    """Lay the AST out as kind-labelled nodes; returns the terminals in order."""
    terminals: list[_TreeNode] = []

    def add(kind, parent, text=None):
        node = _TreeNode(kind, parent, 0 if parent is None else parent.depth + 1, text)
        if text is not None:
            terminals.append(node)
        return node

    def expr(e, parent):
        if isinstance(e, ml.Name):
            add("Name", parent, e.name)
        elif isinstance(e, ml.IntLit):
            add("IntLit", parent, str(e.value))
        elif isinstance(e, ml.BoolLit):
            add("BoolLit", parent, "true" if e.value else "false")
        elif isinstance(e, ml.Index):
            node = add("Index", parent)
            expr(e.base, node)
            expr(e.index, node)
        elif isinstance(e, ml.Binary):
            node = add("Bin" + OP_KINDS[e.op], parent)
            expr(e.left, node)
            expr(e.right, node)
        elif isinstance(e, ml.Call):
            node = add("Call" + e.func.capitalize(), parent)
            for a in e.args:
                expr(a, node)

    def block(kind, stmts, parent):
        node = add(kind, parent)
        for s in stmts:
            stmt(s, node)

    def stmt(s, parent):
        if isinstance(s, ml.VarDecl):
            node = add("VarDecl", parent)
            add("Name", node, s.name)
            expr(s.init, node)
        elif isinstance(s, ml.Assign):
            node = add("Assign", parent)
            expr(s.target, node)
            expr(s.value, node)
        elif isinstance(s, ml.If):
            node = add("If", parent)
            expr(s.cond, node)
            block("Then", s.then, node)
            if s.orelse is not None:
                block("Else", s.orelse, node)
        elif isinstance(s, ml.For):
            node = add("For", parent)
            stmt(s.init, node)
            expr(s.cond, node)
            stmt(s.step, node)
            block("Body", s.body, node)
        elif isinstance(s, ml.Return):
            node = add("Return", parent)
            expr(s.value, node)

    root = add("Method", None)
    add("MethodName", root)  # present in the tree, never a terminal
    for p in ast.params:
        node = add("Param", root)
        add("Name", node, p.name)
    for s in ast.body:
        stmt(s, root)
    return terminals


def _path_between(a: _TreeNode, b: _TreeNode, limit: int) -> Optional[list[str]]:
    up, down = [a], [b]
    x, y = a, b
    while x.depth > y.depth:
        x = x.parent
        up.append(x)
        if len(up) + len(down) - 1 > limit:
            return None
    while y.depth > x.depth:
        y = y.parent
        down.append(y)
        if len(up) + len(down) - 1 > limit:
            return None
    while x is not y:
        x, y = x.parent, y.parent
        up.append(x)
        down.append(y)
        if len(up) + len(down) - 1 > limit:
            return None
    down.pop()  # the common ancestor already closes ``up``
    ups = [n.kind for n in up]
    downs = [n.kind for n in reversed(down)]
    if len(ups) + len(downs) > limit:
        return None
    return ups + downs, len(ups)


def _path_key(kinds: list[str], n_up: int) -> str:
    # n_up nodes on the way up, including the common ancestor
    head = UP.join(kinds[:n_up])
    tail = kinds[n_up:]
    return head + "".join(DOWN + k for k in tail)


def extract_path_contexts(
    ast: ml.MethodAst,
    max_path_length: int = DEFAULT_MAX_PATH_LENGTH,
    max_contexts: int = DEFAULT_MAX_CONTEXTS,
) -> PathContextBag:
    """One context per pair of terminals joined by a path of at most
    ``max_path_length`` nodes, in canonical orientation and sorted order."""
    if max_path_length < 2:
        raise ValueError("max_path_length must be at least 2")
    terminals = _flatten(ast)
    if len(terminals) < 2:
        raise EmptyBag(f"{ast.label}: fewer than two terminals")
    contexts = []
    for i in range(len(terminals)):
        for j in range(i + 1, len(terminals)):
            a, b = terminals[i], terminals[j]
            found = _path_between(a, b, max_path_length)
            if found is None:
                continue
            kinds, n_up = found
            forward = _path_key(kinds, n_up)
            backward = _path_key(kinds[::-1], len(kinds) - n_up + 1)
            if a.text < b.text or (a.text == b.text and forward <= backward):
                contexts.append(PathContext(a.text, forward, b.text))
            else:
                contexts.append(PathContext(b.text, backward, a.text))
    if not contexts:
        raise EmptyBag(f"{ast.label}: no terminal pair within {max_path_length} nodes")
    contexts.sort()
    return PathContextBag(
        contexts=tuple(contexts[:max_contexts]),
        label=ast.label,
        variables=frozenset(ml.variable_names(ast)),
    )


# ---------------------------------------------------------------- vocabulary


def _top(counter: Counter, max_size: int) -> list[str]:
    ranked = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
    return [k for k, _ in ranked[: max(max_size - 1, 0)] if k != UNK]


class Vocabulary:
    """Token, path, label and character tables; index 0 is UNK in each."""

    def __init__(self, tokens: Sequence[str], paths: Sequence[str], labels: Sequence[str]):
        self.tokens = [UNK] + list(tokens)
        self.paths = [UNK] + list(paths)
        self.labels = [UNK] + list(labels)
        self.token_index = {t: i for i, t in enumerate(self.tokens)}
        self.path_index = {p: i for i, p in enumerate(self.paths)}
        self.label_index = {l: i for i, l in enumerate(self.labels)}
        self.char_index = {c: i + 1 for i, c in enumerate(ALPHABET)}
        if not (len(self.token_index) == len(self.tokens)
                and len(self.path_index) == len(self.paths)
                and len(self.label_index) == len(self.labels)):
            raise ValueError("vocabulary tables must not contain duplicates")
        self.identifier_ids = np.array(
            [i for i, t in enumerate(self.tokens) if i and ml.is_valid_identifier(t)], dtype=np.int64
        )

    def __eq__(self, other):
        return (isinstance(other, Vocabulary) and self.tokens == other.tokens
                and self.paths == other.paths and self.labels == other.labels)

    def token_id(self, token: str) -> int:
        return self.token_index.get(token, 0)

    def label_id(self, label: str) -> int:
        return self.label_index.get(label, 0)

    def char_ids(self, name: str) -> np.ndarray:
        ids = np.full(MAX_NAME_LENGTH, CHAR_PAD, dtype=np.int64)
        for j, ch in enumerate(name[:MAX_NAME_LENGTH]):
            ids[j] = self.char_index.get(ch, 0)
        return ids

    def to_json(self) -> str:
        return json.dumps({"tokens": self.tokens[1:], "paths": self.paths[1:], "labels": self.labels[1:]},
                          indent=1, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        doc = json.loads(text)
        return cls(doc["tokens"], doc["paths"], doc["labels"])


def build_vocabulary(
    corpus: Iterable[PathContextBag], max_size: int, max_paths: Optional[int] = None
) -> Vocabulary:
    """Keep the ``max_size - 1`` most frequent entries per table (ties
    lexicographic); ``max_paths`` optionally overrides the path table size."""
    tokens, paths, labels = Counter(), Counter(), Counter()
    n = 0
    for bag in corpus:
        n += 1
        labels[bag.label] += 1
        for ctx in bag.contexts:
            tokens[ctx.left] += 1
            tokens[ctx.right] += 1
            paths[ctx.path] += 1
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(
        _top(tokens, max_size),
        _top(paths, max_size if max_paths is None else max_paths),
        _top(labels, max_size),
    )


# ---------------------------------------------------------------- encoding


@dataclass(frozen=True)
class EncodedExample:
    """Index form of one bag.

    ``left``/``right`` are (n,) token ids in token mode and (n, 12) char ids
    in char mode. ``occurrences`` maps each variable to its (context, side)
    slots, side 0 = left, 1 = right.
    """

    left: np.ndarray
    path: np.ndarray
    right: np.ndarray
    label: int
    occurrences: dict
    mode: str = "token"

    def __len__(self):
        return len(self.path)


def encode(bag: PathContextBag, vocab: Vocabulary, mode: str = "token") -> EncodedExample:
    if not bag.contexts:
        raise EmptyBag(bag.label)
    if mode == "token":
        left = np.array([vocab.token_id(c.left) for c in bag.contexts], dtype=np.int64)
        right = np.array([vocab.token_id(c.right) for c in bag.contexts], dtype=np.int64)
    elif mode == "char":
        left = np.stack([vocab.char_ids(c.left) for c in bag.contexts])
        right = np.stack([vocab.char_ids(c.right) for c in bag.contexts])
    else:
        raise ValueError(f"unknown name mode {mode!r}")
    path = np.array([vocab.path_index.get(c.path, 0) for c in bag.contexts], dtype=np.int64)
    occ: dict[str, list] = {}
    for i, c in enumerate(bag.contexts):
        if c.left in bag.variables:
            occ.setdefault(c.left, []).append((i, 0))
        if c.right in bag.variables:
            occ.setdefault(c.right, []).append((i, 1))
    return EncodedExample(left, path, right, vocab.label_id(bag.label), occ, mode)
