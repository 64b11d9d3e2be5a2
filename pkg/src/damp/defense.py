"""Defenses against renaming attacks.

Plug-in defenses rewrite the input of an already trained model (No Vars,
Outlier Detection). Retraining defenses produce new parameters (Train
Without Vars, Adversarial Training, Adversarial Fine-Tuning, a reduced
vocabulary).
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import minilang as ml
from .attack import NoCandidates, adversarial_step
from .model import (
    Classifier,
    Featurizer,
    ModelParams,
    TrainConfig,
    embed_name,
    forward,
    train,
)
from .pathctx import UNK, Vocabulary, build_vocabulary, extract_path_contexts

NO_DEFENSE = "NoDefense"
NO_VARS = "NoVars"
OUTLIER = "OutlierDetection"
TRAIN_WITHOUT_VARS = "TrainWithoutVars"
ADV_TRAINING = "AdversarialTraining"
ADV_FINE_TUNING = "AdversarialFineTuning"
VOCAB_REDUCTION = "VocabReduction"
KINDS = (NO_DEFENSE, NO_VARS, OUTLIER, TRAIN_WITHOUT_VARS, ADV_TRAINING, ADV_FINE_TUNING, VOCAB_REDUCTION)
PLUG_IN = (NO_DEFENSE, NO_VARS, OUTLIER)

DEFAULT_SIGMA = 2.7


class TooFewSymbols(ValueError):
    pass


@dataclass(frozen=True)
class DefenseConfig:
    kind: str = NO_DEFENSE
    sigma: Optional[float] = None
    vocab_size: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown defense {self.kind!r}")
        if (self.kind == OUTLIER) != (self.sigma is not None):
            raise ValueError("sigma is required for, and only for, OutlierDetection")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if (self.kind == VOCAB_REDUCTION) != (self.vocab_size is not None):
            raise ValueError("vocab_size is required for, and only for, VocabReduction")

    @property
    def name(self) -> str:
        if self.kind == OUTLIER:
            return f"{OUTLIER}(sigma={self.sigma:g})"
        if self.kind == VOCAB_REDUCTION:
            return f"{VOCAB_REDUCTION}({self.vocab_size})"
        return self.kind

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.sigma is not None:
            out["sigma"] = self.sigma
        if self.vocab_size is not None:
            out["vocab_size"] = self.vocab_size
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "DefenseConfig":
        return cls(doc["kind"], doc.get("sigma"), doc.get("vocab_size"))

    @classmethod
    def from_json(cls, text: str) -> "DefenseConfig":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------- plug-in defenses


def mask_all_variables(ast: ml.MethodAst) -> ml.MethodAst:
    """Every parameter and local becomes UNK. Only meant for featurization."""
    names = ml.variable_names(ast)
    if not names:
        return ast
    return ml.rename_many(ast, {n: UNK for n in names})


def symbols(ast: ml.MethodAst) -> list[str]:
    """Identifier and literal occurrences (one entry per occurrence)."""
    out = []
    for node in ml.walk(ast):
        if isinstance(node, (ml.Param, ml.VarDecl, ml.Name)):
            out.append(node.name)
        elif isinstance(node, ml.IntLit):
            out.append(str(node.value))
        elif isinstance(node, ml.BoolLit):
            out.append("true" if node.value else "false")
    return out


def outlier_distances(sym_names: Sequence[str], sym_vecs: np.ndarray, candidates: Sequence[str]) -> dict:
    """L2 distance of each candidate's vector from the mean of the other symbols.

    The mean is taken over the occurrences that are not the candidate, the
    true average rather than a division by the full symbol count.
    """
    sym_names = np.asarray(sym_names, dtype=object)
    sym_vecs = np.asarray(sym_vecs, dtype=float)
    out = {}
    for z in candidates:
        is_z = sym_names == z
        if not is_z.any():
            continue
        others = sym_vecs[~is_z]
        if len(others) == 0:
            out[z] = 0.0
            continue
        vec_z = sym_vecs[np.argmax(is_z)]
        out[z] = float(np.linalg.norm(others.mean(axis=0) - vec_z))
    return out


def find_outlier(ast: ml.MethodAst, params: ModelParams, vocab: Vocabulary) -> tuple[str, float]:
    """The variable farthest from the average of the other symbols, and its distance."""
    names = ml.variable_names(ast)
    syms = symbols(ast)
    if not names or len(syms) < 2:
        raise TooFewSymbols(ast.label)
    vecs = np.stack([embed_name(params, vocab, s) for s in syms])
    dist = outlier_distances(syms, vecs, names)
    best = max(names, key=lambda n: (dist[n], -names.index(n)))
    return best, dist[best]


def outlier_mask(
    ast: ml.MethodAst, params: ModelParams, vocab: Vocabulary, sigma: float
) -> tuple[ml.MethodAst, Optional[str]]:
    """Replace the most outlying variable by UNK when its distance exceeds ``sigma``."""
    z, dist = find_outlier(ast, params, vocab)
    if dist > sigma:
        return ml.rename_many(ast, {z: UNK}), z
    return ast, None


@dataclass
class OutlierTransform:
    params: ModelParams
    vocab: Vocabulary
    sigma: float

    def __call__(self, ast: ml.MethodAst) -> ml.MethodAst:
        try:
            return outlier_mask(ast, self.params, self.vocab, self.sigma)[0]
        except TooFewSymbols:
            return ast


# ---------------------------------------------------------------- adversarial examples for training


def one_step_perturbation(model: Classifier, ast: ml.MethodAst, label: str, rng: np.random.Generator):
    """Single non-targeted step (width 1) on a random variable; None when impossible."""
    names = ml.variable_names(ast)
    if not names:
        return None
    var = names[int(rng.integers(len(names)))]
    example = model.encode(ast)
    try:
        (cand,) = adversarial_step(model, example, var, model.vocab.label_id(label), False, 1, names)
    except NoCandidates:
        return None
    return ml.rename_variable(ast, var, cand)


def adversarial_loss_terms(model: Classifier, ast: ml.MethodAst, label: str, seed: int = 0) -> tuple[float, float]:
    """(J(x, y), J(x', y)); the second term is 0.0 when no perturbation exists."""
    rng = np.random.Generator(np.random.PCG64(seed))
    y = model.vocab.label_id(label)
    clean = forward(model.params, model.encode(ast), y).loss
    perturbed = one_step_perturbation(model, ast, label, rng)
    if perturbed is None:
        return clean, 0.0
    return clean, forward(model.params, model.encode(perturbed), y).loss


def adversarial_loss(model: Classifier, ast: ml.MethodAst, label: str, seed: int = 0) -> float:
    """J(x, y) + J(x', y) for a one-step non-targeted rename x'; J alone without one."""
    clean, adv = adversarial_loss_terms(model, ast, label, seed)
    return clean + adv


class Adversary:
    """Callable handed to ``train``: returns the perturbed encoding of example i."""

    def __init__(self, featurizer: Featurizer, corpus: Sequence[tuple[ml.MethodAst, str]], seed: int):
        self.featurizer = featurizer
        self.corpus = corpus
        self.rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 3])))

    def __call__(self, params: ModelParams, i: int):
        ast, label = self.corpus[i]
        model = Classifier(params, self.featurizer)
        perturbed = one_step_perturbation(model, ast, label, self.rng)
        if perturbed is None:
            return None
        return self.featurizer.encode(perturbed, label)


# ---------------------------------------------------------------- retraining defenses


def fit(
    corpus: Sequence[tuple[ml.MethodAst, str]],
    config: TrainConfig,
    vocab_size: int = 1024,
    max_paths: int = 4096,
    max_path_length: int = 8,
    max_contexts: int = 200,
) -> tuple[Classifier, list[float]]:
    """Build the vocabulary from ``corpus`` and train a classifier on it.

    The vocabulary always comes from the unmasked methods, so a model trained
    without variables still knows the names an attacker can rename to.
    """
    transform = mask_all_variables if config.mask_variables else None
    raw = [extract_path_contexts(a, max_path_length, max_contexts) for a, _ in corpus]
    vocab = build_vocabulary(raw, vocab_size, max_paths)
    asts = [transform(a) if transform else a for a, _ in corpus]
    featurizer = Featurizer(vocab, config.mode, max_path_length, max_contexts)
    examples = [featurizer.encode(a, label) for a, (_, label) in zip(asts, corpus)]
    adversary = Adversary(featurizer, corpus, config.seed) if config.adversarial else None
    params, curve = train(examples, featurizer.vocab, config, adversary=adversary)
    return Classifier(params, featurizer, transform), curve


def fine_tune(model: Classifier, corpus: Sequence[tuple[ml.MethodAst, str]], config: TrainConfig) -> Classifier:
    """One pass over ``corpus`` at batch size 1 using only perturbed examples.

    The step size is ``lr / batch_size`` so each example moves the weights
    as much as it did inside a training batch.
    """
    cfg = dataclasses.replace(config, epochs=1, batch_size=1, lr=config.lr / config.batch_size)
    featurizer = model.featurizer
    examples = [featurizer.encode(a, label) for a, label in corpus]
    adversary = Adversary(featurizer, corpus, config.seed)
    params, _ = train(examples, featurizer.vocab, cfg, params=model.params, adversary=adversary,
                      adversarial_only=True)
    return Classifier(params, featurizer, model.transform)


def build_defense(
    defense: DefenseConfig,
    base: Classifier,
    train_corpus: Optional[Sequence[tuple[ml.MethodAst, str]]] = None,
    train_config: Optional[TrainConfig] = None,
    vocab_size: Optional[int] = None,
) -> tuple[Classifier, Classifier]:
    """(model the attacker differentiates, model that makes the final prediction).

    Plug-in defenses are invisible to the attacker, who attacks ``base``.
    Retrained models are attacked directly, through their own input pipeline.
    Retraining keeps the base vocabulary size unless ``vocab_size`` is given.
    """
    kind = defense.kind
    if kind == NO_DEFENSE:
        return base, base
    if kind == NO_VARS:
        return base, Classifier(base.params, base.featurizer, mask_all_variables)
    if kind == OUTLIER:
        return base, Classifier(base.params, base.featurizer,
                                OutlierTransform(base.params, base.vocab, defense.sigma))
    if train_corpus is None or train_config is None:
        raise ValueError(f"{kind} needs the training corpus and configuration")
    fz = base.featurizer
    if vocab_size is None:
        vocab_size = len(fz.vocab.tokens)
    if kind == ADV_FINE_TUNING:
        model = fine_tune(base, train_corpus, train_config)
        return model, model
    if kind == TRAIN_WITHOUT_VARS:
        cfg = dataclasses.replace(train_config, mask_variables=True)
    elif kind == ADV_TRAINING:
        cfg = dataclasses.replace(train_config, adversarial=True)
    else:
        cfg = train_config
        vocab_size = defense.vocab_size
    model, _ = fit(train_corpus, cfg, vocab_size, len(fz.vocab.paths), fz.max_path_length, fz.max_contexts)
    return model, model
