"""Path-attention classifier with hand-written backpropagation.

Per context i with name embeddings e_l, e_r and path embedding p::

    c_i   = tanh(W^T [e_l; p; e_r])
    alpha = softmax_i(a . c_i)
    z     = sum_i alpha_i c_i
    out   = softmax(V z)

Names are embedded either by a token table (``token`` mode) or as the mean
over the 12 character positions of ``E_char[c_j] + P_pos[j]`` (``char``
mode). Several examples are processed at once by concatenating their
contexts; attention is a segment softmax over each example's slice.

Random numbers come from numpy's PCG64 generator so that a seed fully
determines initialisation and epoch order.
"""
from __future__ import annotations

import dataclasses
import io
import logging
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import minilang as ml
from .pathctx import (
    DEFAULT_MAX_CONTEXTS,
    DEFAULT_MAX_PATH_LENGTH,
    MAX_NAME_LENGTH,
    N_CHARS,
    EncodedExample,
    Vocabulary,
    encode,
    extract_path_contexts,
)

log = logging.getLogger(__name__)

FIELDS = ("E_tok", "E_char", "P_pos", "E_path", "W", "a", "V")
MODES = ("token", "char")
INIT_RANGE = 0.05


class DivergenceError(RuntimeError):
    pass


class UnknownVariable(KeyError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class ModelParams:
    E_tok: np.ndarray
    E_char: np.ndarray
    P_pos: np.ndarray
    E_path: np.ndarray
    W: np.ndarray
    a: np.ndarray
    V: np.ndarray
    mode: str = "token"

    @property
    def d(self) -> int:
        return self.E_tok.shape[1]

    @property
    def h(self) -> int:
        return self.W.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, f) for f in FIELDS]

    def copy(self) -> "ModelParams":
        return dataclasses.replace(self, **{f: getattr(self, f).copy() for f in FIELDS})

    def zeros_like(self) -> "ModelParams":
        return dataclasses.replace(self, **{f: np.zeros_like(getattr(self, f)) for f in FIELDS})

    def equals(self, other: "ModelParams") -> bool:
        return self.mode == other.mode and all(
            np.array_equal(x, y) for x, y in zip(self.arrays(), other.arrays())
        )


@dataclass
class TrainConfig:
    lr: float = 0.5
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    d: int = 32
    h: int = 64
    mode: str = "token"
    adversarial: bool = False  # add J(x', y) for a one-step non-targeted rename x'
    mask_variables: bool = False  # train on UNK-masked variables

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.mode not in MODES:
            raise ValueError(f"unknown name mode {self.mode!r}")


def _rng(*seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(seed))))


def init_params(vocab: Vocabulary, seed: int, mode: str = "token", d: int = 32, h: int = 64) -> ModelParams:
    """Uniform(-0.05, 0.05) entries drawn from PCG64 in ``FIELDS`` order."""
    if mode not in MODES:
        raise ValueError(f"unknown name mode {mode!r}")
    rng = _rng(seed)
    shapes = {
        "E_tok": (len(vocab.tokens), d),
        "E_char": (N_CHARS, d),
        "P_pos": (MAX_NAME_LENGTH, d),
        "E_path": (len(vocab.paths), d),
        "W": (3 * d, h),
        "a": (h,),
        "V": (len(vocab.labels), h),
    }
    arrays = {f: rng.uniform(-INIT_RANGE, INIT_RANGE, shapes[f]) for f in FIELDS}
    return ModelParams(mode=mode, **arrays)


# ---------------------------------------------------------------- forward / backward


def _name_embeddings(params: ModelParams, ids: np.ndarray) -> np.ndarray:
    if params.mode == "token":
        return params.E_tok[ids]
    return (params.E_char[ids].sum(axis=-2) + params.P_pos.sum(axis=0)) / MAX_NAME_LENGTH


def embed_distribution(params: ModelParams, dist: np.ndarray) -> np.ndarray:
    """Embedding of a relaxed name: a |tokens| vector or a 12 x |chars| matrix."""
    if params.mode == "token":
        return dist @ params.E_tok
    return ((dist @ params.E_char).sum(axis=0) + params.P_pos.sum(axis=0)) / MAX_NAME_LENGTH


def embed_name(params: ModelParams, vocab: Vocabulary, name: str) -> np.ndarray:
    if params.mode == "token":
        return params.E_tok[vocab.token_id(name)]
    return _name_embeddings(params, vocab.char_ids(name)[None])[0]


@dataclass
class _Batch:
    left_ids: np.ndarray
    path_ids: np.ndarray
    right_ids: np.ndarray
    labels: np.ndarray
    starts: np.ndarray
    seg: np.ndarray


def _stack(examples: Sequence[EncodedExample], labels=None) -> _Batch:
    counts = np.array([len(e) for e in examples])
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    return _Batch(
        left_ids=np.concatenate([e.left for e in examples]),
        path_ids=np.concatenate([e.path for e in examples]),
        right_ids=np.concatenate([e.right for e in examples]),
        labels=np.array([e.label for e in examples] if labels is None else labels, dtype=np.int64),
        starts=starts,
        seg=np.repeat(np.arange(len(examples)), counts),
    )


@dataclass
class _Cache:
    X: np.ndarray
    H: np.ndarray
    alpha: np.ndarray
    z: np.ndarray
    probs: np.ndarray
    losses: np.ndarray


def _forward(params: ModelParams, batch: _Batch, left=None, right=None) -> _Cache:
    if left is None:
        left = _name_embeddings(params, batch.left_ids)
    if right is None:
        right = _name_embeddings(params, batch.right_ids)
    X = np.concatenate([left, params.E_path[batch.path_ids], right], axis=1)
    H = np.tanh(X @ params.W)
    s = H @ params.a
    s = s - np.maximum.reduceat(s, batch.starts)[batch.seg]
    e = np.exp(s)
    alpha = e / np.add.reduceat(e, batch.starts)[batch.seg]
    z = np.add.reduceat(alpha[:, None] * H, batch.starts, axis=0)
    logits = z @ params.V.T
    logits = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(logits).sum(axis=1, keepdims=True))
    log_probs = logits - log_norm
    probs = np.exp(log_probs)
    losses = -log_probs[np.arange(len(batch.labels)), batch.labels]
    return _Cache(X, H, alpha, z, probs, losses)


def _backward(params: ModelParams, batch: _Batch, cache: _Cache, weights: np.ndarray):
    """Gradients of sum_b weights[b] * loss_b; also returns d loss / d X."""
    B = len(batch.labels)
    d = params.d
    dlogits = cache.probs.copy()
    dlogits[np.arange(B), batch.labels] -= 1.0
    dlogits *= weights[:, None]
    grads = params.zeros_like()
    grads.V = dlogits.T @ cache.z
    dz = (dlogits @ params.V)[batch.seg]
    H, alpha = cache.H, cache.alpha
    dalpha = (H * dz).sum(axis=1)
    ds = alpha * (dalpha - np.add.reduceat(alpha * dalpha, batch.starts)[batch.seg])
    dH = alpha[:, None] * dz + ds[:, None] * params.a[None, :]
    grads.a = H.T @ ds
    dpre = dH * (1.0 - H * H)
    grads.W = cache.X.T @ dpre
    dX = dpre @ params.W.T
    dleft, dpath, dright = dX[:, :d], dX[:, d:2 * d], dX[:, 2 * d:]
    np.add.at(grads.E_path, batch.path_ids, dpath)
    if params.mode == "token":
        np.add.at(grads.E_tok, batch.left_ids, dleft)
        np.add.at(grads.E_tok, batch.right_ids, dright)
    else:
        scale = 1.0 / MAX_NAME_LENGTH
        np.add.at(grads.E_char, batch.left_ids.ravel(), np.repeat(dleft * scale, MAX_NAME_LENGTH, axis=0))
        np.add.at(grads.E_char, batch.right_ids.ravel(), np.repeat(dright * scale, MAX_NAME_LENGTH, axis=0))
        grads.P_pos += (dleft.sum(axis=0) + dright.sum(axis=0)) * scale
    return grads, dleft, dright


@dataclass
class ForwardResult:
    probs: np.ndarray
    loss: float
    attention: np.ndarray


def forward(
    params: ModelParams,
    example: EncodedExample,
    label: Optional[int] = None,
    distributions: Optional[dict] = None,
) -> ForwardResult:
    """Label distribution, cross-entropy loss and attention for one example.

    ``distributions`` maps a variable to a relaxed name distribution that
    replaces the embedding at each of its occurrence slots.
    """
    batch = _stack([example], None if label is None else [label])
    left = right = None
    if distributions:
        left = _name_embeddings(params, batch.left_ids)
        right = _name_embeddings(params, batch.right_ids)
        for var, dist in distributions.items():
            vec = embed_distribution(params, np.asarray(dist, dtype=float))
            for ctx, side in example.occurrences.get(var, ()):
                (left if side == 0 else right)[ctx] = vec
    cache = _forward(params, batch, left, right)
    return ForwardResult(cache.probs[0], float(cache.losses[0]), cache.alpha)


def loss_and_grads(params: ModelParams, examples: Sequence[EncodedExample], weights=None):
    """Weighted loss sum and parameter gradients (mean over the batch by default)."""
    batch = _stack(examples)
    cache = _forward(params, batch)
    if weights is None:
        weights = np.full(len(examples), 1.0 / len(examples))
    weights = np.asarray(weights, dtype=float)
    grads, _, _ = _backward(params, batch, cache, weights)
    return float(weights @ cache.losses), grads


def predict(params: ModelParams, example: EncodedExample) -> tuple[int, float]:
    """Argmax label; ties go to the lowest index."""
    probs = forward(params, example).probs
    best = int(np.argmax(probs))
    return best, float(probs[best])


def predict_batch(params: ModelParams, examples: Sequence[EncodedExample]) -> tuple[np.ndarray, np.ndarray]:
    probs = _forward(params, _stack(examples)).probs
    best = probs.argmax(axis=1)
    return best, probs[np.arange(len(best)), best]


def input_gradient(
    params: ModelParams, example: EncodedExample, loss_label: int, var: str
) -> np.ndarray:
    """d J(theta, c, loss_label) / d (one-hot name distribution of ``var``).

    The one vector is shared by every occurrence slot of ``var``, so the
    slot gradients are summed before projecting onto the embedding table.
    Char mode returns a 12 x |chars| matrix.
    """
    slots = example.occurrences.get(var)
    if not slots:
        raise UnknownVariable(var)
    batch = _stack([example], [loss_label])
    cache = _forward(params, batch)
    _, dleft, dright = _backward(params, batch, cache, np.ones(1))
    g_emb = np.zeros(params.d)
    for ctx, side in slots:
        g_emb += dleft[ctx] if side == 0 else dright[ctx]
    if params.mode == "token":
        return params.E_tok @ g_emb
    row = params.E_char @ g_emb / MAX_NAME_LENGTH
    return np.tile(row, (MAX_NAME_LENGTH, 1))


# ---------------------------------------------------------------- training

Adversary = Callable[[ModelParams, int], Optional[EncodedExample]]


def sgd_step(params: ModelParams, grads: ModelParams, lr: float) -> None:
    for f in FIELDS:
        getattr(params, f)[...] -= lr * getattr(grads, f)


def train(
    examples: Sequence[EncodedExample],
    vocab: Vocabulary,
    config: TrainConfig,
    params: Optional[ModelParams] = None,
    adversary: Optional[Adversary] = None,
    adversarial_only: bool = False,
) -> tuple[ModelParams, list[float]]:
    """Mini-batch SGD, theta <- theta - lr * grad J, no momentum.

    With ``adversary`` each example i also contributes J on
    ``adversary(params, i)``; with ``adversarial_only`` that perturbed
    example replaces the original (fine-tuning). Returns the parameters and
    the mean loss of every epoch.
    """
    if not examples:
        raise ValueError("cannot train on an empty corpus")
    if params is None:
        params = init_params(vocab, config.seed, config.mode, config.d, config.h)
    else:
        params = params.copy()
    rng = _rng(config.seed, 1)
    curve = []
    n = len(examples)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = []
            for i in idx:
                adv = adversary(params, int(i)) if adversary is not None else None
                if adversarial_only:
                    batch.append(adv if adv is not None else examples[i])
                else:
                    batch.append(examples[i])
                    if adv is not None:
                        batch.append(adv)
            # each example contributes J, or J + J_adv with an adversary
            weights = np.full(len(batch), 1.0 / len(idx))
            loss, grads = loss_and_grads(params, batch, weights)
            total += loss * len(idx)
            sgd_step(params, grads, config.lr)
        mean = total / n
        if not np.isfinite(mean):
            raise DivergenceError(f"epoch {epoch}: mean loss {mean}")
        curve.append(mean)
        log.debug("epoch %d loss %.4f", epoch, mean)
    return params, curve


# ---------------------------------------------------------------- featurization and prediction on ASTs


@dataclass
class Featurizer:
    vocab: Vocabulary
    mode: str = "token"
    max_path_length: int = DEFAULT_MAX_PATH_LENGTH
    max_contexts: int = DEFAULT_MAX_CONTEXTS
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def bag(self, ast: ml.MethodAst):
        return extract_path_contexts(ast, self.max_path_length, self.max_contexts)

    def encode(self, ast: ml.MethodAst, label: Optional[str] = None) -> EncodedExample:
        key = (ast, label)
        hit = self._cache.get(key)
        if hit is None:
            if len(self._cache) > 50_000:
                self._cache.clear()
            hit = encode(self.bag(ast), self.vocab, self.mode)
            if label is not None:
                hit = dataclasses.replace(hit, label=self.vocab.label_id(label))
            self._cache[key] = hit
        return hit


AstTransform = Callable[[ml.MethodAst], ml.MethodAst]


@dataclass
class Classifier:
    """Parameters plus the input pipeline that feeds them.

    ``transform`` rewrites an AST before featurization (used by the
    variable-masking defenses).
    """

    params: ModelParams
    featurizer: Featurizer
    transform: Optional[AstTransform] = None

    @property
    def vocab(self) -> Vocabulary:
        return self.featurizer.vocab

    def encode(self, ast: ml.MethodAst) -> EncodedExample:
        if self.transform is not None:
            ast = self.transform(ast)
        return self.featurizer.encode(ast)

    def predict(self, ast: ml.MethodAst) -> tuple[str, float]:
        label, p = predict(self.params, self.encode(ast))
        return self.vocab.labels[label], p

    def predict_many(self, asts: Sequence[ml.MethodAst]) -> list[tuple[str, float]]:
        out = []
        for start in range(0, len(asts), 256):
            labels, probs = predict_batch(self.params, [self.encode(a) for a in asts[start:start + 256]])
            out += [(self.vocab.labels[l], float(p)) for l, p in zip(labels, probs)]
        return out


# ---------------------------------------------------------------- checkpoints

MAGIC = b"DAMP"
VERSION = 1


def save_checkpoint(params: ModelParams) -> bytes:
    """Header (magic, version, mode, shape table) then little-endian float64 data."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IBI", VERSION, MODES.index(params.mode), len(FIELDS)))
    for arr in params.arrays():
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in params.arrays():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def load_checkpoint(data: bytes, vocab: Optional[Vocabulary] = None) -> ModelParams:
    if data[:4] != MAGIC:
        raise CheckpointError("not a DAMP checkpoint")
    version, mode, count = struct.unpack_from("<IBI", data, 4)
    if version != VERSION or count != len(FIELDS) or mode >= len(MODES):
        raise CheckpointError(f"unsupported checkpoint header (version {version})")
    offset = 4 + struct.calcsize("<IBI")
    shapes = []
    for _ in FIELDS:
        (ndim,) = struct.unpack_from("<I", data, offset)
        offset += 4
        shapes.append(struct.unpack_from(f"<{ndim}I", data, offset))
        offset += 4 * ndim
    arrays = {}
    for name, shape in zip(FIELDS, shapes):
        size = int(np.prod(shape))
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(shape).astype(float)
        offset += 8 * size
    if offset != len(data):
        raise CheckpointError("trailing bytes after tensor data")
    params = ModelParams(mode=MODES[mode], **arrays)
    if vocab is not None:
        expected = {
            "E_tok": len(vocab.tokens), "E_char": N_CHARS, "P_pos": MAX_NAME_LENGTH,
            "E_path": len(vocab.paths), "V": len(vocab.labels),
        }
        for name, rows in expected.items():
            if arrays[name].shape[0] != rows:
                raise CheckpointError(f"{name} has {arrays[name].shape[0]} rows, vocabulary needs {rows}")
    d, h = params.d, params.h
    if params.W.shape != (3 * d, h) or params.a.shape != (h,) or params.V.shape[1] != h:
        raise CheckpointError("inconsistent tensor shapes")
    return params
