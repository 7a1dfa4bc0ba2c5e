"""Per-part embedding layers and identity classifiers, their gradients, and a small SGD trainer."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data_model import decode_array, encode_array
from .losses import softmax, softmax_xent, visibility_id_loss
from .pooling import PartFeatureSet
from .retrieval import EmbeddingSet

log = logging.getLogger(__name__)

DEFAULT_EMBED_DIM = 256
DEFAULT_CLASSIFIER_STD = 0.001


@dataclass
class EmbeddingLayer:
    weight: np.ndarray  # d x C
    bias: np.ndarray  # d

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        self.bias = np.asarray(self.bias)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("embedding weight must be d x C with a length-d bias")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def __call__(self, g: np.ndarray) -> np.ndarray:
        w = self.weight.astype(np.float64, copy=False)
        return w @ np.asarray(g, dtype=np.float64) + self.bias


@dataclass
class Classifier:
    weight: np.ndarray  # M x d
    bias: np.ndarray  # M

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        self.bias = np.asarray(self.bias)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("classifier weight must be M x d with a length-M bias")

    @property
    def num_ids(self) -> int:
        return self.weight.shape[0]

    def __call__(self, e: np.ndarray) -> np.ndarray:
        w = self.weight.astype(np.float64, copy=False)
        return w @ np.asarray(e, dtype=np.float64) + self.bias


@dataclass
class HeadStack:
    embeddings: list[EmbeddingLayer]
    classifiers: list[Classifier]

    def __post_init__(self):
        if not self.embeddings or len(self.embeddings) != len(self.classifiers):
            raise ValueError("need one embedding layer and one classifier per part")
        C, d, M = self.in_dim, self.embed_dim, self.num_ids
        for emb, cls in zip(self.embeddings, self.classifiers):
            if emb.weight.shape != (d, C) or cls.weight.shape != (M, d):
                raise ValueError("inconsistent head dimensions across parts")

    @classmethod
    def init(
        cls,
        num_parts: int,
        in_dim: int,
        num_ids: int,
        embed_dim: int = DEFAULT_EMBED_DIM,
        seed: int = 0,
        classifier_std: float = DEFAULT_CLASSIFIER_STD,
    ) -> HeadStack:
        """Seeded init: embedding weights U(-1/sqrt(C), 1/sqrt(C)), classifier weights
        N(0, classifier_std^2), all biases zero. Stored as float32."""
        rng = np.random.default_rng(seed)
        bound = 1.0 / np.sqrt(in_dim)
        embs, clss = [], []
        for _ in range(num_parts):
            w = rng.uniform(-bound, bound, size=(embed_dim, in_dim)).astype(np.float32)
            embs.append(EmbeddingLayer(w, np.zeros(embed_dim, dtype=np.float32)))
        for _ in range(num_parts):
            w = (rng.standard_normal((num_ids, embed_dim)) * classifier_std).astype(np.float32)
            clss.append(Classifier(w, np.zeros(num_ids, dtype=np.float32)))
        return cls(embs, clss)

    @property
    def num_parts(self) -> int:
        return len(self.embeddings)

    @property
    def in_dim(self) -> int:
        return self.embeddings[0].in_dim

    @property
    def embed_dim(self) -> int:
        return self.embeddings[0].out_dim

    @property
    def num_ids(self) -> int:
        return self.classifiers[0].num_ids

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order: per part, emb W, emb b, cls W, cls b."""
        out = []
        for emb, cls in zip(self.embeddings, self.classifiers):
            out += [emb.weight, emb.bias, cls.weight, cls.bias]
        return out

    def parameter_names(self) -> list[str]:
        names = []
        for p in range(self.num_parts):
            names += [f"emb{p}.weight", f"emb{p}.bias", f"cls{p}.weight", f"cls{p}.bias"]
        return names

    def with_parameters(self, params: Sequence[np.ndarray]) -> HeadStack:
        params = list(params)
        if len(params) != 4 * self.num_parts:
            raise ValueError("wrong number of parameter arrays")
        embs, clss = [], []
        for p in range(self.num_parts):
            w, b, cw, cb = params[4 * p : 4 * p + 4]
            embs.append(EmbeddingLayer(w, b))
            clss.append(Classifier(cw, cb))
        return HeadStack(embs, clss)

    def astype(self, dtype) -> HeadStack:
        return self.with_parameters([np.asarray(a, dtype=dtype).copy() for a in self.parameters()])


def _check_feats(stack: HeadStack, feats: PartFeatureSet) -> None:
    if feats.parts.shape != (stack.num_parts, stack.in_dim):
        raise ValueError(
            f"part features {feats.parts.shape} do not fit heads ({stack.num_parts}, {stack.in_dim})"
        )


def embed(
    stack: HeadStack,
    feats: PartFeatureSet,
    person_id: int | None = None,
    camera_id: int | None = None,
) -> EmbeddingSet:
    """Apply f_p to every part, invisible ones included (their input is zero)."""
    _check_feats(stack, feats)
    parts = np.stack([emb(g) for emb, g in zip(stack.embeddings, feats.parts)])
    return EmbeddingSet(parts, feats.visible, person_id, camera_id)


def logits(stack: HeadStack, emb: EmbeddingSet) -> np.ndarray:
    if emb.parts.shape != (stack.num_parts, stack.embed_dim):
        raise ValueError("embedding shape does not fit the classifiers")
    return np.stack([cls(e) for cls, e in zip(stack.classifiers, emb.parts)])


@dataclass
class IdLossResult:
    loss: float
    part_losses: np.ndarray
    param_grads: list[np.ndarray]
    input_grad: np.ndarray  # P x C


def id_loss_and_grads(stack: HeadStack, feats: PartFeatureSet, label: int) -> IdLossResult:
    """Visibility-aware identity loss of one image and its gradients.

    Parameter gradients follow ``stack.parameters()`` order. Invisible parts
    contribute exactly zero gradient.
    """
    _check_feats(stack, feats)
    P = stack.num_parts
    part_losses = np.zeros(P)
    grads = [np.zeros(a.shape) for a in stack.parameters()]
    input_grad = np.zeros((P, stack.in_dim))
    for p in range(P):
        if not feats.visible[p]:
            continue
        emb, cls = stack.embeddings[p], stack.classifiers[p]
        g = feats.parts[p].astype(np.float64)
        e = emb(g)
        loss, dz = softmax_xent(cls(e), label)
        part_losses[p] = loss
        de = cls.weight.astype(np.float64).T @ dz
        grads[4 * p] = np.outer(de, g)
        grads[4 * p + 1] = de
        grads[4 * p + 2] = np.outer(dz, e)
        grads[4 * p + 3] = dz
        input_grad[p] = emb.weight.astype(np.float64).T @ de
    loss = visibility_id_loss(part_losses, feats.visible)
    return IdLossResult(loss, part_losses, grads, input_grad)


def sgd_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    lr: float,
    weight_decay: float = 0.0,
    momentum: float = 0.0,
    velocity: list[np.ndarray] | None = None,
) -> list[np.ndarray]:
    """One SGD update; returns new parameter arrays.

    With d = grad + weight_decay * p the buffer becomes v = momentum * v + d
    and p <- p - lr * v. ``velocity`` is updated in place when given.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    new = []
    for i, (p, g) in enumerate(zip(params, grads)):
        p = np.asarray(p)
        g = np.asarray(g)
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch at parameter {i}: {p.shape} vs {g.shape}")
        d = g + weight_decay * p
        if momentum:
            if velocity is None:
                raise ValueError("momentum needs a velocity buffer")
            velocity[i] = momentum * velocity[i] + d
            d = velocity[i]
        new.append((p - lr * d).astype(p.dtype))
    return new


class SGD:
    """Momentum SGD holding its own velocity buffers."""

    def __init__(self, lr: float, momentum: float = 0.9, weight_decay: float = 5e-4):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: list[np.ndarray] | None = None

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> list[np.ndarray]:
        if self.velocity is None:
            self.velocity = [np.zeros(np.shape(p)) for p in params]
        return sgd_step(params, grads, self.lr, self.weight_decay, self.momentum, self.velocity)


@dataclass
class TrainSchedule:
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 20
    batch_size: int | None = None  # None: full batch
    seed: int = 0


@dataclass
class EpochStats:
    epoch: int
    loss: float
    loss_per_visible_part: float
    accuracy: float
    steps: int


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)
    final: EpochStats | None = None
    stack: HeadStack | None = None


def predict(stack: HeadStack, feats: PartFeatureSet) -> int:
    """Identity with the highest summed softmax probability over visible parts."""
    z = logits(stack, embed(stack, feats))
    probs = softmax(z, axis=1)[feats.visible]
    if len(probs) == 0:
        probs = softmax(z, axis=1)
    return int(np.argmax(probs.sum(axis=0)))


def _dataset_stats(stack, dataset, epoch, steps) -> EpochStats:
    total, n_vis, correct = 0.0, 0, 0
    for feats, label in dataset:
        res = id_loss_and_grads(stack, feats, label)
        total += res.loss
        n_vis += int(feats.visible.sum())
        correct += predict(stack, feats) == label
    n = len(dataset)
    return EpochStats(epoch, total / n, total / max(n_vis, 1), correct / n, steps)


def train_toy(
    dataset: Sequence[tuple[PartFeatureSet, int]],
    stack: HeadStack,
    schedule: TrainSchedule | None = None,
) -> TrainLog:
    """Train heads on frozen part features with the visibility-aware loss.

    Each epoch entry is measured on the whole dataset before that epoch's
    updates, so entry 0 reflects the initialization. Batch loss is the mean
    per-image loss.
    """
    if not dataset:
        raise ValueError("empty dataset")
    schedule = schedule or TrainSchedule()
    rng = np.random.default_rng(schedule.seed)
    opt = SGD(schedule.lr, schedule.momentum, schedule.weight_decay)
    n = len(dataset)
    bs = schedule.batch_size or n
    trainlog = TrainLog()
    steps = 0
    for epoch in range(schedule.epochs):
        trainlog.epochs.append(_dataset_stats(stack, dataset, epoch, steps))
        order = rng.permutation(n) if bs < n else np.arange(n)
        for start in range(0, n, bs):
            batch = [dataset[i] for i in order[start : start + bs]]
            acc = [np.zeros(np.shape(a)) for a in stack.parameters()]
            for feats, label in batch:
                res = id_loss_and_grads(stack, feats, label)
                for a, g in zip(acc, res.param_grads):
                    a += g
            grads = [a / len(batch) for a in acc]
            stack = stack.with_parameters(opt.step(stack.parameters(), grads))
            steps += 1
        log.debug("epoch %d loss %.6f", epoch, trainlog.epochs[-1].loss)
    trainlog.final = _dataset_stats(stack, dataset, schedule.epochs, steps)
    trainlog.stack = stack
    return trainlog


# ---------------------------------------------------------------------------
# Checkpoints: one ETNS tensor per array plus index.json


def save_checkpoint(stack: HeadStack, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, arr in zip(stack.parameter_names(), stack.parameters()):
        fname = f"{name}.etns"
        (directory / fname).write_bytes(encode_array(np.atleast_2d(np.asarray(arr, dtype=np.float32))))
        files[name] = fname
    index = {
        "format": "papreid-heads",
        "version": 1,
        "num_parts": stack.num_parts,
        "in_dim": stack.in_dim,
        "embed_dim": stack.embed_dim,
        "num_ids": stack.num_ids,
        "tensors": files,
    }
    (directory / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory: str | Path) -> HeadStack:
    directory = Path(directory)
    try:
        index = json.loads((directory / "index.json").read_text())
        P = int(index["num_parts"])
        files = index["tensors"]
    except (OSError, ValueError, KeyError) as exc:
        raise ValueError(f"unreadable head checkpoint {directory}: {exc}") from None
    params = []
    for p in range(P):
        for name in (f"emb{p}.weight", f"emb{p}.bias", f"cls{p}.weight", f"cls{p}.bias"):
            arr = decode_array((directory / files[name]).read_bytes())
            if arr.dtype != np.float32 or arr.ndim != 2:
                raise ValueError(f"{name}: expected a 2-D f32 tensor")
            params.append(arr[0] if name.endswith("bias") else arr)
    embs = [EmbeddingLayer(params[4 * p], params[4 * p + 1]) for p in range(P)]
    clss = [Classifier(params[4 * p + 2], params[4 * p + 3]) for p in range(P)]
    stack = HeadStack(embs, clss)
    if (stack.in_dim, stack.embed_dim, stack.num_ids) != (index["in_dim"], index["embed_dim"], index["num_ids"]):
        raise ValueError("checkpoint index disagrees with tensor shapes")
    return stack
