"""Central finite-difference checks of every analytic loss gradient."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .data_model import LabelMap
from .heads import HeadStack, id_loss_and_grads
from .losses import ps_loss_balanced, ps_loss_simple, softmax_xent
from .pooling import PartFeatureSet

STEP = 1e-3
TOLERANCE = 1e-4


@dataclass
class SuiteResult:
    name: str
    trials: int
    max_rel_err: float
    passed: bool
    seconds: float

    def as_dict(self) -> dict:
        return asdict(self)


def numerical_grad(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f(x)
        flat[i] = orig - step
        down = f(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / scale)


def _suite(name: str, trials: int, one: Callable[[np.random.Generator], float], seed: int) -> SuiteResult:
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst = max(one(rng) for _ in range(trials))
    return SuiteResult(name, trials, worst, worst < TOLERANCE, time.perf_counter() - t0)


def _softmax_trial(rng: np.random.Generator) -> float:
    M = int(rng.integers(2, 10))
    z = rng.normal(0, 2, M)
    label = int(rng.integers(M))
    _, grad = softmax_xent(z, label)
    return rel_error(grad, numerical_grad(lambda x: softmax_xent(x, label)[0], z))


def _heads_trial(rng: np.random.Generator) -> float:
    P, C, d, M = 3, int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 5))
    stack = HeadStack.init(P, C, M, d, seed=int(rng.integers(2**31)), classifier_std=0.5).astype(np.float64)
    params = stack.parameters()
    for a in params[1::2]:
        a += rng.normal(0, 0.1, a.shape)
    visible = rng.random(P) < 0.7
    visible[int(rng.integers(P))] = True
    parts = np.where(visible[:, None], rng.uniform(0, 2, (P, C)), 0.0)
    feats = PartFeatureSet(parts, visible)
    label = int(rng.integers(M))
    res = id_loss_and_grads(stack, feats, label)
    worst = 0.0
    for i, a in enumerate(params):
        def f(x, i=i):
            trial = list(params)
            trial[i] = x
            return id_loss_and_grads(stack.with_parameters(trial), feats, label).loss

        worst = max(worst, rel_error(res.param_grads[i], numerical_grad(f, a)))
    for p in np.flatnonzero(~visible):
        if any(np.any(g != 0) for g in res.param_grads[4 * p : 4 * p + 4]):
            return float("inf")

    def f_in(x):
        return id_loss_and_grads(stack, PartFeatureSet(np.where(visible[:, None], x, 0.0), visible), label).loss

    numeric_in = numerical_grad(f_in, parts)
    worst = max(worst, rel_error(res.input_grad[visible], numeric_in[visible]))
    return worst


def _seg_trial(loss_fn) -> Callable[[np.random.Generator], float]:
    def trial(rng: np.random.Generator) -> float:
        K, H, W = int(rng.integers(2, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        z = rng.normal(0, 1.5, (K, H, W))
        labels = LabelMap(rng.integers(0, K, (H, W)), K)
        _, grad = loss_fn(z, labels)
        return rel_error(grad, numerical_grad(lambda x: loss_fn(x, labels)[0], z))

    return trial


def run_all(seed: int = 0, trials: int = 100) -> list[SuiteResult]:
    return [
        _suite("softmax_xent", trials, _softmax_trial, seed),
        _suite("visibility_id_loss_heads", trials, _heads_trial, seed + 1),
        _suite("ps_loss_balanced", trials, _seg_trial(ps_loss_balanced), seed + 2),
        _suite("ps_loss_simple", trials, _seg_trial(ps_loss_simple), seed + 3),
    ]
