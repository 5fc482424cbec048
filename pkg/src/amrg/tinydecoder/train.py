"""Desk-scale training loop (AdamW, gradient accumulation) and sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from amrg.tinydecoder.model import (
    DecoderState, backward, forward, nll_and_grad, softmax, teacher_inputs,
)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 4
    learning_rate: float = 1e-4
    grad_accum: int = 8
    seed: int = 0
    temperature: float = 0.1
    steps: int | None = None
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.grad_accum) < 1:
            raise ValueError("epochs, batch_size and grad_accum must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be positive")

    def num_steps(self, corpus_size: int) -> int:
        if self.steps is not None:
            return self.steps
        per_step = min(self.batch_size, corpus_size) * self.grad_accum
        return self.epochs * max(1, math.ceil(corpus_size / per_step))


class AdamW:
    """Adam with decoupled weight decay, updating arrays in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = params
        self.lr, self.eps, self.wd = lr, eps, weight_decay
        self.b1, self.b2 = betas
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for name, p in self.params.items():
            g = grads[name]
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            update = (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            p -= self.lr * (update + self.wd * p)


@dataclass
class TrainResult:
    losses: list[float]
    state: DecoderState
    steps: int = field(init=False)

    def __post_init__(self):
        self.steps = len(self.losses)


def _microbatch_grads(state, batch, rng, pad_id):
    grads = {k: np.zeros_like(v) for k, v in state.trainable().items()}
    total, count = 0.0, 0
    for vis, inst, y in batch:
        y = np.asarray(y, dtype=np.intp)
        logits, cache = forward(state, teacher_inputs(y), vis, inst, training=True, rng=rng)
        nll, dlogits, n = nll_and_grad(logits, y, y == pad_id)
        for k, g in backward(state, cache, dlogits).items():
            grads[k] += g
        total += nll
        count += n
    for g in grads.values():
        g /= count
    return total / count, grads


def train_demo(corpus, cfg: TrainConfig, state: DecoderState, pad_id: int = 0) -> TrainResult:
    """Fit ``state`` in place on ``(vis, inst, y)`` triples; returns per-step losses.

    Only adapter factors, the token embedding and the output head move. Each
    step averages ``grad_accum`` micro-batches of ``min(batch_size, len(corpus))``
    examples taken cyclically in corpus order. Dropout masks come from a
    generator seeded with ``cfg.seed``.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(state.trainable(), cfg.learning_rate, cfg.betas, cfg.eps, cfg.weight_decay)
    bs = min(cfg.batch_size, len(corpus))
    cursor = 0
    losses = []
    for _ in range(cfg.num_steps(len(corpus))):
        acc = {k: np.zeros_like(v) for k, v in opt.params.items()}
        step_loss = 0.0
        for _ in range(cfg.grad_accum):
            batch = [corpus[(cursor + i) % len(corpus)] for i in range(bs)]
            cursor = (cursor + bs) % len(corpus)
            loss, grads = _microbatch_grads(state, batch, rng, pad_id)
            step_loss += loss / cfg.grad_accum
            for k, g in grads.items():
                acc[k] += g / cfg.grad_accum
        opt.step(acc)
        losses.append(step_loss)
    return TrainResult(losses, state)


def _next_logits(state, vis, inst, prefix_ids):
    logits, _ = forward(state, prefix_ids, vis, inst)
    return logits[-1]


def generate(vis, inst, state: DecoderState, tau: float = 0.1, max_len: int = 32,
             seed: int = 0, bos_id: int = 1, eos_id: int = 2) -> list[int]:
    """Sample from ``softmax(logits / tau)`` until ``eos`` or ``max_len`` tokens.

    The returned ids exclude ``bos`` and ``eos``.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    rng = np.random.default_rng(seed)
    ids = [bos_id]
    out = []
    for _ in range(max_len):
        z = _next_logits(state, vis, inst, ids) / tau
        p = softmax(z)
        tok = int(rng.choice(len(p), p=p))
        if tok == eos_id:
            break
        out.append(tok)
        ids.append(tok)
    return out


def greedy_decode(vis, inst, state: DecoderState, max_len: int = 32,
                  bos_id: int = 1, eos_id: int = 2) -> list[int]:
    ids = [bos_id]
    out = []
    for _ in range(max_len):
        tok = int(np.argmax(_next_logits(state, vis, inst, ids)))
        if tok == eos_id:
            break
        out.append(tok)
        ids.append(tok)
    return out
