"""One-block, single-head transformer decoder with LoRA on every projection.

Two conditioning modes share the block:

* ``crossattn``: text tokens run masked self-attention, then cross-attend to
  the visual feature matrix (keys/values projected from it), then a gated MLP.
* ``instruct``: visual features are projected to ``d_model`` and prepended as
  pseudo-tokens ahead of the instruction tokens and the report prefix; there
  is no cross-attention.

Each sub-layer is residual. Gradients are hand-derived; ``backward`` returns
them only for the trainable tensors (adapter factors, token embedding,
output head).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from amrg.adapters import (
    LoraLinear, dropout_mask, lora_backward, lora_forward, lora_init,
)

ARCHS = ("crossattn", "instruct")


@dataclass(frozen=True)
class DecoderConfig:
    vocab_size: int
    d_model: int = 16
    d_v: int = 16
    d_ff: int = 32
    max_len: int = 64
    rank: int = 4
    alpha: float = 16.0
    dropout_p: float = 0.05
    scaling: str = "alpha"
    tie_head: bool = False
    arch: str = "crossattn"
    seed: int = 0
    img_id: int = 3

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")

    def layer_shapes(self) -> dict[str, tuple[int, int]]:
        d, dv, dff = self.d_model, self.d_v, self.d_ff
        shapes = {
            "self_attn.q_proj": (d, d),
            "self_attn.k_proj": (d, d),
            "self_attn.v_proj": (d, d),
            "self_attn.o_proj": (d, d),
        }
        if self.arch == "crossattn":
            shapes.update({
                "cross_attn.q_proj": (d, d),
                "cross_attn.k_proj": (d, dv),
                "cross_attn.v_proj": (d, dv),
            })
        else:
            shapes["vision_projector.proj"] = (d, dv)
        shapes.update({
            "mlp.gate_proj": (dff, d),
            "mlp.up_proj": (dff, d),
            "mlp.down_proj": (d, dff),
        })
        return shapes


@dataclass
class DecoderState:
    cfg: DecoderConfig
    embed: np.ndarray          # |V| x d_model, trainable
    pos: np.ndarray            # max_len x d_model, frozen
    layers: dict[str, LoraLinear]
    head_W: np.ndarray         # |V| x d_model (unused when tied)
    head_b: np.ndarray         # |V|

    @property
    def d_k(self) -> int:
        return self.cfg.d_model

    @property
    def output_matrix(self) -> np.ndarray:
        return self.embed if self.cfg.tie_head else self.head_W

    def trainable(self) -> dict[str, np.ndarray]:
        params = {"embed": self.embed, "head.b": self.head_b}
        if not self.cfg.tie_head:
            params["head.W"] = self.head_W
        for name, layer in self.layers.items():
            params[f"{name}.A"] = layer.A
            params[f"{name}.B"] = layer.B
        return params

    def frozen(self) -> dict[str, np.ndarray]:
        params = {"pos": self.pos}
        for name, layer in self.layers.items():
            params[f"{name}.W"] = layer.W
        return params


def init_state(cfg: DecoderConfig) -> DecoderState:
    rng = np.random.default_rng(cfg.seed)
    d, V = cfg.d_model, cfg.vocab_size
    embed = rng.normal(0.0, 1.0, size=(V, d))
    pos = rng.normal(0.0, 0.5, size=(cfg.max_len, d))
    layers = {}
    for i, (name, (out_dim, in_dim)) in enumerate(cfg.layer_shapes().items()):
        W = rng.normal(0.0, 1.0 / math.sqrt(in_dim), size=(out_dim, in_dim))
        layers[name] = lora_init(W, cfg.rank, cfg.alpha, seed=cfg.seed * 1000 + i + 1,
                                 dropout_p=cfg.dropout_p, scaling=cfg.scaling)
    head_W = rng.normal(0.0, 1.0 / math.sqrt(d), size=(V, d))
    head_b = np.zeros(V)
    return DecoderState(cfg, embed, pos, layers, head_W, head_b)


# --- primitives ---------------------------------------------------------------

def causal_mask(T: int) -> np.ndarray:
    """Boolean ``T x T`` matrix; entry ``[t, s]`` is True when ``t`` may attend to ``s``."""
    if T < 1:
        raise ValueError("sequence length must be >= 1")
    return np.tril(np.ones((T, T), dtype=bool))


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    m = z.max(axis=axis, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=axis, keepdims=True))


def attention_weights(Q, K, mask=None) -> np.ndarray:
    Q, K = np.atleast_2d(Q), np.atleast_2d(K)
    if Q.shape[1] != K.shape[1]:
        raise ValueError(f"query width {Q.shape[1]} != key width {K.shape[1]}")
    scores = Q @ K.T / math.sqrt(Q.shape[1])
    if mask is not None:
        if not mask.any(axis=1).all():
            raise ValueError("attention row with every key masked")
        scores = np.where(mask, scores, -np.inf)
    return softmax(scores)


def attention(Q, K, V, mask=None) -> np.ndarray:
    """``softmax(Q K^T / sqrt(d_k)) V``; masked-out entries get ``-inf`` scores."""
    V = np.atleast_2d(V)
    if K.shape[0] != V.shape[0]:
        raise ValueError("keys and values must have the same number of rows")
    return attention_weights(Q, K, mask) @ V


def _attention_backward(Q, K, V, P, dout):
    dV = P.T @ dout
    dP = dout @ V.T
    dS = P * (dP - (dP * P).sum(axis=1, keepdims=True)) / math.sqrt(Q.shape[1])
    return dS @ K, dS.T @ Q, dV


def cross_attend(h: np.ndarray, vis: np.ndarray, state: DecoderState) -> np.ndarray:
    """Attend from decoder states ``h`` (``T x d_model``) to all ``L`` visual tokens."""
    if "cross_attn.q_proj" not in state.layers:
        raise ValueError("state has no cross-attention layers (arch='instruct')")
    vis = _check_vis(vis, state)
    L = state.layers
    Q = lora_forward(L["cross_attn.q_proj"], h)
    K = lora_forward(L["cross_attn.k_proj"], vis)
    V = lora_forward(L["cross_attn.v_proj"], vis)
    return attention(Q, K, V)


def _check_vis(vis, state):
    vis = np.atleast_2d(np.asarray(vis, dtype=np.float64))
    if vis.shape[1] != state.cfg.d_v or vis.shape[0] < 1:
        raise ValueError(f"visual features must be L x {state.cfg.d_v}, got {vis.shape}")
    if not np.isfinite(vis).all():
        raise ValueError("visual features must be finite")
    return vis


# --- forward / backward -------------------------------------------------------

class _Run:
    """Forward pass over one sequence that records what backward needs."""

    def __init__(self, state: DecoderState, training: bool, rng: np.random.Generator | None):
        self.state = state
        self.training = training and state.cfg.dropout_p > 0
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.lin_cache: dict[str, tuple] = {}

    def lin(self, name, x):
        layer = self.state.layers[name]
        mask = dropout_mask(x.shape, layer.dropout_p, self.rng) if self.training else None
        self.lin_cache[name] = (x, mask)
        return lora_forward(layer, x, training=mask is not None, mask=mask)


def forward(state: DecoderState, tokens, vis, inst=None, *, training=False, rng=None):
    """Next-token logits for every position of ``tokens``.

    ``tokens`` is the teacher-forced input (``[bos] + y[:-1]``). Returns
    ``(logits, cache)``; pass ``cache`` to :func:`backward`.
    """
    cfg = state.cfg
    tokens = np.asarray(tokens, dtype=np.intp)
    vis = _check_vis(vis, state)
    run = _Run(state, training, rng)
    E = state.embed

    if cfg.arch == "instruct":
        inst = np.asarray(inst if inst is not None else [], dtype=np.intp)
        vis_tok = run.lin("vision_projector.proj", vis) + E[cfg.img_id]
        X_in = np.concatenate([vis_tok, E[inst], E[tokens]])
        prefix = len(vis) + len(inst)
    else:
        inst = np.asarray([], dtype=np.intp)
        X_in = E[tokens]
        prefix = 0
    S = X_in.shape[0]
    if S > cfg.max_len:
        raise ValueError(f"sequence of length {S} exceeds max_len={cfg.max_len}")
    X0 = X_in + state.pos[:S]

    q = run.lin("self_attn.q_proj", X0)
    k = run.lin("self_attn.k_proj", X0)
    v = run.lin("self_attn.v_proj", X0)
    P_self = attention_weights(q, k, causal_mask(S))
    a = P_self @ v
    X1 = X0 + run.lin("self_attn.o_proj", a)

    if cfg.arch == "crossattn":
        qc = run.lin("cross_attn.q_proj", X1)
        kc = run.lin("cross_attn.k_proj", vis)
        vc = run.lin("cross_attn.v_proj", vis)
        P_cross = attention_weights(qc, kc)
        X2 = X1 + P_cross @ vc
    else:
        qc = kc = vc = P_cross = None
        X2 = X1

    g = run.lin("mlp.gate_proj", X2)
    u = run.lin("mlp.up_proj", X2)
    act = np.maximum(g, 0.0) * u
    X3 = X2 + run.lin("mlp.down_proj", act)

    H = X3[prefix:]
    logits = H @ state.output_matrix.T + state.head_b
    cache = dict(run=run, tokens=tokens, inst=inst, vis=vis, prefix=prefix, S=S,
                 q=q, k=k, v=v, P_self=P_self, qc=qc, kc=kc, vc=vc, P_cross=P_cross,
                 g=g, u=u, H=H)
    return logits, cache


def backward(state: DecoderState, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    cfg = state.cfg
    run: _Run = cache["run"]
    grads: dict[str, np.ndarray] = {name: np.zeros_like(p) for name, p in state.trainable().items()}

    def lin_back(name, dy):
        x, mask = run.lin_cache[name]
        dA, dB, dx = lora_backward(state.layers[name], x, dy, mask)
        grads[f"{name}.A"] += dA
        grads[f"{name}.B"] += dB
        return dx

    H = cache["H"]
    dWo = dlogits.T @ H
    if cfg.tie_head:
        grads["embed"] += dWo
    else:
        grads["head.W"] += dWo
    grads["head.b"] += dlogits.sum(axis=0)

    dX3 = np.zeros((cache["S"], cfg.d_model))
    dX3[cache["prefix"]:] = dlogits @ state.output_matrix

    # gated MLP
    g, u = cache["g"], cache["u"]
    dact = lin_back("mlp.down_proj", dX3)
    dg = dact * u * (g > 0)
    du = dact * np.maximum(g, 0.0)
    dX2 = dX3 + lin_back("mlp.gate_proj", dg) + lin_back("mlp.up_proj", du)

    # cross-attention
    if cfg.arch == "crossattn":
        dqc, dkc, dvc = _attention_backward(cache["qc"], cache["kc"], cache["vc"],
                                            cache["P_cross"], dX2)
        lin_back("cross_attn.k_proj", dkc)
        lin_back("cross_attn.v_proj", dvc)
        dX1 = dX2 + lin_back("cross_attn.q_proj", dqc)
    else:
        dX1 = dX2

    # masked self-attention
    da = lin_back("self_attn.o_proj", dX1)
    dq, dk, dv = _attention_backward(cache["q"], cache["k"], cache["v"], cache["P_self"], da)
    dX0 = (dX1 + lin_back("self_attn.q_proj", dq) + lin_back("self_attn.k_proj", dk)
           + lin_back("self_attn.v_proj", dv))

    # embeddings (positions are frozen)
    prefix = cache["prefix"]
    np.add.at(grads["embed"], cache["tokens"], dX0[prefix:])
    if cfg.arch == "instruct":
        n_vis = len(cache["vis"])
        lin_back("vision_projector.proj", dX0[:n_vis])
        grads["embed"][cfg.img_id] += dX0[:n_vis].sum(axis=0)
        np.add.at(grads["embed"], cache["inst"], dX0[n_vis:prefix])
    return grads


# --- losses -------------------------------------------------------------------

def clm_loss(logits: np.ndarray, targets, pad_mask=None) -> float:
    """Mean negative log-likelihood of ``targets`` over non-pad positions."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.intp)
    if len(targets) != len(logits):
        raise ValueError(f"{len(targets)} targets for {len(logits)} positions")
    keep = np.ones(len(targets), bool) if pad_mask is None else ~np.asarray(pad_mask, bool)
    if not keep.any():
        raise ValueError("no non-pad positions to score")
    logp = log_softmax(logits)[np.arange(len(targets)), targets]
    return float(-logp[keep].sum() / keep.sum())


def nll_and_grad(logits: np.ndarray, targets, pad_mask=None) -> tuple[float, np.ndarray, int]:
    """Summed NLL over non-pad positions, its gradient w.r.t. logits, and the count."""
    targets = np.asarray(targets, dtype=np.intp)
    keep = np.ones(len(targets), bool) if pad_mask is None else ~np.asarray(pad_mask, bool)
    logp = log_softmax(logits)
    rows = np.arange(len(targets))
    nll = float(-logp[rows, targets][keep].sum())
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    grad[~keep] = 0.0
    return nll, grad, int(keep.sum())


def teacher_inputs(y, bos_id: int = 1) -> np.ndarray:
    """Decoder input for teacher forcing: ``[bos] + y[:-1]``."""
    y = np.asarray(y, dtype=np.intp)
    return np.concatenate([[bos_id], y[:-1]]).astype(np.intp)


def forward_crossattn(vis, y, state: DecoderState, *, training=False, rng=None):
    """Logits predicting every token of ``y`` from its ground-truth prefix."""
    if state.cfg.arch != "crossattn":
        raise ValueError("state was built for arch='instruct'")
    logits, _ = forward(state, teacher_inputs(y), vis, training=training, rng=rng)
    return logits


def forward_instruct(vis, inst, y, state: DecoderState, *, training=False, rng=None):
    """Logits for every token of ``y`` given prepended visual tokens and instruction."""
    if state.cfg.arch != "instruct":
        raise ValueError("state was built for arch='crossattn'")
    logits, _ = forward(state, teacher_inputs(y), vis, inst, training=training, rng=rng)
    return logits


def batch_loss(state: DecoderState, batch, pad_id: int = 0) -> float:
    """Token-averaged NLL over a batch of ``(vis, inst, y)`` triples.

    With every position counted this is ``-1/(N T) * sum log p``; pad targets
    are left out of both sums.
    """
    total, count = 0.0, 0
    for vis, inst, y in batch:
        y = np.asarray(y, dtype=np.intp)
        logits, _ = forward(state, teacher_inputs(y), vis, inst)
        nll, _, n = nll_and_grad(logits, y, y == pad_id)
        total += nll
        count += n
    if count == 0:
        raise ValueError("batch has no non-pad targets")
    return total / count
