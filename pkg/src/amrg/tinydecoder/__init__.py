"""Toy decoder exercising the instruction-conditioned and cross-attentive losses."""

from amrg.tinydecoder.model import (
    DecoderConfig, DecoderState, attention, batch_loss, causal_mask, clm_loss,
    cross_attend, forward, forward_crossattn, forward_instruct, init_state,
)
from amrg.tinydecoder.train import TrainConfig, TrainResult, generate, greedy_decode, train_demo
from amrg.tinydecoder.vocab import TinyVocab

__all__ = [
    "DecoderConfig", "DecoderState", "TinyVocab", "TrainConfig", "TrainResult",
    "attention", "batch_loss", "causal_mask", "clm_loss", "cross_attend", "forward",
    "forward_crossattn", "forward_instruct", "generate", "greedy_decode", "init_state",
    "train_demo",
]
