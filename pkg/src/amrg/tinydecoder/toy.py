"""Three-report toy corpus for the training demos."""

from __future__ import annotations

import numpy as np

from amrg.tinydecoder.model import DecoderConfig, DecoderState, init_state
from amrg.tinydecoder.vocab import TinyVocab

TOY_REPORTS = (
    "scattered fibroglandular densities no suspicious mass bi-rads 1",
    "spiculated mass with architectural distortion upper outer quadrant bi-rads 4c",
    "grouped microcalcifications in the left breast bi-rads 4a",
)
TOY_INSTRUCTION = "describe the mammogram findings"


def toy_corpus(d_v: int = 16, n_visual: int = 4, seed: int = 0):
    """``(vocab, [(vis, inst_ids, y_ids), ...])`` with one random feature matrix per report."""
    vocab = TinyVocab.build([TOY_INSTRUCTION, *TOY_REPORTS])
    rng = np.random.default_rng(seed)
    inst = vocab.encode(TOY_INSTRUCTION)
    corpus = [
        (rng.normal(size=(n_visual, d_v)), inst, vocab.encode(text, eos=True))
        for text in TOY_REPORTS
    ]
    return vocab, corpus


def demo_state(vocab: TinyVocab, arch: str, rank: int, alpha: float, seed: int,
               d_model: int = 64, scaling: str = "alpha") -> DecoderState:
    cfg = DecoderConfig(
        vocab_size=len(vocab), d_model=d_model, d_v=d_model, d_ff=d_model,
        max_len=64, rank=rank, alpha=alpha, arch=arch, seed=seed,
        scaling=scaling, img_id=vocab.img_id,
    )
    return init_state(cfg)
